"""Canonical gradient (efficient influence function) evaluators.

Every function here is a pure map from per-row quantities to per-row gradient
values, so the same code serves the empirical estimators (plugging in fitted
nuisances and the working-model Gram inverse) and the exact discrete-
distribution oracle (plugging in enumerated truths). Under outcome
missingness the Y-residual factors carry an inverse-probability-of-censoring
weight; passing ``None`` reproduces the fully observed case bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from numpy.typing import NDArray


@dataclass
class InfluenceVectors:
    """Per-observation influence values of the two estimator components."""

    d_pooled: NDArray
    d_sharp: NDArray
    components: Dict[str, NDArray]

    @property
    def d_total(self) -> NDArray:
        return self.d_pooled - self.d_sharp


def d_psi(
    s: NDArray,
    a: NDArray,
    y: NDArray,
    q1w1: NDArray,
    q1w0: NDArray,
    q_factual: NDArray,
    g_trial1: NDArray,
    pibar1: NDArray,
    psi: float,
    ipcw: Optional[NDArray] = None,
) -> NDArray:
    """Gradient of the trial-anchored ATE under inverse enrollment weighting.

    ``q1w1``/``q1w0`` are E(Y | S=1, W, a) at the two arms, ``q_factual`` the
    outcome regression at the observed (S, W, A), ``g_trial1`` the trial
    treatment probability P(A=1 | S=1, W), and ``pibar1`` = P(S=1 | W).
    """
    g_fact = np.where(a == 1, g_trial1, 1.0 - g_trial1)
    resid = y - q_factual
    if ipcw is not None:
        resid = resid * ipcw
    return q1w1 - q1w0 - psi + s / pibar1 * (2.0 * a - 1.0) / g_fact * resid


def d_psi2(
    s: NDArray,
    a: NDArray,
    y: NDArray,
    q1w1: NDArray,
    q1w0: NDArray,
    q_factual: NDArray,
    g_trial1: NDArray,
    p_s1: float,
    psi2: float,
    ipcw: Optional[NDArray] = None,
) -> NDArray:
    """Gradient of the trial-population ATE (both terms carry the S indicator)."""
    g_fact = np.where(a == 1, g_trial1, 1.0 - g_trial1)
    resid = y - q_factual
    if ipcw is not None:
        resid = resid * ipcw
    return s / p_s1 * (q1w1 - q1w0 - psi2) + s / p_s1 * (
        2.0 * a - 1.0
    ) / g_fact * resid


def beta_score_cate(
    a: NDArray,
    g1: NDArray,
    phi_w: NDArray,
    residual: NDArray,
    gram_inverse: NDArray,
    ipcw: Optional[NDArray] = None,
) -> NDArray:
    """Per-row gradient of the CATE working-model coefficients, an (n, k) array.

    ``phi_w`` holds the retained basis columns evaluated at W; ``residual`` is
    Y - E(Y|W) - (A - g) tau(W); ``gram_inverse`` inverts the weighted Gram of
    the treatment-residualized design.
    """
    factor = (a - g1) * residual
    if ipcw is not None:
        factor = factor * ipcw
    return (factor[:, None] * phi_w) @ gram_inverse


def beta_score_enroll(
    s: NDArray,
    pi1: NDArray,
    phi_wa: NDArray,
    residual: NDArray,
    gram_inverse: NDArray,
    ipcw: Optional[NDArray] = None,
) -> NDArray:
    """Per-row gradient of the enrollment-effect coefficients, an (n, k) array."""
    factor = (s - pi1) * residual
    if ipcw is not None:
        factor = factor * ipcw
    return (factor[:, None] * phi_wa) @ gram_inverse


def d_pooled_projection(
    tau_w: NDArray,
    psi_tilde: float,
    beta_score: NDArray,
    basis_means: NDArray,
) -> NDArray:
    """Gradient of the pooled-ATE projection parameter.

    ``basis_means`` are the plain basis means over the sample (the covariate
    marginal is estimated by the empirical measure).
    """
    return tau_w - psi_tilde + beta_score @ basis_means


def clever_covariate(
    a: NDArray,
    g1: NDArray,
    tau_s_w1: NDArray,
    tau_s_w0: NDArray,
    external_controls_only: bool = False,
) -> NDArray:
    """Coefficient on (S - Pi) in the enrollment-mechanism score.

    With an external control arm only, the treated-arm term vanishes because
    P(S=0 | W, A=1) = 0 and only the control arm is fluctuated.
    """
    control = -(1.0 - a) / (1.0 - g1) * tau_s_w0
    if external_controls_only:
        return control
    return a / g1 * tau_s_w1 + control


def d_sharp_projection(
    s: NDArray,
    pi_star1_factual: NDArray,
    pi_star0_w0: NDArray,
    pi_star0_w1: NDArray,
    tau_s_w0: NDArray,
    tau_s_w1: NDArray,
    psi_sharp: float,
    clever: NDArray,
    beta_score: NDArray,
    weighted_mean_gap: NDArray,
) -> Dict[str, NDArray]:
    """Three-component gradient of the bias projection parameter.

    ``weighted_mean_gap`` is the vector of means of Pi(0|W,0) phi(W,0) minus
    Pi(0|W,1) phi(W,1) over the retained basis columns. Returns the named
    components and their sum.
    """
    w_part = pi_star0_w0 * tau_s_w0 - pi_star0_w1 * tau_s_w1 - psi_sharp
    pi_part = clever * (s - pi_star1_factual)
    beta_part = beta_score @ weighted_mean_gap
    return {
        "w_part": w_part,
        "pi_part": pi_part,
        "beta_part": beta_part,
        "total": w_part + pi_part + beta_part,
    }
