"""Data-adaptive working models for the two conditional effects.

The CATE model regresses the covariate-residualized outcome on the
treatment-residualized basis columns; the enrollment-effect model does the
same with the study indicator in the treatment's role. Both use the
division-free formulation: regressing (Y - nuisance mean) on columns
(residual factor) * phi is algebraically identical to the weighted
pseudo-outcome regression but never divides by a residual that can approach
zero. A lasso with cross-validated penalty selects the support; a weighted
OLS refit on the support makes the empirical coefficient score exactly zero.
Under outcome missingness, rows are weighted by delta over the fitted
censoring probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from numpy.typing import NDArray

from .basis import DOMAIN_W, DOMAIN_WA, BasisSet
from .config import AnalysisConfig
from .data import FoldAssignment, FusionDataset
from .nuisance import NuisanceFit
from .solvers import LassoFit, RelaxedFit, cv_lasso, relaxed_ols


@dataclass
class CateWorkingModel:
    """Selected basis support and relaxed coefficients for the CATE."""

    basis: BasisSet
    beta_star: NDArray  # full basis length, zero off the retained support
    support: NDArray  # retained basis indices, ascending
    gram_inverse: NDArray  # (1/n) Gram inverse of the transformed support design
    lambda_: float
    cv_risk_path: list

    def predict(self, w: NDArray) -> NDArray:
        return self.basis.design_matrix(np.atleast_2d(w)) @ self.beta_star

    def support_design(self, w: NDArray) -> NDArray:
        return self.basis.design_matrix(np.atleast_2d(w))[:, self.support]

    def to_dict(self) -> dict:
        return _serialize(self)


@dataclass
class EnrollEffectWorkingModel:
    """Selected basis support and relaxed coefficients for the enrollment effect."""

    basis: BasisSet
    beta_star: NDArray
    support: NDArray
    gram_inverse: NDArray
    lambda_: float
    cv_risk_path: list

    def predict(self, w: NDArray, a) -> NDArray:
        return self.basis.design_matrix(np.atleast_2d(w), a) @ self.beta_star

    def support_design(self, w: NDArray, a) -> NDArray:
        return self.basis.design_matrix(np.atleast_2d(w), a)[:, self.support]

    def to_dict(self) -> dict:
        return _serialize(self)


def _serialize(model) -> dict:
    return {
        "basis": model.basis.to_json(),
        "coefficients": [float(b) for b in model.beta_star],
        "support": [int(j) for j in model.support],
        "lambda": float(model.lambda_),
        "size": int(len(model.support)),
    }


def _first_occurrences(matrix: NDArray) -> NDArray:
    """Indices of the first copy of each distinct column (exact equality)."""
    seen = {}
    keep = []
    for j in range(matrix.shape[1]):
        key = matrix[:, j].tobytes()
        if key not in seen:
            seen[key] = j
            keep.append(j)
    return np.asarray(keep, dtype=np.int64)


def _main_term_positions(basis: BasisSet, columns: NDArray) -> list:
    positions = []
    for pos, j in enumerate(columns):
        if len(basis.functions[j].subset) <= 1:
            positions.append(pos)
    return positions


def _learn(
    phi: NDArray,
    residual_factor: NDArray,
    response: NDArray,
    weights: NDArray,
    basis: BasisSet,
    folds: FoldAssignment,
    config: AnalysisConfig,
):
    """Shared lasso + relaxed-OLS pipeline on the transformed design."""
    columns = _first_occurrences(phi)
    transformed = residual_factor[:, None] * phi[:, columns]
    penalty_free = [0]
    if config.force_main_terms:
        penalty_free = sorted(set([0] + _main_term_positions(basis, columns)))
    # the lasso reuses the nuisance fold partition, rotated by one fold
    lasso = cv_lasso(
        transformed,
        response,
        weights,
        folds.rotated(1),
        lambda_grid_size=config.lambda_grid_size,
        penalty_free=penalty_free,
        undersmoothing=config.undersmoothing,
        certify=False,  # the relaxed refit, not the lasso, solves the scores
    )
    relaxed = relaxed_ols(transformed, response, weights, lasso.support)
    beta_full = np.zeros(len(basis))
    beta_full[columns] = relaxed.coefficients
    support = columns[relaxed.support]
    return beta_full, support, relaxed.gram_inverse, lasso


def _cate_inputs(dataset: FusionDataset, nuisances: NuisanceFit):
    residual_factor = dataset.a - nuisances.g_hat
    response = dataset.y_observed - nuisances.theta_hat
    weights = dataset.delta_or_ones / nuisances.gtilde_delta_hat
    return residual_factor, response, weights


def _enroll_inputs(dataset: FusionDataset, nuisances: NuisanceFit):
    pi_factual = nuisances.pi_factual(dataset.a)
    residual_factor = dataset.s - pi_factual
    response = dataset.y_observed - nuisances.qbar_factual(dataset.a)
    weights = dataset.delta_or_ones / nuisances.gdelta_hat
    return residual_factor, response, weights


def learn_tau_A(
    dataset: FusionDataset,
    nuisances: NuisanceFit,
    basis: BasisSet,
    folds: FoldAssignment,
    config: Optional[AnalysisConfig] = None,
) -> CateWorkingModel:
    """Learn the CATE working model on the pooled sample."""
    config = config or AnalysisConfig()
    if basis.domain != DOMAIN_W:
        raise ValueError("the CATE basis must be covariate-only")
    phi = basis.design_matrix(dataset.w)
    residual_factor, response, weights = _cate_inputs(dataset, nuisances)
    beta, support, gram_inverse, lasso = _learn(
        phi, residual_factor, response, weights, basis, folds, config
    )
    return CateWorkingModel(
        basis=basis,
        beta_star=beta,
        support=support,
        gram_inverse=gram_inverse,
        lambda_=lasso.lambda_,
        cv_risk_path=lasso.cv_risk_path,
    )


def learn_tau_S(
    dataset: FusionDataset,
    nuisances: NuisanceFit,
    basis: BasisSet,
    folds: FoldAssignment,
    config: Optional[AnalysisConfig] = None,
) -> EnrollEffectWorkingModel:
    """Learn the enrollment-effect working model on the pooled sample."""
    config = config or AnalysisConfig()
    if basis.domain != DOMAIN_WA:
        raise ValueError("the enrollment-effect basis must cover (w, a)")
    if np.all(dataset.s == 1):
        raise ValueError("no external rows: the enrollment effect is undefined")
    phi = basis.design_matrix(dataset.w, dataset.a)
    residual_factor, response, weights = _enroll_inputs(dataset, nuisances)
    beta, support, gram_inverse, lasso = _learn(
        phi, residual_factor, response, weights, basis, folds, config
    )
    return EnrollEffectWorkingModel(
        basis=basis,
        beta_star=beta,
        support=support,
        gram_inverse=gram_inverse,
        lambda_=lasso.lambda_,
        cv_risk_path=lasso.cv_risk_path,
    )


def predict_tau(model, w: NDArray, a=None) -> NDArray:
    """Evaluate a fitted working model; ``a`` only for the enrollment effect."""
    if isinstance(model, CateWorkingModel):
        if a is not None:
            raise ValueError("the CATE model takes no treatment argument")
        return model.predict(w)
    if isinstance(model, EnrollEffectWorkingModel):
        if a is None:
            raise ValueError("the enrollment-effect model needs a treatment arm")
        return model.predict(w, a)
    raise TypeError(f"not a working model: {type(model)!r}")


def score_residuals(
    model,
    dataset: FusionDataset,
    nuisances: NuisanceFit,
) -> NDArray:
    """Empirical coefficient-score values, one per retained basis column.

    The relaxed refit solves these normal equations, so every entry should be
    zero to solver precision.
    """
    if isinstance(model, CateWorkingModel):
        residual_factor, response, weights = _cate_inputs(dataset, nuisances)
        phi_s = model.support_design(dataset.w)
        fitted = model.predict(dataset.w)
    else:
        residual_factor, response, weights = _enroll_inputs(dataset, nuisances)
        phi_s = model.support_design(dataset.w, dataset.a)
        fitted = model.predict(dataset.w, dataset.a)
    resid = response - residual_factor * fitted
    return (phi_s * (weights * residual_factor * resid)[:, None]).mean(axis=0)
