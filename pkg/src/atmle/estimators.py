"""Estimator assembly: the adaptive estimator, its cross-validated variant,
and the baseline comparison estimators.

The adaptive pipeline is: folds -> cross-fitted nuisances -> CATE and
enrollment-effect working models -> enrollment-mechanism targeting -> plug-in
estimate = pooled component minus bias component, with a Wald interval from
the empirical variance of the (pooled minus bias) influence values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit, logit

from . import eif
from .basis import DOMAIN_W, DOMAIN_WA, generate_basis
from .config import AnalysisConfig
from .data import FoldAssignment, FusionDataset, make_folds
from .eif import InfluenceVectors
from .nuisance import (
    BASELINE_TARGETS,
    CENSOR_TARGETS,
    CORE_TARGETS,
    NuisanceFit,
    fit_nuisances,
    predict_nuisances,
)
from .solvers import logistic_irls, relaxed_ols
from .working_model import (
    CateWorkingModel,
    EnrollEffectWorkingModel,
    learn_tau_A,
    learn_tau_S,
)

SCHEMA_VERSION = 1
Z_95 = 1.96
PI_SCORE_TOL = 1e-8
PI_MAX_ROUNDS = 50


class EstimationError(RuntimeError):
    """A stage of the estimation pipeline failed."""


@dataclass
class EstimateReport:
    """Point estimate, decomposition, uncertainty, and audit trail."""

    estimator: str
    psi: float
    psi_tilde: float
    psi_sharp: float
    se: float
    ci95: Tuple[float, float]
    n: int
    influence: Optional[InfluenceVectors] = None
    working_models: Dict[str, dict] = field(default_factory=dict)
    nuisance_summary: dict = field(default_factory=dict)
    targeting_log: dict = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "estimator": self.estimator,
            "psi": self.psi,
            "psi_tilde": self.psi_tilde,
            "psi_sharp": self.psi_sharp,
            "se": self.se,
            "ci95": list(self.ci95),
            "n": self.n,
            "working_models": self.working_models,
            "nuisance_summary": self.nuisance_summary,
            "targeting_log": self.targeting_log,
            "warnings": self.warnings,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def influence_rows(self) -> NDArray:
        if self.influence is None:
            raise ValueError("influence values were not stored")
        iv = self.influence
        return np.column_stack([iv.d_pooled, iv.d_sharp, iv.d_total])


@dataclass
class PiTargetingResult:
    """Fluctuated enrollment mechanism and the solved score residual."""

    pi_star_w0: NDArray
    pi_star_w1: NDArray
    pi_star_factual: NDArray
    clever_factual: NDArray
    clever_w0: NDArray
    clever_w1: NDArray
    epsilon_path: List[float]
    score_residual: float
    converged: bool


def _wald(psi: float, d_total: NDArray) -> Tuple[float, Tuple[float, float]]:
    n = len(d_total)
    se = float(np.sqrt(np.mean(d_total**2) / n))
    return se, (psi - Z_95 * se, psi + Z_95 * se)


def _ipcw_pooled(dataset: FusionDataset, nuisances: NuisanceFit) -> Optional[NDArray]:
    if not dataset.has_censoring:
        return None
    return dataset.delta_or_ones / nuisances.gtilde_delta_hat


def _ipcw_full(dataset: FusionDataset, nuisances: NuisanceFit) -> Optional[NDArray]:
    if not dataset.has_censoring:
        return None
    return dataset.delta_or_ones / nuisances.gdelta_hat


# ---------------------------------------------------------------------------
# pooled component
# ---------------------------------------------------------------------------


def estimate_pooled(
    dataset: FusionDataset,
    nuisances: NuisanceFit,
    cate_model: CateWorkingModel,
) -> Tuple[float, NDArray]:
    """Plug-in pooled-ATE component and its influence values.

    The relaxed refit already solves the coefficient score and the empirical
    covariate measure solves the marginal score, so no further targeting is
    needed: the estimate is the sample mean of the fitted CATE.
    """
    tau = cate_model.predict(dataset.w)
    psi_tilde = float(tau.mean())
    phi_s = cate_model.support_design(dataset.w)
    residual = (
        dataset.y_observed
        - nuisances.theta_hat
        - (dataset.a - nuisances.g_hat) * tau
    )
    beta_score = eif.beta_score_cate(
        dataset.a.astype(float),
        nuisances.g_hat,
        phi_s,
        residual,
        cate_model.gram_inverse,
        ipcw=_ipcw_pooled(dataset, nuisances),
    )
    d_pooled = eif.d_pooled_projection(
        tau_w=tau,
        psi_tilde=psi_tilde,
        beta_score=beta_score,
        basis_means=phi_s.mean(axis=0),
    )
    return psi_tilde, d_pooled


def _pooled_regular_tmle(
    dataset: FusionDataset, nuisances: NuisanceFit
) -> Tuple[float, NDArray]:
    """One-step-equivalent TMLE of the pooled ATE (linear fluctuation)."""
    a = dataset.a.astype(float)
    g_fact = np.where(dataset.a == 1, nuisances.g_hat, 1.0 - nuisances.g_hat)
    h_fact = (2.0 * a - 1.0) / g_fact
    ipcw = _ipcw_pooled(dataset, nuisances)
    w = np.ones(dataset.n) if ipcw is None else ipcw
    qbar_fact = nuisances.qbar_factual(dataset.a)
    eps = float(
        np.sum(w * h_fact * (dataset.y_observed - qbar_fact))
        / np.sum(w * h_fact**2)
    )
    q1 = nuisances.qbar_w1 + eps / nuisances.g_hat
    q0 = nuisances.qbar_w0 - eps / (1.0 - nuisances.g_hat)
    psi_tilde = float(np.mean(q1 - q0))
    resid = w * h_fact * (dataset.y_observed - (qbar_fact + eps * h_fact))
    d = q1 - q0 - psi_tilde + resid
    return psi_tilde, d


# ---------------------------------------------------------------------------
# enrollment-mechanism targeting and the bias component
# ---------------------------------------------------------------------------


def target_pi(
    dataset: FusionDataset,
    nuisances: NuisanceFit,
    enroll_model: EnrollEffectWorkingModel,
) -> PiTargetingResult:
    """Logistic fluctuation of the enrollment mechanism along the clever covariate.

    Iterated one-dimensional binomial MLE until the empirical score
    mean(C * (S - Pi*)) is below 1e-8 (or 50 rounds, flagged). With external
    controls only, only the control arm is fluctuated.
    """
    eco = dataset.external_controls_only
    a = dataset.a.astype(float)
    tau0 = enroll_model.predict(dataset.w, 0)
    tau1 = enroll_model.predict(dataset.w, 1)
    g1 = nuisances.g_hat
    clever_fact = eif.clever_covariate(a, g1, tau1, tau0, eco)
    clever_w0 = eif.clever_covariate(np.zeros(dataset.n), g1, tau1, tau0, eco)
    clever_w1 = eif.clever_covariate(np.ones(dataset.n), g1, tau1, tau0, eco)

    offset0 = logit(nuisances.pi_w0)
    if eco:
        offset1 = np.full(dataset.n, np.inf)  # forced arm, never fluctuated
    else:
        offset1 = logit(nuisances.pi_w1)
    offset_fact = np.where(dataset.a == 1, np.where(np.isinf(offset1), 30.0, offset1), offset0)

    s = dataset.s.astype(float)
    eps_path: List[float] = []
    residual = np.inf
    converged = False
    for _ in range(PI_MAX_ROUNDS):
        pi_fact = expit(offset_fact)
        residual = abs(float(np.mean(clever_fact * (s - pi_fact))))
        if residual < PI_SCORE_TOL:
            converged = True
            break
        fit = logistic_irls(clever_fact[:, None], s, offset=offset_fact, tol=1e-10)
        eps = float(fit.coefficients[0])
        eps_path.append(eps)
        offset_fact = offset_fact + eps * clever_fact
        offset0 = offset0 + eps * clever_w0
        if not eco:
            offset1 = offset1 + eps * clever_w1
        if eps == 0.0 and not fit.converged:
            break
    pi_star_w0 = expit(offset0)
    pi_star_w1 = np.ones(dataset.n) if eco else expit(offset1)
    return PiTargetingResult(
        pi_star_w0=pi_star_w0,
        pi_star_w1=pi_star_w1,
        pi_star_factual=expit(offset_fact),
        clever_factual=clever_fact,
        clever_w0=clever_w0,
        clever_w1=clever_w1,
        epsilon_path=eps_path,
        score_residual=residual,
        converged=converged,
    )


def estimate_bias(
    dataset: FusionDataset,
    nuisances: NuisanceFit,
    enroll_model: EnrollEffectWorkingModel,
    pi_targeting: PiTargetingResult,
) -> Tuple[float, Dict[str, NDArray]]:
    """Plug-in bias component and its three-part influence decomposition.

    The coefficient-score part is evaluated at the pre-targeting enrollment
    mechanism (the one the relaxed refit solved against), which keeps its
    empirical mean exactly zero; the covariate and mechanism parts use the
    targeted probabilities.
    """
    tau0 = enroll_model.predict(dataset.w, 0)
    tau1 = enroll_model.predict(dataset.w, 1)
    pi0_star_w0 = 1.0 - pi_targeting.pi_star_w0
    pi0_star_w1 = 1.0 - pi_targeting.pi_star_w1  # identically zero with ECO
    psi_sharp = float(np.mean(pi0_star_w0 * tau0 - pi0_star_w1 * tau1))

    phi0 = enroll_model.support_design(dataset.w, 0)
    phi1 = enroll_model.support_design(dataset.w, 1)
    phi_fact = np.where((dataset.a == 1)[:, None], phi1, phi0)
    pi_fact = nuisances.pi_factual(dataset.a)
    tau_fact = np.where(dataset.a == 1, tau1, tau0)
    s = dataset.s.astype(float)
    residual = (
        dataset.y_observed
        - nuisances.qbar_factual(dataset.a)
        - (s - pi_fact) * tau_fact
    )
    beta_score = eif.beta_score_enroll(
        s,
        pi_fact,
        phi_fact,
        residual,
        enroll_model.gram_inverse,
        ipcw=_ipcw_full(dataset, nuisances),
    )
    gap = (pi0_star_w0[:, None] * phi0).mean(axis=0) - (
        pi0_star_w1[:, None] * phi1
    ).mean(axis=0)
    components = eif.d_sharp_projection(
        s=s,
        pi_star1_factual=pi_targeting.pi_star_factual,
        pi_star0_w0=pi0_star_w0,
        pi_star0_w1=pi0_star_w1,
        tau_s_w0=tau0,
        tau_s_w1=tau1,
        psi_sharp=psi_sharp,
        clever=pi_targeting.clever_factual,
        beta_score=beta_score,
        weighted_mean_gap=gap,
    )
    return psi_sharp, components


# ---------------------------------------------------------------------------
# the adaptive estimator
# ---------------------------------------------------------------------------


def _fit_models(
    dataset: FusionDataset,
    folds: FoldAssignment,
    nuisances: NuisanceFit,
    config: AnalysisConfig,
) -> Tuple[CateWorkingModel, EnrollEffectWorkingModel]:
    basis_w = generate_basis(
        dataset, DOMAIN_W, config.cate_degree, config.max_knots_per_dim
    )
    basis_wa = generate_basis(
        dataset, DOMAIN_WA, config.enroll_degree, config.max_knots_per_dim
    )
    cate = learn_tau_A(dataset, nuisances, basis_w, folds, config)
    enroll = learn_tau_S(dataset, nuisances, basis_wa, folds, config)
    return cate, enroll


def atmle(dataset: FusionDataset, config: Optional[AnalysisConfig] = None) -> EstimateReport:
    """Adaptive estimator of the trial-anchored ATE on pooled data.

    Deterministic given the config seed. The report satisfies
    psi = psi_tilde - psi_sharp exactly and ci95 = psi +- 1.96 se with
    se^2 = mean((d_pooled - d_sharp)^2) / n.
    """
    config = config or AnalysisConfig()
    folds = make_folds(dataset, config.v_folds, config.seed)
    targets = list(CORE_TARGETS) + (list(CENSOR_TARGETS) if dataset.has_censoring else [])
    nuisances = fit_nuisances(dataset, folds, config=config, targets=targets)
    cate, enroll = _fit_models(dataset, folds, nuisances, config)

    if config.pooled == "regular-tmle":
        psi_tilde, d_pooled = _pooled_regular_tmle(dataset, nuisances)
    else:
        psi_tilde, d_pooled = estimate_pooled(dataset, nuisances, cate)
    targeting = target_pi(dataset, nuisances, enroll)
    psi_sharp, components = estimate_bias(dataset, nuisances, enroll, targeting)

    psi = psi_tilde - psi_sharp
    d_sharp = components["total"]
    influence = InfluenceVectors(
        d_pooled=d_pooled,
        d_sharp=d_sharp,
        components={k: v for k, v in components.items() if k != "total"},
    )
    se, ci = _wald(psi, influence.d_total)
    warnings = list(nuisances.warnings)
    if not targeting.converged:
        warnings.append(
            f"enrollment-mechanism targeting stopped at score residual {targeting.score_residual:.2e}"
        )
    return EstimateReport(
        estimator="atmle",
        psi=psi,
        psi_tilde=psi_tilde,
        psi_sharp=psi_sharp,
        se=se,
        ci95=ci,
        n=dataset.n,
        influence=influence,
        working_models={"cate": cate.to_dict(), "enrollment_effect": enroll.to_dict()},
        nuisance_summary=nuisances.summary(),
        targeting_log={
            "epsilon_path": targeting.epsilon_path,
            "score_residual": targeting.score_residual,
            "converged": targeting.converged,
        },
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# cross-validated variant
# ---------------------------------------------------------------------------


def _refit_cate(model: CateWorkingModel, dataset, nuisances) -> CateWorkingModel:
    phi_s = model.support_design(dataset.w)
    factor = dataset.a - nuisances.g_hat
    response = dataset.y_observed - nuisances.theta_hat
    weights = dataset.delta_or_ones / nuisances.gtilde_delta_hat
    relaxed = relaxed_ols(factor[:, None] * phi_s, response, weights, range(phi_s.shape[1]))
    beta = np.zeros(len(model.basis))
    beta[model.support] = relaxed.coefficients
    return CateWorkingModel(
        basis=model.basis,
        beta_star=beta,
        support=model.support[relaxed.support],
        gram_inverse=relaxed.gram_inverse,
        lambda_=model.lambda_,
        cv_risk_path=[],
    )


def _refit_enroll(
    model: EnrollEffectWorkingModel, dataset, nuisances
) -> EnrollEffectWorkingModel:
    phi_s = model.support_design(dataset.w, dataset.a)
    pi_fact = nuisances.pi_factual(dataset.a)
    factor = dataset.s - pi_fact
    response = dataset.y_observed - nuisances.qbar_factual(dataset.a)
    weights = dataset.delta_or_ones / nuisances.gdelta_hat
    relaxed = relaxed_ols(factor[:, None] * phi_s, response, weights, range(phi_s.shape[1]))
    beta = np.zeros(len(model.basis))
    beta[model.support] = relaxed.coefficients
    return EnrollEffectWorkingModel(
        basis=model.basis,
        beta_star=beta,
        support=model.support[relaxed.support],
        gram_inverse=relaxed.gram_inverse,
        lambda_=model.lambda_,
        cv_risk_path=[],
    )


def cv_atmle(
    dataset: FusionDataset,
    config: Optional[AnalysisConfig] = None,
    v: Optional[int] = None,
) -> EstimateReport:
    """Cross-validated variant: working models learned on each training split,
    score solving and plug-in evaluation on the held-out split.

    The estimate averages the per-split plug-ins; the standard error uses the
    average of per-split influence standard deviations over the full sample
    size. Splits whose estimation fails are skipped with a warning; fewer
    than two usable splits is an error.
    """
    config = config or AnalysisConfig()
    v = int(v if v is not None else config.cv_folds)
    if v < 2:
        raise ValueError("cv_atmle needs at least 2 folds")
    outer = make_folds(dataset, v, config.seed)
    psi_folds: List[float] = []
    tilde_folds: List[float] = []
    sharp_folds: List[float] = []
    sigma_folds: List[float] = []
    warnings: List[str] = []
    for k in range(v):
        try:
            train = dataset.subset(outer.train_indices(k))
            valid = dataset.subset(outer.test_indices(k))
            inner = make_folds(train, config.v_folds, config.seed + 7919 * (k + 1))
            targets = list(CORE_TARGETS) + (
                list(CENSOR_TARGETS) if train.has_censoring else []
            )
            nuis_train = fit_nuisances(
                train, inner, config=config, targets=targets, refit_full=True
            )
            cate_t, enroll_t = _fit_models(train, inner, nuis_train, config)
            nuis_val = predict_nuisances(nuis_train, valid)
            cate_v = _refit_cate(cate_t, valid, nuis_val)
            enroll_v = _refit_enroll(enroll_t, valid, nuis_val)
            if config.pooled == "regular-tmle":
                psi_tilde_v, d_pooled_v = _pooled_regular_tmle(valid, nuis_val)
            else:
                psi_tilde_v, d_pooled_v = estimate_pooled(valid, nuis_val, cate_v)
            targeting_v = target_pi(valid, nuis_val, enroll_v)
            psi_sharp_v, comps_v = estimate_bias(valid, nuis_val, enroll_v, targeting_v)
            d_total_v = d_pooled_v - comps_v["total"]
            psi_folds.append(psi_tilde_v - psi_sharp_v)
            tilde_folds.append(psi_tilde_v)
            sharp_folds.append(psi_sharp_v)
            sigma_folds.append(float(np.sqrt(np.mean(d_total_v**2))))
        except Exception as exc:
            warnings.append(f"fold {k} skipped: {exc}")
    if len(psi_folds) < 2:
        raise EstimationError(
            f"cv_atmle: fewer than 2 usable folds ({'; '.join(warnings)})"
        )
    psi_tilde = float(np.mean(tilde_folds))
    psi_sharp = float(np.mean(sharp_folds))
    psi = psi_tilde - psi_sharp
    sigma = float(np.mean(sigma_folds))
    se = sigma / np.sqrt(dataset.n)
    return EstimateReport(
        estimator="cv-atmle",
        psi=psi,
        psi_tilde=psi_tilde,
        psi_sharp=psi_sharp,
        se=se,
        ci95=(psi - Z_95 * se, psi + Z_95 * se),
        n=dataset.n,
        targeting_log={"fold_estimates": psi_folds, "fold_sigmas": sigma_folds},
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# baselines (shared nuisance machinery, classic ATE influence curves)
# ---------------------------------------------------------------------------


def _ate_tmle_report(
    name: str, dataset: FusionDataset, config: AnalysisConfig
) -> EstimateReport:
    """Linear-fluctuation TMLE of the ATE ignoring the study indicator."""
    folds = make_folds(dataset, config.v_folds, config.seed)
    targets = ["qbar", "g"] + (["gtilde_delta"] if dataset.has_censoring else [])
    nuisances = fit_nuisances(dataset, folds, config=config, targets=targets)
    psi, d = _pooled_regular_tmle(dataset, nuisances)
    se, ci = _wald(psi, d)
    return EstimateReport(
        estimator=name,
        psi=psi,
        psi_tilde=psi,
        psi_sharp=0.0,
        se=se,
        ci95=ci,
        n=dataset.n,
        influence=InfluenceVectors(d_pooled=d, d_sharp=np.zeros_like(d), components={}),
        nuisance_summary=nuisances.summary(),
        warnings=list(nuisances.warnings),
    )


def baseline_rct_only(
    dataset: FusionDataset, config: Optional[AnalysisConfig] = None
) -> EstimateReport:
    """Standard TMLE of the ATE on the trial subset alone."""
    config = config or AnalysisConfig()
    trial = dataset.subset(np.flatnonzero(dataset.s == 1))
    return _ate_tmle_report("rct-only", trial, config)


def baseline_pooled_aipw(
    dataset: FusionDataset, config: Optional[AnalysisConfig] = None
) -> EstimateReport:
    """Augmented IPW for the pooled ATE, ignoring the study indicator."""
    config = config or AnalysisConfig()
    folds = make_folds(dataset, config.v_folds, config.seed)
    targets = ["qbar", "g"] + (["gtilde_delta"] if dataset.has_censoring else [])
    nuisances = fit_nuisances(dataset, folds, config=config, targets=targets)
    a = dataset.a.astype(float)
    g_fact = np.where(dataset.a == 1, nuisances.g_hat, 1.0 - nuisances.g_hat)
    h = (2.0 * a - 1.0) / g_fact
    ipcw = _ipcw_pooled(dataset, nuisances)
    w = np.ones(dataset.n) if ipcw is None else ipcw
    contrib = (
        nuisances.qbar_w1
        - nuisances.qbar_w0
        + w * h * (dataset.y_observed - nuisances.qbar_factual(dataset.a))
    )
    psi = float(contrib.mean())
    d = contrib - psi
    se, ci = _wald(psi, d)
    return EstimateReport(
        estimator="pooled-aipw",
        psi=psi,
        psi_tilde=psi,
        psi_sharp=0.0,
        se=se,
        ci95=ci,
        n=dataset.n,
        influence=InfluenceVectors(d_pooled=d, d_sharp=np.zeros_like(d), components={}),
        nuisance_summary=nuisances.summary(),
        warnings=list(nuisances.warnings),
    )


def baseline_full_tmle(
    dataset: FusionDataset, config: Optional[AnalysisConfig] = None
) -> EstimateReport:
    """TMLE of the trial-anchored ATE with inverse enrollment weighting.

    Uses the trial outcome regression, the trial treatment mechanism, and the
    covariate-conditional enrollment probability; severe truncation of the
    latter is visible in the nuisance summary.
    """
    config = config or AnalysisConfig()
    folds = make_folds(dataset, config.v_folds, config.seed)
    targets = list(BASELINE_TARGETS) + (["gdelta"] if dataset.has_censoring else [])
    nuisances = fit_nuisances(dataset, folds, config=config, targets=targets)
    s = dataset.s.astype(float)
    a = dataset.a.astype(float)
    g1 = nuisances.g_trial_hat
    g_fact = np.where(dataset.a == 1, g1, 1.0 - g1)
    pibar = nuisances.pibar_hat
    h_fact = s / pibar * (2.0 * a - 1.0) / g_fact
    h1 = 1.0 / (pibar * g1)
    h0 = -1.0 / (pibar * (1.0 - g1))
    ipcw = _ipcw_full(dataset, nuisances)
    w = np.ones(dataset.n) if ipcw is None else ipcw
    resid = dataset.y_observed - nuisances.q_factual_full
    eps = float(np.sum(w * h_fact * resid) / np.sum(w * h_fact**2))
    q1_star = nuisances.q1_w1 + eps * h1
    q0_star = nuisances.q1_w0 + eps * h0
    psi = float(np.mean(q1_star - q0_star))
    d = q1_star - q0_star - psi + w * h_fact * (resid - eps * h_fact)
    se, ci = _wald(psi, d)
    return EstimateReport(
        estimator="tmle",
        psi=psi,
        psi_tilde=psi,
        psi_sharp=0.0,
        se=se,
        ci95=ci,
        n=dataset.n,
        influence=InfluenceVectors(d_pooled=d, d_sharp=np.zeros_like(d), components={}),
        nuisance_summary=nuisances.summary(),
        targeting_log={"epsilon": eps},
        warnings=list(nuisances.warnings),
    )


# ---------------------------------------------------------------------------
# variance-comparison diagnostics
# ---------------------------------------------------------------------------


@dataclass
class VarianceDecomposition:
    """Plug-in covariate- and outcome-part variances of the two anchored ATEs."""

    w_part_pooled_weighting: float
    y_part_pooled_weighting: float
    w_part_trial_weighting: float
    y_part_trial_weighting: float
    trial_fraction: float
    enrollment_dependence: float  # coefficient of variation of P(S=1 | W)

    @property
    def approximately_independent(self) -> bool:
        return self.enrollment_dependence < 0.1

    def to_dict(self) -> dict:
        return {
            "w_part_pooled_weighting": self.w_part_pooled_weighting,
            "y_part_pooled_weighting": self.y_part_pooled_weighting,
            "w_part_trial_weighting": self.w_part_trial_weighting,
            "y_part_trial_weighting": self.y_part_trial_weighting,
            "trial_fraction": self.trial_fraction,
            "enrollment_dependence": self.enrollment_dependence,
            "approximately_independent": self.approximately_independent,
        }


def efficiency_diagnostics(
    dataset: FusionDataset, config: Optional[AnalysisConfig] = None
) -> VarianceDecomposition:
    """Variance decomposition advising whether inverse enrollment weighting
    (pooled covariate averaging) beats trial covariate averaging.
    """
    config = config or AnalysisConfig()
    folds = make_folds(dataset, config.v_folds, config.seed)
    targets = list(BASELINE_TARGETS)
    nuisances = fit_nuisances(dataset, folds, config=config, targets=targets)
    contrast = nuisances.q1_w1 - nuisances.q1_w0
    psi = float(contrast.mean())
    s_mask = dataset.s == 1
    p_s1 = float(s_mask.mean())
    psi2 = float(contrast[s_mask].mean())

    # conditional residual variances within the trial arms
    resid2 = (dataset.y_observed - nuisances.q_factual_full) ** 2
    sigma2 = {}
    for arm in (0, 1):
        rows = s_mask & (dataset.a == arm)
        if dataset.has_censoring:
            rows = rows & (dataset.delta_or_ones == 1)
        design = np.column_stack([np.ones(int(rows.sum())), dataset.w[rows]])
        coef, *_ = np.linalg.lstsq(design, resid2[rows], rcond=None)
        preds = np.column_stack([np.ones(dataset.n), dataset.w]) @ coef
        sigma2[arm] = np.clip(preds, 1e-12, None)

    g1 = nuisances.g_trial_hat
    pibar = nuisances.pibar_hat
    noise = sigma2[1] / g1 + sigma2[0] / (1.0 - g1)
    return VarianceDecomposition(
        w_part_pooled_weighting=float(np.mean((contrast - psi) ** 2)),
        y_part_pooled_weighting=float(np.mean(noise / pibar)),
        w_part_trial_weighting=float(np.mean(pibar / p_s1**2 * (contrast - psi2) ** 2)),
        y_part_trial_weighting=float(np.mean(pibar / p_s1**2 * noise)),
        trial_fraction=p_s1,
        enrollment_dependence=float(np.std(pibar) / np.mean(pibar)),
    )
