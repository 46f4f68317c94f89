"""Cross-fitted nuisance estimation with a discrete cross-validation selector.

For each nuisance target the candidate with the lowest cross-validated risk
is selected (squared error for continuous outcomes, log-loss for binary
ones), and predictions for every observation come from the per-fold model
trained without that observation's fold. The built-in candidate library is
{intercept-only, main-term GLM, spline-basis lasso GLM}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from .basis import basis_over_matrix
from .config import AnalysisConfig
from .data import FoldAssignment, FusionDataset
from .solvers import cv_lasso, cv_logistic_lasso, logistic_irls

CONTINUOUS = "continuous"
BINARY = "binary"

CORE_TARGETS = ("theta", "g", "qbar", "pi")
CENSOR_TARGETS = ("gdelta", "gtilde_delta")
BASELINE_TARGETS = ("g_trial", "pibar", "q_full")


class NuisanceError(RuntimeError):
    """Every candidate failed for some nuisance target."""


# ---------------------------------------------------------------------------
# feature builders (rows x raw features; no intercept column)
# ---------------------------------------------------------------------------


def _features_w(ds: FusionDataset, a=None, s=None) -> NDArray:
    return ds.w


def _features_wa(ds: FusionDataset, a=None, s=None) -> NDArray:
    a_col = ds.a if a is None else np.full(ds.n, a)
    return np.column_stack([ds.w, a_col])


def _features_swa(ds: FusionDataset, a=None, s=None) -> NDArray:
    a_col = ds.a if a is None else np.full(ds.n, a)
    s_col = ds.s if s is None else np.full(ds.n, s)
    return np.column_stack([s_col, ds.w, a_col])


@dataclass(frozen=True)
class _Target:
    name: str
    kind: str
    features: Callable
    label: Callable[[FusionDataset], NDArray]
    train_mask: Callable[[FusionDataset], NDArray]
    # counterfactual evaluation points: name -> (a_override, s_override)
    eval_points: Tuple[Tuple[str, Optional[int], Optional[int]], ...] = ()


def _observed(ds: FusionDataset) -> NDArray:
    return ds.delta_or_ones == 1


def _all_rows(ds: FusionDataset) -> NDArray:
    return np.ones(ds.n, dtype=bool)


def _target_catalog(eco: bool) -> Dict[str, _Target]:
    pi_features = _features_w if eco else _features_wa
    pi_mask = (lambda ds: ds.a == 0) if eco else _all_rows
    pi_evals = (("a0", 0, None),) if eco else (("a0", 0, None), ("a1", 1, None))
    return {
        "theta": _Target("theta", CONTINUOUS, _features_w, lambda ds: ds.y_observed, _observed),
        "g": _Target("g", BINARY, _features_w, lambda ds: ds.a.astype(float), _all_rows),
        "qbar": _Target(
            "qbar",
            CONTINUOUS,
            _features_wa,
            lambda ds: ds.y_observed,
            _observed,
            eval_points=(("a0", 0, None), ("a1", 1, None)),
        ),
        "pi": _Target("pi", BINARY, pi_features, lambda ds: ds.s.astype(float), pi_mask, eval_points=pi_evals),
        "gdelta": _Target(
            "gdelta", BINARY, _features_swa, lambda ds: ds.delta_or_ones.astype(float), _all_rows
        ),
        "gtilde_delta": _Target(
            "gtilde_delta", BINARY, _features_wa, lambda ds: ds.delta_or_ones.astype(float), _all_rows
        ),
        "g_trial": _Target(
            "g_trial", BINARY, _features_w, lambda ds: ds.a.astype(float), lambda ds: ds.s == 1
        ),
        "pibar": _Target("pibar", BINARY, _features_w, lambda ds: ds.s.astype(float), _all_rows),
        "q_full": _Target(
            "q_full",
            CONTINUOUS,
            _features_swa,
            lambda ds: ds.y_observed,
            _observed,
            eval_points=(("s1a0", 0, 1), ("s1a1", 1, 1)),
        ),
    }


# ---------------------------------------------------------------------------
# candidate learners
# ---------------------------------------------------------------------------


def _fit_candidate(name: str, X: NDArray, y: NDArray, kind: str, config: AnalysisConfig):
    """Fit one candidate on raw features; returns predict(X_raw) -> values."""
    n = X.shape[0]
    if name == "intercept":
        if kind == BINARY:
            p = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
            return lambda Xn: np.full(Xn.shape[0], p)
        m = float(y.mean())
        return lambda Xn: np.full(Xn.shape[0], m)

    if name == "mainterm":
        design = np.column_stack([np.ones(n), X])
        if kind == BINARY:
            fit = logistic_irls(design, y)
            coef = fit.coefficients
            return lambda Xn: expit(np.column_stack([np.ones(Xn.shape[0]), Xn]) @ coef)
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        return lambda Xn: np.column_stack([np.ones(Xn.shape[0]), Xn]) @ coef

    if name == "hal":
        basis = basis_over_matrix(
            X, max_degree=config.nuisance_hal_degree, max_knots_per_dim=config.nuisance_hal_knots
        )
        design = basis.design_matrix(X)
        inner_folds = np.arange(n) % min(3, max(2, n // 10))
        if kind == BINARY:
            fit = cv_logistic_lasso(
                design, y, np.ones(n), inner_folds,
                lambda_grid_size=config.nuisance_lambda_grid_size,
            )
            coef = fit.coefficients
            return lambda Xn: expit(basis.design_matrix(Xn) @ coef)
        fit = cv_lasso(
            design, y, np.ones(n), inner_folds,
            lambda_grid_size=config.nuisance_lambda_grid_size,
        )
        coef = fit.coefficients
        return lambda Xn: basis.design_matrix(Xn) @ coef

    raise ValueError(f"unknown learner {name!r}")


def _risk(kind: str, y: NDArray, pred: NDArray) -> float:
    if kind == BINARY:
        p = np.clip(pred, 1e-6, 1 - 1e-6)
        value = float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))
    else:
        value = float(np.mean((y - pred) ** 2))
    return value if np.isfinite(value) else np.inf


# ---------------------------------------------------------------------------
# fitted nuisances
# ---------------------------------------------------------------------------


@dataclass
class NuisanceFit:
    """Cross-fitted predictions; probabilities truncated to [eps, 1 - eps].

    Counterfactual evaluations (``qbar`` and ``pi`` at both treatment arms,
    the trial outcome regression at both arms) use the same per-fold models
    as the factual predictions. With an external control arm only, the trial
    enrollment probability at a=1 is identically one by construction rather
    than estimated.
    """

    n: int
    truncation_bound: float
    theta_hat: Optional[NDArray] = None
    g_hat: Optional[NDArray] = None
    qbar_w0: Optional[NDArray] = None
    qbar_w1: Optional[NDArray] = None
    pi_w0: Optional[NDArray] = None
    pi_w1: Optional[NDArray] = None
    gdelta_hat: Optional[NDArray] = None
    gtilde_delta_hat: Optional[NDArray] = None
    g_trial_hat: Optional[NDArray] = None
    pibar_hat: Optional[NDArray] = None
    q1_w0: Optional[NDArray] = None
    q1_w1: Optional[NDArray] = None
    q_factual_full: Optional[NDArray] = None
    learner_choice: Dict[str, str] = field(default_factory=dict)
    cv_risks: Dict[str, Dict[str, float]] = field(default_factory=dict)
    truncation_events: Dict[str, int] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    full_models: Dict[str, object] = field(default_factory=dict)

    def qbar_factual(self, a: NDArray) -> NDArray:
        return np.where(a == 1, self.qbar_w1, self.qbar_w0)

    def pi_factual(self, a: NDArray) -> NDArray:
        return np.where(a == 1, self.pi_w1, self.pi_w0)

    def summary(self) -> dict:
        return {
            "learner_choice": dict(self.learner_choice),
            "cv_risks": {k: dict(v) for k, v in self.cv_risks.items()},
            "truncation_bound": self.truncation_bound,
            "truncation_events": dict(self.truncation_events),
            "warnings": list(self.warnings),
        }


def cv_risk(
    candidate: str,
    nuisance: str,
    dataset: FusionDataset,
    folds: FoldAssignment,
    config: Optional[AnalysisConfig] = None,
) -> float:
    """Mean held-out risk of one candidate on one nuisance target.

    Returns +inf when the candidate fails on any fold (the disqualification
    sentinel used by the selector).
    """
    config = config or AnalysisConfig()
    target = _target_catalog(dataset.external_controls_only)[nuisance]
    X = target.features(dataset)
    y = target.label(dataset)
    eligible = target.train_mask(dataset)
    risks = []
    for k in range(folds.v):
        train = (folds.fold_of != k) & eligible
        test = (folds.fold_of == k) & eligible
        if train.sum() == 0 or test.sum() == 0:
            continue
        try:
            predict = _fit_candidate(candidate, X[train], y[train], target.kind, config)
            risks.append(_risk(target.kind, y[test], predict(X[test])))
        except Exception:
            return np.inf
    if not risks:
        return np.inf
    value = float(np.mean(risks))
    return value if np.isfinite(value) else np.inf


def fit_nuisances(
    dataset: FusionDataset,
    folds: FoldAssignment,
    library: Optional[Sequence[str]] = None,
    truncation: Optional[float] = None,
    config: Optional[AnalysisConfig] = None,
    targets: Optional[Sequence[str]] = None,
    refit_full: bool = False,
) -> NuisanceFit:
    """Cross-fitted discrete-selector estimation of the requested nuisances.

    ``targets`` defaults to the core set (plus the censoring mechanisms when
    outcomes are missing); estimators that need the trial-anchored extras
    request them explicitly. With ``refit_full`` the selected candidate is
    also refit on the full sample so new rows can be scored (used by the
    cross-validated estimator variant).
    """
    config = config or AnalysisConfig()
    library = tuple(library if library is not None else config.library)
    eps = float(truncation if truncation is not None else config.truncation)
    if not library:
        raise ValueError("learner library must be non-empty")

    catalog = _target_catalog(dataset.external_controls_only)
    if targets is None:
        targets = list(CORE_TARGETS)
        if dataset.has_censoring:
            targets += list(CENSOR_TARGETS)
    fit = NuisanceFit(n=dataset.n, truncation_bound=eps)

    # censoring mechanisms default to one when outcomes are fully observed
    if not dataset.has_censoring:
        fit.gdelta_hat = np.ones(dataset.n)
        fit.gtilde_delta_hat = np.ones(dataset.n)

    for name in targets:
        if name in CENSOR_TARGETS and not dataset.has_censoring:
            continue
        target = catalog[name]
        X = target.features(dataset)
        y = target.label(dataset)
        eligible = target.train_mask(dataset)

        # train every candidate on every fold; store held-out predictions
        factual = {c: np.full(dataset.n, np.nan) for c in library}
        extras = {
            c: {tag: np.full(dataset.n, np.nan) for tag, _, _ in target.eval_points}
            for c in library
        }
        fold_risks = {c: [] for c in library}
        disqualified = set()
        for k in range(folds.v):
            train = (folds.fold_of != k) & eligible
            test = folds.fold_of == k
            test_eval = test & eligible
            if train.sum() == 0:
                raise NuisanceError(f"no training rows for nuisance {name!r} in fold {k}")
            for c in library:
                if c in disqualified:
                    continue
                try:
                    predict = _fit_candidate(c, X[train], y[train], target.kind, config)
                    factual[c][test] = predict(X[test])
                    for tag, a_ov, s_ov in target.eval_points:
                        X_ov = target.features(dataset, a=a_ov, s=s_ov)
                        extras[c][tag][test] = predict(X_ov[test])
                    if test_eval.sum():
                        fold_risks[c].append(_risk(target.kind, y[test_eval], factual[c][test_eval]))
                except Exception as exc:  # candidate is out for this target
                    disqualified.add(c)
                    fit.warnings.append(f"{name}: candidate {c!r} disqualified ({exc})")
        mean_risks = {}
        for c in library:
            if c in disqualified or not fold_risks[c]:
                mean_risks[c] = np.inf
            else:
                value = float(np.mean(fold_risks[c]))
                mean_risks[c] = value if np.isfinite(value) else np.inf
        best = min(library, key=lambda c: (mean_risks[c], library.index(c)))
        if not np.isfinite(mean_risks[best]):
            raise NuisanceError(f"every candidate failed for nuisance {name!r}")
        fit.learner_choice[name] = best
        fit.cv_risks[name] = {c: mean_risks[c] for c in library}

        chosen_factual = factual[best]
        chosen_extras = extras[best]
        if refit_full:
            predict_full = _fit_candidate(
                best, X[eligible], y[eligible], target.kind, config
            )
            fit.full_models[name] = (predict_full, target.features)

        def truncate(values: NDArray) -> NDArray:
            clipped = np.clip(values, eps, 1.0 - eps)
            fit.truncation_events[name] = fit.truncation_events.get(name, 0) + int(
                np.sum(clipped != values)
            )
            return clipped

        if name == "theta":
            fit.theta_hat = chosen_factual
        elif name == "g":
            fit.g_hat = truncate(chosen_factual)
        elif name == "qbar":
            fit.qbar_w0 = chosen_extras["a0"]
            fit.qbar_w1 = chosen_extras["a1"]
        elif name == "pi":
            fit.pi_w0 = truncate(chosen_extras["a0"])
            if dataset.external_controls_only:
                fit.pi_w1 = np.ones(dataset.n)  # forced: no external treated arm
            else:
                fit.pi_w1 = truncate(chosen_extras["a1"])
        elif name == "gdelta":
            fit.gdelta_hat = truncate(chosen_factual)
        elif name == "gtilde_delta":
            fit.gtilde_delta_hat = truncate(chosen_factual)
        elif name == "g_trial":
            fit.g_trial_hat = truncate(chosen_factual)
        elif name == "pibar":
            fit.pibar_hat = truncate(chosen_factual)
        elif name == "q_full":
            fit.q1_w0 = chosen_extras["s1a0"]
            fit.q1_w1 = chosen_extras["s1a1"]
            fit.q_factual_full = chosen_factual

    if config.known_trial_treatment_prob is not None and "g" in targets:
        declared = config.known_trial_treatment_prob
        empirical = float(dataset.a[dataset.s == 1].mean())
        if abs(empirical - declared) > 0.05:
            fit.warnings.append(
                "declared trial treatment probability "
                f"{declared:.3f} differs from the empirical share {empirical:.3f}"
            )
    return fit


def predict_nuisances(
    fit: NuisanceFit, dataset: FusionDataset, eps: Optional[float] = None
) -> NuisanceFit:
    """Score a new dataset with the full-sample models stored in ``fit``."""
    if not fit.full_models:
        raise ValueError("fit_nuisances(..., refit_full=True) is required first")
    eps = float(fit.truncation_bound if eps is None else eps)
    out = NuisanceFit(n=dataset.n, truncation_bound=eps)
    out.learner_choice = dict(fit.learner_choice)
    if not dataset.has_censoring:
        out.gdelta_hat = np.ones(dataset.n)
        out.gtilde_delta_hat = np.ones(dataset.n)

    def clip(name, values):
        clipped = np.clip(values, eps, 1.0 - eps)
        out.truncation_events[name] = int(np.sum(clipped != values))
        return clipped

    for name, (predict, features) in fit.full_models.items():
        if name == "theta":
            out.theta_hat = predict(features(dataset))
        elif name == "g":
            out.g_hat = clip(name, predict(features(dataset)))
        elif name == "qbar":
            out.qbar_w0 = predict(features(dataset, a=0))
            out.qbar_w1 = predict(features(dataset, a=1))
        elif name == "pi":
            out.pi_w0 = clip(name, predict(features(dataset, a=0)))
            if dataset.external_controls_only:
                out.pi_w1 = np.ones(dataset.n)
            else:
                out.pi_w1 = clip(name, predict(features(dataset, a=1)))
        elif name == "gdelta":
            out.gdelta_hat = clip(name, predict(features(dataset)))
        elif name == "gtilde_delta":
            out.gtilde_delta_hat = clip(name, predict(features(dataset)))
        elif name == "g_trial":
            out.g_trial_hat = clip(name, predict(features(dataset)))
        elif name == "pibar":
            out.pibar_hat = clip(name, predict(features(dataset)))
        elif name == "q_full":
            out.q1_w0 = predict(features(dataset, a=0, s=1))
            out.q1_w1 = predict(features(dataset, a=1, s=1))
            out.q_factual_full = predict(features(dataset))
    return out
