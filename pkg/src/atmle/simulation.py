"""Simulation scenarios, ground-truth values, and the Monte Carlo harness.

Scenarios (a)-(d) draw fixed trial/external stratum sizes with covariates
i.i.d. within stratum; the trial-enrollment positivity scenarios draw the
study indicator from a covariate-dependent enrollment model, so stratum sizes
are random. The additive shift B enters the outcome only for external rows,
making the conditional enrollment effect exactly -B.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.special import expit

from .config import AnalysisConfig
from .data import FusionDataset
from . import estimators as est

SCENARIO_IDS = ("a", "b", "c", "d", "positivity")
TRIAL_TREATMENT_PROB = 0.67
DEFAULT_ESTIMATORS = ("atmle", "tmle", "pooled-aipw", "rct-only")

ESTIMATOR_REGISTRY = {
    "atmle": est.atmle,
    "cv-atmle": est.cv_atmle,
    "tmle": est.baseline_full_tmle,
    "pooled-aipw": est.baseline_pooled_aipw,
    "rct-only": est.baseline_rct_only,
}


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation setting; ``alpha`` only applies to positivity scenarios."""

    id: str
    n_rct: int
    n_external: int
    seed: int = 0
    alpha: Optional[float] = None
    censoring_rate: float = 0.0  # independent missing-outcome rate, 0 = fully observed

    def __post_init__(self) -> None:
        if self.id not in SCENARIO_IDS:
            raise ValueError(f"unknown scenario {self.id!r}")
        if self.n_rct <= 0 or self.n_external <= 0:
            raise ValueError("sample sizes must be positive")
        if (self.id == "positivity") != (self.alpha is not None):
            raise ValueError("alpha is required exactly for positivity scenarios")
        if not 0.0 <= self.censoring_rate < 1.0:
            raise ValueError("censoring_rate must be in [0, 1)")


def _external_treatment_logit(scenario: str, w1: NDArray) -> NDArray:
    if scenario in ("a", "b"):
        return 0.5 * w1
    if scenario in ("c", "d"):
        return w1
    return -0.5 * w1


def _shift(scenario: str, w: NDArray, a: NDArray) -> NDArray:
    """Additive outcome shift B(W, A) applied to external rows."""
    w1, w2, w3 = w[:, 0], w[:, 1], w[:, 2]
    if scenario == "a":
        return 0.2 + 1.1 * w1 * (a == 0)
    if scenario == "b":
        return 0.5 + 3.1 * w1 * (a == 0) + 0.8 * w3
    if scenario == "c":
        return 0.3 + 0.9 * w2 * (a == 0) + 0.7 * w3 * (w2 > 0.5)
    if scenario == "d":
        return 0.3 + 1.1 * w1 * (a == 0) + 0.9 * w2**2 * w3
    return 0.2 + 2.1 * w1 * a


def _outcome_mean(scenario: str, w: NDArray, a: NDArray, s: NDArray) -> NDArray:
    w1, w2, w3 = w[:, 0], w[:, 1], w[:, 2]
    if scenario in ("a", "b"):
        base = 2.5 + 0.9 * w1 + 1.1 * w2 + 2.7 * w3 + 1.5 * a
    elif scenario in ("c", "d"):
        base = 1.9 + 4.2 * a + 0.9 * w1 + 1.4 * w2 + 2.1 * w3
    else:
        base = 1.9 + 1.5 * a + 0.9 * w1 + 1.4 * w2 + 2.1 * w3
    return base + (s == 0) * _shift(scenario, w, a)


def _noise_sd(scenario: str) -> float:
    return 0.2 if scenario == "positivity" else 1.0


def _draw_w(scenario: str, n: int, rng: np.random.Generator) -> NDArray:
    if scenario in ("a", "b"):
        return rng.standard_normal((n, 3))
    if scenario in ("c", "d"):
        return rng.uniform(0.0, 1.0, (n, 3))
    return rng.uniform(-1.0, 1.0, (n, 3))


def _enrollment_prob(spec: ScenarioSpec, w: NDArray) -> NDArray:
    w1, w2 = w[:, 0], w[:, 1]
    return expit(
        spec.alpha * (-2.0 + w1 + w2 + np.sin(2.0 * w1) + np.sin(2.0 * w2))
    )


def true_ate(scenario: str) -> float:
    """The treatment coefficient is additive in every scenario's outcome model."""
    return 4.2 if scenario in ("c", "d") else 1.5


def generate(spec: ScenarioSpec) -> FusionDataset:
    """Draw one dataset; deterministic given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    if spec.id == "positivity":
        n = spec.n_rct + spec.n_external
        w = _draw_w(spec.id, n, rng)
        s = (rng.random(n) < _enrollment_prob(spec, w)).astype(np.int64)
    else:
        n = spec.n_rct + spec.n_external
        w = _draw_w(spec.id, n, rng)
        s = np.concatenate(
            [np.ones(spec.n_rct, np.int64), np.zeros(spec.n_external, np.int64)]
        )
    p_treat = np.where(
        s == 1,
        TRIAL_TREATMENT_PROB,
        expit(_external_treatment_logit(spec.id, w[:, 0])),
    )
    a = (rng.random(n) < p_treat).astype(np.int64)
    y = _outcome_mean(spec.id, w, a, s) + _noise_sd(spec.id) * rng.standard_normal(n)
    delta = None
    if spec.censoring_rate > 0.0:
        delta = (rng.random(n) >= spec.censoring_rate).astype(np.int64)
        y = np.where(delta == 1, y, 0.0)
    return FusionDataset(s=s, w=w, a=a, y=y, delta=delta)


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrueValues:
    psi: float
    psi_tilde: float
    psi_sharp: float
    mc_se: float = 0.0

    def __iter__(self):
        return iter((self.psi, self.psi_tilde, self.psi_sharp))


def _pi0_given_wa(spec: ScenarioSpec, w: NDArray, a_val: int) -> NDArray:
    """P(S=0 | W, A=a) implied by the generative mechanism."""
    if spec.id == "positivity":
        p_s1_w = _enrollment_prob(spec, w)
    else:
        p_s1_w = np.full(w.shape[0], spec.n_rct / (spec.n_rct + spec.n_external))
    g_trial = TRIAL_TREATMENT_PROB if a_val == 1 else 1.0 - TRIAL_TREATMENT_PROB
    g_ext1 = expit(_external_treatment_logit(spec.id, w[:, 0]))
    g_ext = g_ext1 if a_val == 1 else 1.0 - g_ext1
    num1 = p_s1_w * g_trial
    num0 = (1.0 - p_s1_w) * g_ext
    return num0 / (num1 + num0)


def true_values(
    spec: ScenarioSpec,
    n_oracle: int = 10_000_000,
    seed: int = 2024,
    method: str = "contrast",
) -> TrueValues:
    """Exact target value plus Monte Carlo pooled and bias values.

    The target value is read off the outcome equation (the treatment
    coefficient is additive with no trial interaction). The pooled value is
    integrated over covariate draws either via the pooled conditional-mean
    contrast or via the enrollment-weighted conditional-effect form; the two
    agree up to Monte Carlo error and make a dual oracle for tests.
    """
    if method not in ("contrast", "weighted"):
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng([seed, 0 if method == "contrast" else 1])
    psi = true_ate(spec.id)
    batch = 1_000_000
    total = 0
    acc = 0.0
    acc2 = 0.0
    while total < n_oracle:
        m = min(batch, n_oracle - total)
        w = _draw_w(spec.id, m, rng)
        pi0_a1 = _pi0_given_wa(spec, w, 1)
        pi0_a0 = _pi0_given_wa(spec, w, 0)
        b1 = _shift(spec.id, w, np.ones(m, np.int64))
        b0 = _shift(spec.id, w, np.zeros(m, np.int64))
        if method == "contrast":
            # pooled conditional means: Qbar(w, a) = base(w, a) + Pi0(w, a) B(w, a)
            vals = pi0_a1 * b1 - pi0_a0 * b0
        else:
            # enrollment-weighted conditional effects with tau_S = -B
            vals = pi0_a0 * (-b0) - pi0_a1 * (-b1)
        acc += float(vals.sum())
        acc2 += float((vals**2).sum())
        total += m
    gap = acc / total
    var = acc2 / total - gap**2
    mc_se = float(np.sqrt(max(var, 0.0) / total))
    psi_tilde = psi + gap
    return TrueValues(psi=psi, psi_tilde=psi_tilde, psi_sharp=gap, mc_se=mc_se)


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------


@dataclass
class MonteCarloResult:
    """Per-estimator operating characteristics plus the per-rep records."""

    spec: ScenarioSpec
    truth: TrueValues
    reps: int
    records: pd.DataFrame  # one row per (rep, estimator)
    metrics: pd.DataFrame  # one row per estimator
    failures: Dict[str, int] = field(default_factory=dict)


def _rep_seeds(master_seed: int, rep: int) -> Tuple[int, int]:
    state = np.random.SeedSequence(entropy=[int(master_seed), int(rep)]).generate_state(2)
    return int(state[0]), int(state[1])


def _run_rep(args) -> List[dict]:
    spec, config, estimator_names, rep = args
    data_seed, config_seed = _rep_seeds(spec.seed, rep)
    dataset = generate(replace(spec, seed=data_seed))
    rows = []
    for name in estimator_names:
        record = {"rep": rep, "estimator": name}
        try:
            report = ESTIMATOR_REGISTRY[name](dataset, replace(config, seed=config_seed))
            record.update(
                estimate=report.psi,
                se=report.se,
                ci_low=report.ci95[0],
                ci_high=report.ci95[1],
                psi_tilde=report.psi_tilde,
                psi_sharp=report.psi_sharp,
                error="",
            )
        except Exception as exc:
            record.update(
                estimate=np.nan,
                se=np.nan,
                ci_low=np.nan,
                ci_high=np.nan,
                psi_tilde=np.nan,
                psi_sharp=np.nan,
                error=f"{type(exc).__name__}: {exc}",
            )
        rows.append(record)
    return rows


def _summarize(
    spec: ScenarioSpec,
    truth: TrueValues,
    records: pd.DataFrame,
    estimator_names: Sequence[str],
) -> Tuple[pd.DataFrame, Dict[str, int]]:
    metrics_rows = []
    failures = {}
    mse_by_name = {}
    for name in estimator_names:
        sub = records[(records["estimator"] == name) & (records["error"] == "")]
        failures[name] = int((records["estimator"] == name).sum() - len(sub))
        if len(sub) == 0:
            continue
        estimates = sub["estimate"].to_numpy()
        bias = float(estimates.mean() - truth.psi)
        variance = float(np.mean((estimates - estimates.mean()) ** 2))
        mse = float(np.mean((estimates - truth.psi) ** 2))
        covered = (sub["ci_low"] <= truth.psi) & (truth.psi <= sub["ci_high"])
        mse_by_name[name] = mse
        metrics_rows.append(
            {
                "scenario": _scenario_label(spec),
                "estimator": name,
                "reps_used": len(sub),
                "failures": failures[name],
                "mean_estimate": float(estimates.mean()),
                "bias": bias,
                "variance": variance,
                "mse": mse,
                "coverage": float(covered.mean()),
                "mean_ci_width": float((sub["ci_high"] - sub["ci_low"]).mean()),
            }
        )
    metrics = pd.DataFrame(metrics_rows)
    reference = mse_by_name.get("rct-only", np.nan)
    metrics["relative_mse"] = reference / metrics["mse"]
    return metrics, failures


def _scenario_label(spec: ScenarioSpec) -> str:
    if spec.id == "positivity":
        return f"positivity(alpha={spec.alpha:g})"
    return spec.id


def run_study(
    specs: Sequence[ScenarioSpec],
    estimator_names: Sequence[str] = DEFAULT_ESTIMATORS,
    reps: int = 300,
    jobs: int = 1,
    config: Optional[AnalysisConfig] = None,
    n_oracle: int = 2_000_000,
) -> List[MonteCarloResult]:
    """Monte Carlo comparison of estimators across scenarios.

    Per-rep seeds derive from (scenario seed, rep index) through a seed
    sequence, so the result table is identical for any worker count; rows are
    reduced in rep order. A failing estimator is excluded from that rep with
    the failure counted. Relative MSE is the trial-only estimator's MSE over
    each estimator's MSE.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    unknown = set(estimator_names) - set(ESTIMATOR_REGISTRY)
    if unknown:
        raise ValueError(f"unknown estimators: {sorted(unknown)}")
    config = config or AnalysisConfig()
    results = []
    for spec in specs:
        truth = true_values(spec, n_oracle=n_oracle)
        tasks = [(spec, config, tuple(estimator_names), rep) for rep in range(reps)]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                nested = list(pool.map(_run_rep, tasks, chunksize=4))
        else:
            nested = [_run_rep(t) for t in tasks]
        rows = [row for rep_rows in nested for row in rep_rows]
        records = pd.DataFrame(rows)
        failed = records[records["error"] != ""]
        for _, row in failed.iterrows():
            warnings.warn(
                f"{_scenario_label(spec)} rep {row['rep']} {row['estimator']}: {row['error']}"
            )
        metrics, failures = _summarize(spec, truth, records, estimator_names)
        records.insert(0, "scenario", _scenario_label(spec))
        results.append(
            MonteCarloResult(
                spec=spec,
                truth=truth,
                reps=reps,
                records=records,
                metrics=metrics,
                failures=failures,
            )
        )
    return results


def tidy_metrics(results: Sequence[MonteCarloResult]) -> pd.DataFrame:
    """Long-format (scenario, estimator, metric, value) table, plot-ready."""
    frames = []
    for res in results:
        melted = res.metrics.melt(
            id_vars=["scenario", "estimator"], var_name="metric", value_name="value"
        )
        frames.append(melted)
    out = pd.concat(frames, ignore_index=True)
    return out.sort_values(["scenario", "estimator", "metric"], kind="stable").reset_index(
        drop=True
    )
