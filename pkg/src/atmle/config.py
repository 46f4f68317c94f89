"""Run configuration shared by the estimators, the CLI, and the study harness."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import yaml


@dataclass
class AnalysisConfig:
    """All tunable knobs of an analysis run.

    Every attribute can be set from a YAML config file (flat key: value
    mapping) and overridden by CLI flags. Defaults are chosen so that a plain
    ``atmle(dataset, AnalysisConfig())`` call is a sensible analysis.
    """

    # data ingestion
    v_folds: int = 5
    seed: int = 1
    covariate_columns: Optional[Sequence[str]] = None
    external_controls_only: Optional[bool] = None  # None = auto-detect

    # nuisance estimation
    library: Sequence[str] = ("intercept", "mainterm", "hal")
    truncation: float = 0.01
    known_trial_treatment_prob: Optional[float] = None
    nuisance_hal_degree: int = 1
    nuisance_hal_knots: int = 5
    nuisance_lambda_grid_size: int = 20

    # working models (0th-order spline bases)
    cate_degree: int = 1
    enroll_degree: int = 2
    max_knots_per_dim: int = 10
    lambda_grid_size: int = 100
    undersmoothing: float = 1.0  # multiplier (<1 keeps a larger model)
    force_main_terms: bool = False

    # estimator variants
    pooled: str = "atmle"  # or "regular-tmle"
    cv_folds: int = 5  # folds of the cross-validated estimator variant

    def __post_init__(self) -> None:
        if self.v_folds < 2:
            raise ValueError("v_folds must be >= 2")
        if not 0 < self.truncation < 0.5:
            raise ValueError("truncation must be in (0, 0.5)")
        if self.pooled not in ("atmle", "regular-tmle"):
            raise ValueError(f"unknown pooled option: {self.pooled!r}")
        if not self.library:
            raise ValueError("learner library must be non-empty")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "AnalysisConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(raw)
        for key in ("library", "covariate_columns"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def from_yaml(cls, path: str) -> "AnalysisConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ValueError("config file must contain a key: value mapping")
        return cls.from_dict(raw)
