"""Dataset container, CSV ingestion, validation, and cross-validation folds.

Observations are rows ``(s, w, a, y[, delta])``: a binary trial indicator, a
covariate vector, a binary treatment, an outcome, and an optional binary
outcome-observed indicator (absent means fully observed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray


class DataError(ValueError):
    """Invalid input data or schema."""


@dataclass(frozen=True)
class Observation:
    """A single row of a fusion dataset."""

    s: int
    w: NDArray
    a: int
    y: float
    delta: int = 1


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of observation indices into ``v`` cross-validation folds."""

    v: int
    fold_of: NDArray  # int array, fold id per observation index
    seed: int

    def train_indices(self, fold: int) -> NDArray:
        return np.flatnonzero(self.fold_of != fold)

    def test_indices(self, fold: int) -> NDArray:
        return np.flatnonzero(self.fold_of == fold)

    def rotated(self, by: int = 1) -> "FoldAssignment":
        """Same partition with fold labels cyclically shifted."""
        return FoldAssignment(self.v, (self.fold_of + by) % self.v, self.seed)

    def restrict(self, indices: NDArray) -> "FoldAssignment":
        """Fold assignment for the sub-dataset formed by ``indices``."""
        return FoldAssignment(self.v, self.fold_of[indices], self.seed)


class FusionDataset:
    """Validated container for pooled trial + external observations.

    Arrays are read-only after construction and safe to share across workers.
    """

    def __init__(
        self,
        s: NDArray,
        w: NDArray,
        a: NDArray,
        y: NDArray,
        delta: Optional[NDArray] = None,
        external_controls_only: Optional[bool] = None,
        covariate_names: Optional[Sequence[str]] = None,
    ) -> None:
        self.s = np.asarray(s, dtype=np.int64)
        self.w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        if self.w.shape[0] != len(self.s) and self.w.shape[1] == len(self.s):
            self.w = self.w.T
        self.a = np.asarray(a, dtype=np.int64)
        self.y = np.asarray(y, dtype=np.float64)
        self.delta = None if delta is None else np.asarray(delta, dtype=np.int64)
        self.d = self.w.shape[1]
        self.covariate_names = (
            list(covariate_names)
            if covariate_names is not None
            else [f"w{j + 1}" for j in range(self.d)]
        )
        self._validate()
        auto_eco = not np.any((self.s == 0) & (self.a == 1))
        if external_controls_only is None:
            self.external_controls_only = auto_eco
        else:
            if external_controls_only and not auto_eco:
                raise DataError(
                    "external_controls_only=True but the data contain externally "
                    "treated rows (s=0, a=1)"
                )
            self.external_controls_only = bool(external_controls_only)
        for arr in (self.s, self.w, self.a, self.y, self.delta):
            if arr is not None:
                arr.setflags(write=False)

    def _validate(self) -> None:
        n = len(self.s)
        for name, arr in (("a", self.a), ("y", self.y)):
            if len(arr) != n:
                raise DataError(f"column {name!r} has length {len(arr)}, expected {n}")
        if self.w.shape[0] != n:
            raise DataError(f"covariates have {self.w.shape[0]} rows, expected {n}")
        if n == 0:
            raise DataError("empty dataset")
        if not np.isin(self.s, (0, 1)).all():
            raise DataError("non-binary trial indicator")
        if not np.isin(self.a, (0, 1)).all():
            raise DataError("non-binary treatment indicator")
        if self.delta is not None:
            if len(self.delta) != n:
                raise DataError("delta column has wrong length")
            if not np.isin(self.delta, (0, 1)).all():
                raise DataError("non-binary outcome-observed indicator")
        if not np.isfinite(self.w).all():
            raise DataError("non-finite covariate value (missing values are rejected)")
        observed = np.ones(n, bool) if self.delta is None else self.delta == 1
        if not np.isfinite(self.y[observed]).all():
            raise DataError("non-finite outcome for an observed (delta=1) row")
        for arm in (0, 1):
            if not np.any((self.s == 1) & (self.a == arm)):
                raise DataError(f"empty trial cell: no rows with s=1, a={arm}")

    # -- convenience -------------------------------------------------------

    def __len__(self) -> int:
        return len(self.s)

    @property
    def n(self) -> int:
        return len(self.s)

    @property
    def has_censoring(self) -> bool:
        """True when a delta column is present and at least one outcome is missing."""
        return self.delta is not None and bool(np.any(self.delta == 0))

    @property
    def delta_or_ones(self) -> NDArray:
        if self.delta is None:
            return np.ones(self.n, dtype=np.int64)
        return self.delta

    @property
    def y_observed(self) -> NDArray:
        """Outcome with censored entries zeroed, safe for weighted arithmetic."""
        if self.delta is None:
            return self.y
        return np.where(self.delta == 1, self.y, 0.0)

    def observation(self, i: int) -> Observation:
        return Observation(
            s=int(self.s[i]),
            w=self.w[i].copy(),
            a=int(self.a[i]),
            y=float(self.y[i]),
            delta=int(self.delta[i]) if self.delta is not None else 1,
        )

    def __iter__(self):
        return (self.observation(i) for i in range(self.n))

    def subset(self, indices: NDArray) -> "FusionDataset":
        """Row subset; trial-cell validation is re-applied."""
        return FusionDataset(
            s=self.s[indices],
            w=self.w[indices],
            a=self.a[indices],
            y=self.y[indices],
            delta=None if self.delta is None else self.delta[indices],
            covariate_names=self.covariate_names,
        )

    def stratum_counts(self) -> dict:
        return {
            (si, ai): int(np.sum((self.s == si) & (self.a == ai)))
            for si in (0, 1)
            for ai in (0, 1)
        }

    def write_csv(self, path: str) -> None:
        """Write the dataset with full float precision (repr round-trips)."""
        header = ["s", "a", "y"] + self.covariate_names
        if self.delta is not None:
            header.append("delta")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.n):
                row = [str(self.s[i]), str(self.a[i]), repr(float(self.y[i]))]
                row += [repr(float(v)) for v in self.w[i]]
                if self.delta is not None:
                    row.append(str(self.delta[i]))
                writer.writerow(row)


def _parse_binary(values: list, name: str, error: str) -> NDArray:
    try:
        arr = np.array([float(v) for v in values])
    except (TypeError, ValueError) as exc:
        raise DataError(error) from exc
    if not np.isin(arr, (0.0, 1.0)).all():
        raise DataError(error)
    return arr.astype(np.int64)


def load_csv(
    path: str,
    covariate_columns: Optional[Sequence[str]] = None,
    external_controls_only: Optional[bool] = None,
) -> FusionDataset:
    """Load a dataset from CSV.

    Required columns are ``s``, ``a``, ``y``; covariates are either the
    ``w1..wd`` columns (by convention) or an explicit ``covariate_columns``
    list; an optional ``delta`` column marks observed outcomes. Censored rows
    may leave ``y`` blank; the stored outcome is then 0 and never enters any
    estimate.
    """
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file") from None
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    columns = {name: [row[j] for row in rows] for j, name in enumerate(header)}
    for required in ("s", "a", "y"):
        if required not in columns:
            raise DataError(f"missing column {required!r}")
    if not rows:
        raise DataError("no data rows")
    if covariate_columns is None:
        covariate_columns = sorted(
            (c for c in header if c.startswith("w") and c[1:].isdigit()),
            key=lambda c: int(c[1:]),
        )
        if not covariate_columns:
            raise DataError("no covariate columns found (expected w1..wd)")
    for c in covariate_columns:
        if c not in columns:
            raise DataError(f"missing covariate column {c!r}")

    s = _parse_binary(columns["s"], "s", "non-binary trial indicator")
    a = _parse_binary(columns["a"], "a", "non-binary treatment indicator")
    delta = None
    if "delta" in columns:
        delta = _parse_binary(
            columns["delta"], "delta", "non-binary outcome-observed indicator"
        )

    def parse_float(v: str, col: str, allow_blank: bool) -> float:
        v = v.strip()
        if v == "" and allow_blank:
            return np.nan
        try:
            return float(v)
        except ValueError:
            raise DataError(f"non-numeric value {v!r} in column {col!r}") from None

    w = np.empty((len(rows), len(covariate_columns)))
    for j, c in enumerate(covariate_columns):
        w[:, j] = [parse_float(v, c, allow_blank=False) for v in columns[c]]
        if not np.isfinite(w[:, j]).all():
            raise DataError(f"non-numeric covariate in column {c!r}")
    y = np.array([parse_float(v, "y", allow_blank=True) for v in columns["y"]])
    if delta is not None:
        y = np.where(delta == 1, y, 0.0)
    if not np.isfinite(y).all():
        raise DataError("non-finite outcome for an observed row")

    return FusionDataset(
        s=s,
        w=w,
        a=a,
        y=y,
        delta=delta,
        external_controls_only=external_controls_only,
        covariate_names=list(covariate_columns),
    )


def make_folds(dataset: FusionDataset, v: int, seed: int) -> FoldAssignment:
    """Deterministic fold assignment, stratified by the (s, a) cell.

    Strata are dealt round-robin with a carried pointer, so fold sizes differ
    by at most one both overall and within every stratum. When some stratum is
    smaller than ``v``, assignment falls back to an unstratified round-robin.
    """
    if v < 2:
        raise ValueError("fold count v must be >= 2")
    n = dataset.n
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    strata = [
        np.flatnonzero((dataset.s == si) & (dataset.a == ai))
        for si, ai in ((1, 1), (1, 0), (0, 1), (0, 0))
    ]
    nonempty = [idx for idx in strata if len(idx)]
    stratify = all(len(idx) >= v for idx in nonempty)
    pointer = 0
    groups = nonempty if stratify else [np.arange(n)]
    for idx in groups:
        shuffled = rng.permutation(idx)
        fold_of[shuffled] = (pointer + np.arange(len(shuffled))) % v
        pointer = (pointer + len(shuffled)) % v
    return FoldAssignment(v=v, fold_of=fold_of, seed=seed)
