"""0th-order spline (indicator) basis functions for spline working models.

A basis function is a product of closed-left-endpoint indicators
``I(w_j >= u_j)`` over a subset of covariates, optionally multiplied by
``I(a = 1)`` when the basis lives on the (covariates, treatment) domain.
Knots sit at empirical quantiles of the observed covariate values.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

DOMAIN_W = "w"
DOMAIN_WA = "wa"


@dataclass(frozen=True)
class BasisFunction:
    """One indicator product; empty subset plus no treatment flag = intercept."""

    subset: Tuple[int, ...]
    knots: Tuple[float, ...]
    includes_treatment: bool = False

    def __post_init__(self) -> None:
        if len(self.subset) != len(self.knots):
            raise ValueError("subset and knots must align")
        if tuple(sorted(self.subset)) != self.subset:
            raise ValueError("subset must be sorted")
        if not all(np.isfinite(self.knots)):
            raise ValueError("knots must be finite")

    def __call__(self, w: NDArray, a: Optional[int] = None) -> float:
        value = 1.0
        for j, u in zip(self.subset, self.knots):
            if not w[j] >= u:
                return 0.0
        if self.includes_treatment:
            value *= 1.0 if a == 1 else 0.0
        return value


class BasisSet:
    """Ordered collection of basis functions; index 0 is always the intercept."""

    def __init__(self, functions: Sequence[BasisFunction], domain: str) -> None:
        if domain not in (DOMAIN_W, DOMAIN_WA):
            raise ValueError(f"unknown domain {domain!r}")
        functions = list(functions)
        if not functions or functions[0] != BasisFunction((), ()):
            raise ValueError("basis must start with the intercept")
        keys = {(f.subset, f.knots, f.includes_treatment) for f in functions}
        if len(keys) != len(functions):
            raise ValueError("duplicate basis function")
        if domain == DOMAIN_W and any(f.includes_treatment for f in functions):
            raise ValueError("treatment indicator in a covariate-only basis")
        self.functions = functions
        self.domain = domain

    def __len__(self) -> int:
        return len(self.functions)

    def __iter__(self):
        return iter(self.functions)

    def design_matrix(self, w: NDArray, a: Optional[NDArray] = None) -> NDArray:
        """Evaluate all functions on rows of ``w`` (n x d) into an n x p 0/1 matrix.

        ``a`` may be a length-n array (factual) or a scalar (counterfactual
        arm); it is required exactly when the basis domain includes treatment.
        """
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        n = w.shape[0]
        if self.domain == DOMAIN_WA:
            if a is None:
                raise ValueError("treatment values required for a (w, a) basis")
            a_col = np.broadcast_to(np.asarray(a, dtype=np.float64), (n,))
        elif a is not None:
            raise ValueError("treatment values supplied to a covariate-only basis")

        # Product indicators share per-(dim, knot) columns.
        cache: dict = {}

        def indicator(j: int, u: float) -> NDArray:
            key = (j, u)
            if key not in cache:
                if j >= w.shape[1]:
                    raise ValueError("covariate dimension mismatch")
                cache[key] = (w[:, j] >= u).astype(np.float64)
            return cache[key]

        out = np.empty((n, len(self.functions)))
        for k, f in enumerate(self.functions):
            col = np.ones(n)
            for j, u in zip(f.subset, f.knots):
                col = col * indicator(j, u)
            if f.includes_treatment:
                col = col * a_col
            out[:, k] = col
        return out

    def evaluate(self, w: NDArray, a: Optional[int] = None) -> NDArray:
        """Evaluate at a single point; returns a 0/1 vector of length p."""
        w = np.asarray(w, dtype=np.float64).reshape(1, -1)
        arr = None if a is None else np.array([a])
        return self.design_matrix(w, arr)[0]

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "domain": self.domain,
            "functions": [
                {
                    "subset": list(f.subset),
                    "knots": list(f.knots),
                    "includes_treatment": f.includes_treatment,
                }
                for f in self.functions
            ],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BasisSet":
        payload = json.loads(text)
        functions = [
            BasisFunction(
                subset=tuple(f["subset"]),
                knots=tuple(f["knots"]),
                includes_treatment=bool(f["includes_treatment"]),
            )
            for f in payload["functions"]
        ]
        return cls(functions, payload["domain"])


def quantile_knots(values: NDArray, max_knots: int) -> NDArray:
    """Knots at empirical quantiles of the observed values, always incl. the min.

    All distinct values are used when there are at most ``max_knots`` of them;
    otherwise quantiles at evenly spaced levels are taken from the observed
    values and de-duplicated.
    """
    uniq = np.unique(values[np.isfinite(values)])
    if len(uniq) <= max_knots:
        return uniq
    levels = np.linspace(0.0, 1.0, max_knots)
    knots = np.quantile(values, levels, method="lower")
    return np.unique(knots)


def basis_over_matrix(
    x: NDArray, max_degree: int = 1, max_knots_per_dim: int = 10
) -> BasisSet:
    """Covariate-domain indicator basis over the columns of a feature matrix."""
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    if max_knots_per_dim < 1:
        raise ValueError("max_knots_per_dim must be >= 1")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = x.shape[1]
    knots_by_dim = [quantile_knots(x[:, j], max_knots_per_dim) for j in range(d)]
    functions = [BasisFunction((), ())]
    for degree in range(1, min(max_degree, d) + 1):
        for subset in itertools.combinations(range(d), degree):
            for knots in itertools.product(*(knots_by_dim[j] for j in subset)):
                functions.append(BasisFunction(subset, tuple(float(u) for u in knots)))
    return BasisSet(functions, DOMAIN_W)


def generate_basis(
    dataset,
    domain: str = DOMAIN_W,
    max_degree: int = 1,
    max_knots_per_dim: int = 10,
) -> BasisSet:
    """Enumerate indicator bases over the dataset's covariates.

    Interaction subsets up to ``max_degree`` get the cartesian product of the
    per-covariate knots. On the (covariates, treatment) domain every function
    is emitted both plain and multiplied by ``I(a = 1)``, interleaved, so a
    binary treatment enters as a multiplier rather than a knotted coordinate.
    Output order is deterministic given the dataset.
    """
    base = basis_over_matrix(dataset.w, max_degree, max_knots_per_dim)
    if domain == DOMAIN_W:
        return base
    functions = []
    for f in base:
        functions.append(f)
        functions.append(BasisFunction(f.subset, f.knots, includes_treatment=True))
    return BasisSet(functions, DOMAIN_WA)
