"""Exact estimands, projections, and gradient validation on finite distributions.

A ``DiscreteDistribution`` stores the full joint pmf of (S, W, A, Y) on a
product grid, so every conditional mean, estimand, weighted projection, and
canonical gradient can be enumerated exactly. Pathwise-derivative checks
perturb the pmf along linear paths p_eps = (1 + eps * direction) p, whose
score at eps = 0 is exactly the direction; a finite-difference derivative of
the estimand along the path is then an oracle for E[D * direction].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .basis import DOMAIN_W, DOMAIN_WA, BasisFunction, BasisSet
from .data import FusionDataset
from . import eif

PATHWISE_STEP = 1e-5


class PositivityError(ValueError):
    """A required conditional probability is zero."""


class DiscreteDistribution:
    """Joint distribution of (S, W, A, Y) with probabilities pmf[s, iw, a, iy]."""

    def __init__(self, w_grid: NDArray, y_grid: NDArray, pmf: NDArray) -> None:
        self.w_grid = np.atleast_2d(np.asarray(w_grid, dtype=np.float64))
        if self.w_grid.shape[0] == 1 and self.w_grid.shape[1] > 1:
            # accept a flat grid for scalar covariates
            self.w_grid = self.w_grid.T
        self.y_grid = np.asarray(y_grid, dtype=np.float64)
        self.pmf = np.asarray(pmf, dtype=np.float64)
        n_w, n_y = self.w_grid.shape[0], len(self.y_grid)
        if self.pmf.shape != (2, n_w, 2, n_y):
            raise ValueError("pmf must have shape (2, n_w, 2, n_y)")
        if np.any(self.pmf < 0):
            raise ValueError("negative probability")
        total = self.pmf.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total}, not 1")
        if np.any(self.p_sw[1] <= 0):
            raise PositivityError("some covariate point has no trial mass")
        if np.any(self.p_swa[1] <= 0):
            raise PositivityError("some trial covariate point misses a treatment arm")

    # -- marginals and conditionals (all exact) -----------------------------

    @property
    def d(self) -> int:
        return self.w_grid.shape[1]

    @property
    def p_w(self) -> NDArray:
        return self.pmf.sum(axis=(0, 2, 3))

    @property
    def p_sw(self) -> NDArray:
        return self.pmf.sum(axis=(2, 3))

    @property
    def p_swa(self) -> NDArray:
        return self.pmf.sum(axis=3)

    @property
    def p_wa(self) -> NDArray:
        return self.pmf.sum(axis=(0, 3))

    @property
    def p_s1(self) -> float:
        return float(self.p_sw[1].sum())

    def q_swa(self) -> NDArray:
        """E(Y | S, W, A), nan where the cell has no mass."""
        num = self.pmf @ self.y_grid
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.p_swa > 0, num / self.p_swa, np.nan)

    def qbar_wa(self) -> NDArray:
        num = self.pmf.sum(axis=0) @ self.y_grid
        return num / self.p_wa

    def theta_w(self) -> NDArray:
        num = self.pmf.sum(axis=(0, 2)) @ self.y_grid
        return num / self.p_w

    def g1_w(self) -> NDArray:
        """P(A=1 | W), marginalized over S."""
        return self.p_wa[:, 1] / self.p_w

    def g_trial1_w(self) -> NDArray:
        """P(A=1 | S=1, W)."""
        return self.p_swa[1, :, 1] / self.p_sw[1]

    def pi1_wa(self) -> NDArray:
        """P(S=1 | W, A), shape (n_w, 2)."""
        return self.p_swa[1] / self.p_wa

    def pibar1_w(self) -> NDArray:
        """P(S=1 | W)."""
        return self.p_sw[1] / self.p_w

    def tau_s_wa(self) -> NDArray:
        """E(Y|S=1,W,A) - E(Y|S=0,W,A); nan on arms without external mass."""
        q = self.q_swa()
        return q[1] - q[0]

    def tau_a_w(self) -> NDArray:
        qbar = self.qbar_wa()
        return qbar[:, 1] - qbar[:, 0]

    @property
    def external_controls_only(self) -> bool:
        return bool(np.all(self.p_swa[0, :, 1] == 0.0))

    # -- path perturbation ---------------------------------------------------

    def perturb(self, direction: NDArray, eps: float) -> "DiscreteDistribution":
        """Linear path (1 + eps * direction) * pmf, renormalized."""
        new = self.pmf * (1.0 + eps * direction)
        if np.any(new < 0):
            raise ValueError("direction too large: perturbed pmf is negative")
        return DiscreteDistribution(self.w_grid, self.y_grid, new / new.sum())

    def expectation(self, values: NDArray) -> float:
        return float(np.sum(self.pmf * values))

    # -- sampling ------------------------------------------------------------

    def sample(self, n: int, rng: np.random.Generator) -> FusionDataset:
        flat = self.pmf.reshape(-1)
        idx = rng.choice(len(flat), size=n, p=flat)
        s_idx, w_idx, a_idx, y_idx = np.unravel_index(idx, self.pmf.shape)
        return FusionDataset(
            s=s_idx,
            w=self.w_grid[w_idx],
            a=a_idx,
            y=self.y_grid[y_idx],
        )

    def atom_arrays(self) -> Dict[str, NDArray]:
        """Flattened per-atom arrays aligned with pmf.reshape(-1)."""
        shape = self.pmf.shape
        s_idx, w_idx, a_idx, y_idx = np.unravel_index(np.arange(np.prod(shape)), shape)
        return {
            "s": s_idx.astype(np.float64),
            "iw": w_idx,
            "a": a_idx.astype(np.float64),
            "y": self.y_grid[y_idx],
            "prob": self.pmf.reshape(-1),
        }


# ---------------------------------------------------------------------------
# exact estimands
# ---------------------------------------------------------------------------


def exact_psi(dist: DiscreteDistribution) -> float:
    """Trial-anchored ATE averaged over the pooled covariate distribution."""
    q = dist.q_swa()
    return float(dist.p_w @ (q[1, :, 1] - q[1, :, 0]))


def exact_psi2(dist: DiscreteDistribution) -> float:
    """Trial-anchored ATE averaged over the trial covariate distribution."""
    q = dist.q_swa()
    p_w_given_s1 = dist.p_sw[1] / dist.p_s1
    return float(p_w_given_s1 @ (q[1, :, 1] - q[1, :, 0]))


def exact_psi_tilde(dist: DiscreteDistribution) -> float:
    """Pooled ATE that ignores the study indicator."""
    return float(dist.p_w @ dist.tau_a_w())


def exact_psi_sharp(dist: DiscreteDistribution, method: str = "difference") -> float:
    """Bias estimand, either as pooled minus anchored or in weighted-effect form.

    The two forms agreeing to enumeration accuracy on any valid distribution
    is the executable content of the decomposition identity.
    """
    if method == "difference":
        return exact_psi_tilde(dist) - exact_psi(dist)
    if method != "weighted":
        raise ValueError(f"unknown method {method!r}")
    pi1 = dist.pi1_wa()
    tau_s = dist.tau_s_wa()
    term0 = (1.0 - pi1[:, 0]) * tau_s[:, 0]
    if dist.external_controls_only:
        # the treated arm has no external mass: its weight is identically zero
        contrast = term0
    else:
        contrast = term0 - (1.0 - pi1[:, 1]) * tau_s[:, 1]
    return float(dist.p_w @ contrast)


# ---------------------------------------------------------------------------
# exact working-model projections
# ---------------------------------------------------------------------------


def _solve_weighted(X: NDArray, weights: NDArray, target: NDArray) -> NDArray:
    gram = X.T @ (weights[:, None] * X)
    rhs = X.T @ (weights * target)
    return np.linalg.solve(gram, rhs)


def exact_projection_beta(
    dist: DiscreteDistribution,
    basis: BasisSet,
    target: str,
    characterization: int = 1,
) -> NDArray:
    """Exact working-model coefficients under the variance-stabilizing weights.

    Three equivalent characterizations are implemented: (1) the weighted
    projection of the conditional effect, (2) the regression of the outcome
    regression on the residualized design, and (3) the regression of Y itself
    on the residualized design, each solved by enumeration.
    """
    if target not in ("tau_a", "tau_s"):
        raise ValueError(f"unknown target {target!r}")
    if target == "tau_a":
        if basis.domain != DOMAIN_W:
            raise ValueError("tau_a projection needs a covariate-only basis")
        phi = basis.design_matrix(dist.w_grid)
        g1 = dist.g1_w()
        if characterization == 1:
            weights = dist.p_w * g1 * (1.0 - g1)
            return _solve_weighted(phi, weights, dist.tau_a_w())
        if characterization == 2:
            X = np.vstack([-g1[:, None] * phi, (1.0 - g1)[:, None] * phi])
            weights = np.concatenate([dist.p_wa[:, 0], dist.p_wa[:, 1]])
            qbar = dist.qbar_wa()
            targets = np.concatenate([qbar[:, 0], qbar[:, 1]])
            return _solve_weighted(X, weights, targets)
        if characterization == 3:
            atoms = dist.atom_arrays()
            phi_atoms = phi[atoms["iw"]]
            X = (atoms["a"] - g1[atoms["iw"]])[:, None] * phi_atoms
            return _solve_weighted(X, atoms["prob"], atoms["y"])
        raise ValueError("characterization must be 1, 2, or 3")

    if basis.domain != DOMAIN_WA:
        raise ValueError("tau_s projection needs a (covariate, treatment) basis")
    phi0 = basis.design_matrix(dist.w_grid, 0)
    phi1 = basis.design_matrix(dist.w_grid, 1)
    pi1 = dist.pi1_wa()
    if characterization == 1:
        X = np.vstack([phi0, phi1])
        weights = np.concatenate(
            [
                dist.p_wa[:, 0] * pi1[:, 0] * (1.0 - pi1[:, 0]),
                dist.p_wa[:, 1] * pi1[:, 1] * (1.0 - pi1[:, 1]),
            ]
        )
        tau_s = np.nan_to_num(dist.tau_s_wa(), nan=0.0)  # zero-weight cells only
        targets = np.concatenate([tau_s[:, 0], tau_s[:, 1]])
        return _solve_weighted(X, weights, targets)
    if characterization == 2:
        q = dist.q_swa()
        rows, weights, targets = [], [], []
        for s_val in (0, 1):
            for a_val in (0, 1):
                phi = phi0 if a_val == 0 else phi1
                rows.append((s_val - pi1[:, a_val])[:, None] * phi)
                weights.append(dist.p_swa[s_val, :, a_val])
                targets.append(np.nan_to_num(q[s_val, :, a_val], nan=0.0))
        return _solve_weighted(
            np.vstack(rows), np.concatenate(weights), np.concatenate(targets)
        )
    if characterization == 3:
        atoms = dist.atom_arrays()
        phi_atoms = np.where(
            (atoms["a"] == 1)[:, None], phi1[atoms["iw"]], phi0[atoms["iw"]]
        )
        pi_fact = pi1[atoms["iw"], atoms["a"].astype(np.int64)]
        X = (atoms["s"] - pi_fact)[:, None] * phi_atoms
        return _solve_weighted(X, atoms["prob"], atoms["y"])
    raise ValueError("characterization must be 1, 2, or 3")


def exact_pooled_projection(dist: DiscreteDistribution, basis: BasisSet) -> float:
    """Pooled-ATE projection estimand under a fixed CATE working model."""
    beta = exact_projection_beta(dist, basis, "tau_a")
    phi = basis.design_matrix(dist.w_grid)
    return float(dist.p_w @ (phi @ beta))


def exact_sharp_projection(dist: DiscreteDistribution, basis: BasisSet) -> float:
    """Bias projection estimand under a fixed enrollment-effect working model."""
    beta = exact_projection_beta(dist, basis, "tau_s")
    phi0 = basis.design_matrix(dist.w_grid, 0)
    phi1 = basis.design_matrix(dist.w_grid, 1)
    pi1 = dist.pi1_wa()
    contrast = (1.0 - pi1[:, 0]) * (phi0 @ beta) - (1.0 - pi1[:, 1]) * (phi1 @ beta)
    return float(dist.p_w @ contrast)


# ---------------------------------------------------------------------------
# exact gradients per atom (aligned with pmf.reshape(-1))
# ---------------------------------------------------------------------------


def gradient_psi(dist: DiscreteDistribution) -> NDArray:
    atoms = dist.atom_arrays()
    iw, ai = atoms["iw"], atoms["a"].astype(np.int64)
    q = dist.q_swa()
    q_fact = q[atoms["s"].astype(np.int64), iw, ai]
    return eif.d_psi(
        s=atoms["s"],
        a=atoms["a"],
        y=atoms["y"],
        q1w1=q[1, iw, 1],
        q1w0=q[1, iw, 0],
        q_factual=np.nan_to_num(q_fact, nan=0.0),
        g_trial1=dist.g_trial1_w()[iw],
        pibar1=dist.pibar1_w()[iw],
        psi=exact_psi(dist),
    )


def gradient_psi2(dist: DiscreteDistribution) -> NDArray:
    atoms = dist.atom_arrays()
    iw, ai = atoms["iw"], atoms["a"].astype(np.int64)
    q = dist.q_swa()
    q_fact = q[atoms["s"].astype(np.int64), iw, ai]
    return eif.d_psi2(
        s=atoms["s"],
        a=atoms["a"],
        y=atoms["y"],
        q1w1=q[1, iw, 1],
        q1w0=q[1, iw, 0],
        q_factual=np.nan_to_num(q_fact, nan=0.0),
        g_trial1=dist.g_trial1_w()[iw],
        p_s1=dist.p_s1,
        psi2=exact_psi2(dist),
    )


def gradient_pooled_projection(dist: DiscreteDistribution, basis: BasisSet) -> NDArray:
    beta = exact_projection_beta(dist, basis, "tau_a")
    phi = basis.design_matrix(dist.w_grid)
    g1 = dist.g1_w()
    gram = phi.T @ ((dist.p_w * g1 * (1.0 - g1))[:, None] * phi)
    gram_inverse = np.linalg.inv(gram)
    atoms = dist.atom_arrays()
    iw = atoms["iw"]
    tau = phi @ beta
    residual = atoms["y"] - dist.theta_w()[iw] - (atoms["a"] - g1[iw]) * tau[iw]
    beta_score = eif.beta_score_cate(
        atoms["a"], g1[iw], phi[iw], residual, gram_inverse
    )
    return eif.d_pooled_projection(
        tau_w=tau[iw],
        psi_tilde=exact_pooled_projection(dist, basis),
        beta_score=beta_score,
        basis_means=dist.p_w @ phi,
    )


def gradient_sharp_projection(
    dist: DiscreteDistribution, basis: BasisSet
) -> Dict[str, NDArray]:
    beta = exact_projection_beta(dist, basis, "tau_s")
    phi0 = basis.design_matrix(dist.w_grid, 0)
    phi1 = basis.design_matrix(dist.w_grid, 1)
    pi1 = dist.pi1_wa()
    weights = np.concatenate(
        [
            dist.p_wa[:, 0] * pi1[:, 0] * (1.0 - pi1[:, 0]),
            dist.p_wa[:, 1] * pi1[:, 1] * (1.0 - pi1[:, 1]),
        ]
    )
    X = np.vstack([phi0, phi1])
    gram_inverse = np.linalg.inv(X.T @ (weights[:, None] * X))

    atoms = dist.atom_arrays()
    iw, ai = atoms["iw"], atoms["a"].astype(np.int64)
    tau0, tau1 = phi0 @ beta, phi1 @ beta
    tau_fact = np.where(atoms["a"] == 1, tau1[iw], tau0[iw])
    pi_fact = pi1[iw, ai]
    phi_fact = np.where((atoms["a"] == 1)[:, None], phi1[iw], phi0[iw])
    residual = (
        atoms["y"] - dist.qbar_wa()[iw, ai] - (atoms["s"] - pi_fact) * tau_fact
    )
    beta_score = eif.beta_score_enroll(
        atoms["s"], pi_fact, phi_fact, residual, gram_inverse
    )
    gap = dist.p_w @ ((1.0 - pi1[:, 0])[:, None] * phi0) - dist.p_w @ (
        (1.0 - pi1[:, 1])[:, None] * phi1
    )
    clever = eif.clever_covariate(
        atoms["a"], dist.g1_w()[iw], tau1[iw], tau0[iw], dist.external_controls_only
    )
    return eif.d_sharp_projection(
        s=atoms["s"],
        pi_star1_factual=pi_fact,
        pi_star0_w0=(1.0 - pi1[:, 0])[iw],
        pi_star0_w1=(1.0 - pi1[:, 1])[iw],
        tau_s_w0=tau0[iw],
        tau_s_w1=tau1[iw],
        psi_sharp=exact_sharp_projection(dist, basis),
        clever=clever,
        beta_score=beta_score,
        weighted_mean_gap=gap,
    )


# ---------------------------------------------------------------------------
# pathwise-derivative validation
# ---------------------------------------------------------------------------


def pathwise_check(
    dist: DiscreteDistribution,
    parameter: Callable[[DiscreteDistribution], float],
    gradient_values: NDArray,
    direction: NDArray,
    h: float = PATHWISE_STEP,
) -> float:
    """|finite-difference derivative - E[D * direction]| along a linear path.

    The central difference at steps h and h/2 is Richardson-combined to
    cancel the leading quadratic error term.
    """
    direction = np.asarray(direction, dtype=np.float64).reshape(dist.pmf.shape)
    mean = float(np.sum(dist.pmf * direction))
    if abs(mean) > 1e-10:
        raise ValueError("direction must be mean zero under the distribution")

    def fd(step: float) -> float:
        up = parameter(dist.perturb(direction, step))
        down = parameter(dist.perturb(direction, -step))
        return (up - down) / (2.0 * step)

    d_h, d_half = fd(h), fd(h / 2.0)
    derivative = (4.0 * d_half - d_h) / 3.0
    grad = gradient_values.reshape(dist.pmf.shape)
    inner = float(np.sum(dist.pmf * grad * direction))
    return abs(derivative - inner)


def centered_direction(rng: np.random.Generator, dist: DiscreteDistribution) -> NDArray:
    """Random bounded direction with exact mean zero under the distribution."""
    vals = rng.uniform(-1.0, 1.0, size=dist.pmf.shape)
    vals -= float(np.sum(dist.pmf * vals))
    peak = np.abs(vals).max()
    if peak > 1.0:
        vals /= peak
    return vals


# ---------------------------------------------------------------------------
# random test distributions and bases
# ---------------------------------------------------------------------------


def random_distribution(
    rng: np.random.Generator,
    d: int = 1,
    n_w: int = 3,
    n_y: int = 3,
    eco: bool = False,
) -> DiscreteDistribution:
    """Random full-support distribution (optionally with no external treated arm)."""
    w_grid = np.sort(rng.uniform(-1.0, 1.0, size=(n_w, d)), axis=0)
    y_grid = np.sort(rng.uniform(-1.0, 1.0, size=n_y))
    pmf = rng.random((2, n_w, 2, n_y)) + 0.05
    if eco:
        pmf[0, :, 1, :] = 0.0
    return DiscreteDistribution(w_grid, y_grid, pmf / pmf.sum())


def grid_basis(
    dist: DiscreteDistribution,
    domain: str,
    rng: Optional[np.random.Generator] = None,
    max_terms: Optional[int] = None,
) -> BasisSet:
    """Indicator basis with knots on the distribution's covariate grid.

    Per-dimension knots skip the minimum grid value (that indicator would
    duplicate the intercept). A random subset of terms can be kept to vary
    working-model size across sweep draws; the result is always checked for a
    well-conditioned projection system.
    """
    functions =sorted(
        {
            BasisFunction((j,), (float(u),))
            for j in range(dist.d)
            for u in np.unique(dist.w_grid[:, j])[1:]
        },
        key=lambda f: (f.subset, f.knots),
    )
    if rng is not None and max_terms is not None and len(functions) > max_terms:
        keep = rng.choice(len(functions), size=max_terms, replace=False)
        functions = [functions[i] for i in sorted(keep)]
    functions = [BasisFunction((), ())] + functions
    if domain == DOMAIN_W:
        return BasisSet(functions, DOMAIN_W)
    out = []
    for f in functions:
        out.append(f)
        out.append(BasisFunction(f.subset, f.knots, includes_treatment=True))
    return BasisSet(out, DOMAIN_WA)


def _well_conditioned(dist: DiscreteDistribution, basis: BasisSet) -> bool:
    if basis.domain == DOMAIN_W:
        phi = basis.design_matrix(dist.w_grid)
        g1 = dist.g1_w()
        gram = phi.T @ ((dist.p_w * g1 * (1 - g1))[:, None] * phi)
    else:
        phi0 = basis.design_matrix(dist.w_grid, 0)
        phi1 = basis.design_matrix(dist.w_grid, 1)
        pi1 = dist.pi1_wa()
        weights = np.concatenate(
            [
                dist.p_wa[:, 0] * pi1[:, 0] * (1 - pi1[:, 0]),
                dist.p_wa[:, 1] * pi1[:, 1] * (1 - pi1[:, 1]),
            ]
        )
        X = np.vstack([phi0, phi1])
        gram = X.T @ (weights[:, None] * X)
    eigvals = np.linalg.eigvalsh(gram)
    return bool(eigvals[0] > 1e-8 * max(eigvals[-1], 1e-30))


def sweep_case(
    rng: np.random.Generator, eco: bool = False, max_tries: int = 50
) -> Tuple[DiscreteDistribution, BasisSet, BasisSet]:
    """A random distribution plus well-conditioned working-model bases."""
    for _ in range(max_tries):
        d = int(rng.integers(1, 3))
        dist = random_distribution(
            rng, d=d, n_w=int(rng.integers(2, 5)), n_y=int(rng.integers(2, 4)), eco=eco
        )
        basis_w = grid_basis(dist, DOMAIN_W, rng, max_terms=3)
        basis_wa = grid_basis(dist, DOMAIN_WA, rng, max_terms=2)
        if _well_conditioned(dist, basis_w) and (
            eco or _well_conditioned(dist, basis_wa)
        ):
            return dist, basis_w, basis_wa
    raise RuntimeError("could not draw a well-conditioned sweep case")


# ---------------------------------------------------------------------------
# named validation sweeps (the oracle-check command and acceptance tests)
# ---------------------------------------------------------------------------


@dataclass
class OracleCheck:
    name: str
    worst: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return self.cases == 0 or self.worst < self.tolerance


def run_oracle_sweep(
    n_distributions: int = 50,
    n_directions: int = 5,
    seed: int = 0,
    gradient_overrides: Optional[Dict[str, Callable]] = None,
) -> List[OracleCheck]:
    """Randomized validation of the decomposition identity, the projection
    characterizations, gradient mean-zero, and all pathwise derivatives.

    ``gradient_overrides`` lets tests inject broken gradient evaluators to
    confirm the sweep actually detects errors.
    """
    rng = np.random.default_rng(seed)
    overrides = gradient_overrides or {}
    grad_pooled = overrides.get("pooled", gradient_pooled_projection)
    grad_sharp = overrides.get("sharp", gradient_sharp_projection)
    grad_psi_fn = overrides.get("psi", gradient_psi)
    grad_psi2_fn = overrides.get("psi2", gradient_psi2)

    identity = 0.0
    projection = 0.0
    mean_zero = 0.0
    pathwise: Dict[str, float] = {
        "psi": 0.0,
        "psi2": 0.0,
        "pooled_projection": 0.0,
        "sharp_projection": 0.0,
    }
    n_pathwise_dists = min(n_distributions, max(n_distributions // 2, 20))

    for i in range(n_distributions):
        eco = i % 5 == 4
        dist, basis_w, basis_wa = sweep_case(rng, eco=eco)

        identity = max(
            identity,
            abs(
                exact_psi_tilde(dist)
                - exact_psi_sharp(dist, "weighted")
                - exact_psi(dist)
            ),
        )

        if not eco:
            betas_a = [
                exact_projection_beta(dist, basis_w, "tau_a", c) for c in (1, 2, 3)
            ]
            betas_s = [
                exact_projection_beta(dist, basis_wa, "tau_s", c) for c in (1, 2, 3)
            ]
            for group in (betas_a, betas_s):
                for other in group[1:]:
                    projection = max(
                        projection, float(np.max(np.abs(group[0] - other)))
                    )

        gradients = {
            "psi": grad_psi_fn(dist),
            "psi2": grad_psi2_fn(dist),
            "pooled_projection": grad_pooled(dist, basis_w),
        }
        if not eco:
            gradients["sharp_projection"] = grad_sharp(dist, basis_wa)["total"]
        for values in gradients.values():
            mean_zero = max(mean_zero, abs(dist.expectation(values.reshape(dist.pmf.shape))))

        if i < n_pathwise_dists:
            params = {
                "psi": exact_psi,
                "psi2": exact_psi2,
                "pooled_projection": lambda dd: exact_pooled_projection(dd, basis_w),
            }
            if not eco:
                params["sharp_projection"] = lambda dd: exact_sharp_projection(
                    dd, basis_wa
                )
            for _ in range(n_directions):
                direction = centered_direction(rng, dist)
                for name, param_fn in params.items():
                    disc = pathwise_check(dist, param_fn, gradients[name], direction)
                    deriv_scale = 1.0 + abs(
                        float(np.sum(dist.pmf * gradients[name].reshape(dist.pmf.shape) * direction))
                    )
                    pathwise[name] = max(pathwise[name], disc / deriv_scale)

    checks = [
        OracleCheck("decomposition identity", identity, 1e-10, n_distributions),
        OracleCheck("projection characterizations agree", projection, 1e-10, n_distributions),
        OracleCheck("gradients are mean zero", mean_zero, 1e-10, n_distributions),
    ]
    for name, worst in pathwise.items():
        checks.append(
            OracleCheck(
                f"pathwise derivative: {name}",
                worst,
                1e-6,
                n_pathwise_dists * n_directions if n_distributions else 0,
            )
        )
    return checks
