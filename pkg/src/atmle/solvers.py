"""Weighted numeric kernels: cross-validated lasso, relaxed OLS, IRLS logistic.

All three are pure functions of their inputs. Design matrices are expected to
carry an explicit intercept column (index 0), which is never penalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from ._kernels import gaussian_cd_path, logistic_cd_path

LAMBDA_MIN_RATIO = 1e-4
PROB_CLIP = 1e-6  # numeric safety clip inside solvers; statistical truncation is separate
PIVOT_RTOL = 1e-10  # collinearity threshold relative to the leading pivot
_FIT_TOL = 1e-12  # relative squared-coefficient-change threshold, final fits
_CV_TOL = 3e-8  # looser threshold inside CV fold fits
_FIT_SWEEPS = 5_000
_CV_SWEEPS = 150


@dataclass
class LassoFit:
    """Lasso solution at the selected penalty, on the original column scale."""

    coefficients: NDArray
    lambda_: float
    support: NDArray
    cv_risk_path: List[Tuple[float, float]]
    kkt_violation: float = 0.0
    objective_rise: float = 0.0
    sweeps: int = 0
    dropped_constant: List[int] = field(default_factory=list)

    def predict(self, design: NDArray) -> NDArray:
        return design @ self.coefficients


@dataclass
class RelaxedFit:
    """Weighted least squares on a support, with the empirical Gram inverse."""

    coefficients: NDArray  # full design length; zero off the retained support
    support: NDArray  # retained column indices, ascending
    gram_inverse: NDArray  # inverse of (1/n) X'WX over the retained columns
    dropped_columns: List[int]

    def predict(self, design: NDArray) -> NDArray:
        return design @ self.coefficients


@dataclass
class LogisticFit:
    coefficients: NDArray
    converged: bool
    offset_supported: bool = True
    warning: Optional[str] = None
    score_sup_norm: float = np.inf

    def predict(self, design: NDArray, offset: Optional[NDArray] = None) -> NDArray:
        eta = design @ self.coefficients
        if offset is not None:
            eta = eta + offset
        return np.clip(expit(eta), PROB_CLIP, 1.0 - PROB_CLIP)


def _check_weights(weights: NDArray, n: int) -> NDArray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError("weights must match the number of rows")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise ValueError("weights must not all be zero")
    return w


def _prepare(X: NDArray, y: NDArray, w: NDArray, penalty_free: Sequence[int]):
    """Standardize for the gaussian CD kernel.

    When column 0 is a genuine constant (a classic intercept), all columns
    and the response are centered (absorbing the intercept) and scaled to
    unit weighted variance, with constant columns dropped. When column 0 is
    not constant (e.g. a residual-transformed working-model design that has
    no free intercept), nothing is centered: every column enters coordinate
    descent scaled to unit weighted second moment, with column 0 unpenalized.
    """
    sw = w / w.sum()
    mu_all = sw @ X
    var = sw @ ((X - mu_all) ** 2)
    rms = np.sqrt(sw @ (X * X))
    centered = bool(var[0] <= 1e-24 * max(1.0, rms[0] ** 2))
    if centered:
        mu = mu_all
        scale = np.sqrt(var)
        keep = np.flatnonzero(scale > 1e-12)
        keep = keep[keep != 0]  # the intercept column is absorbed by centering
        Xs = (X[:, keep] - mu[keep]) / scale[keep]
        ybar = float(sw @ y)
        yc = y - ybar
    else:
        mu = np.zeros(X.shape[1])
        scale = rms
        keep = np.flatnonzero(scale > 1e-12)
        Xs = X[:, keep] / scale[keep]
        ybar = 0.0
        yc = y
    pf = np.ones(len(keep))
    pf[np.isin(keep, np.asarray(list(penalty_free), dtype=np.int64))] = 0.0
    return Xs, yc, sw, mu, scale, keep, ybar, pf, centered


def _lambda_max(Xs: NDArray, yc: NDArray, sw: NDArray, pf: NDArray) -> float:
    free = np.flatnonzero(pf == 0.0)
    resid = yc
    if len(free):
        Xf = Xs[:, free]
        gram = Xf.T @ (sw[:, None] * Xf)
        rhs = Xf.T @ (sw * yc)
        beta_f = np.linalg.lstsq(gram, rhs, rcond=None)[0]
        resid = yc - Xf @ beta_f
    grads = np.abs(Xs.T @ (sw * resid))
    grads[pf == 0.0] = 0.0
    return float(grads.max()) if len(grads) else 0.0


def _unscale(beta_std: NDArray, keep, scale, mu, ybar, p: int, centered: bool) -> NDArray:
    coef = np.zeros(p)
    coef[keep] = beta_std / scale[keep]
    if centered:
        coef[0] = ybar - coef[keep] @ mu[keep]
    return coef


def _path_on(
    X, y, w, lambdas, penalty_free, tol, max_sweeps, dfmax=None, kkt_polish=False
) -> Tuple[NDArray, NDArray, int, float, int]:
    """Fit the descending-lambda path; returns original-scale coefficients.

    Rows at index >= the returned count were not computed (the active set
    exceeded ``dfmax`` earlier on the path).
    """
    p = X.shape[1]
    Xs, yc, sw, mu, scale, keep, ybar, pf, centered = _prepare(X, y, w, penalty_free)
    if Xs.shape[1] == 0:
        coefs = np.zeros((len(lambdas), p))
        if centered:
            coefs[:, 0] = ybar
        return coefs, np.zeros((len(lambdas), 0)), 0, 0.0, len(lambdas)
    Xsw = Xs * sw[:, None]
    q = Xs.T @ (sw * yc)
    yy = float(sw @ (yc * yc))
    kkt_tol = 1e-9 * (1.0 + np.sqrt(max(yy, 0.0))) if kkt_polish else 0.0
    B, sweeps, rise, n_computed = gaussian_cd_path(
        np.ascontiguousarray(Xs),
        np.ascontiguousarray(Xsw),
        q,
        yy,
        np.asarray(lambdas, dtype=np.float64),
        pf,
        tol,
        max_sweeps,
        Xs.shape[1] if dfmax is None else int(dfmax),
        kkt_tol,
    )
    coefs = np.stack(
        [_unscale(B[i], keep, scale, mu, ybar, p, centered) for i in range(len(lambdas))]
    )
    return coefs, B, sweeps, rise, n_computed


def _kkt_violation(X, y, w, coef, lam, penalty_free) -> float:
    """Max stationarity violation on the standardized problem."""
    Xs, yc, sw, mu, scale, keep, ybar, pf, centered = _prepare(X, y, w, penalty_free)
    if Xs.shape[1] == 0:
        return 0.0
    beta_std = coef[keep] * scale[keep]
    grad = Xs.T @ (sw * (yc - Xs @ beta_std))
    viol = 0.0
    for j in range(len(keep)):
        target = lam * pf[j]
        if beta_std[j] != 0.0:
            viol = max(viol, abs(grad[j] - np.sign(beta_std[j]) * target))
        else:
            viol = max(viol, max(0.0, abs(grad[j]) - target))
    return float(viol)


def lambda_grid(X, y, w, size: int, penalty_free: Sequence[int] = (0,)) -> NDArray:
    """Geometric grid from the smallest all-zeroing penalty down by 1e-4."""
    Xs, yc, sw, _, _, _, _, pf, _ = _prepare(X, y, w, penalty_free)
    lmax = _lambda_max(Xs, yc, sw, pf) if Xs.shape[1] else 0.0
    if lmax <= 0.0 or not np.isfinite(lmax):
        return np.array([0.0])
    return np.geomspace(lmax, LAMBDA_MIN_RATIO * lmax, size)


def lasso_at(
    X,
    y,
    weights,
    lam: float,
    penalty_free: Sequence[int] = (0,),
    grid_size: int = 20,
) -> LassoFit:
    """Single-penalty lasso fit, warm-started along a short descending path."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = _check_weights(weights, len(y))
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("NaN or infinite values in the design or response")
    grid = lambda_grid(X, y, w, grid_size, penalty_free)
    lambdas = np.append(grid[grid > lam], lam)
    coefs, B, sweeps, rise, _ = _path_on(
        X, y, w, lambdas, penalty_free, _FIT_TOL, _FIT_SWEEPS, kkt_polish=True
    )
    coef = coefs[-1]
    support = _support_of(X, w, coef, penalty_free)
    coef = _zero_off_support(coef, support)
    return LassoFit(
        coefficients=coef,
        lambda_=float(lam),
        support=support,
        cv_risk_path=[],
        kkt_violation=_kkt_violation(X, y, w, coef, lam, penalty_free),
        objective_rise=rise,
        sweeps=sweeps,
        dropped_constant=_constant_columns(X, w),
    )


def _constant_columns(X, w) -> List[int]:
    """Columns excluded from the solve (degenerate under the scaling used)."""
    _, _, _, _, _, keep, _, _, centered = _prepare(X, y=np.zeros(X.shape[0]), w=w, penalty_free=(0,))
    excluded = set(range(X.shape[1])) - set(int(j) for j in keep)
    if centered:
        excluded.discard(0)
    return sorted(excluded)


def _zero_off_support(coef: NDArray, support: NDArray) -> NDArray:
    out = np.zeros_like(coef)
    out[support] = coef[support]
    return out


def _support_of(X, w, coef, penalty_free) -> NDArray:
    # Threshold on the standardized scale: float ties (e.g. duplicated
    # columns) must not leak 1-ulp coefficients into the support.
    _, _, _, _, scale, keep, _, _, centered = _prepare(X, np.zeros(X.shape[0]), w, penalty_free)
    size = np.zeros(X.shape[1])
    size[keep] = np.abs(coef[keep]) * scale[keep]
    cut = 1e-12 * max(1.0, float(size.max(initial=0.0)))
    nz = set(np.flatnonzero(size > cut).tolist())
    if centered:
        nz.add(0)
    keep_set = set(int(j) for j in keep)
    nz.update(
        int(j)
        for j in penalty_free
        if j < X.shape[1] and (int(j) in keep_set or (centered and j == 0))
    )
    return np.array(sorted(nz), dtype=np.int64)


def cv_lasso(
    design,
    response,
    weights,
    folds,
    lambda_grid_size: int = 100,
    penalty_free: Sequence[int] = (0,),
    undersmoothing: float = 1.0,
    certify: bool = True,
) -> LassoFit:
    """Weighted lasso with the penalty selected by cross-validation.

    ``folds`` is either a FoldAssignment or an integer array of fold labels
    over the rows. The penalized objective uses internally standardized
    columns; coefficients come back on the original scale. The selected
    penalty is the CV-risk minimizer, optionally scaled by an undersmoothing
    multiplier (< 1 keeps a slightly larger model). With ``certify`` the
    final fit keeps sweeping until its stationarity (KKT) conditions hold
    tightly; support selection upstream of a relaxed refit can skip that.
    """
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    n = len(y)
    w = _check_weights(weights, n)
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("NaN or infinite values in the design or response")
    fold_labels = np.asarray(getattr(folds, "fold_of", folds), dtype=np.int64)
    if fold_labels.shape != (n,):
        raise ValueError("fold labels must match the number of rows")
    v = int(fold_labels.max()) + 1

    grid = lambda_grid(X, y, w, lambda_grid_size, penalty_free)
    if grid[0] == 0.0:
        # no penalized signal at all: unpenalized fit only
        coefs, _, sweeps, rise, _ = _path_on(
            X, y, w, np.array([0.0]), penalty_free, _FIT_TOL, _FIT_SWEEPS, kkt_polish=True
        )
        coef = coefs[0]
        return LassoFit(
            coefficients=coef,
            lambda_=0.0,
            support=_support_of(X, w, coef, penalty_free),
            cv_risk_path=[(0.0, float(np.average((y - X @ coef) ** 2, weights=w)))],
            kkt_violation=_kkt_violation(X, y, w, coef, 0.0, penalty_free),
            objective_rise=rise,
            sweeps=sweeps,
            dropped_constant=_constant_columns(X, w),
        )

    dfmax = max(60, n // 20)
    risks = np.zeros((v, len(grid)))
    for k in range(v):  # fold risks reduced in fixed fold order
        train = fold_labels != k
        test = ~train
        if w[test].sum() <= 0 or w[train].sum() <= 0:
            continue
        coefs_k, _, _, _, n_comp = _path_on(
            X[train], y[train], w[train], grid, penalty_free, _CV_TOL, _CV_SWEEPS, dfmax
        )
        preds = X[test] @ coefs_k[:n_comp].T
        err = (y[test, None] - preds) ** 2
        risks[k, :n_comp] = (w[test, None] * err).sum(axis=0) / w[test].sum()
        risks[k, n_comp:] = np.inf  # path truncated: never selectable
    mean_risk = risks.mean(axis=0)
    best = int(np.argmin(mean_risk))
    lam_sel = float(grid[best]) * float(undersmoothing)

    lambdas_final = np.append(grid[grid > lam_sel], lam_sel)
    coefs, _, sweeps, rise, _ = _path_on(
        X, y, w, lambdas_final, penalty_free, _FIT_TOL, _FIT_SWEEPS, kkt_polish=certify
    )
    coef = coefs[-1]
    support = _support_of(X, w, coef, penalty_free)
    coef = _zero_off_support(coef, support)
    return LassoFit(
        coefficients=coef,
        lambda_=lam_sel,
        support=support,
        cv_risk_path=[(float(l), float(r)) for l, r in zip(grid, mean_risk)],
        kkt_violation=_kkt_violation(X, y, w, coef, lam_sel, penalty_free),
        objective_rise=rise,
        sweeps=sweeps,
        dropped_constant=_constant_columns(X, w),
    )


# ---------------------------------------------------------------------------
# relaxed (weighted) least squares with rank control
# ---------------------------------------------------------------------------


def _pivoted_retain(gram: NDArray, rtol: float) -> Tuple[List[int], List[int]]:
    """Greedy pivoted Cholesky; returns (retained, dropped) local indices."""
    k = gram.shape[0]
    work = gram.copy()
    selected: List[int] = []
    remaining = list(range(k))
    first_pivot = float(np.max(np.diag(work))) if k else 0.0
    if first_pivot <= 0.0:
        return [], remaining
    while remaining:
        diag = np.array([work[j, j] for j in remaining])
        pos = int(np.argmax(diag))
        j = remaining[pos]
        if diag[pos] <= rtol * first_pivot:
            break
        selected.append(j)
        remaining.pop(pos)
        pivot = work[j, j]
        for r in remaining:
            factor = work[r, j] / pivot
            work[r, remaining] -= factor * work[j, remaining]
            work[r, j] = 0.0
    return sorted(selected), sorted(remaining)


def relaxed_ols(design, response, weights, support) -> RelaxedFit:
    """Weighted OLS restricted to ``support`` columns.

    Rank deficiency is resolved by pivoted elimination on the empirical Gram
    (1/n) X'WX; dropped columns are recorded, never fatal. The returned
    ``gram_inverse`` covers the retained columns in ascending order.
    """
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    n = len(y)
    w = _check_weights(weights, n)
    support = np.asarray(sorted(set(int(j) for j in support)), dtype=np.int64)
    if len(support) == 0:
        raise ValueError("support must be non-empty (the intercept is always allowed)")
    Xs = X[:, support]
    gram = Xs.T @ (w[:, None] * Xs) / n
    rhs = Xs.T @ (w * y) / n
    retained_local, dropped_local = _pivoted_retain(gram, PIVOT_RTOL)
    retained = support[retained_local]
    dropped = [int(j) for j in support[dropped_local]]
    coef = np.zeros(X.shape[1])
    if retained_local:
        sub = gram[np.ix_(retained_local, retained_local)]
        try:
            gram_inverse = np.linalg.inv(sub)
        except np.linalg.LinAlgError:
            gram_inverse = np.linalg.pinv(sub)
        coef[retained] = gram_inverse @ rhs[retained_local]
    else:
        gram_inverse = np.zeros((0, 0))
    return RelaxedFit(
        coefficients=coef,
        support=retained,
        gram_inverse=gram_inverse,
        dropped_columns=dropped,
    )


# ---------------------------------------------------------------------------
# logistic regression by iteratively reweighted least squares
# ---------------------------------------------------------------------------


def _binomial_loglik(y, eta, w) -> float:
    # numerically safe log-likelihood via logaddexp
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def logistic_irls(
    design,
    labels,
    offset: Optional[NDArray] = None,
    weights: Optional[NDArray] = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> LogisticFit:
    """Weighted binomial MLE with an optional fixed offset.

    Newton steps with step-halving on likelihood decrease; converged when the
    sup-norm of the mean score drops below ``tol``. Perfect separation shows
    up as non-convergence with a warning flag; predictions are always clipped
    to [1e-6, 1 - 1e-6].
    """
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n, p = X.shape
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    if not np.isfinite(X).all():
        raise ValueError("design must be finite")
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=np.float64)
    w = np.ones(n) if weights is None else _check_weights(weights, n)

    beta = np.zeros(p)
    eta = off + X @ beta
    loglik = _binomial_loglik(y, eta, w)
    converged = False
    score_norm = np.inf
    for _ in range(max_iter):
        mu = expit(eta)
        score = X.T @ (w * (y - mu)) / n
        score_norm = float(np.max(np.abs(score))) if p else 0.0
        if score_norm < tol:
            converged = True
        if score_norm < 1e-13:
            break
        var = np.clip(mu * (1.0 - mu), 1e-10, None)
        hess = X.T @ ((w * var)[:, None] * X) / n
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, score, rcond=None)[0]
        scale = 1.0
        for _halve in range(40):
            candidate = beta + scale * step
            cand_eta = off + X @ candidate
            cand_loglik = _binomial_loglik(y, cand_eta, w)
            if cand_loglik >= loglik - 1e-12:
                break
            scale *= 0.5
        else:
            break  # no improving step: stop (possible separation)
        if np.allclose(candidate, beta, rtol=0.0, atol=1e-15):
            break
        beta, eta, loglik = candidate, cand_eta, cand_loglik
    warning = None if converged else "did not converge (possible separation)"
    fitted = X @ beta
    if len(fitted) and np.max(np.abs(fitted)) > 30.0:
        # The score drifts to zero under separation, so the score criterion
        # alone cannot flag it; a diverging linear predictor can.
        converged = False
        warning = "perfect separation detected; predictions clipped"
    return LogisticFit(
        coefficients=beta,
        converged=converged,
        offset_supported=True,
        warning=warning,
        score_sup_norm=score_norm,
    )


# ---------------------------------------------------------------------------
# penalized logistic path (used by the spline-basis nuisance learner)
# ---------------------------------------------------------------------------


def cv_logistic_lasso(
    design,
    labels,
    weights,
    folds,
    lambda_grid_size: int = 30,
    penalty_free: Sequence[int] = (0,),
) -> LassoFit:
    """L1-penalized logistic regression with CV-selected penalty (log-loss)."""
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n = len(y)
    w = _check_weights(weights, n)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    fold_labels = np.asarray(getattr(folds, "fold_of", folds), dtype=np.int64)
    v = int(fold_labels.max()) + 1

    def scaled(Xm, wm):
        swm = wm / wm.sum()
        scale = np.sqrt(swm @ (Xm * Xm))
        scale[scale <= 1e-12] = 1.0
        scale[0] = 1.0
        return Xm / scale, scale

    def grid_for(Xm, ym, wm):
        free = sorted(set(int(j) for j in penalty_free))
        base = logistic_irls(Xm[:, free], ym, weights=wm)
        mu0 = expit(Xm[:, free] @ base.coefficients)
        swm = wm / wm.sum()
        grads = np.abs(Xm.T @ (swm * (ym - mu0)))
        grads[free] = 0.0
        lmax = float(grads.max())
        if lmax <= 0:
            return np.array([0.0])
        return np.geomspace(lmax, LAMBDA_MIN_RATIO * lmax, lambda_grid_size)

    Xf, scale_f = scaled(X, w)
    grid = grid_for(Xf, y, w)
    pf = np.ones(X.shape[1])
    pf[list(penalty_free)] = 0.0

    risks = np.zeros((v, len(grid)))
    for k in range(v):
        train = fold_labels != k
        test = ~train
        Xt, scale_t = scaled(X[train], w[train])
        B, _ = logistic_cd_path(
            np.ascontiguousarray(Xt),
            y[train],
            w[train] / w[train].sum(),
            np.zeros(int(train.sum())),
            grid,
            pf,
            1e-6,
            8,
            200,
        )
        coefs = B / scale_t[None, :]
        preds = np.clip(expit(X[test] @ coefs.T), PROB_CLIP, 1 - PROB_CLIP)
        yk = y[test, None]
        ll = -(yk * np.log(preds) + (1 - yk) * np.log(1 - preds))
        risks[k] = (w[test, None] * ll).sum(axis=0) / w[test].sum()
    mean_risk = risks.mean(axis=0)
    best = int(np.argmin(mean_risk))

    B, conv = logistic_cd_path(
        np.ascontiguousarray(Xf),
        y,
        w / w.sum(),
        np.zeros(n),
        grid[: best + 1],
        pf,
        1e-8,
        15,
        1000,
    )
    coef = B[-1] / scale_f
    support = _support_of(X, w, coef, penalty_free)
    coef = _zero_off_support(coef, support)
    return LassoFit(
        coefficients=coef,
        lambda_=float(grid[best]),
        support=support,
        cv_risk_path=[(float(l), float(r)) for l, r in zip(grid, mean_risk)],
    )
