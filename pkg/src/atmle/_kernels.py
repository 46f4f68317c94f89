"""Numba kernels for coordinate-descent lasso paths.

The gaussian kernel uses covariance updating with lazily filled Gram rows,
which is the right regime here: tall 0/1 design matrices with small active
sets. Columns are expected pre-scaled to unit weighted second moment and
centered, so every coordinate denominator is exactly 1. The path is
truncated once the active set exceeds ``dfmax`` (later penalties are
reported as not computed); the final fit polishes until an explicit KKT
tolerance holds. The logistic kernel works on raw (uncentered) columns with
an explicit intercept column and naive residual updates; it is only run on
small nuisance designs.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _refresh_v(G, beta, v):
    p = beta.shape[0]
    for j in range(p):
        v[j] = 0.0
    for k in range(p):
        if beta[k] != 0.0:
            bk = beta[k]
            row = G[k]
            for j in range(p):
                v[j] += bk * row[j]


@njit(cache=True)
def _fill_row(Xs, Xsw, G, j):
    n, p = Xs.shape
    for i in range(p):
        acc = 0.0
        for r in range(n):
            acc += Xs[r, i] * Xsw[r, j]
        G[j, i] = acc


@njit(cache=True)
def _kkt(q, v, beta, pf, lam):
    p = beta.shape[0]
    worst = 0.0
    for j in range(p):
        gj = q[j] - v[j]
        t = lam * pf[j]
        if beta[j] > 0.0:
            vi = abs(gj - t)
        elif beta[j] < 0.0:
            vi = abs(gj + t)
        else:
            vi = abs(gj) - t
            if vi < 0.0:
                vi = 0.0
        if vi > worst:
            worst = vi
    return worst


@njit(cache=True)
def gaussian_cd_path(Xs, Xsw, q, yy, lambdas, pf, tol, max_sweeps, dfmax, kkt_tol):
    """Weighted lasso path on standardized columns (unit weighted 2nd moment).

    Xs:       (n, p) centered/scaled columns
    Xsw:      (n, p) Xs * sample_weight[:, None], weights summing to 1
    q:        (p,) column-response inner products  Xs.T @ (sw * y_centered)
    yy:       weighted sum of squares of the centered response
    pf:       (p,) per-column penalty factors (0 = unpenalized)
    tol:      per-sweep convergence threshold on max (delta beta)^2 / yy
    dfmax:    stop descending the path once the active set exceeds this
    kkt_tol:  when > 0, keep sweeping until the KKT violation is below it

    Returns (betas, sweeps_used, max_objective_rise, n_computed); rows of
    ``betas`` beyond ``n_computed`` are not valid solutions.
    """
    n, p = Xs.shape
    nlam = lambdas.shape[0]
    B = np.zeros((nlam, p))
    G = np.zeros((p, p))
    ready = np.zeros(p, np.bool_)
    beta = np.zeros(p)
    v = np.zeros(p)  # G @ beta, maintained incrementally
    max_rise = 0.0
    sweeps_used = 0
    yy_scale = yy if yy > 1e-30 else 1e-30
    tol_sq = tol * yy_scale
    n_computed = 0

    for il in range(nlam):
        lam = lambdas[il]
        prev_obj = 1e300
        full_pass = True
        sweep = 0
        while sweep < max_sweeps:
            sweep += 1
            sweeps_used += 1
            max_delta_sq = 0.0
            activated = False
            for j in range(p):
                if (not full_pass) and beta[j] == 0.0 and pf[j] > 0.0:
                    continue
                cj = q[j] - v[j] + beta[j]
                thr = lam * pf[j]
                if cj > thr:
                    bj = cj - thr
                elif cj < -thr:
                    bj = cj + thr
                else:
                    bj = 0.0
                if bj != beta[j]:
                    if not ready[j]:
                        _fill_row(Xs, Xsw, G, j)
                        ready[j] = True
                    diff = bj - beta[j]
                    if beta[j] == 0.0:
                        activated = True
                    row = G[j]
                    for i2 in range(p):
                        v[i2] += diff * row[i2]
                    beta[j] = bj
                    dsq = diff * diff
                    if dsq > max_delta_sq:
                        max_delta_sq = dsq
            if full_pass:
                # penalized objective from cached inner products
                quad = 0.0
                l1 = 0.0
                for j in range(p):
                    if beta[j] != 0.0:
                        quad += beta[j] * (v[j] - 2.0 * q[j])
                        l1 += pf[j] * abs(beta[j])
                obj = 0.5 * (yy + quad) + lam * l1
                if obj - prev_obj > max_rise:
                    max_rise = obj - prev_obj
                prev_obj = obj
            if max_delta_sq < tol_sq:
                if full_pass and not activated:
                    if kkt_tol <= 0.0:
                        break
                    _refresh_v(G, beta, v)
                    if _kkt(q, v, beta, pf, lam) <= kkt_tol:
                        break
                    full_pass = True
                else:
                    full_pass = True
            else:
                full_pass = False
        _refresh_v(G, beta, v)
        B[il] = beta
        n_computed = il + 1
        nact = 0
        for j in range(p):
            if beta[j] != 0.0:
                nact += 1
        if nact > dfmax:
            break
    return B, sweeps_used, max_rise, n_computed


@njit(cache=True)
def logistic_cd_path(X, y, w, offset, lambdas, pf, tol, max_outer, max_sweeps):
    """Penalized logistic path by IRLS around weighted coordinate descent.

    X carries raw columns (intercept included with pf = 0); w are prior
    weights summing to 1. Returns (betas, converged_flags).
    """
    n, p = X.shape
    nlam = lambdas.shape[0]
    B = np.zeros((nlam, p))
    beta = np.zeros(p)
    eta = np.zeros(n)
    conv = np.zeros(nlam, np.bool_)

    for il in range(nlam):
        lam = lambdas[il]
        for outer in range(max_outer):
            # working response and weights at the current linear predictor
            ww = np.empty(n)
            z = np.empty(n)
            for i in range(n):
                e = eta[i] + offset[i]
                if e > 35.0:
                    mu = 1.0 - 1e-15
                elif e < -35.0:
                    mu = 1e-15
                else:
                    mu = 1.0 / (1.0 + np.exp(-e))
                var = mu * (1.0 - mu)
                if var < 1e-5:
                    var = 1e-5
                ww[i] = w[i] * var
                z[i] = eta[i] + (y[i] - mu) / var
            denom = np.zeros(p)
            for j in range(p):
                acc = 0.0
                for i in range(n):
                    acc += ww[i] * X[i, j] * X[i, j]
                denom[j] = acc
            r = z.copy()
            for i in range(n):
                acc = 0.0
                for j in range(p):
                    acc += X[i, j] * beta[j]
                r[i] = z[i] - acc
            max_outer_change = 0.0
            for sweep in range(max_sweeps):
                max_change = 0.0
                for j in range(p):
                    if denom[j] <= 1e-12:
                        continue
                    cj = 0.0
                    for i in range(n):
                        cj += ww[i] * X[i, j] * r[i]
                    cj += denom[j] * beta[j]
                    thr = lam * pf[j]
                    if cj > thr:
                        bj = (cj - thr) / denom[j]
                    elif cj < -thr:
                        bj = (cj + thr) / denom[j]
                    else:
                        bj = 0.0
                    diff = bj - beta[j]
                    if diff != 0.0:
                        for i in range(n):
                            r[i] -= diff * X[i, j]
                        beta[j] = bj
                        if abs(diff) > max_change:
                            max_change = abs(diff)
                if abs(max_change) > max_outer_change:
                    max_outer_change = max_change
                if max_change < tol:
                    break
            for i in range(n):
                acc = 0.0
                for j in range(p):
                    acc += X[i, j] * beta[j]
                eta[i] = acc
            if max_outer_change < 10.0 * tol:
                conv[il] = True
                break
        B[il] = beta
    return B, conv
