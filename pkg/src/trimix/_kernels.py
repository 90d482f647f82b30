"""Compiled inner loops for the penalized solvers.

Everything here operates on plain float64 arrays and is deliberately loop
heavy: the matrices involved are small (d <= a few tens) and these routines
sit inside the EM iteration, so per-call overhead dominates in pure numpy.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit(cache=True)
def _logdet_chol(a):
    """Log determinant via an in-place unblocked Cholesky; nan if not PD."""
    d = a.shape[0]
    L = a.copy()
    ld = 0.0
    for j in range(d):
        s = L[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 0.0:
            return np.nan
        L[j, j] = np.sqrt(s)
        ld += np.log(L[j, j])
        for i in range(j + 1, d):
            t = L[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
    return 2.0 * ld


@njit(cache=True)
def glasso_objective_nb(theta, s, pen):
    """Objective log|Theta| - tr(S Theta) - sum(pen * |Theta|)."""
    d = theta.shape[0]
    obj = _logdet_chol(theta)
    for i in range(d):
        for j in range(d):
            obj -= s[i, j] * theta[i, j] + pen[i, j] * abs(theta[i, j])
    return obj


@njit(cache=True)
def glasso_kkt_nb(theta, w, s, pen):
    """Max entrywise KKT violation of the penalized precision problem.

    ``w`` must be the inverse of ``theta``. For a nonzero entry the
    stationarity residual is |w - s - pen * sign(theta)|; for a zero entry
    it is max(0, |w - s| - pen).
    """
    d = theta.shape[0]
    worst = 0.0
    for i in range(d):
        for j in range(d):
            t = theta[i, j]
            if t != 0.0:
                sign = 1.0 if t > 0.0 else -1.0
                v = abs(w[i, j] - s[i, j] - pen[i, j] * sign)
            else:
                v = abs(w[i, j] - s[i, j]) - pen[i, j]
                if v < 0.0:
                    v = 0.0
            if v > worst:
                worst = v
    return worst


@njit(cache=True)
def glasso_solve_nb(s, pen, theta0, tol, max_sweeps, inner_tol, max_inner):
    """Primal column coordinate descent for the weighted graphical lasso.

    Maximizes ``log|Theta| - tr(S Theta) - sum(pen * |Theta|)`` over SPD
    Theta. One sweep updates every column/row pair exactly (the inner lasso
    subproblem is run to ``inner_tol``), so the objective never decreases.
    Zeros produced by the inner soft threshold are written as exact 0.0 and
    the iterate stays symmetric and positive definite throughout.

    Returns ``(theta, sweeps, kkt, obj_trace, status)`` with status
    0 = KKT residual below tol, 1 = sweep budget exhausted.
    """
    d = s.shape[0]
    theta = theta0.copy()
    obj = np.empty(max_sweeps + 1)
    obj[0] = glasso_objective_nb(theta, s, pen)

    a = np.empty((d - 1, d - 1)) if d > 1 else np.empty((0, 0))
    alpha = np.empty(max(d - 1, 1))
    u = np.empty(max(d - 1, 1))
    s12 = np.empty(max(d - 1, 1))
    lam = np.empty(max(d - 1, 1))
    idx = np.empty(max(d - 1, 1), dtype=np.int64)

    if d == 1:
        theta[0, 0] = 1.0 / (s[0, 0] + pen[0, 0])
        w = np.empty((1, 1))
        w[0, 0] = 1.0 / theta[0, 0]
        kkt = glasso_kkt_nb(theta, w, s, pen)
        obj[0] = glasso_objective_nb(theta, s, pen)
        return theta, 0, kkt, obj[:1], 0

    kkt = np.inf
    sweeps = 0
    status = 1
    for sweep in range(max_sweeps):
        w = np.linalg.inv(theta)
        for j in range(d):
            m = 0
            for h in range(d):
                if h != j:
                    idx[m] = h
                    m += 1
            wjj = w[j, j]
            for h in range(d - 1):
                ih = idx[h]
                s12[h] = s[ih, j]
                lam[h] = pen[ih, j]
                alpha[h] = theta[ih, j]
                for g in range(d - 1):
                    a[h, g] = w[ih, idx[g]] - w[ih, j] * w[idx[g], j] / wjj
            qjj = s[j, j] + pen[j, j]
            # cyclic coordinate descent on the column lasso subproblem
            for _ in range(max_inner):
                dmax = 0.0
                amax = 0.0
                for h in range(d - 1):
                    acc = 0.0
                    for g in range(d - 1):
                        acc += a[h, g] * alpha[g]
                    acc -= a[h, h] * alpha[h]
                    gval = s12[h] + qjj * acc
                    new = _soft(-gval, lam[h]) / (qjj * a[h, h])
                    diff = new - alpha[h]
                    if diff < 0.0:
                        diff = -diff
                    if diff > dmax:
                        dmax = diff
                    alpha[h] = new
                    if abs(new) > amax:
                        amax = abs(new)
                if dmax <= inner_tol * (1.0 + amax):
                    break
            # recover the diagonal entry and refresh theta and w
            dot = 0.0
            for h in range(d - 1):
                acc = 0.0
                for g in range(d - 1):
                    acc += a[h, g] * alpha[g]
                u[h] = acc
                dot += alpha[h] * acc
            gam = 1.0 / qjj
            theta[j, j] = gam + dot
            for h in range(d - 1):
                theta[idx[h], j] = alpha[h]
                theta[j, idx[h]] = alpha[h]
            w[j, j] = qjj
            for h in range(d - 1):
                w[idx[h], j] = -u[h] * qjj
                w[j, idx[h]] = -u[h] * qjj
                for g in range(d - 1):
                    w[idx[h], idx[g]] = a[h, g] + u[h] * u[g] * qjj
        sweeps = sweep + 1
        obj[sweeps] = glasso_objective_nb(theta, s, pen)
        w = np.linalg.inv(theta)
        kkt = glasso_kkt_nb(theta, w, s, pen)
        if kkt < tol:
            status = 0
            break
    return theta, sweeps, kkt, obj[:sweeps + 1], status


@njit(cache=True)
def group_mean_objective_nb(m, a, om, ga, n_k, lam):
    """Minimized objective: n_k/2 tr(Om M Ga M') - tr(A M') + lam * sum ||row||."""
    p, q = m.shape
    g = om @ m @ ga
    obj = 0.0
    for l in range(p):
        rownorm = 0.0
        for c in range(q):
            obj += 0.5 * n_k * g[l, c] * m[l, c] - a[l, c] * m[l, c]
            rownorm += m[l, c] * m[l, c]
        obj += lam * np.sqrt(rownorm)
    return obj


@njit(cache=True)
def group_mean_cd_nb(m, a, om, ga, n_k, lam, nu0, backtrack, tol, max_sweeps):
    """Row-cyclic proximal gradient for the group-penalized mean update.

    ``a`` is Om @ S_M @ Ga, precomputed. ``m`` is updated in place, cycling
    rows 1..p; each row takes one gradient step of size nu followed by the
    row-wise soft threshold, which writes exact zero rows. With ``backtrack``
    the step is halved (and the sweep redone) whenever the objective
    increases; otherwise a persistent objective increase reports divergence.

    Returns ``(sweeps, nu, obj_trace, status)`` with status 0 = converged,
    1 = sweep budget exhausted, 2 = divergence in fixed-step mode.
    """
    p, q = m.shape
    nu = nu0
    obj = np.empty(max_sweeps + 1)
    obj[0] = group_mean_objective_nb(m, a, om, ga, n_k, lam)
    v = np.empty(q)
    b = np.empty(q)
    m_prev = np.empty_like(m)
    sweeps = 0
    status = 1
    bad = 0
    for sweep in range(max_sweeps):
        m_prev[:, :] = m
        delta2 = 0.0
        norm2 = 0.0
        for l in range(p):
            for c in range(q):
                acc = 0.0
                for r in range(p):
                    acc += om[l, r] * m[r, c]
                v[c] = acc
            bnorm2 = 0.0
            for c in range(q):
                acc = 0.0
                for e in range(q):
                    acc += v[e] * ga[e, c]
                grad = n_k * acc - a[l, c]
                b[c] = m[l, c] - nu * grad
                bnorm2 += b[c] * b[c]
            bnorm = np.sqrt(bnorm2)
            thr = lam * nu
            if bnorm <= thr:
                for c in range(q):
                    diff = m[l, c]
                    delta2 += diff * diff
                    m[l, c] = 0.0
            else:
                scale = 1.0 - thr / bnorm
                for c in range(q):
                    new = b[c] * scale
                    diff = new - m[l, c]
                    delta2 += diff * diff
                    m[l, c] = new
                    norm2 += new * new
        cur = group_mean_objective_nb(m, a, om, ga, n_k, lam)
        if cur > obj[sweeps] + 1e-12 * (1.0 + abs(obj[sweeps])):
            if backtrack:
                m[:, :] = m_prev
                nu *= 0.5
                continue
            bad += 1
            if bad >= 10:
                sweeps += 1
                obj[sweeps] = cur
                status = 2
                break
        else:
            bad = 0
        sweeps += 1
        obj[sweeps] = cur
        if np.sqrt(delta2) <= tol * max(1.0, np.sqrt(norm2)):
            status = 0
            break
    return sweeps, nu, obj[:sweeps + 1], status


@njit(cache=True)
def lasso_mean_objective_nb(m, t, om, ga, n_k, lam, p1):
    """Minimized objective: n_k/2 tr(Om M Ga M') - tr(T M') + lam * sum p1|m|."""
    p, q = m.shape
    g = om @ m @ ga
    obj = 0.0
    for l in range(p):
        for c in range(q):
            obj += (0.5 * n_k * g[l, c] * m[l, c] - t[l, c] * m[l, c]
                    + lam * p1[l, c] * abs(m[l, c]))
    return obj


@njit(cache=True)
def lasso_cell_stat_nb(t, g, om, ga, n_k, m, l, s):
    """Residual statistic for cell (l, s): the zero test compares |stat| to
    the penalty and the update soft-thresholds it."""
    return t[l, s] - n_k * (g[l, s] - om[l, l] * m[l, s] * ga[s, s])


@njit(cache=True)
def lasso_mean_cd_nb(m, t, om, ga, n_k, lam, p1, tol, max_sweeps):
    """Cell-wise coordinate ascent for the entrywise-penalized mean update.

    ``t`` is Om @ S_M @ Ga, precomputed. Cells are visited in row-major
    order; each visit solves its one-dimensional subproblem exactly (soft
    threshold), so the objective is monotone by construction. The product
    G = Om @ M @ Ga is maintained by rank-one updates within a sweep and
    recomputed at every sweep start to stop drift.

    Returns ``(sweeps, obj_trace, status)``, status 0 = converged,
    1 = sweep budget exhausted.
    """
    p, q = m.shape
    obj = np.empty(max_sweeps + 1)
    obj[0] = lasso_mean_objective_nb(m, t, om, ga, n_k, lam, p1)
    sweeps = 0
    status = 1
    for sweep in range(max_sweeps):
        g = om @ m @ ga
        delta2 = 0.0
        norm2 = 0.0
        for l in range(p):
            for s in range(q):
                stat = t[l, s] - n_k * (g[l, s] - om[l, l] * m[l, s] * ga[s, s])
                thr = lam * p1[l, s]
                if abs(stat) <= thr:
                    new = 0.0
                else:
                    new = _soft(stat, thr) / (n_k * om[l, l] * ga[s, s])
                diff = new - m[l, s]
                if diff != 0.0:
                    m[l, s] = new
                    for r in range(p):
                        wlr = om[r, l] * diff
                        if wlr != 0.0:
                            for c in range(q):
                                g[r, c] += wlr * ga[s, c]
                delta2 += diff * diff
                norm2 += new * new
        sweeps += 1
        obj[sweeps] = lasso_mean_objective_nb(m, t, om, ga, n_k, lam, p1)
        if np.sqrt(delta2) <= tol * max(1.0, np.sqrt(norm2)):
            status = 0
            break
    return sweeps, obj[:sweeps + 1], status
