"""Weighted graphical lasso: maximize log|Theta| - tr(S Theta) - ||P * Theta||_1.

``P`` is a symmetric, entrywise non-negative weight matrix (typically a
scalar shrinkage level times a zero-diagonal all-ones pattern, so diagonal
entries are not penalized). The solver is a primal column coordinate
descent: each column/row pair is solved exactly through a small lasso
subproblem, which keeps the objective monotone across sweeps, preserves
symmetry and positive definiteness, and writes exact zeros whenever the
soft threshold fires. Convergence is certified by the entrywise KKT
residual rather than by parameter change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from ._kernels import glasso_kkt_nb, glasso_objective_nb, glasso_solve_nb
from .errors import ConvergenceError, NotPositiveDefiniteError
from .matnorm import SpdMatrix, as_spd


@dataclass
class GlassoProblem:
    """Data for one penalized precision estimation.

    ``s`` is the (symmetric) empirical matrix and ``penalty`` the entrywise
    shrinkage weights, already scaled (i.e. the element-wise product of the
    shrinkage level and the weight pattern).
    """

    s: np.ndarray
    penalty: np.ndarray
    tol: float = 1e-6          # on the KKT residual, relative to max(1, |S|_inf)
    max_sweeps: int = 500
    inner_tol: float = 1e-10
    max_inner: int = 1000

    def __post_init__(self):
        s = np.array(self.s, dtype=float)
        pen = np.array(self.penalty, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"S must be square, got {s.shape}")
        if pen.shape != s.shape:
            raise ValueError(f"penalty shape {pen.shape} != S shape {s.shape}")
        scale = max(1.0, float(np.max(np.abs(s))))
        if np.max(np.abs(s - s.T)) > 1e-10 * scale:
            raise ValueError("S must be symmetric")
        if np.max(np.abs(pen - pen.T)) > 1e-10 * max(1.0, float(np.max(np.abs(pen)))):
            raise ValueError("penalty must be symmetric")
        if np.min(pen) < 0:
            raise ValueError("penalty entries must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        self.s = (s + s.T) / 2.0
        self.penalty = (pen + pen.T) / 2.0

    @property
    def dim(self) -> int:
        return self.s.shape[0]

    @property
    def tol_abs(self) -> float:
        """Stopping tolerance in absolute units: tol * max(1, |S|_inf)."""
        return self.tol * max(1.0, float(np.max(np.abs(self.s))))


def glasso_objective(theta, prob: GlassoProblem) -> float:
    """Penalized log-likelihood objective evaluated at ``theta``."""
    theta = theta.values if isinstance(theta, SpdMatrix) else np.asarray(theta, float)
    return float(glasso_objective_nb(theta, prob.s, prob.penalty))


def kkt_residual(theta, prob: GlassoProblem) -> float:
    """Max entrywise KKT violation of ``theta`` for ``prob``.

    For a nonzero entry the stationarity residual is
    ``|W - S - penalty * sign(theta)|`` with ``W = inv(theta)``; for a zero
    entry it is ``max(0, |W - S| - penalty)``.
    """
    theta = as_spd(theta)
    w = sla.cho_solve((theta.chol, True), np.eye(theta.dim))
    w = (w + w.T) / 2.0
    return float(glasso_kkt_nb(theta.values, w, prob.s, prob.penalty))


def glasso_solve(prob: GlassoProblem, warm_start=None,
                 return_trace: bool = False):
    """Solve the weighted graphical lasso problem.

    With an identically-zero penalty the problem is smooth and the exact
    maximizer ``inv(S)`` is returned directly. Otherwise coordinate-descent
    sweeps run until the KKT residual drops below ``prob.tol``; a budget
    overrun raises :class:`ConvergenceError` carrying the final residual.
    A degenerate ``S`` (non-positive diagonal, or not PD in the unpenalized
    case) is an error, never silently regularized.

    Returns the precision estimate as :class:`SpdMatrix` (zero entries are
    exact 0.0), plus the per-sweep objective trace when ``return_trace``.
    """
    d = prob.dim
    if not np.any(prob.penalty):
        try:
            c, low = sla.cho_factor(prob.s, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(
                "unpenalized problem needs a positive definite S") from exc
        theta = sla.cho_solve((c, low), np.eye(d))
        theta = SpdMatrix((theta + theta.T) / 2.0)
        if return_trace:
            return theta, np.array([glasso_objective(theta, prob)])
        return theta
    qdiag = np.diag(prob.s) + np.diag(prob.penalty)
    if np.min(qdiag) <= 0:
        raise NotPositiveDefiniteError(
            "S has a non-positive diagonal entry and the penalty does not "
            "cover it; the problem is unbounded")
    if warm_start is not None:
        theta0 = np.array(as_spd(warm_start).values)
    else:
        theta0 = np.diag(1.0 / qdiag)
    theta, sweeps, kkt, trace, status = glasso_solve_nb(
        prob.s, prob.penalty, theta0, prob.tol_abs, prob.max_sweeps,
        prob.inner_tol, prob.max_inner)
    if status != 0:
        raise ConvergenceError(
            f"graphical lasso did not reach tol={prob.tol_abs:g} within "
            f"{prob.max_sweeps} sweeps (final KKT residual {kkt:g})")
    result = SpdMatrix(theta)
    if return_trace:
        return result, trace
    return result
