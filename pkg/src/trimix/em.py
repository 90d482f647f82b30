"""Penalized EM for mixtures of matrix normal distributions.

The engine alternates a log-sum-exp E-step with a partial-maximization
M-step: closed-form mixing proportions, a penalized mean update (group-row
or entrywise, per the penalty configuration), then a flip-flop of weighted
graphical-lasso updates for the row and column precisions. Every partial
update starts from the previous iterate and can only improve its own
objective, so the penalized log-likelihood is non-decreasing across outer
iterations (a generalized EM). Identifiability (unit determinant of every
column precision) is restored once, after convergence; rescaling inside the
loop would interact with the penalty term and break monotonicity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .data import ThreeWayData
from .errors import DegenerateClusterError, NotPositiveDefiniteError
from .glasso import GlassoProblem, glasso_solve
from .matnorm import SpdMatrix, matnorm_logdensity_many
from .mean_group import MeanUpdateProblem, update_mean_group
from .mean_lasso import LassoMeanProblem, update_mean_lasso
from .penalties import PenaltyConfig

INIT_METHODS = ("ward", "kmeans++")


@dataclass(frozen=True)
class MixtureParams:
    """Mixing weights, mean matrices, and row/column precisions."""

    tau: np.ndarray
    means: np.ndarray
    omegas: tuple[SpdMatrix, ...]
    gammas: tuple[SpdMatrix, ...]

    def __post_init__(self):
        tau = np.array(self.tau, dtype=float)
        means = np.array(self.means, dtype=float)
        if tau.ndim != 1:
            raise ValueError("tau must be a vector")
        k = tau.shape[0]
        if np.min(tau) <= 0 or abs(float(np.sum(tau)) - 1.0) > 1e-8:
            raise ValueError("tau must be strictly positive and sum to 1")
        if means.ndim != 3 or means.shape[0] != k:
            raise ValueError(f"means must be (K, p, q) with K={k}, got {means.shape}")
        omegas = tuple(self.omegas)
        gammas = tuple(self.gammas)
        if len(omegas) != k or len(gammas) != k:
            raise ValueError("need one Omega and one Gamma per component")
        p, q = means.shape[1:]
        if any(o.dim != p for o in omegas) or any(g.dim != q for g in gammas):
            raise ValueError("precision dimensions do not match the means")
        tau.setflags(write=False)
        means.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "gammas", gammas)

    @property
    def n_components(self) -> int:
        return self.tau.shape[0]

    @property
    def p(self) -> int:
        return self.means.shape[1]

    @property
    def q(self) -> int:
        return self.means.shape[2]


@dataclass(frozen=True)
class Responsibilities:
    """Posterior component membership probabilities, one row per unit."""

    z: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        if z.ndim != 2:
            raise ValueError("responsibilities must be an (n, K) matrix")
        if np.min(z) < -1e-12 or np.max(z) > 1 + 1e-12:
            raise ValueError("responsibilities must lie in [0, 1]")
        if np.max(np.abs(z.sum(axis=1) - 1.0)) > 1e-8:
            raise ValueError("responsibility rows must sum to 1")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @classmethod
    def from_labels(cls, labels, n_components: int) -> "Responsibilities":
        labels = np.asarray(labels, dtype=int)
        z = np.zeros((labels.shape[0], n_components))
        z[np.arange(labels.shape[0]), labels] = 1.0
        return cls(z)

    @property
    def soft_counts(self) -> np.ndarray:
        return self.z.sum(axis=0)


@dataclass(frozen=True)
class FitResult:
    """Everything produced by one penalized EM run."""

    params: MixtureParams
    resp: Responsibilities
    labels: np.ndarray
    loglik: float
    pen_loglik_trace: np.ndarray
    d0: int
    bic: float
    iterations: int
    converged: bool
    degenerate: bool = False
    message: str = ""


def classify(resp: Responsibilities) -> np.ndarray:
    """MAP labels: row argmax, ties broken toward the smallest index."""
    return np.argmax(resp.z, axis=1)


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel groups 0..K-1 in order of first appearance (deterministic)."""
    mapping: dict[int, int] = {}
    out = np.empty_like(labels)
    for i, lab in enumerate(labels):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def _ensure_k_groups(labels: np.ndarray, k: int) -> np.ndarray:
    """Split the largest groups until exactly k non-empty groups exist."""
    labels = labels.copy()
    while len(np.unique(labels)) < k:
        counts = np.bincount(labels)
        biggest = int(np.argmax(counts))
        members = np.flatnonzero(labels == biggest)
        labels[members[-1]] = labels.max() + 1
    return _canonical_labels(labels)


def initialize(data: ThreeWayData, n_components: int, seed: int = 0,
               method: str = "ward", restarts: int = 1) -> np.ndarray:
    """Initial hard partition of the vectorized units.

    The default is agglomerative hierarchical clustering with Ward linkage
    on Euclidean distances, cut at ``n_components`` groups (deterministic
    given the data); ``kmeans++`` seeding with Lloyd refinement is the
    seeded alternative (``restarts`` independent seedings, keeping the
    lowest within-cluster sum of squares). Every returned group is
    non-empty.
    """
    if method not in INIT_METHODS:
        raise ValueError(f"method must be one of {INIT_METHODS}")
    if n_components < 1:
        raise ValueError("need at least one component")
    if data.n < n_components:
        raise ValueError(f"n={data.n} units cannot form {n_components} groups")
    flat = data.values.reshape(data.n, -1)
    if data.n == n_components:
        return np.arange(data.n)
    if method == "ward":
        tree = linkage(flat, method="ward")
        labels = fcluster(tree, t=n_components, criterion="maxclust") - 1
    else:
        best_sse = np.inf
        labels = None
        for child in np.random.SeedSequence(seed).spawn(max(1, restarts)):
            centers, cand = kmeans2(flat, n_components, minit="++",
                                    seed=np.random.default_rng(child))
            sse = float(np.sum((flat - centers[cand]) ** 2))
            if sse < best_sse:
                best_sse, labels = sse, cand
    return _ensure_k_groups(_canonical_labels(labels), n_components)


def component_logdensities(data: ThreeWayData, params: MixtureParams) -> np.ndarray:
    """Matrix of log tau_k + log-density of unit i under component k."""
    n, k = data.n, params.n_components
    out = np.empty((n, k))
    for j in range(k):
        out[:, j] = math.log(params.tau[j]) + matnorm_logdensity_many(
            data.values, params.means[j], params.omegas[j], params.gammas[j])
    return out


def e_step(data: ThreeWayData, params: MixtureParams) -> tuple[Responsibilities, float]:
    """Posterior responsibilities and the mixture log-likelihood.

    Computed through log-sum-exp, so no unit can underflow to an all-zero
    row; rows are renormalized to sum to one exactly.
    """
    logd = component_logdensities(data, params)
    norm = logsumexp(logd, axis=1)
    z = np.exp(logd - norm[:, None])
    z /= z.sum(axis=1, keepdims=True)
    return Responsibilities(z), float(np.sum(norm))


def penalty_value(params: MixtureParams, penalty: PenaltyConfig) -> float:
    """Total penalty of Eq.-style form evaluated at ``params``."""
    cfg = penalty.resolve(params.p, params.q)
    total = 0.0
    for j in range(params.n_components):
        if cfg.kind == "group-row":
            total += cfg.lambda1 * float(
                np.sum(np.linalg.norm(params.means[j], axis=1)))
        elif cfg.kind == "entrywise":
            total += cfg.lambda1 * float(np.sum(cfg.p1 * np.abs(params.means[j])))
        total += cfg.lambda2 * float(np.sum(cfg.p2 * np.abs(params.omegas[j].values)))
        total += cfg.lambda3 * float(np.sum(cfg.p3 * np.abs(params.gammas[j].values)))
    return total


def penalized_loglik(data: ThreeWayData, params: MixtureParams,
                     penalty: PenaltyConfig) -> float:
    logd = component_logdensities(data, params)
    return float(np.sum(logsumexp(logd, axis=1))) - penalty_value(params, penalty)


def q_function(data: ThreeWayData, resp: Responsibilities, params: MixtureParams,
               penalty: PenaltyConfig) -> float:
    """Penalized expected complete-data log-likelihood under ``resp``."""
    logd = component_logdensities(data, params)
    return float(np.sum(resp.z * logd)) - penalty_value(params, penalty)


def _soft_count_floor(n: int) -> float:
    return max(2.0, 0.01 * n)


_RESCALE_STEP = 8.0


def _rebalance_scale(omega: SpdMatrix, gamma: SpdMatrix, cfg: PenaltyConfig,
                     tiny: float = 1e-7) -> tuple[SpdMatrix, SpdMatrix]:
    """Move (Omega, Gamma) -> (c Omega, Gamma / c) to the penalty-optimal c.

    The likelihood is exactly invariant along this ray (the Kronecker
    product is), while the penalty c A + B/c, with A and B the two
    precision penalty terms, is minimized at c = sqrt(B/A). Applying the
    optimal rescale is therefore another GEM move: the penalized objective
    can only improve, and exact zeros are preserved by scaling. When one
    side is penalty-free (e.g. its off-diagonal was fully zeroed, so the
    ray improves without bound), a single bounded factor is applied per
    call so the outer epsilon criterion can fire.
    """
    a = cfg.lambda2 * float(np.sum(cfg.p2 * np.abs(omega.values)))
    b = cfg.lambda3 * float(np.sum(cfg.p3 * np.abs(gamma.values)))
    if a > tiny and b > tiny:
        c = math.sqrt(b / a)
    elif b > tiny:
        c = _RESCALE_STEP
    elif a > tiny:
        c = 1.0 / _RESCALE_STEP
    else:
        return omega, gamma
    if abs(c - 1.0) < 1e-12:
        return omega, gamma
    return SpdMatrix(omega.values * c), SpdMatrix(gamma.values / c)


def m_step(data: ThreeWayData, resp: Responsibilities, penalty: PenaltyConfig,
           prev: MixtureParams, *, fixed_step: bool = False,
           max_flipflop: int = 10, flipflop_tol: float = 1e-4) -> MixtureParams:
    """One partial-maximization M-step starting from ``prev``.

    Every component update (mean, then the row/column precision flip-flop)
    is warm-started at the previous parameters, so the Q-function cannot
    decrease. A component whose soft count falls below max(2, 0.01 n)
    raises :class:`DegenerateClusterError` instead of silently producing a
    rank-deficient scatter.
    """
    cfg = penalty.resolve(data.p, data.q)
    n, p, q = data.n, data.p, data.q
    k = prev.n_components
    z = resp.z
    n_hat = resp.soft_counts
    floor = _soft_count_floor(n)
    for j in range(k):
        if n_hat[j] < floor:
            raise DegenerateClusterError(j, float(n_hat[j]), floor)
    tau = n_hat / n

    means = np.empty_like(prev.means)
    omegas: list[SpdMatrix] = []
    gammas: list[SpdMatrix] = []
    x = data.values
    for j in range(k):
        s_m = np.einsum("i,ipq->pq", z[:, j], x)
        if cfg.kind == "group-row":
            problem = MeanUpdateProblem(s_m, float(n_hat[j]), prev.omegas[j],
                                        prev.gammas[j], cfg.lambda1,
                                        fixed_step=fixed_step)
            means[j] = update_mean_group(problem, init=prev.means[j])
        elif cfg.kind == "entrywise":
            problem = LassoMeanProblem(s_m, float(n_hat[j]), prev.omegas[j],
                                       prev.gammas[j], cfg.lambda1, p1=cfg.p1)
            means[j] = update_mean_lasso(problem, init=prev.means[j])
        else:
            means[j] = s_m / n_hat[j]

        omega, gamma = prev.omegas[j], prev.gammas[j]
        y = x - means[j]
        zj = z[:, j]
        for _ in range(max_flipflop):
            try:
                s_om = np.einsum("i,iab,icb->ac", zj, np.matmul(y, gamma.values), y)
                s_om /= n_hat[j] * q
                new_omega = glasso_solve(
                    GlassoProblem(s_om, (2.0 * cfg.lambda2 / (n_hat[j] * q)) * cfg.p2),
                    warm_start=omega)
                s_ga = np.einsum("i,iab,iac->bc", zj, y, np.matmul(new_omega.values, y))
                s_ga /= n_hat[j] * p
                new_gamma = glasso_solve(
                    GlassoProblem(s_ga, (2.0 * cfg.lambda3 / (n_hat[j] * p)) * cfg.p3),
                    warm_start=gamma)
            except NotPositiveDefiniteError as exc:
                raise DegenerateClusterError(
                    j, float(n_hat[j]), floor,
                    reason=f"rank-deficient scatter ({exc})") from exc
            new_omega, new_gamma = _rebalance_scale(new_omega, new_gamma, cfg)
            delta = max(
                float(np.max(np.abs(new_omega.values - omega.values)))
                / max(1.0, float(np.max(np.abs(new_omega.values)))),
                float(np.max(np.abs(new_gamma.values - gamma.values)))
                / max(1.0, float(np.max(np.abs(new_gamma.values)))))
            omega, gamma = new_omega, new_gamma
            if delta < flipflop_tol:
                break
        omegas.append(omega)
        gammas.append(gamma)
    return MixtureParams(tau, means, tuple(omegas), tuple(gammas))


def normalize_identifiability(params: MixtureParams) -> MixtureParams:
    """Rescale each (Omega_k, Gamma_k) pair so that |Gamma_k| = 1.

    With c = |Gamma_k|^(1/q) the map Gamma -> Gamma/c, Omega -> c Omega
    leaves every density value and every zero pattern unchanged.
    """
    omegas = []
    gammas = []
    for omega, gamma in zip(params.omegas, params.gammas):
        c = math.exp(gamma.logdet / gamma.dim)
        omegas.append(SpdMatrix(omega.values * c))
        gammas.append(SpdMatrix(gamma.values / c))
    return MixtureParams(params.tau, params.means, tuple(omegas), tuple(gammas))


def _initial_params(data: ThreeWayData, resp: Responsibilities) -> MixtureParams:
    """Hard-partition means with identity precisions (the EM starting point)."""
    k = resp.z.shape[1]
    n_hat = resp.soft_counts
    if np.min(n_hat) <= 0:
        raise DegenerateClusterError(int(np.argmin(n_hat)), float(np.min(n_hat)), 1.0)
    means = np.stack([
        np.einsum("i,ipq->pq", resp.z[:, j], data.values) / n_hat[j]
        for j in range(k)])
    eye_p = SpdMatrix.identity(data.p)
    eye_q = SpdMatrix.identity(data.q)
    return MixtureParams(n_hat / data.n, means, (eye_p,) * k, (eye_q,) * k)


def fit(data: ThreeWayData, n_components: int, penalty: PenaltyConfig,
        *, eps: float = 1e-5, max_iter: int = 500, seed: int = 0,
        fixed_step: bool = False, init_method: str = "ward",
        init_restarts: int = 1, degeneracy_restarts: int = 0,
        init_labels=None) -> FitResult:
    """Run the penalized EM to convergence.

    Iterates E- and M-steps until the penalized log-likelihood gain drops
    below ``eps`` (default 1e-5) or ``max_iter``. On convergence the
    parameters are normalized for identifiability (|Gamma_k| = 1), the MAP
    labels are extracted, and the exact nonzero-parameter count and the
    modified BIC are attached. A degenerate component ends the run early
    with ``converged=False`` and the degeneracy flag set, returning the
    last valid parameters; with ``degeneracy_restarts`` > 0 the run is
    first retried from fresh initialization seeds (useful with the seeded
    kmeans++ initializer; the Ward initializer is deterministic, so
    restarting it reproduces the same partition).
    """
    from .selection import bic as bic_value
    from .selection import count_nonzero

    if eps <= 0:
        raise ValueError("eps must be > 0")
    cfg = penalty.resolve(data.p, data.q)
    if init_labels is None:
        init_labels = initialize(data, n_components, seed=seed,
                                 method=init_method, restarts=init_restarts)
    else:
        init_labels = np.asarray(init_labels, dtype=int)
    resp = Responsibilities.from_labels(init_labels, n_components)
    params = _initial_params(data, resp)

    trace: list[float] = []
    converged = False
    degenerate = False
    message = ""
    try:
        params = m_step(data, resp, cfg, params, fixed_step=fixed_step)
        for _ in range(max_iter):
            resp, loglik = e_step(data, params)
            lp = loglik - penalty_value(params, cfg)
            trace.append(lp)
            if len(trace) > 1 and trace[-1] - trace[-2] < eps:
                converged = True
                break
            params = m_step(data, resp, cfg, params, fixed_step=fixed_step)
        else:
            resp, loglik = e_step(data, params)
            trace.append(loglik - penalty_value(params, cfg))
            message = f"no convergence in {max_iter} iterations"
    except DegenerateClusterError as exc:
        if degeneracy_restarts > 0:
            retry_seed = int(np.random.SeedSequence([seed, 0x5EED]).generate_state(
                1, np.uint64)[0])
            return fit(data, n_components, penalty, eps=eps, max_iter=max_iter,
                       seed=retry_seed, fixed_step=fixed_step,
                       init_method=init_method, init_restarts=init_restarts,
                       degeneracy_restarts=degeneracy_restarts - 1)
        degenerate = True
        message = str(exc)
        resp, loglik = e_step(data, params)

    params = normalize_identifiability(params)
    d0 = count_nonzero(params)
    return FitResult(
        params=params,
        resp=resp,
        labels=classify(resp),
        loglik=float(loglik),
        pen_loglik_trace=np.asarray(trace),
        d0=d0,
        bic=bic_value(float(loglik), d0, data.n),
        iterations=len(trace),
        converged=converged,
        degenerate=degenerate,
        message=message,
    )
