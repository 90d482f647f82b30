"""Matrix-normal log-density, sampling, and SPD matrix support.

A p x q matrix X follows the matrix normal law with mean M, row covariance
S (p x p) and column covariance P (q x q) exactly when vec(X) is
multivariate normal with mean vec(M) and covariance kron(P, S). All density
work here is done in log space and parameterized by the row/column
precisions (inverse covariances), using their Cholesky factors so that no
explicit inverse is ever formed.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import linalg as sla

from .errors import NotPositiveDefiniteError

LOG_2PI = math.log(2.0 * math.pi)


class SpdMatrix:
    """A symmetric positive definite matrix with a cached Cholesky factor.

    Input is symmetrized as (A + A') / 2 to absorb round-off from penalized
    solvers; asymmetry beyond ``sym_tol`` (relative to max(1, |A|_inf)) is an
    error. Positive definiteness is established once by Cholesky; the log
    determinant is 2 * sum(log diag(chol)) by construction.
    """

    __slots__ = ("values", "chol", "_logdet")

    def __init__(self, values, sym_tol: float = 1e-10):
        A = np.array(values, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise NotPositiveDefiniteError(f"expected a square matrix, got {A.shape}")
        if not np.all(np.isfinite(A)):
            raise NotPositiveDefiniteError("matrix contains non-finite values")
        scale = max(1.0, float(np.max(np.abs(A))))
        asym = float(np.max(np.abs(A - A.T)))
        if asym > sym_tol * scale:
            raise NotPositiveDefiniteError(
                f"matrix is asymmetric: max |A - A'| = {asym:g}")
        if asym > 0.0:
            A = (A + A.T) / 2.0
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("Cholesky failed: matrix is not PD") from exc
        A.setflags(write=False)
        L.setflags(write=False)
        self.values = A
        self.chol = L
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(L))))

    @classmethod
    def identity(cls, dim: int) -> "SpdMatrix":
        return cls(np.eye(dim))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def logdet(self) -> float:
        return self._logdet

    def inverse(self) -> "SpdMatrix":
        inv = sla.cho_solve((self.chol, True), np.eye(self.dim))
        return SpdMatrix((inv + inv.T) / 2.0)

    def __repr__(self) -> str:
        return f"SpdMatrix(dim={self.dim}, logdet={self.logdet:.6g})"


def as_spd(value) -> SpdMatrix:
    """Coerce an array (or pass through an SpdMatrix) to SpdMatrix."""
    if isinstance(value, SpdMatrix):
        return value
    return SpdMatrix(value)


def logdet_pd(a) -> float:
    """Log determinant of a positive definite matrix via Cholesky."""
    return as_spd(a).logdet


def matnorm_logdensity(x, m, omega: SpdMatrix, gamma: SpdMatrix) -> float:
    """Matrix-normal log-density in precision form.

    Evaluates
    ``-(pq/2) log 2·pi + (q/2) log|Omega| + (p/2) log|Gamma|
    - 1/2 tr{Omega (X-M) Gamma (X-M)'}``
    where ``Omega``/``Gamma`` are the row/column precision matrices. The
    quadratic form is computed as the squared Frobenius norm of
    ``L_omega' (X-M) L_gamma`` with the cached Cholesky factors.
    """
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    omega = as_spd(omega)
    gamma = as_spd(gamma)
    if x.shape != m.shape or x.shape != (omega.dim, gamma.dim):
        raise ValueError(
            f"shape mismatch: X {x.shape}, M {m.shape}, "
            f"Omega dim {omega.dim}, Gamma dim {gamma.dim}")
    p, q = x.shape
    t = omega.chol.T @ (x - m) @ gamma.chol
    quad = float(np.sum(t * t))
    return -0.5 * p * q * LOG_2PI + 0.5 * q * omega.logdet + 0.5 * p * gamma.logdet - 0.5 * quad


def matnorm_logdensity_many(xs: np.ndarray, m, omega: SpdMatrix, gamma: SpdMatrix) -> np.ndarray:
    """Vector of log-densities for a stack of units ``xs`` with shape (n, p, q)."""
    omega = as_spd(omega)
    gamma = as_spd(gamma)
    p, q = omega.dim, gamma.dim
    y = xs - np.asarray(m, dtype=float)
    t = np.matmul(np.matmul(omega.chol.T, y), gamma.chol)
    quad = np.einsum("ijk,ijk->i", t, t)
    return (-0.5 * p * q * LOG_2PI + 0.5 * q * omega.logdet
            + 0.5 * p * gamma.logdet - 0.5 * quad)


def matnorm_sample(m, sigma: SpdMatrix, psi: SpdMatrix, rng: np.random.Generator,
                   size: int | None = None) -> np.ndarray:
    """Draw from the matrix normal with mean ``m`` and covariances (sigma, psi).

    Sampling uses ``X = M + L_sigma Z L_psi'`` with Z i.i.d. standard normal
    and the lower Cholesky factors of the row/column covariances, so
    vec(X) has covariance kron(psi, sigma). Deterministic given ``rng``.
    """
    m = np.asarray(m, dtype=float)
    sigma = as_spd(sigma)
    psi = as_spd(psi)
    if m.shape != (sigma.dim, psi.dim):
        raise ValueError(
            f"mean shape {m.shape} does not match covariances "
            f"({sigma.dim}, {psi.dim})")
    shape = (sigma.dim, psi.dim) if size is None else (size, sigma.dim, psi.dim)
    z = rng.standard_normal(shape)
    return m + np.matmul(np.matmul(sigma.chol, z), psi.chol.T)
