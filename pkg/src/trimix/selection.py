"""Modified BIC, exact nonzero-parameter counting, and the (K, lambda) grid search."""

from __future__ import annotations

import csv
import hashlib
import itertools
import math
import struct
import time
from dataclasses import dataclass

import numpy as np

from .data import ThreeWayData
from .em import FitResult, MixtureParams, fit, initialize
from .errors import TrimixError
from .penalties import PenaltyConfig


def count_nonzero(params: MixtureParams) -> int:
    """Number of parameters not shrunk to zero.

    Counts K-1 mixing weights, every nonzero mean cell, and for each
    precision matrix the nonzero entries on and above the diagonal
    (symmetric counting). Zero means exact 0.0; no epsilon thresholding.
    """
    k = params.n_components
    total = k - 1
    total += int(np.count_nonzero(params.means))
    for omega in params.omegas:
        total += int(np.count_nonzero(omega.values[np.triu_indices(omega.dim)]))
    for gamma in params.gammas:
        total += int(np.count_nonzero(gamma.values[np.triu_indices(gamma.dim)]))
    return total


def bic(loglik: float, d0: int, n) -> float:
    """Modified BIC ``2 loglik - d0 log(n)`` with the unpenalized log-likelihood."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2.0 * loglik - d0 * math.log(n)


@dataclass(frozen=True)
class GridCell:
    """One fitted grid combination and its selection statistics."""

    n_components: int
    lambda1: float
    lambda2: float
    lambda3: float
    loglik: float
    d0: int
    bic: float
    converged: bool
    iterations: int
    seconds: float
    message: str = ""


@dataclass
class GridSearchResult:
    cells: list[GridCell]
    best_index: int
    best_fit: FitResult

    @property
    def best(self) -> GridCell:
        return self.cells[self.best_index]


def cell_seed(master_seed: int, n_components: int,
              lambdas: tuple[float, float, float]) -> int:
    """Deterministic per-cell seed keyed by the cell coordinates.

    Depends only on (master seed, K, lambda values), never on enumeration
    order, so grid results are invariant to how the grid is listed.
    """
    payload = struct.pack(
        "<QQ3d", int(master_seed) % 2**64, int(n_components),
        float(lambdas[0]), float(lambdas[1]), float(lambdas[2]))
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def grid_search(data: ThreeWayData, k_grid, l1_grid, l2_grid, l3_grid, *,
                kind: str = "group-row", p1=None, p2=None, p3=None,
                eps: float = 1e-5, max_iter: int = 500, master_seed: int = 0,
                fixed_step: bool = False, init_method: str = "ward",
                init_restarts: int = 1, degeneracy_restarts: int = 0,
                progress=None) -> GridSearchResult:
    """Fit every (K, lambda1, lambda2, lambda3) combination and pick the BIC max.

    Cells are fitted independently with seeds derived from their
    coordinates; failed or non-converged cells stay in the table (flagged)
    but never win the selection. Raises :class:`TrimixError` when no cell
    converges.
    """
    k_grid = sorted({int(k) for k in k_grid})
    l1_grid = sorted({float(v) for v in l1_grid})
    l2_grid = sorted({float(v) for v in l2_grid})
    l3_grid = sorted({float(v) for v in l3_grid})
    if not k_grid or not l1_grid or not l2_grid or not l3_grid:
        raise ValueError("all grids must be non-empty")
    if min(l1_grid) < 0 or min(l2_grid) < 0 or min(l3_grid) < 0:
        raise ValueError("shrinkage values must be >= 0")
    if kind == "none" and max(l1_grid) > 0:
        raise ValueError("kind='none' only admits lambda1 = 0")

    cells: list[GridCell] = []
    best_index = -1
    best_fit: FitResult | None = None
    for k, l1, l2, l3 in itertools.product(k_grid, l1_grid, l2_grid, l3_grid):
        seed = cell_seed(master_seed, k, (l1, l2, l3))
        penalty = PenaltyConfig(l1, l2, l3, kind=kind, p1=p1, p2=p2, p3=p3)
        started = time.perf_counter()
        try:
            result = fit(data, k, penalty, eps=eps, max_iter=max_iter,
                         seed=seed, fixed_step=fixed_step, init_method=init_method,
                         init_restarts=init_restarts,
                         degeneracy_restarts=degeneracy_restarts)
            cell = GridCell(k, l1, l2, l3, result.loglik, result.d0, result.bic,
                            result.converged, result.iterations,
                            time.perf_counter() - started, result.message)
        except TrimixError as exc:
            result = None
            cell = GridCell(k, l1, l2, l3, float("nan"), 0, float("nan"),
                            False, 0, time.perf_counter() - started, str(exc))
        cells.append(cell)
        if progress is not None:
            progress(cell)
        if result is not None and result.converged:
            if best_fit is None or cell.bic > cells[best_index].bic:
                best_index = len(cells) - 1
                best_fit = result
    if best_fit is None:
        details = "; ".join(
            f"K={c.n_components} lambda=({c.lambda1:g},{c.lambda2:g},{c.lambda3:g})"
            f" -> {c.message or 'not converged'}" for c in cells)
        raise TrimixError(f"no grid cell converged: {details}")
    return GridSearchResult(cells, best_index, best_fit)


def default_lambda_grids(data: ThreeWayData, n_components: int,
                         n_points: tuple[int, int, int] = (4, 4, 4),
                         kind: str = "group-row",
                         init_method: str = "ward",
                         upper: float = 1.0) -> tuple[list, list, list]:
    """Equispaced grids from 0 to a data-driven lambda_max.

    lambda1_max is the smallest level that zeroes every mean row (or cell,
    for the entrywise kind) at the initial hard partition with identity
    precisions; lambda2_max / lambda3_max are the levels at which every
    off-diagonal scatter entry is killed by the soft threshold. ``upper``
    rescales the endpoints.
    """
    labels = initialize(data, n_components, method=init_method)
    x = data.values
    l1max = l2max = l3max = 0.0
    for j in range(n_components):
        members = labels == j
        n_j = int(np.sum(members))
        s_m = x[members].sum(axis=0)
        if kind == "entrywise":
            l1max = max(l1max, float(np.max(np.abs(s_m))))
        else:
            l1max = max(l1max, float(np.max(np.linalg.norm(s_m, axis=1))))
        mean_j = s_m / n_j
        y = x[members] - mean_j
        s_om = np.einsum("iab,icb->ac", y, y) / (n_j * data.q)
        s_ga = np.einsum("iab,iac->bc", y, y) / (n_j * data.p)
        off_om = np.abs(s_om - np.diag(np.diag(s_om)))
        off_ga = np.abs(s_ga - np.diag(np.diag(s_ga)))
        l2max = max(l2max, float(np.max(off_om)) * n_j * data.q / 2.0)
        l3max = max(l3max, float(np.max(off_ga)) * n_j * data.p / 2.0)
    return (np.linspace(0.0, upper * l1max, n_points[0]).tolist(),
            np.linspace(0.0, upper * l2max, n_points[1]).tolist(),
            np.linspace(0.0, upper * l3max, n_points[2]).tolist())


GRID_CSV_COLUMNS = ("K", "lambda1", "lambda2", "lambda3", "loglik", "d0",
                    "bic", "converged", "iterations", "seconds")


def write_grid_csv(result: GridSearchResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GRID_CSV_COLUMNS)
        for c in result.cells:
            writer.writerow([c.n_components, repr(c.lambda1), repr(c.lambda2),
                             repr(c.lambda3), repr(c.loglik), c.d0, repr(c.bic),
                             c.converged, c.iterations, f"{c.seconds:.6f}"])
