"""Synthetic three-way scenarios, clustering/sparsity metrics, and the benchmark harness.

Two scenarios are generated, differing in the sparsity structure of the
three 10 x 10 row precision matrices: fixed overlapping-block patterns
("alternated-blocks") or Erdos-Renyi graphs with component-specific
connection probabilities ("sparse-at-random"). In both, the 5 x 5 column
precisions are Erdos-Renyi sparse and the 10 x 5 mean matrices share a
committed row-sparse fixture in which rows 2, 4, 6, 8 and 10 are
identically zero in every component, so half the variables carry no
grouping information.

The committed numeric fixtures (mean values, block boundaries, edge
weights) are design choices: the generation rules are what the recovery
metrics measure, and tests bind to these fixtures.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import ThreeWayData
from .em import FitResult, MixtureParams, fit, normalize_identifiability
from .errors import TrimixError
from .matnorm import SpdMatrix, matnorm_sample
from .penalties import PenaltyConfig
from .selection import cell_seed, grid_search

SCENARIOS = ("alternated-blocks", "sparse-at-random")
METHODS = ("full", "group", "lasso")

# Informative-row values of the three 10 x 5 component means; rows are
# interleaved with zero rows (variables 2, 4, ..., 10) by gen_true_means.
# Some informative rows vanish in individual components (but never in all
# three), so cluster-specific mean sparsity is part of the truth.
# Each component carries two strong informative rows of (nearly) equal
# norm; the five informative variables are each nonzero in at least one
# component, and the three pairwise mean distances are equal by design, so
# no particular pair of clusters is systematically the hardest to separate.
_MEAN_FIXTURE = {
    1: [[2.2, 2.2, 2.2, 2.2, 2.2],
        [3.1, 1.5, 0.0, -1.5, -3.1],
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0]],
    2: [[0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 2.3, 3.7, 2.3, 0.0],
        [-3.1, -1.5, 0.0, 1.5, 3.1],
        [0.0, 0.0, 0.0, 0.0, 0.0]],
    3: [[3.1, 1.5, 0.0, -1.5, -3.1],
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, -2.3, -3.7, -2.3, 0.0]],
}

# Overlapping index ranges [start, stop) of the within-block edges of the
# three alternated-block row precisions; overlaps (always at even indices)
# make each graph connected, so the implied covariances are dense. Edge
# weights alternate in sign with |weight| 0.4; diagonals are a uniform 2.5,
# which keeps every matrix strictly diagonally dominant.
_BLOCK_FIXTURE = {
    1: [(0, 5), (4, 9), (8, 10)],
    2: [(0, 2), (1, 3), (2, 4), (3, 5), (4, 6), (5, 7), (6, 8), (7, 9), (8, 10)],
    3: [(0, 3), (2, 5), (4, 7), (6, 9), (8, 10)],
}
_BLOCK_EDGE_WEIGHT = 0.4
_BLOCK_DIAGONAL = 2.5
_ER_DIAGONAL_MARGIN = 0.5

# Committed shrinkage grids for the benchmark harness (equispaced from 0;
# endpoints chosen once from pilot runs on the committed fixtures).
BENCHMARK_GRIDS = {
    "group": ([0.0, 13.0, 26.0, 39.0, 52.0, 65.0],
              [0.0, 20.0, 40.0, 60.0],
              [0.0, 6.0, 12.0, 18.0]),
    "lasso": ([0.0, 10.0, 20.0, 30.0],
              [0.0, 20.0, 40.0, 60.0],
              [0.0, 6.0, 12.0, 18.0]),
}


@dataclass(frozen=True)
class ScenarioSpec:
    """Dimensions and randomness of one simulated scenario."""

    name: str = "alternated-blocks"
    n: int = 150
    p: int = 10
    q: int = 5
    n_components: int = 3
    tau: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    er_probs: tuple[float, ...] = (0.2, 0.5, 0.8)
    gamma_er_prob: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.name!r}")
        if min(self.n, self.p, self.q, self.n_components) < 1:
            raise ValueError("dimensions must be positive")
        if len(self.tau) != self.n_components or abs(sum(self.tau) - 1) > 1e-12:
            raise ValueError("tau must be a length-K simplex vector")
        probs = tuple(self.er_probs) + (self.gamma_er_prob,)
        if any(not 0 < pb <= 1 for pb in probs):
            raise ValueError("connection probabilities must lie in (0, 1]")


def gen_er_precision(dim: int, prob: float, rng: np.random.Generator) -> SpdMatrix:
    """Erdos-Renyi sparse precision with diagonal-dominance scaling.

    Each off-diagonal pair is an edge with probability ``prob``; edge
    weights are uniform on +/-[0.3, 0.6]; each diagonal entry is the
    absolute row sum plus 0.5, so the matrix is strictly diagonally
    dominant (hence PD) and its zero pattern equals the sampled graph.
    """
    if not 0 < prob <= 1:
        raise ValueError("prob must lie in (0, 1]")
    a = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(i + 1, dim):
            if rng.random() < prob:
                w = rng.uniform(0.3, 0.6) * (1.0 if rng.random() < 0.5 else -1.0)
                a[i, j] = a[j, i] = w
    np.fill_diagonal(a, np.sum(np.abs(a), axis=1) + _ER_DIAGONAL_MARGIN)
    return SpdMatrix(a)


def gen_block_precision(component: int) -> SpdMatrix:
    """Committed 10 x 10 alternated-block row precision for component 1..3."""
    if component not in _BLOCK_FIXTURE:
        raise ValueError(f"component must be in {sorted(_BLOCK_FIXTURE)}")
    a = np.zeros((10, 10))
    for start, stop in _BLOCK_FIXTURE[component]:
        for i in range(start, stop):
            for j in range(i + 1, stop):
                a[i, j] = a[j, i] = _BLOCK_EDGE_WEIGHT * (-1.0) ** (i + j)
    np.fill_diagonal(a, _BLOCK_DIAGONAL)
    return SpdMatrix(a)


def gen_true_means() -> np.ndarray:
    """The committed (3, 10, 5) mean fixture; rows 2, 4, 6, 8, 10 are zero."""
    means = np.zeros((3, 10, 5))
    for k in (1, 2, 3):
        means[k - 1, 0::2, :] = np.asarray(_MEAN_FIXTURE[k])
    return means


def simulate_dataset(spec: ScenarioSpec) -> tuple[ThreeWayData, np.ndarray, MixtureParams]:
    """Draw one dataset: (data, true labels, true parameters).

    True parameters are returned identifiability-normalized (|Gamma_k| = 1)
    so they are directly comparable to fitted ones. Deterministic per seed.
    """
    if (spec.p, spec.q, spec.n_components) != (10, 5, 3):
        raise ValueError("the committed fixtures define p=10, q=5, K=3 scenarios")
    rng = np.random.default_rng(spec.seed)
    if spec.name == "alternated-blocks":
        omegas = tuple(gen_block_precision(k) for k in (1, 2, 3))
    else:
        omegas = tuple(gen_er_precision(spec.p, pb, rng) for pb in spec.er_probs)
    gammas = tuple(gen_er_precision(spec.q, spec.gamma_er_prob, rng)
                   for _ in range(spec.n_components))
    params = normalize_identifiability(
        MixtureParams(np.asarray(spec.tau), gen_true_means(), omegas, gammas))
    sigmas = [om.inverse() for om in params.omegas]
    psis = [ga.inverse() for ga in params.gammas]
    labels = rng.choice(spec.n_components, size=spec.n, p=np.asarray(spec.tau))
    units = np.empty((spec.n, spec.p, spec.q))
    for i, lab in enumerate(labels):
        units[i] = matnorm_sample(params.means[lab], sigmas[lab], psis[lab], rng)
    return ThreeWayData(units), labels, params


def ari(a, b) -> float:
    """Adjusted Rand index between two labelings (pair-counting form)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("labelings must be equal-length vectors")
    n = a.shape[0]
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_rows * sum_cols / total if total > 0 else 0.0
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def f1_zero_rows(true_means, est_means) -> float:
    """F1 score for recovering variables whose mean rows vanish everywhere.

    A variable is selected out when its row is exactly zero in all K
    component means; the score is tp / (tp + 0.5 (fp + fn)) over variables.
    """
    t = np.asarray(true_means, dtype=float)
    e = np.asarray(est_means, dtype=float)
    if t.shape != e.shape or t.ndim != 3:
        raise ValueError("expected matching (K, p, q) mean stacks")
    true_out = np.all(t == 0.0, axis=(0, 2))
    est_out = np.all(e == 0.0, axis=(0, 2))
    tp = int(np.sum(true_out & est_out))
    fp = int(np.sum(~true_out & est_out))
    fn = int(np.sum(true_out & ~est_out))
    if tp + fp + fn == 0:
        return 1.0
    return tp / (tp + 0.5 * (fp + fn))


def confusion_matrix(a, b, n_components: int) -> np.ndarray:
    """Count matrix C[i, j] = #units with label i in ``a`` and j in ``b``."""
    table = np.zeros((n_components, n_components), dtype=np.int64)
    np.add.at(table, (np.asarray(a, int), np.asarray(b, int)), 1)
    return table


def match_labels(confusion: np.ndarray) -> np.ndarray:
    """Permutation sigma maximizing sum_k confusion[k, sigma[k]] (exact assignment)."""
    confusion = np.asarray(confusion)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ValueError("confusion must be square")
    rows, cols = linear_sum_assignment(-confusion)
    perm = np.empty(confusion.shape[0], dtype=int)
    perm[rows] = cols
    return perm


@dataclass(frozen=True)
class ReplicationRecord:
    """Metrics of one fitted method on one replication."""

    rep: int
    method: str
    ari: float
    f1: float
    d0: int
    frob_mean: tuple[float, ...]
    frob_omega: tuple[float, ...]
    frob_gamma: tuple[float, ...]
    converged: bool
    seconds: float
    lambdas: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class ExperimentReport:
    """Per-replication records plus Table-style aggregation."""

    scenario: str
    reps: int
    records: list[ReplicationRecord]
    failures: list[tuple[int, str, str]] = field(default_factory=list)

    def values(self, method: str, metric: str, component: int | None = None) -> np.ndarray:
        out = []
        for r in self.records:
            if r.method != method:
                continue
            v = getattr(r, metric)
            out.append(v[component] if component is not None else v)
        return np.asarray(out, dtype=float)

    def summary(self) -> dict:
        methods = sorted({r.method for r in self.records})
        table: dict = {}
        for m in methods:
            entry: dict = {}
            for metric in ("ari", "f1", "d0", "seconds"):
                vals = self.values(m, metric)
                entry[metric] = _mean_sd(vals)
            for metric in ("frob_mean", "frob_omega", "frob_gamma"):
                per_comp = []
                k = len(self.records[0].frob_mean)
                for j in range(k):
                    per_comp.append(_mean_sd(self.values(m, metric, j)))
                entry[metric] = per_comp
            table[m] = entry
        return {"scenario": self.scenario, "reps": self.reps,
                "failures": len(self.failures), "methods": table}


def _mean_sd(values: np.ndarray) -> dict:
    values = values[np.isfinite(values)]
    if values.size == 0:
        return {"mean": float("nan"), "sd": float("nan"), "n": 0}
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return {"mean": float(np.mean(values)), "sd": sd, "n": int(values.size)}


def _metrics_for(rep: int, method: str, result: FitResult, truth: MixtureParams,
                 true_labels: np.ndarray, seconds: float,
                 lambdas=(0.0, 0.0, 0.0)) -> ReplicationRecord:
    k = truth.n_components
    perm = match_labels(confusion_matrix(true_labels, result.labels, k))
    est = result.params
    frob_m = tuple(float(np.linalg.norm(truth.means[j] - est.means[perm[j]]))
                   for j in range(k))
    frob_o = tuple(float(np.linalg.norm(truth.omegas[j].values
                                        - est.omegas[perm[j]].values))
                   for j in range(k))
    frob_g = tuple(float(np.linalg.norm(truth.gammas[j].values
                                        - est.gammas[perm[j]].values))
                   for j in range(k))
    est_means_matched = np.stack([est.means[perm[j]] for j in range(k)])
    return ReplicationRecord(
        rep=rep, method=method,
        ari=ari(true_labels, result.labels),
        f1=f1_zero_rows(truth.means, est_means_matched),
        d0=result.d0, frob_mean=frob_m, frob_omega=frob_o, frob_gamma=frob_g,
        converged=result.converged, seconds=seconds, lambdas=lambdas)


def run_replication(spec: ScenarioSpec, rep: int, methods, grids, opts) -> tuple[list, list]:
    """Simulate replication ``rep`` and fit every requested method on it."""
    data_seed = cell_seed(spec.seed, rep, (0.0, 0.0, 0.0))
    data, labels, truth = simulate_dataset(replace(spec, seed=data_seed))
    records: list[ReplicationRecord] = []
    failures: list[tuple[int, str, str]] = []
    for method in methods:
        started = time.perf_counter()
        try:
            if method == "full":
                penalty = PenaltyConfig(0.0, 0.0, 0.0, kind="none")
                result = fit(data, spec.n_components, penalty, seed=data_seed, **opts)
                lambdas = (0.0, 0.0, 0.0)
            else:
                kind = "group-row" if method == "group" else "entrywise"
                l1g, l2g, l3g = (grids or BENCHMARK_GRIDS)[method]
                search = grid_search(
                    data, [spec.n_components], l1g, l2g, l3g, kind=kind,
                    master_seed=data_seed, **opts)
                result = search.best_fit
                best = search.best
                lambdas = (best.lambda1, best.lambda2, best.lambda3)
            elapsed = time.perf_counter() - started
            records.append(_metrics_for(rep, method, result, truth, labels,
                                        elapsed, lambdas))
        except TrimixError as exc:
            failures.append((rep, method, str(exc)))
    return records, failures


def run_experiment(spec: ScenarioSpec, reps: int, methods=("full", "group", "lasso"),
                   grids: dict | None = None, *, eps: float = 1e-5,
                   max_iter: int = 500, init_method: str = "kmeans++",
                   init_restarts: int = 1, n_jobs: int = 1) -> ExperimentReport:
    """Repeat simulate-and-fit ``reps`` times and aggregate the metrics.

    ``grids`` maps a penalized method name to its (l1, l2, l3) grids; when
    omitted the committed :data:`BENCHMARK_GRIDS` are used. The ``full``
    method is the unpenalized mixture (lambda = 0). Every fit is
    initialized with the seeded ``init_method`` (kmeans++ by default, so
    grid cells start from independent seedings while the unpenalized
    single fit gets one). Replications use independent derived seeds and
    may execute in parallel; failed replications are excluded from the
    records and reported.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}; pick from {METHODS}")
    opts = {"eps": eps, "max_iter": max_iter, "init_method": init_method,
            "init_restarts": init_restarts, "degeneracy_restarts": 2}
    tasks = [(spec, rep, tuple(methods), grids, opts) for rep in range(reps)]
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outputs = list(pool.map(_run_replication_star, tasks))
    else:
        outputs = [_run_replication_star(t) for t in tasks]
    records: list[ReplicationRecord] = []
    failures: list[tuple[int, str, str]] = []
    for recs, fails in outputs:
        records.extend(recs)
        failures.extend(fails)
    records.sort(key=lambda r: (r.rep, r.method))
    return ExperimentReport(spec.name, reps, records, failures)


def _run_replication_star(args):
    return run_replication(*args)


REPORT_CSV_COLUMNS = ("rep", "method", "metric", "component", "value")


def write_report_csv(report: ExperimentReport, path) -> None:
    """Long-format record export: rep, method, metric, component, value."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_CSV_COLUMNS)
        for r in report.records:
            for metric in ("ari", "f1", "d0", "seconds"):
                writer.writerow([r.rep, r.method, metric, "", repr(float(getattr(r, metric)))])
            for metric in ("frob_mean", "frob_omega", "frob_gamma"):
                for j, v in enumerate(getattr(r, metric)):
                    writer.writerow([r.rep, r.method, metric, j + 1, repr(float(v))])
