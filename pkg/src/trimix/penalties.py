"""Penalty configuration shared by the EM engine and model selection."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

PENALTY_KINDS = ("group-row", "entrywise", "none")


@dataclass
class PenaltyConfig:
    """Shrinkage levels and weight matrices for one penalized fit.

    ``kind`` picks the mean penalty: ``group-row`` sums Euclidean norms of
    mean rows, ``entrywise`` is a plain lasso on mean cells weighted by
    ``p1``, ``none`` leaves the means unpenalized (and requires
    ``lambda1 == 0``). ``p2``/``p3`` weight the precision penalties; the
    defaults are all-ones with a zero diagonal, so diagonal precision
    entries are never shrunk. Weight matrices left as ``None`` are
    materialized by :meth:`resolve` once the data dimensions are known.
    """

    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0
    kind: str = "group-row"
    p1: np.ndarray | None = None
    p2: np.ndarray | None = None
    p3: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"kind must be one of {PENALTY_KINDS}, got {self.kind!r}")
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.kind == "none" and self.lambda1 != 0:
            raise ValueError("kind='none' requires lambda1 == 0")
        for name in ("p1", "p2", "p3"):
            w = getattr(self, name)
            if w is None:
                continue
            w = np.asarray(w, dtype=float)
            if np.min(w) < 0:
                raise ValueError(f"{name} entries must be >= 0")
            if name in ("p2", "p3"):
                if w.ndim != 2 or w.shape[0] != w.shape[1]:
                    raise ValueError(f"{name} must be square")
                if not np.allclose(w, w.T, atol=1e-12):
                    raise ValueError(f"{name} must be symmetric")
            setattr(self, name, w)

    def resolve(self, p: int, q: int) -> "PenaltyConfig":
        """Return a copy with all weight matrices materialized for (p, q)."""
        p1 = np.ones((p, q)) if self.p1 is None else self.p1
        p2 = 1.0 - np.eye(p) if self.p2 is None else self.p2
        p3 = 1.0 - np.eye(q) if self.p3 is None else self.p3
        if p1.shape != (p, q):
            raise ValueError(f"p1 shape {p1.shape} != ({p}, {q})")
        if p2.shape != (p, p):
            raise ValueError(f"p2 shape {p2.shape} != ({p}, {p})")
        if p3.shape != (q, q):
            raise ValueError(f"p3 shape {p3.shape} != ({q}, {q})")
        return replace(self, p1=p1, p2=p2, p3=p3)

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)
