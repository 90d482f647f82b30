"""Three-way data container, file ingestion, and preprocessing transforms.

A three-way sample is a collection of n real p x q matrices (p variables
observed on q occasions). Two on-disk formats are supported:

* ``long-csv``: UTF-8 with header ``unit,row,col,value``; 1-based integer
  row/col indices, arbitrary string unit ids, decimal-point reals. Cell
  order is unconstrained; every (unit, row, col) cell must appear exactly
  once.
* ``json-tensor``: an object with keys ``dims`` (``[n, p, q]``) and
  ``values`` (flat array, unit-major then row-major).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

FORMATS = ("long-csv", "json-tensor")


@dataclass(frozen=True, eq=False)
class ThreeWayData:
    """An immutable sample of ``n`` real matrices, each ``p x q``.

    The value array is copied, validated (finite entries, three dimensions,
    all sizes >= 1) and frozen at construction, so instances are safe to
    share across threads.
    """

    values: np.ndarray
    unit_ids: tuple[str, ...] | None = None
    row_names: tuple[str, ...] | None = None
    col_names: tuple[str, ...] | None = None

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 3:
            raise DataError(f"expected an (n, p, q) array, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DataError(f"every dimension must be >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("three-way data contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        for name, size in (("unit_ids", arr.shape[0]),
                           ("row_names", arr.shape[1]),
                           ("col_names", arr.shape[2])):
            labels = getattr(self, name)
            if labels is None:
                continue
            labels = tuple(str(x) for x in labels)
            if len(labels) != size:
                raise DataError(f"{name} has {len(labels)} entries, expected {size}")
            object.__setattr__(self, name, labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def q(self) -> int:
        return self.values.shape[2]

    def unit(self, i: int) -> np.ndarray:
        return self.values[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ThreeWayData):
            return NotImplemented
        return (np.array_equal(self.values, other.values)
                and self.unit_ids == other.unit_ids
                and self.row_names == other.row_names
                and self.col_names == other.col_names)

    def __repr__(self) -> str:
        return f"ThreeWayData(n={self.n}, p={self.p}, q={self.q})"


def _check_format(fmt: str) -> None:
    if fmt not in FORMATS:
        raise DataError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def load_three_way(path, fmt: str = "long-csv") -> ThreeWayData:
    """Load a validated three-way sample from ``path``.

    Missing (unit, row, col) cells are an error, never imputed; duplicate
    cells and non-finite values are rejected.
    """
    _check_format(fmt)
    try:
        if fmt == "json-tensor":
            return _load_json(path)
        return _load_long_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def save_three_way(data: ThreeWayData, path, fmt: str = "long-csv") -> None:
    """Write ``data`` to ``path``; loading the file back is the identity."""
    _check_format(fmt)
    if fmt == "json-tensor":
        payload = {"dims": [data.n, data.p, data.q],
                   "values": data.values.ravel(order="C").tolist()}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")
        return
    ids = data.unit_ids or tuple(str(i + 1) for i in range(data.n))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "row", "col", "value"])
        for i in range(data.n):
            for r in range(data.p):
                for c in range(data.q):
                    writer.writerow([ids[i], r + 1, c + 1,
                                     repr(float(data.values[i, r, c]))])


def _load_json(path) -> ThreeWayData:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(payload, dict) or "dims" not in payload or "values" not in payload:
        raise DataError(f"{path}: json-tensor requires 'dims' and 'values' keys")
    dims = payload["dims"]
    if len(dims) != 3 or any((not isinstance(d, int)) or d < 1 for d in dims):
        raise DataError(f"{path}: 'dims' must be three positive integers, got {dims!r}")
    values = np.asarray(payload["values"], dtype=float)
    if values.ndim != 1 or values.size != math.prod(dims):
        raise DataError(
            f"{path}: expected {math.prod(dims)} values for dims {dims}, got {values.size}")
    return ThreeWayData(values.reshape(dims))


def _load_long_csv(path) -> ThreeWayData:
    cells: dict[str, dict[tuple[int, int], float]] = {}
    order: list[str] = []
    max_row = 0
    max_col = 0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["unit", "row", "col", "value"]:
            raise DataError(f"{path}: expected header 'unit,row,col,value', got {header!r}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
            unit = rec[0]
            try:
                row = int(rec[1])
                col = int(rec[2])
                value = float(rec[3])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if row < 1 or col < 1:
                raise DataError(f"{path}:{lineno}: row/col indices are 1-based")
            if not math.isfinite(value):
                raise DataError(f"{path}:{lineno}: non-finite value {rec[3]!r}")
            if unit not in cells:
                cells[unit] = {}
                order.append(unit)
            if (row, col) in cells[unit]:
                raise DataError(f"{path}:{lineno}: duplicate cell (unit={unit}, {row}, {col})")
            cells[unit][(row, col)] = value
            max_row = max(max_row, row)
            max_col = max(max_col, col)
    if not order:
        raise DataError(f"{path}: no data rows")
    arr = np.full((len(order), max_row, max_col), np.nan)
    for i, unit in enumerate(order):
        unit_cells = cells[unit]
        if len(unit_cells) != max_row * max_col:
            missing = next((r, c) for r in range(1, max_row + 1)
                           for c in range(1, max_col + 1) if (r, c) not in unit_cells)
            raise DataError(
                f"{path}: ragged tensor, unit {unit!r} is missing cell {missing}")
        for (r, c), v in unit_cells.items():
            arr[i, r - 1, c - 1] = v
    return ThreeWayData(arr, unit_ids=tuple(order))


def preprocess(data: ThreeWayData, *, log_transform: bool = False,
               center_cellwise: bool = False, log_offset: float = 0.0) -> ThreeWayData:
    """Apply the log transform and/or cell-wise centering, in that order.

    The log is applied first (``value -> log(value + log_offset)``), then
    centering subtracts, for each cell (row r, col c), the mean over units
    of that cell. With both options off the input object is returned
    unchanged.
    """
    if log_offset < 0:
        raise DataError("log_offset must be >= 0")
    if not log_transform and not center_cellwise:
        return data
    values = np.array(data.values)
    if log_transform:
        shifted = values + log_offset
        if np.min(shifted) <= 0:
            raise DataError(
                f"log transform needs value + offset > 0; minimum is {np.min(shifted):g}")
        values = np.log(shifted)
    if center_cellwise:
        values = values - values.mean(axis=0)
    return ThreeWayData(values, unit_ids=data.unit_ids,
                        row_names=data.row_names, col_names=data.col_names)
