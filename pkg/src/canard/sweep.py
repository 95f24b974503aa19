"""Two-parameter sweeps classifying fold counts of the critical manifold.

Each grid cell gets a class: "0", "2" or "4" folds inside the physical
stock window, "invalid" when the manifold's fold structure exists only at
negative stock (no physical interpretation), or "error" (odd counts at
tangency boundaries, solver failures).  Cells are independent, so the grid
parallelizes trivially; results are merged by cell index, making the output
bitwise identical for any worker count.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .manifold import FoldSearchError, LooseParams, find_folds

__all__ = [
    "SweepSpec",
    "CellResult",
    "RegionMap",
    "classify_point",
    "sweep",
    "export_region_map",
    "read_region_map",
]

REDUCED_PARAM_NAMES = ("alpha", "beta", "gamma", "b", "c", "d")
CLASSES = ("0", "2", "4", "invalid", "error")
CSV_HEADER = ["ix", "iy", "px", "py", "class", "n_folds", "fold_data"]


@dataclass(frozen=True)
class SweepSpec:
    """Grid over two reduced-model parameters, the rest held fixed.

    ``fixed`` maps every non-swept name from REDUCED_PARAM_NAMES to its
    value.  ``y_scan`` is the stock window for physical folds; fold search
    itself is unwindowed so sub-zero fold structure can be recognized.
    """

    param_x: str
    param_y: str
    range_x: tuple[float, float]
    range_y: tuple[float, float]
    nx: int
    ny: int
    fixed: dict
    y_scan: tuple[float, float] = (0.0, 60.0)
    x_grid: int = 800

    def __post_init__(self) -> None:
        if self.param_x not in REDUCED_PARAM_NAMES or self.param_y not in REDUCED_PARAM_NAMES:
            raise ValueError(f"swept parameters must be among {REDUCED_PARAM_NAMES}")
        if self.param_x == self.param_y:
            raise ValueError("the two swept parameters must differ")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("resolutions must be >= 2")
        if not (self.range_x[0] < self.range_x[1] and self.range_y[0] < self.range_y[1]):
            raise ValueError("ranges must be non-degenerate")
        needed = set(REDUCED_PARAM_NAMES) - {self.param_x, self.param_y}
        missing = needed - set(self.fixed)
        if missing:
            raise ValueError(f"fixed values missing for {sorted(missing)}")
        unknown = set(self.fixed) - needed
        if unknown:
            raise ValueError(f"fixed values given for swept/unknown names {sorted(unknown)}")

    def axis_x(self) -> np.ndarray:
        return np.linspace(self.range_x[0], self.range_x[1], self.nx)

    def axis_y(self) -> np.ndarray:
        return np.linspace(self.range_y[0], self.range_y[1], self.ny)

    def cell_params(self, ix: int, iy: int) -> LooseParams:
        values = dict(self.fixed)
        values[self.param_x] = float(self.axis_x()[ix])
        values[self.param_y] = float(self.axis_y()[iy])
        return LooseParams.from_reduced_values(**values)


@dataclass(frozen=True)
class CellResult:
    ix: int
    iy: int
    px: float
    py: float
    klass: str
    n_folds: int
    folds: tuple  # of (x, y) pairs, physical folds only


@dataclass
class RegionMap:
    spec: SweepSpec
    cells: list  # of CellResult, row-major (iy outer, ix inner)

    def histogram(self) -> dict:
        counts = {k: 0 for k in CLASSES}
        for cell in self.cells:
            counts[cell.klass] += 1
        return counts

    def grid_classes(self) -> np.ndarray:
        out = np.empty((self.spec.ny, self.spec.nx), dtype=object)
        for cell in self.cells:
            out[cell.iy, cell.ix] = cell.klass
        return out

    def boundary_cells(self) -> list:
        """(ix, iy) of cells that touch a different class (4-neighborhood)."""
        grid = self.grid_classes()
        ny, nx = grid.shape
        out = []
        for iy in range(ny):
            for ix in range(nx):
                me = grid[iy, ix]
                for jx, jy in ((ix - 1, iy), (ix + 1, iy), (ix, iy - 1), (ix, iy + 1)):
                    if 0 <= jx < nx and 0 <= jy < ny and grid[jy, jx] != me:
                        out.append((ix, iy))
                        break
        return out


def classify_point(params: LooseParams, y_scan=(0.0, 60.0),
                   x_grid: int = 800) -> tuple[str, tuple]:
    """(class, physical folds) for one parameter combination.

    Folds are searched over the whole manifold.  Any fold below the stock
    floor makes the bifurcation structure physically unrealizable (the
    dynamics it organizes would need negative stock) -> "invalid".
    Otherwise folds inside ``y_scan`` are counted: 0, 2 or 4; odd counts
    sit on tangency boundaries -> "error".
    """
    try:
        folds = find_folds(params, y_range=None, n_grid=x_grid)
    except (FoldSearchError, ValueError, ArithmeticError):
        return "error", ()
    if not folds:
        return "0", ()
    lo, hi = y_scan
    if any(f.y_star < lo for f in folds):
        return "invalid", tuple((f.x_star, f.y_star) for f in folds if lo <= f.y_star <= hi)
    phys = tuple((f.x_star, f.y_star) for f in folds if f.y_star <= hi)
    if len(phys) in (0, 2, 4):
        return str(len(phys)), phys
    return "error", phys


def _run_cell(spec: SweepSpec, ix: int, iy: int) -> CellResult:
    params = spec.cell_params(ix, iy)
    klass, phys = classify_point(params, spec.y_scan, spec.x_grid)
    return CellResult(ix=ix, iy=iy,
                      px=float(spec.axis_x()[ix]), py=float(spec.axis_y()[iy]),
                      klass=klass, n_folds=len(phys), folds=phys)


def _run_rows(args) -> list:
    spec, rows = args
    return [_run_cell(spec, ix, iy) for iy in rows for ix in range(spec.nx)]


def sweep(spec: SweepSpec, workers: int = 1, done: dict | None = None) -> RegionMap:
    """Classify every grid cell; deterministic for any worker count.

    ``done`` maps (ix, iy) -> CellResult for cells already computed (resume
    support); they are reused verbatim.
    """
    done = done or {}
    pending_rows = [iy for iy in range(spec.ny)
                    if any((ix, iy) not in done for ix in range(spec.nx))]
    results: dict = dict(done)
    if workers <= 1 or len(pending_rows) <= 1:
        for iy in pending_rows:
            for ix in range(spec.nx):
                if (ix, iy) not in results:
                    results[(ix, iy)] = _run_cell(spec, ix, iy)
    else:
        chunks = [pending_rows[i::workers] for i in range(workers)]
        chunks = [c for c in chunks if c]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            for batch in pool.map(_run_rows, [(spec, rows) for rows in chunks]):
                for cell in batch:
                    results[(cell.ix, cell.iy)] = cell
    cells = [results[(ix, iy)] for iy in range(spec.ny) for ix in range(spec.nx)]
    return RegionMap(spec=spec, cells=cells)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def export_region_map(region: RegionMap, csv_path: str, summary_path: str | None = None) -> None:
    """Write the per-cell CSV and a JSON summary (histogram + boundary list)."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for cell in region.cells:
            fold_data = ";".join(f"{_fmt(fx)}:{_fmt(fy)}" for fx, fy in cell.folds)
            writer.writerow([cell.ix, cell.iy, _fmt(cell.px), _fmt(cell.py),
                             cell.klass, cell.n_folds, fold_data])
    if summary_path is not None:
        summary = {
            "param_x": region.spec.param_x,
            "param_y": region.spec.param_y,
            "nx": region.spec.nx,
            "ny": region.spec.ny,
            "histogram": region.histogram(),
            "boundary_cells": [list(c) for c in region.boundary_cells()],
        }
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_region_map(csv_path: str, spec: SweepSpec | None = None) -> RegionMap:
    """Read back an exported CSV (inverse of export_region_map)."""
    cells = []
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            folds = tuple(
                tuple(float(part) for part in pair.split(":"))
                for pair in row["fold_data"].split(";") if pair)
            cells.append(CellResult(
                ix=int(row["ix"]), iy=int(row["iy"]),
                px=float(row["px"]), py=float(row["py"]),
                klass=row["class"], n_folds=int(row["n_folds"]), folds=folds))
    cells.sort(key=lambda c: (c.iy, c.ix))
    return RegionMap(spec=spec, cells=cells)


def worker_count(requested: int | None = None) -> int:
    """Effective parallelism: CANARD_WORKERS overrides the request."""
    env = os.environ.get("CANARD_WORKERS")
    if env:
        return max(1, int(env))
    if requested is None or requested < 1:
        return 1
    return requested
