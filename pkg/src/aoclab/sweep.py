"""Value-function maps over state-space slices, with continuity diagnostics.

Cells are solved in a boustrophedon scan so each cell can warm-start from
already-solved neighbors (minimizers vary continuously wherever the value
does, so a neighbor's control is an excellent seed).  Failures never abort
a sweep; they become "unreached" cells.

The diagnostics are indicative only: a jump flag marks a candidate
discontinuity, and the refinement check separates genuine candidates from
plain solver failures.  No finite grid can certify a continuity set.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .direct import SolveOptions, solve_fixed_endpoint
from .errors import ShapeError
from .model import ProblemSpec

KAPPA_JUMP_FACTOR = 5.0


@dataclass(eq=False)
class GridSpec:
    """A 1- or 2-dimensional slice of the state space.

    ``axes`` holds (coordinate index, sample values) pairs for the active
    coordinates; all other coordinates stay at ``base_point``.
    """

    base_point: np.ndarray
    axes: tuple

    def __post_init__(self):
        base = np.asarray(self.base_point, dtype=float).reshape(-1)
        object.__setattr__(self, "base_point", base)
        axes = tuple((int(dim), np.asarray(vals, dtype=float).reshape(-1))
                     for dim, vals in self.axes)
        if len(axes) not in (1, 2):
            raise ShapeError("a grid slices 1 or 2 coordinates")
        for dim, vals in axes:
            if not 0 <= dim < base.size:
                raise ShapeError(f"axis index {dim} out of range")
            if vals.size < 2:
                raise ShapeError("each active axis needs at least 2 samples")
        if len(axes) == 2 and axes[0][0] == axes[1][0]:
            raise ShapeError("active axes must use distinct coordinates")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def line(cls, base_point, dim: int, lo: float, hi: float, n: int) -> "GridSpec":
        return cls(base_point=np.asarray(base_point, float),
                   axes=((dim, np.linspace(lo, hi, n)),))

    @classmethod
    def plane(cls, base_point, dims, los, his, ns) -> "GridSpec":
        return cls(base_point=np.asarray(base_point, float),
                   axes=((dims[0], np.linspace(los[0], his[0], ns[0])),
                         (dims[1], np.linspace(los[1], his[1], ns[1]))))

    @property
    def shape(self) -> tuple:
        return tuple(vals.size for _, vals in self.axes)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def point(self, idx) -> np.ndarray:
        out = self.base_point.copy()
        for (dim, vals), i in zip(self.axes, np.atleast_1d(idx)):
            out[dim] = vals[i]
        return out

    def validate_against(self, spec: ProblemSpec) -> None:
        bounds = np.asarray(spec.system.chart_bounds)
        for dim, vals in self.axes:
            if vals.min() < bounds[dim, 0] or vals.max() > bounds[dim, 1]:
                raise ShapeError(f"grid axis {dim} leaves the chart bounds")


@dataclass(eq=False)
class ValueMap:
    """Per-cell values, labels and diagnostic flags over a grid."""

    spec: ProblemSpec
    grid: GridSpec
    values: np.ndarray
    labels: np.ndarray
    jump_flags: np.ndarray
    lsc_flags: np.ndarray
    best_controls: np.ndarray
    opts: SolveOptions
    reports: dict = field(default_factory=dict)

    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    def to_csv(self, path) -> None:
        """Plot-ready long format: x, y, V, label, jump (one row per cell)."""
        rows = []
        for idx in np.ndindex(*self.values.shape):
            pt = self.grid.point(idx)
            x = float(pt[self.grid.axes[0][0]])
            y = float(pt[self.grid.axes[1][0]]) if self.grid.ndim == 2 else 0.0
            v = self.values[idx]
            v_txt = "inf" if not np.isfinite(v) else repr(float(v))
            rows.append(f"{x!r},{y!r},{v_txt},{self.labels[idx]},{int(self.jump_flags[idx])}")
        with open(path, "w") as fh:
            fh.write("x,y,V,label,jump\n")
            fh.write("\n".join(rows) + "\n")

    def to_json_dict(self) -> dict:
        vals = [[None if not np.isfinite(v) else float(v) for v in row]
                for row in np.atleast_2d(self.values)]
        return {
            "shape": list(self.values.shape),
            "axes": [{"dim": int(dim), "values": [float(v) for v in vs]}
                     for dim, vs in self.grid.axes],
            "base_point": [float(v) for v in self.grid.base_point],
            "values": vals,
            "labels": np.atleast_2d(self.labels).tolist(),
            "jump_flags": np.atleast_2d(self.jump_flags).astype(int).tolist(),
            "lsc_flags": np.atleast_2d(self.lsc_flags).astype(int).tolist(),
        }


def _scan_order(shape: tuple):
    """Boustrophedon cell order: row-major with alternating direction."""
    if len(shape) == 1:
        for i in range(shape[0]):
            yield (i,)
        return
    n1, n2 = shape
    for i in range(n1):
        cols = range(n2) if i % 2 == 0 else range(n2 - 1, -1, -1)
        for j in cols:
            yield (i, j)


def _neighbors(idx: tuple, shape: tuple):
    if len(shape) == 1:
        (i,) = idx
        for di in (-1, 1):
            if 0 <= i + di < shape[0]:
                yield (i + di,)
        return
    i, j = idx
    for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ni, nj = i + di, j + dj
        if 0 <= ni < shape[0] and 0 <= nj < shape[1]:
            yield (ni, nj)


def value_map(spec: ProblemSpec, grid: GridSpec, opts: Optional[SolveOptions] = None,
              classify_cells: bool = False, warm_start: bool = True,
              threads: int = 1) -> ValueMap:
    """Solve every grid cell; warm starts follow the boustrophedon scan.

    ``threads > 1`` solves cells concurrently with cold starts only (the
    warm-start chain is inherently sequential); results are identical in
    structure, cell values may differ within solver tolerance.
    """
    opts = opts or SolveOptions()
    grid.validate_against(spec)
    shape = grid.shape
    values = np.full(shape, np.inf)
    labels = np.full(shape, "unreached", dtype=object)
    best_controls = np.full(shape, None, dtype=object)
    jump = np.zeros(shape, dtype=bool)
    lsc = np.zeros(shape, dtype=bool)
    vmap = ValueMap(spec=spec, grid=grid, values=values, labels=labels,
                    jump_flags=jump, lsc_flags=lsc, best_controls=best_controls,
                    opts=opts)

    def solve_cell(idx, seeds):
        cell_seed = opts.seed + int(np.ravel_multi_index(idx, shape))
        cell_opts = replace(opts, seed=cell_seed,
                            seed_controls=tuple(seeds) + tuple(opts.seed_controls))
        if classify_cells:
            from .classify import classify_point

            report = classify_point(spec, grid.point(idx), cell_opts)
            return report.value, report.candidates, report
        cset = solve_fixed_endpoint(spec, grid.point(idx), cell_opts)
        return cset.value(), cset, None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {idx: pool.submit(solve_cell, idx, ())
                       for idx in _scan_order(shape)}
        results = {idx: fut.result() for idx, fut in futures.items()}
    else:
        results = {}
        for idx in _scan_order(shape):
            seeds = []
            if warm_start:
                for nb in _neighbors(idx, shape):
                    ctrl = best_controls[nb]
                    if ctrl is not None:
                        seeds.append(ctrl)
            val, cset, report = solve_cell(idx, seeds)
            results[idx] = (val, cset, report)
            if cset.candidates:
                best_controls[idx] = cset.candidates[0].control

    for idx, (val, cset, report) in results.items():
        values[idx] = val
        if cset.candidates:
            best_controls[idx] = cset.candidates[0].control
        if report is not None:
            vmap.reports[idx] = report
            labels[idx] = report.label()
        elif np.isfinite(val):
            labels[idx] = "inconclusive"
    return vmap


@dataclass(eq=False)
class ContinuityDiagnostics:
    """Oscillation field, jump flags and refinement-audited lsc flags."""

    median_neighbor_diff: float
    kappa_jump: float
    oscillation: np.ndarray
    jump_flags: np.ndarray
    lsc_flags: np.ndarray
    suspect_isolated_tame: list


def continuity_diagnostics(vmap: ValueMap, refine_check: bool = True) -> ContinuityDiagnostics:
    """Flag candidate discontinuities and audit them under grid refinement.

    A cell is jump-flagged when its 3x3-neighborhood oscillation exceeds the
    jump scale (five times the median neighbor difference, rescaled by the
    local value size).  A flagged cell whose value also exceeds its neighborhood
    minimum is re-solved with a doubled control grid; only when refinement
    fails to close the excess does the cell keep a lower-semicontinuity
    flag, separating discontinuity candidates from solver artifacts.
    """
    values = vmap.values
    shape = values.shape
    finite = np.isfinite(values)

    diffs = []
    for idx in np.ndindex(*shape):
        for nb in _neighbors(idx, shape):
            if nb > idx and finite[idx] and finite[nb]:
                diffs.append(abs(values[idx] - values[nb]))
    median_diff = float(np.median(diffs)) if diffs else 0.0
    kappa = KAPPA_JUMP_FACTOR * median_diff
    med_abs = float(np.median(np.abs(values[finite]))) if finite.any() else 0.0

    osc = np.zeros(shape)
    jump = np.zeros(shape, dtype=bool)
    for idx in np.ndindex(*shape):
        if not finite[idx]:
            continue
        block = [values[idx]]
        for nb in _moore_neighbors(idx, shape):
            if finite[nb]:
                block.append(values[nb])
        osc[idx] = max(block) - min(block)
        local_scale = (1.0 + abs(values[idx])) / (1.0 + med_abs)
        if kappa > 0 and osc[idx] > kappa * local_scale:
            jump[idx] = True

    lsc = np.zeros(shape, dtype=bool)
    if refine_check:
        for idx in np.ndindex(*shape):
            if not jump[idx] or not finite[idx]:
                continue
            nb_vals = [values[nb] for nb in _moore_neighbors(idx, shape) if finite[nb]]
            if not nb_vals:
                continue
            excess = values[idx] - min(nb_vals)
            local_scale = (1.0 + abs(values[idx])) / (1.0 + med_abs)
            if excess <= kappa * local_scale:
                continue
            refined = _refined_value(vmap, idx)
            if refined > values[idx] - 0.5 * excess:
                lsc[idx] = True  # refinement kept the excess: genuine candidate
    vmap.jump_flags[:] = jump
    vmap.lsc_flags[:] = lsc

    suspects = _isolated_tame_cells(vmap)
    return ContinuityDiagnostics(median_neighbor_diff=median_diff, kappa_jump=kappa,
                                 oscillation=osc, jump_flags=jump, lsc_flags=lsc,
                                 suspect_isolated_tame=suspects)


def _moore_neighbors(idx: tuple, shape: tuple):
    if len(shape) == 1:
        yield from _neighbors(idx, shape)
        return
    i, j = idx
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            ni, nj = i + di, j + dj
            if 0 <= ni < shape[0] and 0 <= nj < shape[1]:
                yield (ni, nj)


def _refined_value(vmap: ValueMap, idx: tuple) -> float:
    """Re-solve one cell with a doubled control grid, seeded by the coarse best."""
    spec2 = vmap.spec.with_resolution(N=2 * vmap.spec.N)
    seeds = []
    ctrl = vmap.best_controls[idx]
    if ctrl is not None:
        seeds.append(ctrl.refine(2))
    for nb in _moore_neighbors(idx, vmap.values.shape):
        nb_ctrl = vmap.best_controls[nb]
        if nb_ctrl is not None:
            seeds.append(nb_ctrl.refine(2))
            break
    opts = replace(vmap.opts, seed_controls=tuple(seeds))
    return solve_fixed_endpoint(spec2, vmap.grid.point(idx), opts).value()


def _isolated_tame_cells(vmap: ValueMap) -> list:
    """Tame cells fully surrounded by rank-deficient ones (openness suspects)."""
    out = []
    for idx in np.ndindex(*vmap.values.shape):
        if vmap.labels[idx] not in ("tame", "smooth"):
            continue
        nbs = list(_moore_neighbors(idx, vmap.values.shape))
        if nbs and all(vmap.labels[nb] == "abnormal-flagged" for nb in nbs):
            out.append(idx)
    return out


def lipschitz_estimate(vmap: ValueMap, mask: Optional[np.ndarray] = None) -> float:
    """Largest adjacent-cell difference quotient |dV| / |dx| inside ``mask``."""
    values = vmap.values
    shape = values.shape
    if mask is None:
        mask = np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ShapeError("mask shape does not match the grid")
    if not np.all(np.isfinite(values[mask])):
        raise ShapeError("region touches unreached cells")
    best = 0.0
    for idx in np.ndindex(*shape):
        if not mask[idx]:
            continue
        for nb in _neighbors(idx, shape):
            if nb <= idx or not mask[nb]:
                continue
            dx = np.linalg.norm(vmap.grid.point(nb) - vmap.grid.point(idx))
            if dx > 0:
                best = max(best, abs(values[nb] - values[idx]) / dx)
    return float(best)
