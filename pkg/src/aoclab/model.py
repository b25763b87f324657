"""Control systems, discretized controls and problem definitions.

A control is the piecewise-constant representative of a square-integrable
signal on [0, T]: N intervals, d channels.  All containers here are frozen
after construction and safe for shared read access from parallel workers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError
from .fields import Potential, VectorField


def _frozen_array(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant control: ``values[k, i]`` holds channel i on interval k."""

    T: float
    values: np.ndarray

    def __post_init__(self):
        if self.T <= 0:
            raise ShapeError("horizon T must be positive")
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ShapeError("control values must be an (N, d) matrix")
        if not np.all(np.isfinite(v)):
            raise ShapeError("control values must be finite")
        object.__setattr__(self, "values", _frozen_array(v))

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return self.T / self.N

    @classmethod
    def zeros(cls, T: float, N: int, d: int) -> "Control":
        return cls(T, np.zeros((N, d)))

    @classmethod
    def constant(cls, T: float, N: int, vec: Sequence[float]) -> "Control":
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        return cls(T, np.tile(vec, (N, 1)))

    @classmethod
    def from_function(cls, T: float, N: int, fn) -> "Control":
        """Sample ``fn(t)`` at interval midpoints."""
        mids = (np.arange(N) + 0.5) * (T / N)
        return cls(T, np.array([np.atleast_1d(fn(t)) for t in mids], dtype=float))

    def l2_norm_sq(self) -> float:
        return float(np.sum(self.values ** 2) * self.dt)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.l2_norm_sq()))

    def refine(self, factor: int) -> "Control":
        """Exact embedding into a grid with ``factor`` times more intervals."""
        if factor < 1:
            raise ShapeError("refinement factor must be >= 1")
        return Control(self.T, np.repeat(self.values, factor, axis=0))

    def replace_values(self, values: np.ndarray) -> "Control":
        return Control(self.T, values)


def l2_inner(u: Control, v: Control) -> float:
    """Exact L2 pairing of two piecewise-constant controls on the same grid."""
    if (u.N, u.d) != (v.N, v.d) or u.T != v.T:
        raise ShapeError(
            f"controls on mismatched grids: ({u.N},{u.d},T={u.T}) vs ({v.N},{v.d},T={v.T})")
    return float(np.sum(u.values * v.values) * u.dt)


def l2_distance(u: Control, v: Control) -> float:
    if (u.N, u.d) != (v.N, v.d) or u.T != v.T:
        raise ShapeError("controls on mismatched grids")
    return float(np.sqrt(np.sum((u.values - v.values) ** 2) * u.dt))


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """Affine control system: drift, control fields, potential, chart box.

    The chart box is the axis-aligned region on which the numerics are
    trusted; a trajectory leaving it counts as inadmissible.
    """

    m: int
    d: int
    drift: VectorField
    controls: tuple
    potential: Potential
    chart_bounds: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.d < 1:
            raise ShapeError("need at least one control field")
        controls = tuple(self.controls)
        if len(controls) != self.d:
            raise ShapeError(f"expected {self.d} control fields, got {len(controls)}")
        if self.drift.dim != self.m or any(f.dim != self.m for f in controls):
            raise ShapeError("all fields must have dim = m")
        bounds = np.asarray(self.chart_bounds, dtype=float)
        if bounds.shape != (self.m, 2) or not np.all(bounds[:, 0] < bounds[:, 1]):
            raise ShapeError("chart_bounds must be an (m, 2) box with lo < hi")
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "chart_bounds", _frozen_array(bounds))

    def inside_chart(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.chart_bounds[:, 0]) and np.all(x <= self.chart_bounds[:, 1]))

    def check_potential_bound(self, rng: Optional[np.random.Generator] = None,
                              n_samples: int = 200) -> Optional[float]:
        """Spot-check the potential's upper-bound hint inside the chart.

        Returns the worst sampled value when the hint is exceeded (after a
        warning); the bound itself is an assumption, not machine-checkable.
        """
        hint = self.potential.upper_bound_hint
        if hint is None:
            return None
        rng = rng or np.random.default_rng(0)
        lo, hi = self.chart_bounds[:, 0], self.chart_bounds[:, 1]
        pts = lo + (hi - lo) * rng.random((n_samples, self.m))
        vals = self.potential(pts)
        worst = float(np.max(vals))
        if worst > hint + 1e-12:
            warnings.warn(
                f"potential exceeds its upper-bound hint inside the chart "
                f"({worst:.6g} > {hint:.6g}); existence arguments only hold where the "
                f"bound does", stacklevel=2)
            return worst
        return None


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """A fixed-horizon problem: system, start point, horizon and grids.

    ``N`` is the control grid resolution and ``substeps`` the number of RK4
    steps per control interval.  ``substeps`` must be even so interval
    midpoints land on integration nodes.
    """

    system: ControlSystem
    x0: np.ndarray
    T: float
    N: int
    substeps: int = 8

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.shape != (self.system.m,):
            raise ShapeError(f"x0 must have length {self.system.m}")
        if not self.system.inside_chart(x0):
            raise ShapeError("x0 lies outside the chart bounds")
        if self.T <= 0:
            raise ShapeError("T must be positive")
        if self.N < 1:
            raise ShapeError("N must be >= 1")
        if self.substeps < 2 or self.substeps % 2 != 0:
            raise ShapeError("substeps must be an even integer >= 2")
        object.__setattr__(self, "x0", _frozen_array(x0))
        self.system.check_potential_bound()

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def d(self) -> int:
        return self.system.d

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def dt_sub(self) -> float:
        return self.T / (self.N * self.substeps)

    @property
    def n_steps(self) -> int:
        return self.N * self.substeps

    def node_times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def zero_control(self) -> Control:
        return Control.zeros(self.T, self.N, self.d)

    def constant_control(self, vec) -> Control:
        return Control.constant(self.T, self.N, vec)

    def matches(self, u: Control) -> bool:
        return u.N == self.N and u.d == self.d and u.T == self.T

    def require_match(self, u: Control) -> None:
        if not self.matches(u):
            raise ShapeError(
                f"control grid ({u.N},{u.d},T={u.T}) does not match problem "
                f"({self.N},{self.d},T={self.T})")

    def with_resolution(self, N: Optional[int] = None,
                        substeps: Optional[int] = None) -> "ProblemSpec":
        return ProblemSpec(system=self.system, x0=np.array(self.x0), T=self.T,
                           N=self.N if N is None else int(N),
                           substeps=self.substeps if substeps is None else int(substeps))
