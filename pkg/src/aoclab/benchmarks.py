"""Built-in benchmark systems with closed-form reference data.

Every benchmark is polynomial-backed, integrates from its default start
with the zero control, and carries whatever closed forms exist for it:
values from minimum-energy control of linear systems (controllability
Gramian), the planar isoperimetric solution for the area-accumulating
system, and explicit sensitivities for the quadratic-potential oscillator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .fields import Poly, Potential, VectorField
from .model import Control, ControlSystem, ProblemSpec


@dataclass(eq=False)
class Benchmark:
    """A named system plus default problem sizes and oracle data."""

    name: str
    description: str
    system: ControlSystem
    x0: np.ndarray
    T: float = 1.0
    N: int = 32
    substeps: int = 8
    value_oracle: Optional[Callable] = None       # value_oracle(x, T) -> float or None
    control_oracle: Optional[Callable] = None     # control_oracle(x, spec) -> Control
    first_conjugate_time: Optional[Callable] = None  # f(p0) -> time or None
    smooth_targets: tuple = ()                    # targets expected fair+tame+smooth
    oracle_notes: str = ""

    def spec(self, T: Optional[float] = None, N: Optional[int] = None,
             substeps: Optional[int] = None, x0=None) -> ProblemSpec:
        return ProblemSpec(system=self.system,
                           x0=self.x0 if x0 is None else np.asarray(x0, float),
                           T=self.T if T is None else float(T),
                           N=self.N if N is None else int(N),
                           substeps=self.substeps if substeps is None else int(substeps))


def _box(m: int, half_width: float) -> list:
    return [[-half_width, half_width]] * m


def _lq_scalar() -> Benchmark:
    zero = Poly.zero(1)
    drift = VectorField.from_polynomials([zero], name="zero")
    ctrl = VectorField.from_polynomials([Poly.constant(1, 1.0)], name="unit")
    system = ControlSystem(m=1, d=1, drift=drift, controls=(ctrl,),
                           potential=Potential.zero(1), chart_bounds=_box(1, 10.0),
                           name="lq-scalar")

    def value(x, T):
        x = np.atleast_1d(x)
        return float(x[0] ** 2 / (2.0 * T))

    def control(x, spec):
        return spec.constant_control([float(np.atleast_1d(x)[0]) / spec.T])

    return Benchmark(
        name="lq-scalar", system=system, x0=np.zeros(1), T=1.0, N=16,
        description="scalar integrator, zero potential; the textbook quadratic problem",
        value_oracle=value, control_oracle=control,
        first_conjugate_time=lambda p0: None,
        smooth_targets=(np.array([0.4]), np.array([-0.7]), np.array([1.0])),
        oracle_notes="minimum-energy control of a scalar integrator: constant control")


def _double_integrator() -> Benchmark:
    x2 = Poly.coordinate(2, 1)
    drift = VectorField.from_polynomials([x2, Poly.zero(2)], name="shift")
    ctrl = VectorField.from_polynomials([Poly.zero(2), Poly.constant(2, 1.0)])
    system = ControlSystem(m=2, d=1, drift=drift, controls=(ctrl,),
                           potential=Potential.zero(2), chart_bounds=_box(2, 10.0),
                           name="double-integrator")

    def gramian(T):
        return np.array([[T ** 3 / 3.0, T ** 2 / 2.0], [T ** 2 / 2.0, T]])

    def value(x, T):
        xi = np.asarray(x, dtype=float)
        return float(0.5 * xi @ np.linalg.solve(gramian(T), xi))

    return Benchmark(
        name="double-integrator", system=system, x0=np.zeros(2), T=1.0, N=64,
        description="chain of two integrators; minimum-energy steering",
        value_oracle=value,
        first_conjugate_time=lambda p0: None,
        smooth_targets=(np.array([0.5, 1.0]), np.array([-0.3, 0.4]),
                        np.array([0.2, -0.6])),
        oracle_notes="controllability Gramian of the integrator chain: V = xi' G^-1 xi / 2")


def _oscillator() -> Benchmark:
    drift = VectorField.from_polynomials([Poly.zero(1)])
    ctrl = VectorField.from_polynomials([Poly.constant(1, 1.0)])
    # Q = x^2 is bounded above only on the chart; the hint records that bound
    pot = Potential.from_polynomial(Poly(1, {(2,): 1.0}), upper_bound_hint=2500.0,
                                    name="quadratic-well")
    system = ControlSystem(m=1, d=1, drift=drift, controls=(ctrl,), potential=pot,
                           chart_bounds=_box(1, 50.0), name="oscillator-potential")

    def value(x, T):
        # valid before the first degenerate time (t = pi); extremals are
        # x(t) = p0 sin t with cost x^2 cot(T) / 2
        if T >= np.pi - 1e-9:
            return None
        x = np.atleast_1d(x)
        return float(0.5 * x[0] ** 2 / np.tan(T))

    return Benchmark(
        name="oscillator-potential", system=system, x0=np.zeros(1), T=1.0, N=64,
        description="scalar integrator with quadratic potential: sensitivity sin(t)",
        value_oracle=value,
        first_conjugate_time=lambda p0: np.pi,
        smooth_targets=(np.array([0.3]), np.array([-0.5])),
        oracle_notes="harmonic flow: dx(t)/dp0 = sin t, value x^2 cot(T)/2 for T < pi")


def _heisenberg_fields():
    x = Poly.coordinate(3, 0)
    y = Poly.coordinate(3, 1)
    f1 = VectorField.from_polynomials([Poly.constant(3, 1.0), Poly.zero(3),
                                       y.scale(-0.5)], name="X1")
    f2 = VectorField.from_polynomials([Poly.zero(3), Poly.constant(3, 1.0),
                                       x.scale(0.5)], name="X2")
    return f1, f2


def _heisenberg() -> Benchmark:
    f1, f2 = _heisenberg_fields()
    drift = VectorField.from_polynomials([Poly.zero(3)] * 3)
    system = ControlSystem(m=3, d=2, drift=drift, controls=(f1, f2),
                           potential=Potential.zero(3), chart_bounds=_box(3, 6.0),
                           name="heisenberg")

    def value(x, T):
        xi = np.asarray(x, dtype=float)
        if abs(xi[0]) < 1e-12 and abs(xi[1]) < 1e-12:
            # vertical targets: the optimal planar loop is the isoperimetric
            # circle, length sqrt(4 pi |z|), so V = 4 pi |z| / (2 T)
            return float(2.0 * np.pi * abs(xi[2]) / T)
        return None

    return Benchmark(
        name="heisenberg", system=system, x0=np.zeros(3), T=1.0, N=32,
        description="planar motion with signed-area accumulation (bracket rank 3)",
        value_oracle=value,
        smooth_targets=(np.array([0.4, 0.2, 0.05]), np.array([-0.3, 0.5, -0.04])),
        oracle_notes="isoperimetric inequality: vertical value 2 pi |z| / T")


def _martinet() -> Benchmark:
    x = Poly.coordinate(3, 0)
    f1 = VectorField.from_polynomials([Poly.constant(3, 1.0), Poly.zero(3),
                                       Poly.zero(3)], name="X1")
    f2 = VectorField.from_polynomials([Poly.zero(3), Poly.constant(3, 1.0),
                                       x * x], name="X2")
    drift = VectorField.from_polynomials([Poly.zero(3)] * 3)
    system = ControlSystem(m=3, d=2, drift=drift, controls=(f1, f2),
                           potential=Potential.zero(3), chart_bounds=_box(3, 4.0),
                           name="martinet")

    def value(x_target, T):
        xi = np.asarray(x_target, dtype=float)
        if abs(xi[0]) < 1e-12 and abs(xi[2]) < 1e-12:
            # along the singular line the straight segment is minimizing
            return float(xi[1] ** 2 / (2.0 * T))
        return None

    return Benchmark(
        name="martinet", system=system, x0=np.zeros(3), T=1.0, N=32,
        description="flat rank-2 system with a singular line (rank drops on y-axis)",
        value_oracle=value,
        oracle_notes="the straight y-axis segment is a minimizer; its lift has a "
                     "rank-deficient differential with kernel along dz")


def _drifted_heisenberg() -> Benchmark:
    f1, f2 = _heisenberg_fields()
    x = Poly.coordinate(3, 0)
    y = Poly.coordinate(3, 1)
    drift = VectorField.from_polynomials([y.scale(-1.0), x.copy(), Poly.zero(3)],
                                         name="rotation")
    system = ControlSystem(m=3, d=2, drift=drift, controls=(f1, f2),
                           potential=Potential.zero(3), chart_bounds=_box(3, 6.0),
                           name="drifted-heisenberg")

    def value(x_target, T):
        xi = np.asarray(x_target, dtype=float)
        if abs(xi[0]) < 1e-12 and abs(xi[1]) < 1e-12:
            # the rotating frame preserves control energy and swept area, so
            # vertical targets cost the same as in the driftless system
            return float(2.0 * np.pi * abs(xi[2]) / T)
        return None

    return Benchmark(
        name="drifted-heisenberg", system=system, x0=np.zeros(3), T=1.0, N=32,
        description="area-accumulating system with a rotational drift field",
        value_oracle=value,
        smooth_targets=(np.array([0.3, 0.1, 0.04]),),
        oracle_notes="unitary change to the rotating frame maps vertical problems "
                     "onto the driftless ones")


_REGISTRY: dict[str, Callable[[], Benchmark]] = {
    "lq-scalar": _lq_scalar,
    "double-integrator": _double_integrator,
    "oscillator-potential": _oscillator,
    "heisenberg": _heisenberg,
    "martinet": _martinet,
    "drifted-heisenberg": _drifted_heisenberg,
}

_cache: dict[str, Benchmark] = {}


def benchmark_names() -> list:
    return sorted(_REGISTRY)


def get_benchmark(name: str) -> Benchmark:
    if name not in _REGISTRY:
        raise ConfigError(f"unknown benchmark '{name}'; known: {', '.join(benchmark_names())}")
    if name not in _cache:
        _cache[name] = _REGISTRY[name]()
    return _cache[name]


def martinet_singular_control(spec: ProblemSpec) -> Control:
    """The straight singular-line control of the martinet benchmark."""
    return spec.constant_control([0.0, 1.0])


def run_benchmark_suite(verbose: bool = False) -> list:
    """Quick oracle checks across the registry; returns result rows.

    Each row is (benchmark, check, passed, detail).  Meant for the ``bench``
    command: fast sizes, headline closed forms only.
    """
    from .classify import rank_dE
    from .direct import SolveOptions, solve_fixed_endpoint
    from .extremal import conjugate_times, shoot
    from .fields import lie_bracket, weak_hormander_rank

    rows = []

    def row(bench, check, passed, detail):
        rows.append((bench, check, bool(passed), detail))

    lq = get_benchmark("lq-scalar")
    spec = lq.spec()
    cs = solve_fixed_endpoint(spec, [1.0], SolveOptions(multistart_count=4, seed=0))
    v, v_ref = cs.value(), lq.value_oracle([1.0], spec.T)
    row("lq-scalar", "value at x=1", abs(v - v_ref) <= 1e-4,
        f"V={v:.6f} ref={v_ref:.6f}")

    di = get_benchmark("double-integrator")
    spec = di.spec(N=64)
    xi = np.array([0.5, 1.0])
    cs = solve_fixed_endpoint(spec, xi, SolveOptions(multistart_count=4, seed=0))
    v, v_ref = cs.value(), di.value_oracle(xi, spec.T)
    row("double-integrator", "Gramian value", abs(v - v_ref) <= 1e-3 * (1 + v_ref),
        f"V={v:.6f} ref={v_ref:.6f}")

    osc = get_benchmark("oscillator-potential")
    spec = osc.spec(T=4.0)
    ct = conjugate_times(spec, [1.0])
    ok = bool(ct) and abs(ct[0] - np.pi) <= 1e-3
    row("oscillator-potential", "first degenerate time",
        ok, f"t*={ct[0]:.6f} ref={np.pi:.6f}" if ct else "none found")

    heis = get_benchmark("heisenberg")
    spec = heis.spec()
    cs = solve_fixed_endpoint(spec, [0.0, 0.0, 0.1],
                              SolveOptions(multistart_count=8, seed=0))
    v, v_ref = cs.value(), heis.value_oracle([0.0, 0.0, 0.1], spec.T)
    row("heisenberg", "vertical value", abs(v - v_ref) <= 0.02 * v_ref,
        f"V={v:.6f} ref={v_ref:.6f}")
    rk = weak_hormander_rank(heis.system, np.zeros(3), 1)
    row("heisenberg", "bracket rank depth 1", rk == 3, f"rank={rk}")

    mart = get_benchmark("martinet")
    spec = mart.spec(N=64)
    rank, _ = rank_dE(spec, martinet_singular_control(spec))
    row("martinet", "singular-line rank", rank == 2, f"rank={rank} (m=3)")
    br = lie_bracket(mart.system.controls[0], mart.system.controls[1], np.zeros(3))
    row("martinet", "bracket vanishes at origin", np.allclose(br, 0.0), f"[X1,X2](0)={br}")

    dh = get_benchmark("drifted-heisenberg")
    spec = dh.spec()
    cs = solve_fixed_endpoint(spec, [0.0, 0.0, 0.1],
                              SolveOptions(multistart_count=8, seed=0))
    v, v_ref = cs.value(), dh.value_oracle([0.0, 0.0, 0.1], spec.T)
    row("drifted-heisenberg", "vertical value", abs(v - v_ref) <= 0.02 * v_ref,
        f"V={v:.6f} ref={v_ref:.6f}")

    lqspec = lq.spec()
    arc = shoot(lqspec, [0.8])
    row("lq-scalar", "shooting covector", abs(arc.initial_covector[0] - 0.8) <= 1e-6,
        f"p0={arc.initial_covector[0]:.8f} ref=0.8")
    return rows
