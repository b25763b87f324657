"""Run-configuration files: structured text (TOML) to problem objects.

A configuration declares the system (a builtin benchmark name or custom
polynomial coefficient tables), the problem geometry (x0, T, N, substeps,
chart bounds) and optional solver/sweep/target sections.  Parse errors
always name the offending key.
"""

from __future__ import annotations

import hashlib
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .benchmarks import get_benchmark
from .direct import SolveOptions
from .errors import ConfigError
from .fields import Poly, Potential, polynomial_field_from_tables
from .model import Control, ControlSystem, ProblemSpec
from .sweep import GridSpec


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config parse error in {path.name}: {err}") from err


def config_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _require(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigError(f"[{section}] missing required key '{key}'")
    return table[key]


def _vector(value, length: int, keyname: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float).reshape(-1)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{keyname}: expected a numeric vector") from err
    if arr.size != length:
        raise ConfigError(f"{keyname}: expected length {length}, got {arr.size}")
    return arr


def _custom_system(table: dict, chart_bounds) -> ControlSystem:
    m = int(_require(table, "m", "system"))
    d = int(_require(table, "d", "system"))
    if m < 1 or d < 1:
        raise ConfigError("[system] m and d must be positive integers")

    def build_field(tables, keyname):
        try:
            return polynomial_field_from_tables(tables, m, name=keyname)
        except Exception as err:
            raise ConfigError(f"[system] {keyname}: {err}") from err

    drift = build_field(_require(table, "drift", "system"), "drift")
    ctrl_tables = _require(table, "controls", "system")
    if len(ctrl_tables) != d:
        raise ConfigError(f"[system] controls: expected {d} fields, got {len(ctrl_tables)}")
    controls = tuple(build_field(t, f"controls[{i + 1}]") for i, t in enumerate(ctrl_tables))

    pot_terms = table.get("potential", [])
    p = Poly.zero(m)
    for term in pot_terms:
        if len(term) != m + 1:
            raise ConfigError(f"[system] potential: term {term} must be [coeff, e1..e{m}]")
        p = p + Poly(m, {tuple(int(e) for e in term[1:]): float(term[0])})
    potential = Potential.from_polynomial(p, upper_bound_hint=table.get("potential_bound"))

    if chart_bounds is None:
        raise ConfigError("[problem] chart_bounds is required for custom systems")
    return ControlSystem(m=m, d=d, drift=drift, controls=controls,
                         potential=potential, chart_bounds=chart_bounds)


def spec_from_config(cfg: dict) -> ProblemSpec:
    problem = cfg.get("problem")
    if problem is None:
        raise ConfigError("missing [problem] section")
    name = _require(problem, "system", "problem")

    chart = problem.get("chart_bounds")
    if chart is not None:
        chart = np.asarray(chart, dtype=float)
        if chart.ndim != 2 or chart.shape[1] != 2:
            raise ConfigError("[problem] chart_bounds must be a list of [lo, hi] pairs")

    if name == "custom":
        system = _custom_system(cfg.get("system", {}), chart)
        x0 = _vector(_require(problem, "x0", "problem"), system.m, "[problem] x0")
        T = float(_require(problem, "T", "problem"))
        N = int(_require(problem, "N", "problem"))
        substeps = int(problem.get("substeps", 8))
    else:
        bench = get_benchmark(name)
        system = bench.system
        if chart is not None:
            system = ControlSystem(m=system.m, d=system.d, drift=system.drift,
                                   controls=system.controls, potential=system.potential,
                                   chart_bounds=chart, name=system.name)
        x0 = (bench.x0 if "x0" not in problem
              else _vector(problem["x0"], system.m, "[problem] x0"))
        T = float(problem.get("T", bench.T))
        N = int(problem.get("N", bench.N))
        substeps = int(problem.get("substeps", bench.substeps))
    try:
        return ProblemSpec(system=system, x0=x0, T=T, N=N, substeps=substeps)
    except Exception as err:
        raise ConfigError(f"[problem]: {err}") from err


def solve_options_from_config(cfg: dict, seed: Optional[int] = None) -> SolveOptions:
    table = cfg.get("solve", {})
    known = {"multistart", "seed", "max_outer", "max_inner", "grad_tol",
             "constraint_tol", "penalty_init", "penalty_growth", "cluster_tol",
             "near_optimal_gap"}
    for key in table:
        if key not in known:
            raise ConfigError(f"[solve] unknown key '{key}'")
    opts = SolveOptions(
        penalty_init=float(table.get("penalty_init", 10.0)),
        penalty_growth=float(table.get("penalty_growth", 10.0)),
        max_outer=int(table.get("max_outer", 30)),
        max_inner=int(table.get("max_inner", 250)),
        grad_tol=float(table.get("grad_tol", 1e-6)),
        constraint_tol=float(table.get("constraint_tol", 1e-6)),
        multistart_count=int(table.get("multistart", 16)),
        seed=int(table.get("seed", 0)),
        cluster_tol=float(table.get("cluster_tol", 1e-2)),
        near_optimal_gap=float(table.get("near_optimal_gap", 1e-3)),
    )
    if seed is not None:
        opts = replace(opts, seed=int(seed))
    return opts


def target_from_config(cfg: dict, spec: ProblemSpec, override: Optional[str] = None) -> np.ndarray:
    if override is not None:
        try:
            vals = [float(tok) for tok in override.split(",")]
        except ValueError as err:
            raise ConfigError(f"--target: could not parse '{override}'") from err
        return _vector(vals, spec.m, "--target")
    table = cfg.get("target")
    if table is None or "point" not in table:
        raise ConfigError("missing [target] point (or pass --target)")
    return _vector(table["point"], spec.m, "[target] point")


def grid_from_config(cfg: dict, spec: ProblemSpec) -> tuple:
    table = cfg.get("sweep")
    if table is None:
        raise ConfigError("missing [sweep] section")
    axes_raw = _require(table, "axes", "sweep")
    if not 1 <= len(axes_raw) <= 2:
        raise ConfigError("[sweep] axes: give one or two [dim, lo, hi, n] rows")
    axes = []
    for row in axes_raw:
        if len(row) != 4:
            raise ConfigError(f"[sweep] axes: row {row} must be [dim, lo, hi, n]")
        dim, lo, hi, n = int(row[0]), float(row[1]), float(row[2]), int(row[3])
        if n < 2:
            raise ConfigError("[sweep] axes: resolution must be >= 2")
        axes.append((dim, np.linspace(lo, hi, n)))
    base = (np.array(spec.x0) if "base_point" not in table
            else _vector(table["base_point"], spec.m, "[sweep] base_point"))
    grid = GridSpec(base_point=base, axes=tuple(axes))
    return grid, bool(table.get("classify", False)), bool(table.get("warm_start", True))


def control_from_config(cfg: dict, spec: ProblemSpec, override: Optional[str] = None) -> Control:
    if override is not None:
        try:
            vec = [float(tok) for tok in override.split(",")]
        except ValueError as err:
            raise ConfigError(f"--control: could not parse '{override}'") from err
        if len(vec) != spec.d:
            raise ConfigError(f"--control: expected {spec.d} channel values")
        return spec.constant_control(vec)
    table = cfg.get("simulate", {})
    if "control" in table:
        values = np.asarray(table["control"], dtype=float)
        if values.shape != (spec.N, spec.d):
            raise ConfigError(f"[simulate] control: expected shape ({spec.N}, {spec.d})")
        return Control(spec.T, values)
    if "constant" in table:
        return spec.constant_control(_vector(table["constant"], spec.d,
                                             "[simulate] constant"))
    return spec.zero_control()
