"""Command-line front end.

Commands: simulate, solve, shoot, classify, sweep, bench, hormander.
Each run writes its artifacts (CSV + JSON, with a manifest) into one output
directory and prints a one-line summary.  Outputs are deterministic for a
fixed config and seed: JSON keys are sorted, floats use shortest
round-trip formatting, and non-finite values serialize as null.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import run_benchmark_suite
from .classify import classify_point
from .config import (config_digest, control_from_config, grid_from_config,
                     load_config, solve_options_from_config, spec_from_config,
                     target_from_config)
from .direct import solve_fixed_endpoint
from .errors import AoclabError
from .extremal import conjugate_times, shoot
from .fields import weak_hormander_rank
from .flow import integrate
from .sweep import continuity_diagnostics, value_map

_EXIT_BY_CATEGORY = {
    "config": 2,
    "shape": 2,
    "unreachable-or-failed": 4,
    "bench-failures": 5,
}


def _sanitize(obj):
    """Make an object JSON-safe: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_sanitize(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_outdir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path(f"aoclab-{command}-out")
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": str(args.config) if args.config else None,
        "config_sha256": config_digest(args.config) if args.config else None,
        "seed": args.seed,
        "versions": {"aoclab": __version__, "numpy": np.__version__},
    }
    _write_json(out / "manifest.json", manifest)
    return out


def _candidates_json(cset, verbose: bool) -> dict:
    out = {
        "target": cset.target,
        "status": cset.status,
        "value": cset.value(),
        "n_starts": cset.n_starts,
        "n_failed": cset.n_failed,
        "clusters": cset.clusters,
        "candidates": [],
    }
    for cand in cset.candidates:
        entry = {
            "cost": cand.cost_value,
            "endpoint_residual": cand.endpoint_residual,
            "grad_norm": cand.grad_norm,
            "l2_norm": cand.control.l2_norm(),
        }
        if verbose:
            entry["control"] = cand.control.values
            entry["multiplier_estimate"] = cand.multiplier_estimate
        out["candidates"].append(entry)
    return out


def _candidates_csv(path: Path, cset) -> None:
    with open(path, "w") as fh:
        if not cset.candidates:
            fh.write("candidate,interval\n")
            return
        d = cset.candidates[0].control.d
        fh.write("candidate,interval," + ",".join(f"u{i + 1}" for i in range(d)) + "\n")
        for ci, cand in enumerate(cset.candidates):
            for k, row in enumerate(cand.control.values):
                fh.write(f"{ci},{k}," + ",".join(repr(float(v)) for v in row) + "\n")


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    spec = spec_from_config(cfg)
    u = control_from_config(cfg, spec, args.control)
    out = _prepare_outdir(args, "simulate")
    traj = integrate(spec, u)
    traj.to_csv(out / "trajectory.csv")
    _write_json(out / "summary.json", {
        "endpoint": traj.final_state, "cost": traj.final_cost,
        "blowup": traj.blowup_flag, "n_nodes": len(traj.times),
    })
    print(f"simulate: endpoint={np.array2string(traj.final_state, precision=6)} "
          f"cost={traj.final_cost:.6g} blowup={traj.blowup_flag} -> {out}")
    return 3 if traj.blowup_flag else 0


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    spec = spec_from_config(cfg)
    opts = solve_options_from_config(cfg, args.seed)
    target = target_from_config(cfg, spec, args.target)
    out = _prepare_outdir(args, "solve")
    cset = solve_fixed_endpoint(spec, target, opts)
    _write_json(out / "candidates.json", _candidates_json(cset, args.verbosity >= 2))
    _candidates_csv(out / "candidates.csv", cset)
    print(f"solve: status={cset.status} value={cset.value():.6g} "
          f"candidates={len(cset.candidates)}/{cset.n_starts} "
          f"clusters={len(cset.clusters)} -> {out}")
    return 0 if cset.status == "ok" else 4


def cmd_shoot(args) -> int:
    cfg = load_config(args.config)
    spec = spec_from_config(cfg)
    target = target_from_config(cfg, spec, args.target)
    p0 = cfg.get("shoot", {}).get("p0")
    out = _prepare_outdir(args, "shoot")
    arc = shoot(spec, target, p0)
    ct = conjugate_times(spec, arc.initial_covector)
    arc.to_csv(out / "extremal.csv")
    _write_json(out / "shoot.json", {
        "target": target, "p0": arc.initial_covector, "endpoint": arc.final_state,
        "cost": arc.cost, "hamiltonian_drift": arc.hamiltonian_drift(),
        "conjugate_times": ct,
    })
    print(f"shoot: p0={np.array2string(arc.initial_covector, precision=6)} "
          f"cost={arc.cost:.6g} drift={arc.hamiltonian_drift():.2e} "
          f"conjugate={ct} -> {out}")
    return 0


def cmd_classify(args) -> int:
    cfg = load_config(args.config)
    spec = spec_from_config(cfg)
    opts = solve_options_from_config(cfg, args.seed)
    target = target_from_config(cfg, spec, args.target)
    out = _prepare_outdir(args, "classify")
    report = classify_point(spec, target, opts)
    _write_json(out / "report.json", report.to_json_dict(verbose=args.verbosity >= 2))
    print(f"classify: label={report.label()} class={report.class_x} "
          f"fair={report.fair} tame={report.tame} smooth={report.smooth} "
          f"confidence={report.confidence} -> {out}")
    return 0 if report.candidates.status == "ok" else 4


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    spec = spec_from_config(cfg)
    opts = solve_options_from_config(cfg, args.seed)
    grid, classify_cells, warm = grid_from_config(cfg, spec)
    out = _prepare_outdir(args, "sweep")
    vmap = value_map(spec, grid, opts, classify_cells=classify_cells,
                     warm_start=warm, threads=args.threads)
    diag = continuity_diagnostics(vmap)
    vmap.to_csv(out / "valuemap.csv")
    summary = vmap.to_json_dict()
    summary["diagnostics"] = {
        "median_neighbor_diff": diag.median_neighbor_diff,
        "kappa_jump": diag.kappa_jump,
        "n_jump_flags": int(diag.jump_flags.sum()),
        "n_lsc_flags": int(diag.lsc_flags.sum()),
        "suspect_isolated_tame": [list(map(int, t)) for t in diag.suspect_isolated_tame],
    }
    _write_json(out / "sweep.json", summary)
    n_unreached = int(np.sum(~np.isfinite(vmap.values)))
    print(f"sweep: cells={vmap.values.size} unreached={n_unreached} "
          f"jumps={int(diag.jump_flags.sum())} lsc_flags={int(diag.lsc_flags.sum())} "
          f"-> {out}")
    return 0


def cmd_bench(args) -> int:
    out = _prepare_outdir(args, "bench")
    rows = run_benchmark_suite()
    _write_json(out / "bench.json", [
        {"benchmark": b, "check": c, "passed": p, "detail": d} for b, c, p, d in rows
    ])
    width = max(len(f"{b}: {c}") for b, c, _, _ in rows)
    for b, c, p, d in rows:
        print(f"{f'{b}: {c}':<{width}}  {'PASS' if p else 'FAIL'}  {d}")
    n_fail = sum(1 for _, _, p, _ in rows if not p)
    print(f"bench: {len(rows) - n_fail}/{len(rows)} checks passed -> {out}")
    return 0 if n_fail == 0 else 5


def cmd_hormander(args) -> int:
    cfg = load_config(args.config)
    spec = spec_from_config(cfg)
    table = cfg.get("hormander", {})
    point = np.asarray(table.get("point", spec.x0), dtype=float)
    depth = args.depth if args.depth is not None else int(table.get("depth", 4))
    out = _prepare_outdir(args, "hormander")
    ranks = {k: int(weak_hormander_rank(spec.system, point, k)) for k in range(depth + 1)}
    full = ranks[depth] == spec.m
    _write_json(out / "hormander.json", {
        "point": point, "depth": depth, "ranks_by_depth": ranks,
        "full_rank_at_depth": full,
        "note": ("rank is reported at the requested bracket depth only; a value "
                 "below m at finite depth never certifies failure of the "
                 "untruncated condition"),
    })
    print(f"hormander: point={np.array2string(point, precision=4)} "
          f"rank@{depth}={ranks[depth]}/{spec.m} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aoclab",
        description="Numerical laboratory for affine optimal control problems")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config,
                       help="path to the TOML run configuration")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the RNG seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for sweeps (cold starts when > 1)")
        p.add_argument("--verbosity", type=int, default=1,
                       help="output detail level (2 includes matrices/controls)")

    p = sub.add_parser("simulate", help="integrate one control and export the trajectory")
    common(p)
    p.add_argument("--control", default=None,
                   help="constant control values, comma separated")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("solve", help="fixed-endpoint solve by multistart descent")
    common(p)
    p.add_argument("--target", default=None, help="target point, comma separated")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("shoot", help="Newton shooting on the extremal flow")
    common(p)
    p.add_argument("--target", default=None, help="target point, comma separated")
    p.set_defaults(fn=cmd_shoot)

    p = sub.add_parser("classify", help="rank/multiplier taxonomy of a target point")
    common(p)
    p.add_argument("--target", default=None, help="target point, comma separated")
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("sweep", help="value map over a grid slice with diagnostics")
    common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bench", help="run the builtin oracle checks")
    common(p, needs_config=False)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("hormander", help="bracket-generation rank at a point")
    common(p)
    p.add_argument("--depth", type=int, default=None, help="bracket depth cap")
    p.set_defaults(fn=cmd_hormander)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except AoclabError as err:
        category = getattr(err, "category", "error")
        print(f"error category={category}: {err}", file=sys.stderr)
        return _EXIT_BY_CATEGORY.get(category, 3)


if __name__ == "__main__":
    sys.exit(main())
