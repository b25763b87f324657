"""Fixed-endpoint solves by multistart augmented Lagrangian descent.

The constrained problem ``min cost(u) subject to end_point(u) = x`` is
handled with an augmented-Lagrangian outer loop; each inner subproblem is
minimized by gradient descent with Barzilai-Borwein step proposals and a
nonmonotone backtracking line search.  All multistart branches advance in
one batch so the integrator amortizes its per-step overhead across starts.

A hard projection would need a full-rank end-point differential; the
penalty path degrades gracefully at rank-deficient (singular) controls,
which is exactly where the interesting targets live.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .endpoint import full_differential
from .errors import ShapeError
from .flow import dynamics_for, rk4_forward
from .model import Control, ProblemSpec, l2_distance

_RHO_CAP = 1e8
_LS_MAX = 30
_HISTORY = 5
_ARMIJO = 1e-4


@dataclass(frozen=True)
class SolveOptions:
    """Knobs for the fixed-endpoint solver; defaults fit the desk-scale benchmarks."""

    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    max_outer: int = 30
    max_inner: int = 250
    grad_tol: float = 1e-6
    constraint_tol: float = 1e-6
    multistart_count: int = 16
    seed: int = 0
    cluster_tol: float = 1e-2
    near_optimal_gap: float = 1e-3
    seed_controls: tuple = ()
    start_scale_multipliers: tuple = (1.0, 2.0, 0.5, 4.0)

    def __post_init__(self):
        if self.penalty_growth <= 1:
            raise ShapeError("penalty_growth must be > 1")
        for name in ("penalty_init", "grad_tol", "constraint_tol", "cluster_tol",
                     "near_optimal_gap"):
            if getattr(self, name) <= 0:
                raise ShapeError(f"{name} must be positive")


@dataclass(eq=False)
class Candidate:
    """One local solution of the fixed-endpoint problem."""

    control: Control
    endpoint_residual: float
    cost_value: float
    converged: bool
    grad_norm: float = np.nan
    multiplier_estimate: Optional[np.ndarray] = None  # covector with lam @ dE = dC


@dataclass(eq=False)
class CandidateSet:
    """Converged candidates for one target, sorted by cost and clustered.

    ``clusters`` partitions candidate indices by pairwise control distance;
    distinct clusters stand in for distinct minimizers when judging
    uniqueness.  ``status`` is "ok" when at least one candidate converged
    and "no-candidates" otherwise (target unreachable or solver failed,
    which the caller may tell apart from blowup diagnostics).
    """

    target: np.ndarray
    candidates: list
    clusters: list
    status: str
    n_starts: int = 0
    n_failed: int = 0

    def best(self) -> Optional[Candidate]:
        return self.candidates[0] if self.candidates else None

    def value(self) -> float:
        return self.candidates[0].cost_value if self.candidates else np.inf

    def near_optimal_indices(self, gap: float) -> list:
        if not self.candidates:
            return []
        best = self.candidates[0].cost_value
        cut = best + gap * (1.0 + abs(best))
        return [i for i, c in enumerate(self.candidates) if c.cost_value <= cut]


def _target_scale(spec: ProblemSpec, x_target: np.ndarray) -> float:
    return max(1.0, float(np.linalg.norm(x_target)), float(np.linalg.norm(spec.x0)))


def _build_starts(spec: ProblemSpec, x_target: np.ndarray,
                  opts: SolveOptions) -> np.ndarray:
    """Initial control stack: zero anchor, caller seeds, scaled Gaussian starts."""
    rng = np.random.default_rng(opts.seed)
    starts = [np.zeros((spec.N, spec.d))]
    for seed_ctrl in opts.seed_controls:
        spec.require_match(seed_ctrl)
        starts.append(np.array(seed_ctrl.values))
    base = float(np.linalg.norm(np.asarray(x_target) - spec.x0)) / spec.T
    sigma0 = max(base, 1e-2)  # floor keeps starts informative for tiny displacements
    mults = opts.start_scale_multipliers or (1.0,)
    for k in range(opts.multistart_count):
        sigma = sigma0 * mults[k % len(mults)]
        starts.append(sigma * rng.standard_normal((spec.N, spec.d)))
    return np.stack(starts)


class _BatchState:
    """Mutable per-branch optimizer state for the batched inner loop."""

    def __init__(self, u0: np.ndarray):
        b = u0.shape[0]
        self.u = u0.copy()
        self.phi = np.full(b, np.inf)
        self.grad = np.zeros_like(u0)
        self.hist = np.full((b, _HISTORY), np.inf)
        self.prev_u = np.zeros_like(u0)
        self.prev_g = np.zeros_like(u0)
        self.have_prev = np.zeros(b, dtype=bool)
        self.alpha = np.ones(b)


def _al_values(spec, dyn, chart, u_values, lam, rho, x_target):
    """Batched augmented-Lagrangian value (and endpoint/cost) for controls."""
    res = rk4_forward(dyn, spec.x0, u_values, spec.T, spec.substeps, chart,
                      want_variational=False)
    z, blown = res["z"], res["blown"]
    e_pts, costs = z[:, :-1], z[:, -1]
    r = e_pts - x_target
    phi = costs + np.sum(lam * r, axis=1) + 0.5 * rho * np.sum(r * r, axis=1)
    phi = np.where(blown, np.inf, phi)
    return phi, e_pts, np.where(blown, np.inf, costs), r, blown


def _al_value_and_grad(spec, dyn, chart, u_values, lam, rho, x_target):
    """Batched value plus exact gradient via one backward adjoint sweep."""
    res = rk4_forward(dyn, spec.x0, u_values, spec.T, spec.substeps, chart,
                      want_variational=True)
    z, blown = res["z"], res["blown"]
    e_pts, costs = z[:, :-1], z[:, -1]
    r = e_pts - x_target
    w = lam + rho[:, None] * r
    phi = costs + np.sum(lam * r, axis=1) + 0.5 * rho * np.sum(r * r, axis=1)
    phi = np.where(blown, np.inf, phi)

    J, G = res["J"], res["G"]
    steps, b, ma, d = G.shape
    sub = spec.substeps
    q = np.concatenate([w, np.ones((b, 1))], axis=1)
    if _kernels.HAVE_NUMBA:
        from .flow import _carray

        grad, _ = _kernels.adjoint_sweep(_carray(J), _carray(G), _carray(q), sub)
    else:
        grad = np.zeros_like(u_values)
        for j in range(steps - 1, -1, -1):
            grad[:, j // sub, :] += np.einsum("bmd,bm->bd", G[j], q)
            q = np.einsum("bmn,bm->bn", J[j], q)
    grad[blown] = 0.0
    return phi, grad, e_pts, costs, r, blown


def _inner_minimize(spec, dyn, chart, state: _BatchState, lam, rho, x_target,
                    opts: SolveOptions, active: np.ndarray):
    """Barzilai-Borwein descent with nonmonotone backtracking, batched.

    Mutates ``state`` in place; returns per-branch (stationary, gnorm).
    """
    b = state.u.shape[0]
    sqrt_dt = np.sqrt(spec.dt)
    stationary = np.zeros(b, dtype=bool)
    gnorm = np.full(b, np.inf)
    work = active.copy()
    state.hist[work] = np.inf

    phi, grad, _, _, _, blown = _al_value_and_grad(
        spec, dyn, chart, state.u, lam, rho, x_target)
    state.phi, state.grad = phi, grad
    state.hist[work, 0] = phi[work]
    state.have_prev[work] = False

    for it in range(opts.max_inner):
        if not np.any(work):
            break
        g = state.grad
        # gradient norm in the L2 metric of piecewise-constant controls
        gnorm_now = np.sqrt(np.sum(g * g, axis=(1, 2))) / sqrt_dt
        gnorm = np.where(work, gnorm_now, gnorm)
        tol = opts.grad_tol * (1.0 + np.abs(state.phi))
        done_now = work & (gnorm_now <= tol)
        stationary |= done_now
        work &= ~done_now
        if not np.any(work):
            break

        # BB2 step proposal, safeguarded; cold branches probe conservatively
        alpha = state.alpha.copy()
        du = state.u - state.prev_u
        dg = state.grad - state.prev_g
        sy = np.sum(du * dg, axis=(1, 2))
        yy = np.sum(dg * dg, axis=(1, 2))
        bb_ok = state.have_prev & (sy > 0) & (yy > 0)
        alpha[bb_ok] = np.clip(sy[bb_ok] / yy[bb_ok], 1e-14, 1e10)
        cold = work & ~bb_ok
        if np.any(cold):
            gmag = np.maximum(np.sqrt(np.sum(g * g, axis=(1, 2))), 1e-14)
            alpha[cold] = (0.1 * (1.0 + np.sqrt(np.sum(state.u ** 2, axis=(1, 2))))
                           / gmag)[cold]

        phi_ref = state.hist.max(axis=1)
        gsq = np.sum(g * g, axis=(1, 2))
        accepted = np.zeros(b, dtype=bool)
        trial = state.u.copy()
        phi_trial = state.phi.copy()
        pending = work.copy()
        for _ in range(_LS_MAX):
            if not np.any(pending):
                break
            idx = np.where(pending)[0]
            cand = state.u[idx] - alpha[idx, None, None] * g[idx]
            phi_c, _, _, _, _ = _al_values(spec, dyn, chart, cand,
                                           lam[idx], rho[idx], x_target)
            ok = phi_c <= phi_ref[idx] - _ARMIJO * alpha[idx] * gsq[idx]
            acc_idx = idx[ok]
            trial[acc_idx] = cand[ok]
            phi_trial[acc_idx] = phi_c[ok]
            accepted[acc_idx] = True
            pending[acc_idx] = False
            rej = idx[~ok]
            alpha[rej] *= 0.5
        stalled = work & ~accepted
        work &= ~stalled  # line search exhausted: leave branch at its best point

        moved = accepted
        if not np.any(moved):
            break
        state.prev_u[moved] = state.u[moved]
        state.prev_g[moved] = state.grad[moved]
        state.have_prev[moved] = True
        state.alpha[moved] = alpha[moved]
        state.u[moved] = trial[moved]

        phi, grad, _, _, _, _ = _al_value_and_grad(
            spec, dyn, chart, state.u, lam, rho, x_target)
        # only refresh branches that moved; others keep cached data
        state.phi = np.where(moved, phi, state.phi)
        state.grad[moved] = grad[moved]
        state.hist[moved] = np.roll(state.hist[moved], 1, axis=1)
        state.hist[moved, 0] = phi[moved]

    return stationary, gnorm


def solve_fixed_endpoint(spec: ProblemSpec, x_target, opts: Optional[SolveOptions] = None) -> CandidateSet:
    """All locally converged candidates steering x0 to ``x_target`` in time T."""
    opts = opts or SolveOptions()
    x_target = np.asarray(x_target, dtype=float).reshape(-1)
    if x_target.shape != (spec.m,):
        raise ShapeError(f"target must have length {spec.m}")
    if not spec.system.inside_chart(x_target):
        raise ShapeError("target lies outside the chart bounds")

    dyn = dynamics_for(spec.system)
    chart = np.asarray(spec.system.chart_bounds)
    u_stack = _build_starts(spec, x_target, opts)
    b = u_stack.shape[0]

    # rescale any blown-up start toward zero until admissible
    for _ in range(40):
        _, _, _, _, blown = _al_values(spec, dyn, chart, u_stack,
                                       np.zeros((b, spec.m)), np.zeros(b), x_target)
        if not np.any(blown):
            break
        u_stack[blown] *= 0.5

    scale = _target_scale(spec, x_target)
    ctol = opts.constraint_tol * scale
    state = _BatchState(u_stack)
    lam = np.zeros((b, spec.m))
    rho = np.full(b, opts.penalty_init)
    r_prev_norm = np.full(b, np.inf)
    settled = np.zeros(b, dtype=bool)
    stationary = np.zeros(b, dtype=bool)
    gnorm = np.full(b, np.inf)

    for outer in range(opts.max_outer):
        active = ~settled
        if not np.any(active):
            break
        stat_now, gn = _inner_minimize(spec, dyn, chart, state, lam, rho,
                                       x_target, opts, active)
        _, e_pts, costs, r, blown = _al_values(spec, dyn, chart, state.u,
                                               lam, rho, x_target)
        rnorm = np.linalg.norm(r, axis=1)
        feas_now = active & ~blown & (rnorm <= ctol)
        stationary = np.where(active, stat_now, stationary)
        gnorm = np.where(active, gn, gnorm)
        settled |= feas_now & stat_now

        still = active & ~settled
        lam[still] += rho[still, None] * r[still]
        slow = still & (rnorm > 0.25 * r_prev_norm)
        rho[slow] = np.minimum(rho[slow] * opts.penalty_growth, _RHO_CAP)
        r_prev_norm = np.where(still, rnorm, r_prev_norm)

    # final per-branch diagnostics
    _, e_pts, costs, r, blown = _al_values(spec, dyn, chart, state.u,
                                           lam, rho, x_target)
    rnorm = np.linalg.norm(r, axis=1)
    converged = (~blown) & (rnorm <= ctol) & stationary

    candidates = []
    for i in range(b):
        if not converged[i]:
            continue
        ctrl = Control(spec.T, state.u[i])
        lam_t = -(lam[i] + rho[i] * r[i])  # covector with lam_T @ dE = dC
        candidates.append(Candidate(control=ctrl,
                                    endpoint_residual=float(rnorm[i]),
                                    cost_value=float(costs[i]),
                                    converged=True,
                                    grad_norm=float(gnorm[i]),
                                    multiplier_estimate=lam_t))
    candidates.sort(key=lambda c: c.cost_value)
    clusters = _cluster(candidates, opts.cluster_tol)
    status = "ok" if candidates else "no-candidates"
    return CandidateSet(target=x_target, candidates=candidates, clusters=clusters,
                        status=status, n_starts=b, n_failed=int(b - converged.sum()))


def _cluster(candidates: Sequence[Candidate], cluster_tol: float) -> list:
    """Greedy partition by L2 distance between controls."""
    clusters: list[list[int]] = []
    reps: list[Control] = []
    for i, cand in enumerate(candidates):
        placed = False
        for c_idx, rep in enumerate(reps):
            delta = cluster_tol * max(1.0, rep.l2_norm())
            if l2_distance(cand.control, rep) < delta:
                clusters[c_idx].append(i)
                placed = True
                break
        if not placed:
            clusters.append([i])
            reps.append(cand.control)
    return clusters


def value_estimate(spec: ProblemSpec, x_target, opts: Optional[SolveOptions] = None) -> float:
    """Best converged cost for the target; +inf when nothing converged."""
    return solve_fixed_endpoint(spec, x_target, opts).value()


def stationarity_residual(spec: ProblemSpec, cand: Candidate) -> float:
    """Normalized least-squares residual of the multiplier equation at a candidate."""
    de, dc = full_differential(spec, cand.control)
    lam, _, _, _ = np.linalg.lstsq(de.matrix.T, dc.vector, rcond=None)
    res = float(np.linalg.norm(de.matrix.T @ lam - dc.vector))
    return res / (1.0 + float(np.linalg.norm(dc.vector)))
