"""Trajectory integration and the linearized (variational) flow.

The integrator is fixed-step RK4 with ``substeps`` steps per control
interval and the control held constant inside each interval.  The
variational matrices are propagated with the *same* RK4 stages, evaluating
the Jacobian at the stage states; this makes the stored step Jacobians the
exact derivatives of the discrete step map, so every differential built on
top of them matches finite differences of the discrete maps to roundoff.

The running cost (quadratic control energy minus potential) is carried as
an extra state component, which integrates the potential term with the
Simpson-type quadrature induced by RK4 on the same nodes.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .errors import DegenerateFlowError, InadmissibleControlError, ShapeError
from .model import Control, ControlSystem, ProblemSpec

BLOWUP_LIMIT = 1e8

_dynamics_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _carray(a) -> np.ndarray:
    """Writable C-ordered float array (stable compiled-kernel signature).

    Frozen containers mark their arrays read-only, and numba specializes on
    mutability; normalizing here keeps every call on one compiled signature.
    """
    arr = np.asarray(a, dtype=float)
    if arr.flags.c_contiguous and arr.flags.writeable:
        return arr
    return np.array(arr, dtype=float, order="C")


class SystemDynamics:
    """Fused right-hand-side evaluator for one control system.

    Works on batched states ``x`` of shape (..., m) and controls ``u`` of
    shape (..., d).  When every field and the potential are polynomial
    backed, values and Jacobians of all fields come from a single monomial
    evaluation; otherwise a generic per-field path is used.
    """

    def __init__(self, system: ControlSystem):
        self.system = system
        self.m = system.m
        self.d = system.d
        fields = (system.drift,) + system.controls
        self._fields = fields
        self._fast = all(f.is_polynomial for f in fields) and system.potential.is_polynomial
        self.kernel_args = None
        if self._fast:
            self._compile()

    def _compile(self):
        from .fields import MonomialBasis, _coeff_matrix

        m, d = self.m, self.d
        pot = self.system.potential
        expo: set = {(0,) * m}
        val_polys, jac_polys = [], []
        for f in self._fields:
            comps = f.components
            val_polys.extend(comps)
            for a in range(m):
                for b in range(m):
                    jac_polys.append(comps[a].diff(b))
        grad_polys = [pot.poly.diff(a) for a in range(m)]
        for p in val_polys + jac_polys + grad_polys + [pot.poly]:
            expo.update(p.terms.keys())
        basis = MonomialBasis(m, np.array(sorted(expo)))
        self._basis = basis
        self._c_val = _coeff_matrix(val_polys, basis)      # ((d+1)*m, n_terms)
        self._c_jac = _coeff_matrix(jac_polys, basis)      # ((d+1)*m*m, n_terms)
        self._c_q = _coeff_matrix([pot.poly], basis)       # (1, n_terms)
        self._c_gq = _coeff_matrix(grad_polys, basis)      # (m, n_terms)
        self.kernel_args = (np.ascontiguousarray(basis.exponents),
                            np.ascontiguousarray(self._c_val),
                            np.ascontiguousarray(self._c_jac),
                            np.ascontiguousarray(self._c_q[0]),
                            np.ascontiguousarray(self._c_gq))

    # -- raw pieces ---------------------------------------------------------

    def field_values(self, x: np.ndarray) -> np.ndarray:
        """All field values at x: shape (..., d+1, m); row 0 is the drift."""
        x = np.asarray(x, dtype=float)
        if self._fast:
            v = self._basis.values(x) @ self._c_val.T
            return v.reshape(x.shape[:-1] + (self.d + 1, self.m))
        return np.stack([f(x) for f in self._fields], axis=-2)

    def field_jacobians(self, x: np.ndarray) -> np.ndarray:
        """All field Jacobians at x: shape (..., d+1, m, m)."""
        x = np.asarray(x, dtype=float)
        if self._fast:
            v = self._basis.values(x) @ self._c_jac.T
            return v.reshape(x.shape[:-1] + (self.d + 1, self.m, self.m))
        return np.stack([f.jacobian(x) for f in self._fields], axis=-3)

    def potential_value(self, x: np.ndarray) -> np.ndarray:
        if self._fast:
            return (self._basis.values(x) @ self._c_q.T)[..., 0]
        return self.system.potential(x)

    def potential_gradient(self, x: np.ndarray) -> np.ndarray:
        if self._fast:
            return self._basis.values(x) @ self._c_gq.T
        return self.system.potential.gradient(x)

    # -- composites used by the stepper -------------------------------------

    def rhs_aug(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Augmented RHS (state dot, running-cost dot), shape (..., m+1)."""
        vals = self.field_values(x)
        drift, ctrl = vals[..., 0, :], vals[..., 1:, :]
        xdot = drift + np.einsum("...i,...im->...m", u, ctrl)
        cdot = 0.5 * (np.sum(u ** 2, axis=-1) - self.potential_value(x))
        return np.concatenate([xdot, cdot[..., None]], axis=-1)

    def stage_aug(self, x: np.ndarray, u: np.ndarray):
        """RHS plus augmented Jacobians at one RK4 stage.

        Returns (rhs_aug, A_aug, B_aug) with A_aug of shape (..., m+1, m+1)
        and B_aug of shape (..., m+1, d).
        """
        m, d = self.m, self.d
        vals = self.field_values(x)
        jacs = self.field_jacobians(x)
        drift, ctrl = vals[..., 0, :], vals[..., 1:, :]
        xdot = drift + np.einsum("...i,...im->...m", u, ctrl)
        q = self.potential_value(x)
        gq = self.potential_gradient(x)
        cdot = 0.5 * (np.sum(u ** 2, axis=-1) - q)
        rhs = np.concatenate([xdot, cdot[..., None]], axis=-1)

        a_x = jacs[..., 0, :, :] + np.einsum("...i,...iab->...ab", u, jacs[..., 1:, :, :])
        lead = x.shape[:-1]
        a_aug = np.zeros(lead + (m + 1, m + 1))
        a_aug[..., :m, :m] = a_x
        a_aug[..., m, :m] = -0.5 * gq
        b_aug = np.zeros(lead + (m + 1, d))
        b_aug[..., :m, :] = np.swapaxes(ctrl, -1, -2)
        b_aug[..., m, :] = u
        return rhs, a_aug, b_aug


def dynamics_for(system: ControlSystem) -> SystemDynamics:
    dyn = _dynamics_cache.get(system)
    if dyn is None:
        dyn = SystemDynamics(system)
        _dynamics_cache[system] = dyn
    return dyn


@dataclass(eq=False)
class Trajectory:
    """Integrated trajectory on the substep node grid.

    ``states[j]`` is the state at ``times[j]``; ``running_cost[j]`` the cost
    accumulated up to that node.  When ``blowup_flag`` is set the arrays are
    truncated at the failure node and the control is inadmissible.
    """

    times: np.ndarray
    states: np.ndarray
    control_ref: Control
    blowup_flag: bool
    running_cost: np.ndarray

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_cost(self) -> float:
        return float(self.running_cost[-1])

    def to_csv(self, path) -> None:
        m = self.states.shape[1]
        header = "t," + ",".join(f"x{i + 1}" for i in range(m))
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", header=header, comments="")


@dataclass(eq=False)
class VariationalFlow:
    """Trajectory plus fundamental matrices of the linearized flow.

    ``fundamental[j]`` is the exact Jacobian of the discrete flow map from
    time 0 to node j (an m-by-m matrix).  The per-step augmented Jacobians
    kept on ``step_jac_aug``/``step_ctrl_jac_aug`` feed the end-point and
    cost differentials.
    """

    base: Trajectory
    fundamental: np.ndarray          # (S+1, m, m)
    step_jac_aug: np.ndarray         # (S, m+1, m+1)
    step_ctrl_jac_aug: np.ndarray    # (S, m+1, d)
    substeps: int

    def node_index(self, t: float) -> int:
        times = self.base.times
        j = int(np.argmin(np.abs(times - t)))
        if abs(times[j] - t) > 1e-9 * max(1.0, times[-1]):
            raise ShapeError(f"time {t} is not a stored node")
        return j

    def interval_midpoint_nodes(self) -> np.ndarray:
        """Node indices of the control-interval midpoints."""
        s = self.substeps
        n_int = (len(self.base.times) - 1) // s
        return np.arange(n_int) * s + s // 2


def pushforward(vf: VariationalFlow, s: float, t: float) -> np.ndarray:
    """Jacobian of the flow map from time s to time t along the trajectory."""
    js, jt = vf.node_index(s), vf.node_index(t)
    ms, mt = vf.fundamental[js], vf.fundamental[jt]
    # guard against a numerically singular fundamental matrix
    sv = np.linalg.svd(ms, compute_uv=False)
    if sv[-1] <= 1e-13 * max(sv[0], 1.0):
        raise DegenerateFlowError(
            f"fundamental matrix at t={s} is singular (sigma_min={sv[-1]:.3e})")
    return np.linalg.solve(ms.T, mt.T).T


def pullback_covector(vf: VariationalFlow, s: float, t: float, p: np.ndarray) -> np.ndarray:
    """Adjoint action: the covector at time s acting as p does at time t."""
    p = np.asarray(p, dtype=float)
    if p.shape != (vf.fundamental.shape[1],):
        raise ShapeError("covector has wrong dimension")
    return p @ pushforward(vf, s, t)


# ---------------------------------------------------------------------------
# batched RK4 core
# ---------------------------------------------------------------------------

def rk4_forward(dyn: SystemDynamics, x0: np.ndarray, controls: np.ndarray,
                T: float, substeps: int, chart: Optional[np.ndarray],
                want_variational: bool, want_states: bool = False):
    """Integrate a batch of controls; optionally keep exact step Jacobians.

    ``controls`` has shape (B, N, d); ``x0`` is shared or per-branch
    (B, m).  Returns a dict with final augmented states ``z`` (B, m+1),
    per-branch ``blown`` flags, and optionally ``states`` (B, S+1, m+1),
    ``J`` (S, B, m+1, m+1), ``G`` (S, B, m+1, d).
    """
    controls = np.asarray(controls, dtype=float)
    b_count, n_int, d = controls.shape
    m = dyn.m
    ma = m + 1
    h = T / (n_int * substeps)
    steps = n_int * substeps

    if dyn.kernel_args is not None and _kernels.HAVE_NUMBA:
        # fresh writable copies keep one numba signature: frozen (read-only)
        # arrays would otherwise trigger a second specialization
        lo = _carray(chart[:, 0]) if chart is not None else np.full(m, -np.inf)
        hi = _carray(chart[:, 1]) if chart is not None else np.full(m, np.inf)
        z, blown, blow_step, states, J, G = _kernels.rk4_poly_kernel(
            *dyn.kernel_args, _carray(x0), _carray(controls), float(T),
            int(substeps), lo, hi, BLOWUP_LIMIT, bool(want_variational),
            bool(want_states))
        out = {"z": z, "blown": blown, "blow_step": blow_step, "h": h, "steps": steps}
        if want_states:
            out["states"] = states
        if want_variational:
            out["J"] = J
            out["G"] = G
        return out

    z = np.zeros((b_count, ma))
    z[:, :m] = np.asarray(x0, dtype=float)
    blown = np.zeros(b_count, dtype=bool)
    blow_step = np.full(b_count, steps, dtype=int)

    states = np.zeros((b_count, steps + 1, ma)) if want_states else None
    if want_states:
        states[:, 0] = z
    J = np.zeros((steps, b_count, ma, ma)) if want_variational else None
    G = np.zeros((steps, b_count, ma, d)) if want_variational else None

    eye = np.eye(ma)
    lo = chart[:, 0] if chart is not None else None
    hi = chart[:, 1] if chart is not None else None

    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(steps):
            u = controls[:, step // substeps, :]
            x = z[:, :m]
            if want_variational:
                k1, a1, b1 = dyn.stage_aug(x, u)
                z2 = z + 0.5 * h * k1
                k2, a2, b2 = dyn.stage_aug(z2[:, :m], u)
                z3 = z + 0.5 * h * k2
                k3, a3, b3 = dyn.stage_aug(z3[:, :m], u)
                z4 = z + h * k3
                k4, a4, b4 = dyn.stage_aug(z4[:, :m], u)

                dk1 = a1
                dk2 = a2 @ (eye + 0.5 * h * dk1)
                dk3 = a3 @ (eye + 0.5 * h * dk2)
                dk4 = a4 @ (eye + h * dk3)
                J[step] = eye + (h / 6.0) * (dk1 + 2 * dk2 + 2 * dk3 + dk4)

                g1 = b1
                g2 = a2 @ (0.5 * h * g1) + b2
                g3 = a3 @ (0.5 * h * g2) + b3
                g4 = a4 @ (h * g3) + b4
                G[step] = (h / 6.0) * (g1 + 2 * g2 + 2 * g3 + g4)
            else:
                k1 = dyn.rhs_aug(x, u)
                k2 = dyn.rhs_aug((z + 0.5 * h * k1)[:, :m], u)
                k3 = dyn.rhs_aug((z + 0.5 * h * k2)[:, :m], u)
                k4 = dyn.rhs_aug((z + h * k3)[:, :m], u)

            z_new = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

            xs = z_new[:, :m]
            bad = ~np.all(np.isfinite(z_new), axis=1)
            bad |= np.any(np.abs(xs) > BLOWUP_LIMIT, axis=1)
            if lo is not None:
                bad |= np.any(xs < lo, axis=1) | np.any(xs > hi, axis=1)
            newly = bad & ~blown
            if np.any(newly):
                blow_step[newly] = step
                blown |= newly
            # frozen branches keep their last valid state
            z = np.where(blown[:, None], z, z_new)
            if want_states:
                states[:, step + 1] = z
            if want_variational and np.any(blown):
                J[step, blown] = eye
                G[step, blown] = 0.0

    out = {"z": z, "blown": blown, "blow_step": blow_step, "h": h, "steps": steps}
    if want_states:
        out["states"] = states
    if want_variational:
        out["J"] = J
        out["G"] = G
    return out


def integrate(spec: ProblemSpec, u: Control) -> Trajectory:
    """Admissible trajectory of one control, on the substep node grid.

    Blowup (non-finite state, magnitude above 1e8, or chart exit) truncates
    the trajectory and sets ``blowup_flag`` instead of raising.
    """
    spec.require_match(u)
    dyn = dynamics_for(spec.system)
    res = rk4_forward(dyn, spec.x0, u.values[None], spec.T, spec.substeps,
                      np.asarray(spec.system.chart_bounds), want_variational=False,
                      want_states=True)
    states = res["states"][0]
    times = spec.node_times()
    blown = bool(res["blown"][0])
    if blown:
        stop = int(res["blow_step"][0]) + 1
        times, states = times[:stop], states[:stop]
    return Trajectory(times=times, states=states[:, :-1].copy(),
                      control_ref=u, blowup_flag=blown,
                      running_cost=states[:, -1].copy())


def variational_flow(spec: ProblemSpec, u: Control) -> VariationalFlow:
    """Trajectory and exact discrete fundamental matrices for ``u``.

    Raises ``InadmissibleControlError`` when the trajectory blows up, since
    linearization data along a truncated trajectory is meaningless.
    """
    spec.require_match(u)
    dyn = dynamics_for(spec.system)
    res = rk4_forward(dyn, spec.x0, u.values[None], spec.T, spec.substeps,
                      np.asarray(spec.system.chart_bounds), want_variational=True,
                      want_states=True)
    if bool(res["blown"][0]):
        raise InadmissibleControlError("trajectory blew up; control is inadmissible")
    states = res["states"][0]
    traj = Trajectory(times=spec.node_times(), states=states[:, :-1].copy(),
                      control_ref=u, blowup_flag=False,
                      running_cost=states[:, -1].copy())
    m = spec.m
    steps = res["steps"]
    J = res["J"][:, 0]
    G = res["G"][:, 0]
    fundamental = np.zeros((steps + 1, m, m))
    fundamental[0] = np.eye(m)
    for j in range(steps):
        fundamental[j + 1] = J[j, :m, :m] @ fundamental[j]
    return VariationalFlow(base=traj, fundamental=fundamental,
                           step_jac_aug=J, step_ctrl_jac_aug=G,
                           substeps=spec.substeps)


def integrate_batch(spec: ProblemSpec, control_values: np.ndarray):
    """Endpoints and costs for a batch of control value arrays (B, N, d).

    Returns ``(endpoints, costs, blown)``; blown branches carry +inf cost.
    """
    dyn = dynamics_for(spec.system)
    res = rk4_forward(dyn, spec.x0, control_values, spec.T, spec.substeps,
                      np.asarray(spec.system.chart_bounds), want_variational=False)
    z, blown = res["z"], res["blown"]
    costs = z[:, -1].copy()
    costs[blown] = np.inf
    return z[:, :-1].copy(), costs, blown


def integrate_time_varying(spec: ProblemSpec, u_of_t: Callable[[float], np.ndarray],
                           n_steps: Optional[int] = None) -> Trajectory:
    """RK4 with a time-varying open-loop control (evaluated at stage times).

    Used to re-integrate smooth recovered controls at full accuracy instead
    of their piecewise-constant samples.
    """
    dyn = dynamics_for(spec.system)
    m = spec.m
    steps = n_steps if n_steps is not None else spec.n_steps
    h = spec.T / steps
    times = np.linspace(0.0, spec.T, steps + 1)
    z = np.zeros(m + 1)
    z[:m] = spec.x0
    states = np.zeros((steps + 1, m + 1))
    states[0] = z
    blown = False
    chart = np.asarray(spec.system.chart_bounds)
    for j in range(steps):
        t = times[j]
        u1 = np.atleast_1d(u_of_t(t))
        u_mid = np.atleast_1d(u_of_t(t + 0.5 * h))
        u2 = np.atleast_1d(u_of_t(t + h))
        k1 = dyn.rhs_aug(z[:m], u1)
        k2 = dyn.rhs_aug((z + 0.5 * h * k1)[:m], u_mid)
        k3 = dyn.rhs_aug((z + 0.5 * h * k2)[:m], u_mid)
        k4 = dyn.rhs_aug((z + h * k3)[:m], u2)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        states[j + 1] = z
        x = z[:m]
        if (not np.all(np.isfinite(z)) or np.any(np.abs(x) > BLOWUP_LIMIT)
                or np.any(x < chart[:, 0]) or np.any(x > chart[:, 1])):
            blown = True
            states = states[: j + 2]
            times = times[: j + 2]
            break
    ref = Control.zeros(spec.T, spec.N, spec.d)
    return Trajectory(times=times, states=states[:, :m].copy(), control_ref=ref,
                      blowup_flag=blown, running_cost=states[:, m].copy())
