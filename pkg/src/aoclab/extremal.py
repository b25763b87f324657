"""Hamiltonian (indirect) machinery: normal extremals, the exponential map,
conjugate-time detection and Newton shooting.

Normal extremals solve xdot = dH/dp, pdot = -dH/dx for
H(p, x) = <p, X0> + 1/2 sum <p, X_i>^2 + 1/2 Q, and carry the feedback
control u_i(t) = <p(t), X_i(x(t))>.  The conjugate test monitors the
sensitivity block dx(t)/dp0 of the flow: a time where it loses rank is a
critical value of the exponential map along the arc.

The fixed-time block test is evaluated at each node time; criticality of
the time-and-covector pair jointly is a strictly weaker requirement and is
not assumed equivalent.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
import numpy as np

from . import _kernels
from .endpoint import full_differential
from .errors import (ConjugateObstructionError, InadmissibleControlError,
                     ShapeError, ShootFailedError)
from .flow import BLOWUP_LIMIT, Trajectory, dynamics_for, integrate_time_varying
from .model import Control, ControlSystem, ProblemSpec

SHOOT_TOL = 1e-8
SHOOT_MAX_ITER = 40
CONJ_RTOL = 1e-6       # sigma_min threshold, relative to the arc's largest sigma
CONJ_TIME_TOL = 1e-3   # absolute accuracy of reported conjugate times

_pack_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def hamiltonian(system: ControlSystem, p, x) -> float:
    """Maximized Hamiltonian <p, X0> + 1/2 sum <p, X_i>^2 + 1/2 Q."""
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    if p.shape != (system.m,) or x.shape != (system.m,):
        raise ShapeError("p and x must both have length m")
    dyn = dynamics_for(system)
    vals = dyn.field_values(x)
    h0 = float(p @ vals[0])
    phi = vals[1:] @ p
    return h0 + 0.5 * float(phi @ phi) + 0.5 * float(dyn.potential_value(x))


class _ExtremalPack:
    """Compiled coefficient pack for the Hamiltonian flow of one system."""

    def __init__(self, system: ControlSystem):
        self.system = system
        self.m = system.m
        fields = (system.drift,) + system.controls
        pot = system.potential
        self.fast = (all(f.is_polynomial for f in fields) and pot.is_polynomial
                     and _kernels.HAVE_NUMBA)
        self.fields = fields
        if not self.fast:
            return
        from .fields import MonomialBasis, _coeff_matrix

        m = self.m
        val_polys, jac_polys, hess_polys = [], [], []
        for f in fields:
            comps = f.components
            val_polys.extend(comps)
            for a in range(m):
                for b in range(m):
                    jac_polys.append(comps[a].diff(b))
            for l in range(m):
                for a in range(m):
                    for b in range(m):
                        hess_polys.append(comps[l].diff(a).diff(b))
        gq = [pot.poly.diff(a) for a in range(m)]
        hq = [pot.poly.diff(a).diff(b) for a in range(m) for b in range(m)]
        expo: set = {(0,) * m}
        for p in val_polys + jac_polys + hess_polys + gq + hq + [pot.poly]:
            expo.update(p.terms.keys())
        basis = MonomialBasis(m, np.array(sorted(expo)))
        self.args = (np.ascontiguousarray(basis.exponents),
                     np.ascontiguousarray(_coeff_matrix(val_polys, basis)),
                     np.ascontiguousarray(_coeff_matrix(jac_polys, basis)),
                     np.ascontiguousarray(_coeff_matrix(hess_polys, basis)),
                     np.ascontiguousarray(_coeff_matrix([pot.poly], basis)[0]),
                     np.ascontiguousarray(_coeff_matrix(gq, basis)),
                     np.ascontiguousarray(_coeff_matrix(hq, basis)))


def _pack_for(system: ControlSystem) -> _ExtremalPack:
    pack = _pack_cache.get(system)
    if pack is None:
        pack = _ExtremalPack(system)
        _pack_cache[system] = pack
    return pack


def _ham_rhs_and_jac_numpy(system: ControlSystem, x, p, want_var: bool):
    """Generic-path Hamiltonian stage for callable-backed fields."""
    dyn = dynamics_for(system)
    m = system.m
    vals = dyn.field_values(x)
    jacs = dyn.field_jacobians(x)
    phi = vals[1:] @ p
    xdot = vals[0] + phi @ vals[1:]
    jtp = np.einsum("fla,l->fa", jacs, p)
    gq = dyn.potential_gradient(x)
    pdot = -(jtp[0] + phi @ jtp[1:] + 0.5 * gq)
    cdot = 0.5 * (float(phi @ phi) - float(dyn.potential_value(x)))
    rhs = np.concatenate([xdot, pdot, [cdot]])
    if not want_var:
        return rhs, None
    hess = np.stack([f.hessian(x) for f in (system.drift,) + system.controls])
    hq = system.potential.hessian(x)
    axx = jacs[0] + np.einsum("ia,ib->ab", vals[1:], jtp[1:]) + np.einsum(
        "i,iab->ab", phi, jacs[1:])
    axp = np.einsum("ia,ib->ab", vals[1:], vals[1:])
    phess = np.einsum("flab,l->fab", hess, p)
    apx = -(phess[0] + np.einsum("ia,ib->ab", jtp[1:], jtp[1:])
            + np.einsum("i,iab->ab", phi, phess[1:]) + 0.5 * hq)
    a_mat = np.zeros((2 * m, 2 * m))
    a_mat[:m, :m] = axx
    a_mat[:m, m:] = axp
    a_mat[m:, :m] = apx
    a_mat[m:, m:] = -axx.T
    return rhs, a_mat


def _integrate_extremal(system: ControlSystem, x, p, c, w, h: float, steps: int,
                        want_var: bool):
    """Advance the Hamiltonian system ``steps`` RK4 steps of size ``h``."""
    m = system.m
    chart = np.asarray(system.chart_bounds)
    pack = _pack_for(system)
    if pack.fast:
        from .flow import _carray

        w0 = _carray(w if w is not None else np.eye(2 * m))
        xs, ps, cs, W, blown, blow_step = _kernels.rk4_extremal_kernel(
            *pack.args, _carray(x), _carray(p), float(c), w0, float(h),
            int(steps), _carray(chart[:, 0]), _carray(chart[:, 1]),
            BLOWUP_LIMIT, bool(want_var))
        return xs, ps, cs, (W if want_var else None), bool(blown), int(blow_step)

    # generic numpy path, same stages
    n2 = 2 * m
    xs = np.zeros((steps + 1, m))
    ps = np.zeros((steps + 1, m))
    cs = np.zeros(steps + 1)
    W = np.zeros((steps + 1, n2, n2)) if want_var else None
    z = np.concatenate([np.asarray(x, float), np.asarray(p, float), [float(c)]])
    xs[0], ps[0], cs[0] = z[:m], z[m:n2], z[n2]
    if want_var:
        W[0] = w if w is not None else np.eye(n2)
    eye = np.eye(n2)
    blown, blow_step = False, steps
    for step in range(steps):
        k1, a1 = _ham_rhs_and_jac_numpy(system, z[:m], z[m:n2], want_var)
        z2 = z + 0.5 * h * k1
        k2, a2 = _ham_rhs_and_jac_numpy(system, z2[:m], z2[m:n2], want_var)
        z3 = z + 0.5 * h * k2
        k3, a3 = _ham_rhs_and_jac_numpy(system, z3[:m], z3[m:n2], want_var)
        z4 = z + h * k3
        k4, a4 = _ham_rhs_and_jac_numpy(system, z4[:m], z4[m:n2], want_var)
        z_new = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        xs_new = z_new[:m]
        if (not np.all(np.isfinite(z_new)) or np.any(np.abs(z_new[:n2]) > BLOWUP_LIMIT)
                or np.any(xs_new < chart[:, 0]) or np.any(xs_new > chart[:, 1])):
            blown, blow_step = True, step
            xs[step + 1:] = z[:m]
            ps[step + 1:] = z[m:n2]
            cs[step + 1:] = z[n2]
            if want_var:
                W[step + 1:] = W[step]
            break
        if want_var:
            dk1 = a1
            dk2 = a2 @ (eye + 0.5 * h * dk1)
            dk3 = a3 @ (eye + 0.5 * h * dk2)
            dk4 = a4 @ (eye + h * dk3)
            jstep = eye + (h / 6.0) * (dk1 + 2 * dk2 + 2 * dk3 + dk4)
            W[step + 1] = jstep @ W[step]
        z = z_new
        xs[step + 1], ps[step + 1], cs[step + 1] = z[:m], z[m:n2], z[n2]
    return xs, ps, cs, W, blown, blow_step


@dataclass(eq=False)
class ExtremalArc:
    """Normal extremal lift (x(t), p(t)) with its recovered control."""

    spec: ProblemSpec
    times: np.ndarray
    states: np.ndarray
    costates: np.ndarray
    recovered_control: np.ndarray  # (n_nodes, d), u_i = <p, X_i(x)>
    initial_covector: np.ndarray
    running_cost: np.ndarray
    blowup_flag: bool = False

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def cost(self) -> float:
        return float(self.running_cost[-1])

    def hamiltonian_values(self) -> np.ndarray:
        sys = self.spec.system
        return np.array([hamiltonian(sys, self.costates[j], self.states[j])
                         for j in range(len(self.times))])

    def hamiltonian_drift(self) -> float:
        """Max |H(t) - H(0)| / (1 + |H(0)|) along the arc."""
        h = self.hamiltonian_values()
        return float(np.max(np.abs(h - h[0])) / (1.0 + abs(h[0])))

    def control_function(self):
        """Cubic Hermite interpolant of the recovered control.

        Node derivatives come from the Hamiltonian equations, so the
        interpolant converges at the integrator's own order and can be fed
        back through the state equation as an open-loop control.
        """
        sys = self.spec.system
        dyn = dynamics_for(sys)
        n = len(self.times)
        du = np.zeros_like(self.recovered_control)
        for j in range(n):
            x, p = self.states[j], self.costates[j]
            rhs, _ = _ham_rhs_and_jac_numpy(sys, x, p, False)
            xdot, pdot = rhs[:sys.m], rhs[sys.m:2 * sys.m]
            vals = dyn.field_values(x)[1:]
            jacs = dyn.field_jacobians(x)[1:]
            du[j] = vals @ pdot + np.einsum("iab,b,a->i", jacs, xdot, p)
        times, u, h = self.times, self.recovered_control, self.times[1] - self.times[0]

        def u_of_t(t: float) -> np.ndarray:
            j = min(max(int((t - times[0]) / h), 0), n - 2)
            s = (t - times[j]) / h
            h00 = (1 + 2 * s) * (1 - s) ** 2
            h10 = s * (1 - s) ** 2
            h01 = s * s * (3 - 2 * s)
            h11 = s * s * (s - 1)
            return (h00 * u[j] + h * h10 * du[j] + h01 * u[j + 1] + h * h11 * du[j + 1])

        return u_of_t

    def reintegrate(self) -> Trajectory:
        """Drive the state equation with the recovered control, open loop."""
        return integrate_time_varying(self.spec, self.control_function())

    def to_csv(self, path) -> None:
        m, d = self.spec.m, self.spec.d
        header = ("t," + ",".join(f"x{i + 1}" for i in range(m)) + ","
                  + ",".join(f"p{i + 1}" for i in range(m)) + ","
                  + ",".join(f"u{i + 1}" for i in range(d)))
        data = np.column_stack([self.times, self.states, self.costates,
                                self.recovered_control])
        np.savetxt(path, data, delimiter=",", header=header, comments="")


@dataclass(eq=False)
class ExpJacobian:
    """Sensitivity blocks of the Hamiltonian flow at every node time."""

    times: np.ndarray
    dxdp: np.ndarray   # (n_nodes, m, m), zero block at t = 0
    dxdx0: np.ndarray  # (n_nodes, m, m), identity at t = 0


def _recovered_control(system: ControlSystem, xs: np.ndarray, ps: np.ndarray) -> np.ndarray:
    dyn = dynamics_for(system)
    vals = dyn.field_values(xs)  # (n, d+1, m)
    return np.einsum("nim,nm->ni", vals[:, 1:, :], ps)


def extremal_flow(spec: ProblemSpec, p0, want_jacobian: bool = False):
    """Integrate the normal extremal from (x0, p0) over [0, T].

    Returns (arc, jac_or_none); blowup is flagged on the arc, not raised.
    """
    p0 = np.asarray(p0, dtype=float).reshape(-1)
    if p0.shape != (spec.m,):
        raise ShapeError(f"p0 must have length {spec.m}")
    steps = spec.n_steps
    xs, ps, cs, W, blown, _ = _integrate_extremal(
        spec.system, spec.x0, p0, 0.0, None, spec.dt_sub, steps, want_jacobian)
    times = spec.node_times()
    arc = ExtremalArc(spec=spec, times=times, states=xs, costates=ps,
                      recovered_control=_recovered_control(spec.system, xs, ps),
                      initial_covector=p0, running_cost=cs, blowup_flag=blown)
    jac = None
    if want_jacobian:
        m = spec.m
        jac = ExpJacobian(times=times, dxdp=W[:, :m, m:].copy(),
                          dxdx0=W[:, :m, :m].copy())
    return arc, jac


def exponential(spec: ProblemSpec, t: float, p0) -> np.ndarray:
    """Project the Hamiltonian flow from (x0, p0) to the state at time t."""
    if not 0.0 <= t <= spec.T + 1e-12:
        raise ShapeError("time must lie in [0, T]")
    p0 = np.asarray(p0, dtype=float).reshape(-1)
    h = spec.dt_sub
    n_full = int(t / h + 1e-9)
    rem = t - n_full * h
    xs, ps, cs, _, blown, _ = _integrate_extremal(
        spec.system, spec.x0, p0, 0.0, None, h, n_full, False)
    if blown:
        raise InadmissibleControlError("extremal flow blew up before time t")
    x, p, c = xs[-1], ps[-1], cs[-1]
    if rem > 1e-12 * max(spec.T, 1.0):
        xs, ps, cs, _, blown, _ = _integrate_extremal(
            spec.system, x, p, c, None, rem, 1, False)
        if blown:
            raise InadmissibleControlError("extremal flow blew up before time t")
        x = xs[-1]
    return x.copy()


def exp_jacobian(spec: ProblemSpec, p0) -> ExpJacobian:
    """Sensitivities of the time-t states to the initial covector, all nodes."""
    arc, jac = extremal_flow(spec, p0, want_jacobian=True)
    if arc.blowup_flag:
        raise InadmissibleControlError("extremal flow blew up on [0, T]")
    return jac


def conjugate_times(spec: ProblemSpec, p0, time_tol: float = CONJ_TIME_TOL) -> list:
    """Times in (0, T] where dx(t)/dp0 degenerates along the extremal.

    Degeneracy means the smallest singular value dips below a scale-relative
    threshold with a determinant sign change (or a confirmed touch of zero).
    The detector arms only after the block first leaves its initial rank
    deficiency at t = 0, and every reported time is refined by bisection on
    the determinant sign using restarted integration.
    """
    m = spec.m
    xs, ps, cs, W, blown, _ = _integrate_extremal(
        spec.system, spec.x0, np.asarray(p0, float).reshape(-1), 0.0, None,
        spec.dt_sub, spec.n_steps, True)
    if blown:
        raise InadmissibleControlError("extremal flow blew up on [0, T]")
    times = spec.node_times()
    n_nodes = len(times)
    dxdp = W[:, :m, m:]
    svals = np.linalg.svd(dxdp, compute_uv=False)
    sig_min, sig_max = svals[:, -1], svals[:, 0]
    scale = float(sig_max.max())
    if scale == 0.0:
        return []
    tau = CONJ_RTOL * scale
    dets = np.linalg.det(dxdp)

    armed_idx = None
    for j in range(1, n_nodes):
        if sig_min[j] >= 10.0 * tau:
            armed_idx = j
            break
    if armed_idx is None:
        return []

    def det_at(t: float) -> float:
        j = min(int(t / spec.dt_sub), n_nodes - 2)
        dt = t - times[j]
        if dt <= 1e-14:
            return float(dets[j])
        _, _, _, w_loc, blew, _ = _integrate_extremal(
            spec.system, xs[j], ps[j], 0.0, W[j], dt / 2.0, 2, True)
        if blew:
            return np.nan
        return float(np.linalg.det(w_loc[-1][:m, m:]))

    found: list[float] = []
    j = armed_idx
    while j < n_nodes - 1:
        if dets[j] * dets[j + 1] < 0.0:
            a, b = times[j], times[j + 1]
            fa = dets[j]
            while b - a > 0.25 * time_tol:
                mid = 0.5 * (a + b)
                fm = det_at(mid)
                if not np.isfinite(fm):
                    break
                if fa * fm <= 0.0:
                    b = mid
                else:
                    a, fa = mid, fm
            found.append(0.5 * (a + b))
            j += 1
        elif (sig_min[j] < tau and sig_min[j] <= sig_min[j - 1]
              and sig_min[j] <= sig_min[j + 1]):
            # zero touch without a sign change
            found.append(float(times[j]))
            j += 1
        j += 1
    # endpoint check: degenerate block exactly at T
    if sig_min[-1] < tau and (not found or abs(found[-1] - spec.T) > time_tol):
        found.append(float(spec.T))
    merged: list[float] = []
    for t in found:
        if not merged or t - merged[-1] > 2.0 * spec.dt_sub:
            merged.append(t)
    return merged


def shoot(spec: ProblemSpec, x_target, p0_init=None) -> ExtremalArc:
    """Damped Newton on p0 so the extremal hits ``x_target`` at time T.

    With an explicit ``p0_init`` a single Newton run is attempted; without
    one, a zero start is tried first and then a handful of seeded random
    covectors (the zero covector is a structurally degenerate start for
    bracket-generating systems).  Raises ``ConjugateObstructionError`` when
    the shooting Jacobian is singular at the final time and
    ``ShootFailedError`` when the iteration stalls.
    """
    x_target = np.asarray(x_target, dtype=float).reshape(-1)
    if x_target.shape != (spec.m,):
        raise ShapeError(f"target must have length {spec.m}")
    if p0_init is not None:
        return _shoot_once(spec, x_target, np.asarray(p0_init, dtype=float).reshape(-1))
    rng = np.random.default_rng(7)
    sigma = max(1.0, float(np.linalg.norm(x_target - spec.x0)) / spec.T)
    inits = [np.zeros(spec.m)]
    inits += [sigma * mult * rng.standard_normal(spec.m)
              for mult in (1.0, 1.0, 2.0, 0.5, 4.0, 1.0, 2.0, 0.5)]
    last_err: Exception | None = None
    for p0 in inits:
        try:
            return _shoot_once(spec, x_target, p0)
        except (ShootFailedError, ConjugateObstructionError) as err:
            last_err = err
    raise last_err


def _shoot_once(spec: ProblemSpec, x_target: np.ndarray, p0_start: np.ndarray) -> ExtremalArc:
    p0 = p0_start.copy()
    scale = max(1.0, float(np.linalg.norm(x_target)))
    tol = SHOOT_TOL * scale

    arc, jac = extremal_flow(spec, p0, want_jacobian=True)
    if arc.blowup_flag:
        raise ShootFailedError("initial covector drives the flow out of the chart")
    fval = arc.final_state - x_target
    fnorm = float(np.linalg.norm(fval))

    for _ in range(SHOOT_MAX_ITER):
        if fnorm <= tol:
            return arc
        jt = jac.dxdp[-1]
        sv = np.linalg.svd(jt, compute_uv=False)
        if sv[-1] < 1e-10 * max(sv[0], 1.0):
            raise ConjugateObstructionError(
                "shooting Jacobian is singular at time T (conjugate target)")
        step, _, _, _ = np.linalg.lstsq(jt, -fval, rcond=None)
        alpha = 1.0
        improved = False
        while alpha >= 2.0 ** -20:
            trial = p0 + alpha * step
            arc_t, jac_t = extremal_flow(spec, trial, want_jacobian=True)
            if not arc_t.blowup_flag:
                f_t = arc_t.final_state - x_target
                fn_t = float(np.linalg.norm(f_t))
                if fn_t <= (1.0 - 1e-4 * alpha) * fnorm:
                    p0, arc, jac, fval, fnorm = trial, arc_t, jac_t, f_t, fn_t
                    improved = True
                    break
            alpha *= 0.5
        if not improved:
            raise ShootFailedError(
                f"no descent direction at |F| = {fnorm:.3e} (target may be "
                f"unreachable by normal extremals from this start)")
    if fnorm <= tol:
        return arc
    raise ShootFailedError(f"Newton did not converge: |F| = {fnorm:.3e} > {tol:.1e}")


def fit_terminal_covector(spec: ProblemSpec, u: Control):
    """Least-squares covector matching the multiplier equation at ``u``.

    Returns (lam_T, normalized residual); a small residual certifies a
    normal multiplier candidate at the final point.
    """
    de, dc = full_differential(spec, u)
    lam, _, _, _ = np.linalg.lstsq(de.matrix.T, dc.vector, rcond=None)
    res = float(np.linalg.norm(de.matrix.T @ lam - dc.vector))
    return lam, res / (1.0 + float(np.linalg.norm(dc.vector)))


def costate_path(spec: ProblemSpec, u: Control, lam_t: np.ndarray) -> np.ndarray:
    """Backward transport of a terminal covector along the trajectory of u.

    Solves the adjoint recursion of the discrete flow including the
    potential-slope source, so p(t) matches the extremal costate whenever
    the pair (u, lam_t) satisfies the multiplier equation.
    """
    from .flow import variational_flow

    vf = variational_flow(spec, u)
    J, G = vf.step_jac_aug, vf.step_ctrl_jac_aug
    steps, ma, _ = G.shape
    q = np.concatenate([-np.asarray(lam_t, float), [1.0]])
    if _kernels.HAVE_NUMBA:
        from .flow import _carray

        _, q_path = _kernels.adjoint_sweep(_carray(J[:, None]), _carray(G[:, None]),
                                           _carray(q[None]), spec.substeps)
        return -q_path[:, 0, :ma - 1]
    qs = np.zeros((steps + 1, ma))
    qs[steps] = q
    for j in range(steps - 1, -1, -1):
        qs[j] = J[j].T @ qs[j + 1]
    return -qs[:, :ma - 1]


def initial_covector_from_control(spec: ProblemSpec, u: Control) -> np.ndarray:
    """Shooting initializer: fit lam_T at u, pull it back to time zero."""
    lam, _ = fit_terminal_covector(spec, u)
    return costate_path(spec, u, lam)[0]
