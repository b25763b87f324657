"""End-point map, cost functional and their differentials.

Both differentials are the exact derivatives of the discrete maps produced
by the integrator (assembled from the stage-exact step Jacobians), so
finite-difference checks of the implemented maps agree with them to
roundoff.  The classical quadrature forms - midpoint-sampled columns for
the end-point differential and the literal double integral for the cost
pairing - are kept as independent diagnostic routes with their own
discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InadmissibleControlError, ShapeError
from .flow import Trajectory, VariationalFlow, integrate, variational_flow
from .model import Control, ProblemSpec


def end_point(spec: ProblemSpec, u: Control) -> np.ndarray:
    """Final state of the trajectory driven by ``u``."""
    traj = integrate(spec, u)
    if traj.blowup_flag:
        raise InadmissibleControlError("control is inadmissible (trajectory blew up)")
    return traj.final_state.copy()


def cost(spec: ProblemSpec, u: Control) -> float:
    """Quadratic-minus-potential cost of the trajectory driven by ``u``.

    The control energy is exact for piecewise-constant controls; the
    potential term uses the Simpson-compatible quadrature induced by the
    integrator nodes.
    """
    traj = integrate(spec, u)
    if traj.blowup_flag:
        raise InadmissibleControlError("control is inadmissible (trajectory blew up)")
    return traj.final_cost


@dataclass(eq=False)
class EndpointDifferential:
    """Differential of the end-point map at a control, as an explicit matrix.

    ``matrix`` has shape (m, N*d); the column for interval k, channel i sits
    at k*d + i and holds the exact sensitivity of the discrete end point to
    that control value.  Pairings with direction arrays are Euclidean in the
    interval values (the T/N quadrature weight is inside the matrix).
    """

    matrix: np.ndarray
    weights: np.ndarray
    base_control: Control
    base_trajectory: Trajectory

    def apply(self, v) -> np.ndarray:
        return self.matrix @ _direction_vector(self.base_control, v)

    def adjoint(self, lam: np.ndarray) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.matrix.shape[0],):
            raise ShapeError("covector has wrong dimension")
        return lam @ self.matrix

    @property
    def shape(self):
        return self.matrix.shape


@dataclass(eq=False)
class CostGradient:
    """Differential of the cost at a control.

    ``vector`` holds the exact partial derivatives with respect to the
    interval values, so the pairing with a direction is the plain Euclidean
    dot product.  ``riesz_values`` rescales by N/T, giving the
    piecewise-constant representative whose L2 pairing computes the same
    number.
    """

    vector: np.ndarray
    base_control: Control

    def pairing(self, v) -> float:
        return float(self.vector @ _direction_vector(self.base_control, v))

    def riesz_values(self) -> np.ndarray:
        u = self.base_control
        return (self.vector / u.dt).reshape(u.N, u.d)


def _direction_vector(base: Control, v) -> np.ndarray:
    if isinstance(v, Control):
        if (v.N, v.d, v.T) != (base.N, base.d, base.T):
            raise ShapeError("direction lives on a different grid")
        return v.values.ravel()
    arr = np.asarray(v, dtype=float)
    if arr.shape == (base.N, base.d):
        return arr.ravel()
    if arr.shape == (base.N * base.d,):
        return arr
    raise ShapeError(f"direction must have shape ({base.N},{base.d}) or ({base.N * base.d},)")


def _accumulate_full_differential(vf: VariationalFlow, spec: ProblemSpec):
    """Exact dE (m x N*d) and dC (N*d,) from the cached step Jacobians."""
    J, G = vf.step_jac_aug, vf.step_ctrl_jac_aug
    steps, ma, d = G.shape
    m = ma - 1
    n_int = spec.N
    sub = spec.substeps
    blocks = np.zeros((n_int, ma, d))
    prod = np.eye(ma)  # product of step Jacobians after the current step
    for j in range(steps - 1, -1, -1):
        blocks[j // sub] += prod @ G[j]
        prod = prod @ J[j]
    full = np.transpose(blocks, (1, 0, 2)).reshape(ma, n_int * d)
    return full[:m], full[m]


def d_end_point(spec: ProblemSpec, u: Control) -> EndpointDifferential:
    """Exact differential of the discrete end-point map at ``u``."""
    vf = variational_flow(spec, u)
    de, _ = _accumulate_full_differential(vf, spec)
    weights = np.full(spec.N, spec.dt)
    return EndpointDifferential(matrix=de, weights=weights, base_control=u,
                                base_trajectory=vf.base)


def d_cost(spec: ProblemSpec, u: Control) -> CostGradient:
    """Exact gradient of the discrete cost at ``u`` (backward costate sweep)."""
    vf = variational_flow(spec, u)
    vec = _cost_gradient_from_flow(vf, spec)
    return CostGradient(vector=vec, base_control=u)


def _cost_gradient_from_flow(vf: VariationalFlow, spec: ProblemSpec) -> np.ndarray:
    J, G = vf.step_jac_aug, vf.step_ctrl_jac_aug
    steps, ma, d = G.shape
    grad = np.zeros((spec.N, d))
    q = np.zeros(ma)
    q[ma - 1] = 1.0  # weight on the running-cost channel
    for j in range(steps - 1, -1, -1):
        grad[j // spec.substeps] += G[j].T @ q
        q = J[j].T @ q
    return grad.ravel()


def full_differential(spec: ProblemSpec, u: Control,
                      vf: VariationalFlow | None = None):
    """(EndpointDifferential, CostGradient) sharing one variational pass."""
    if vf is None:
        vf = variational_flow(spec, u)
    de, dc = _accumulate_full_differential(vf, spec)
    weights = np.full(spec.N, spec.dt)
    return (EndpointDifferential(matrix=de, weights=weights, base_control=u,
                                 base_trajectory=vf.base),
            CostGradient(vector=dc, base_control=u))


# ---------------------------------------------------------------------------
# diagnostic routes (independent discretizations of the same formulas)
# ---------------------------------------------------------------------------

def d_end_point_midpoint(spec: ProblemSpec, u: Control) -> np.ndarray:
    """Midpoint-quadrature form of the end-point differential.

    Column (k, i) is (T/N) times the pushforward to time T of the field i
    evaluated at the interval midpoint.  This is the textbook quadrature of
    the variation-of-constants integral; it differs from the exact discrete
    matrix at O((T/N)^2) and serves as a consistency oracle.
    """
    from .flow import dynamics_for

    vf = variational_flow(spec, u)
    dyn = dynamics_for(spec.system)
    mids = vf.interval_midpoint_nodes()
    m_final = vf.fundamental[-1]
    cols = np.zeros((spec.m, spec.N, spec.d))
    for k, j in enumerate(mids):
        push = np.linalg.solve(vf.fundamental[j].T, m_final.T).T
        vals = dyn.field_values(vf.base.states[j])[1:]  # control fields only
        cols[:, k, :] = spec.dt * (push @ vals.T)
    return cols.reshape(spec.m, spec.N * spec.d)

def d_cost_pairing_direct(spec: ProblemSpec, u: Control, v: Control) -> float:
    """Cost pairing by the literal double-integral route, in O(S^2).

    Realizes the pairing as (control term) plus (outer integral of the
    potential slope against the inner variation-of-constants integral).
    The inner integral is assembled from explicit pushforward products
    between nodes, never from a forward recursion or a backward sweep, so
    it cross-checks the costate route structurally.
    """
    spec.require_match(u)
    spec.require_match(v)
    vf = variational_flow(spec, u)
    J, G = vf.step_jac_aug, vf.step_ctrl_jac_aug
    steps, ma, d = G.shape
    m = ma - 1
    vvals = v.values

    # inner integral: state variation at every node via pushforward products
    m_nodes = vf.fundamental
    inhom = np.array([G[j, :m, :] @ vvals[j // spec.substeps] for j in range(steps)])
    delta_x = np.zeros((steps + 1, m))
    for j in range(1, steps + 1):
        acc = np.zeros(m)
        for l in range(j):
            push = np.linalg.solve(m_nodes[l + 1].T, m_nodes[j].T).T
            acc += push @ inhom[l]
        delta_x[j] = acc

    # outer integral: per-step potential-slope row against the variation,
    # plus the per-step control term (whose energy part is <u, v> exactly)
    total = 0.0
    for j in range(steps):
        total += float(J[j, m, :m] @ delta_x[j])
        total += float(G[j, m, :] @ vvals[j // spec.substeps])
    return total
