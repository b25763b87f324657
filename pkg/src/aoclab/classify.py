"""Target-point taxonomy: ranks, multipliers, kernel structure, verdicts.

For each target the report records, per near-optimal candidate, the rank of
the end-point differential and the Lagrange multipliers (normal when
lam @ dE = dC has a small residual, abnormal when dE has deficient rank).
The three-valued verdicts then read:

* fair   - one minimizer cluster only, and it admits a normal multiplier;
* tame   - every near-optimal candidate has a full-rank differential;
* smooth - fair and tame, and the shot extremal to the target carries no
  degenerate sensitivity time in (0, T].

Verdicts are ``True``/``False``/``None`` (inconclusive); they rest on
multistart coverage and are never pointwise certificates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .direct import CandidateSet, SolveOptions, solve_fixed_endpoint
from .endpoint import full_differential
from .errors import (ConjugateObstructionError, InadmissibleControlError,
                     ShapeError, ShootFailedError)
from .extremal import conjugate_times, costate_path, fit_terminal_covector, shoot
from .flow import variational_flow
from .linalg import RANK_RTOL, left_null_basis, rank_tolerance
from .model import Control, ProblemSpec

TAU_NORMAL = 1e-4  # residual cutoff deciding "admits a normal multiplier"


@dataclass(eq=False)
class Multiplier:
    """One Lagrange multiplier at the final point.

    ``nu`` tags the normalization: -1 for a normal multiplier (matching the
    cost differential) and 0 for an abnormal one (annihilating the image of
    the end-point differential, unit norm).  ``residual`` is the normalized
    equation residual in either case.
    """

    lambda_T: np.ndarray
    nu: int
    residual: float


@dataclass(eq=False)
class AbnormalStructure:
    """Kernel of the adjoint end-point differential at the final point.

    ``kernel_basis`` rows are orthonormal covectors annihilating the image
    of dE; when a normal covector ``eta`` exists, ``eta + span(kernel)`` is
    the full affine set of multipliers acting alike on that image.  The
    ``pulled_back_*`` fields transport the same data to the fiber over the
    starting point through the adjoint flow.
    """

    kernel_basis: np.ndarray
    eta: Optional[np.ndarray]
    pulled_back_kernel: np.ndarray
    pulled_back_eta: Optional[np.ndarray]
    rank: int

    @property
    def dim(self) -> int:
        return self.kernel_basis.shape[0]


def rank_dE(spec: ProblemSpec, u: Control):
    """(rank, singular values) of the end-point differential at ``u``."""
    de, _ = full_differential(spec, u)
    s = np.linalg.svd(de.matrix, compute_uv=False)
    tol = rank_tolerance(s)
    return int(np.sum(s >= tol)), s


def multipliers(spec: ProblemSpec, u: Control, x=None) -> list:
    """All multipliers at ``u``: the normal fit (if it holds) and abnormals."""
    de, dc = full_differential(spec, u)
    if x is not None:
        x = np.asarray(x, dtype=float)
        reached = de.base_trajectory.final_state
        if np.linalg.norm(reached - x) > 1e-3 * max(1.0, float(np.linalg.norm(x))):
            raise ShapeError("control does not reach the given point")
    out: list[Multiplier] = []
    lam, _, _, _ = np.linalg.lstsq(de.matrix.T, dc.vector, rcond=None)
    res = float(np.linalg.norm(de.matrix.T @ lam - dc.vector))
    res /= 1.0 + float(np.linalg.norm(dc.vector))
    if res <= TAU_NORMAL:
        out.append(Multiplier(lambda_T=lam, nu=-1, residual=res))
    u_mat, s, _ = np.linalg.svd(de.matrix)
    tol = rank_tolerance(s)
    for i in range(len(s), u_mat.shape[1]):
        out.append(Multiplier(lambda_T=u_mat[:, i].copy(), nu=0, residual=0.0))
    for i, sv in enumerate(s):
        if sv < tol:
            out.append(Multiplier(lambda_T=u_mat[:, i].copy(), nu=0, residual=float(sv)))
    return out


def normal_fit_residual(spec: ProblemSpec, u: Control) -> float:
    """Normalized residual of the least-squares normal multiplier at ``u``."""
    _, res = fit_terminal_covector(spec, u)
    return res


def xi_space(spec: ProblemSpec, u: Control, x=None) -> AbnormalStructure:
    """Kernel of (dE)* with optional normal shift, at x and pulled back to x0."""
    de, dc = full_differential(spec, u)
    s = np.linalg.svd(de.matrix, compute_uv=False)
    rank = int(np.sum(s >= rank_tolerance(s)))
    kernel = left_null_basis(de.matrix)
    lam, _, _, _ = np.linalg.lstsq(de.matrix.T, dc.vector, rcond=None)
    res = float(np.linalg.norm(de.matrix.T @ lam - dc.vector))
    res /= 1.0 + float(np.linalg.norm(dc.vector))
    eta = lam if res <= TAU_NORMAL else None

    vf = variational_flow(spec, u)
    m_final = vf.fundamental[-1]
    pulled_kernel = kernel @ m_final
    pulled_eta = eta @ m_final if eta is not None else None
    return AbnormalStructure(kernel_basis=kernel, eta=eta,
                             pulled_back_kernel=pulled_kernel,
                             pulled_back_eta=pulled_eta, rank=rank)


@dataclass(eq=False)
class ClassificationReport:
    """Per-target record of candidates, ranks, multipliers and verdicts."""

    target: np.ndarray
    candidates: CandidateSet
    ranks: list
    singular_values: list
    class_x: Optional[int]
    multiplier_lists: list
    fair: Optional[bool]
    tame: Optional[bool]
    smooth: Optional[bool]
    conjugate_cleared: Optional[bool]
    conjugate_times_found: list
    confidence: str
    value: float
    shoot_covector: Optional[np.ndarray] = None
    shoot_cost: Optional[float] = None
    notes: list = field(default_factory=list)

    def label(self) -> str:
        """Single cell label used by the sweep maps."""
        if self.candidates.status != "ok":
            return "unreached"
        if self.class_x is not None and self.class_x < len(self.target):
            return "abnormal-flagged"
        if self.smooth is True:
            return "smooth"
        if self.tame is True:
            return "tame"
        if self.fair is True:
            return "fair"
        return "inconclusive"

    def to_json_dict(self, verbose: bool = False) -> dict:
        def verdict(v):
            return "inconclusive" if v is None else bool(v)

        out = {
            "target": list(map(float, self.target)),
            "status": self.candidates.status,
            "value": None if not np.isfinite(self.value) else float(self.value),
            "n_candidates": len(self.candidates.candidates),
            "n_clusters": len(self.candidates.clusters),
            "ranks": [int(r) for r in self.ranks],
            "class_x": None if self.class_x is None else int(self.class_x),
            "fair": verdict(self.fair),
            "tame": verdict(self.tame),
            "smooth": verdict(self.smooth),
            "conjugate_cleared": verdict(self.conjugate_cleared),
            "conjugate_times": [float(t) for t in self.conjugate_times_found],
            "confidence": self.confidence,
            "label": self.label(),
            "notes": list(self.notes),
        }
        if self.shoot_covector is not None:
            out["shoot_covector"] = list(map(float, self.shoot_covector))
            out["shoot_cost"] = float(self.shoot_cost)
        if verbose:
            out["singular_values"] = [[float(x) for x in s] for s in self.singular_values]
            out["multipliers"] = [[{"nu": mul.nu,
                                    "lambda_T": list(map(float, mul.lambda_T)),
                                    "residual": float(mul.residual)}
                                   for mul in muls]
                                  for muls in self.multiplier_lists]
            out["candidate_costs"] = [float(c.cost_value)
                                      for c in self.candidates.candidates]
            out["candidate_residuals"] = [float(c.endpoint_residual)
                                          for c in self.candidates.candidates]
        return out


def _and3(*vals):
    """Three-valued conjunction: False dominates, then None, then True."""
    if any(v is False for v in vals):
        return False
    if any(v is None for v in vals):
        return None
    return True


def classify_point(spec: ProblemSpec, x_target, opts: Optional[SolveOptions] = None,
                   check_conjugate: bool = True) -> ClassificationReport:
    """Solve to the target, then assemble ranks, multipliers and verdicts."""
    opts = opts or SolveOptions()
    x_target = np.asarray(x_target, dtype=float).reshape(-1)
    cset = solve_fixed_endpoint(spec, x_target, opts)
    m = spec.m
    notes: list[str] = []

    if not cset.candidates:
        # the solver leg failed; the shooting leg may still reach the target
        # and expose degenerate sensitivity times along its arc
        notes.append("no converged candidate; solver-based verdicts inconclusive")
        conjugate_cleared = None
        ct_found: list = []
        shoot_p0 = None
        shoot_cost = None
        if check_conjugate:
            try:
                arc = shoot(spec, x_target)
                shoot_p0 = arc.initial_covector
                shoot_cost = arc.cost
                ct_found = conjugate_times(spec, arc.initial_covector)
                conjugate_cleared = len(ct_found) == 0
            except (ShootFailedError, ConjugateObstructionError,
                    InadmissibleControlError) as err:
                notes.append(f"shooting leg failed: {err}")
                if isinstance(err, ConjugateObstructionError):
                    conjugate_cleared = False
        smooth = _and3(None, None, conjugate_cleared)
        return ClassificationReport(
            target=x_target, candidates=cset, ranks=[], singular_values=[],
            class_x=None, multiplier_lists=[], fair=None, tame=None, smooth=smooth,
            conjugate_cleared=conjugate_cleared, conjugate_times_found=ct_found,
            confidence="inconclusive", value=np.inf, shoot_covector=shoot_p0,
            shoot_cost=shoot_cost, notes=notes)

    near = cset.near_optimal_indices(opts.near_optimal_gap)
    ranks, svals, mult_lists = [], [], []
    for idx in near:
        cand = cset.candidates[idx]
        r, s = rank_dE(spec, cand.control)
        ranks.append(r)
        svals.append(s)
        mult_lists.append(multipliers(spec, cand.control))
    class_x = int(min(ranks))

    near_clusters = {ci for ci, cluster in enumerate(cset.clusters)
                     if any(i in near for i in cluster)}
    best_normal = [mul for mul in mult_lists[0] if mul.nu == -1]
    fair = (len(near_clusters) == 1) and bool(best_normal)
    tame = all(r == m for r in ranks)

    conjugate_cleared: Optional[bool] = None
    ct_found: list = []
    shoot_p0 = None
    shoot_cost = None
    if check_conjugate:
        try:
            best = cset.candidates[0]
            p0_fit = costate_path(spec, best.control,
                                  fit_terminal_covector(spec, best.control)[0])[0]
            arc = shoot(spec, x_target, p0_fit)
            shoot_p0 = arc.initial_covector
            shoot_cost = arc.cost
            ct_found = conjugate_times(spec, arc.initial_covector)
            conjugate_cleared = len(ct_found) == 0
        except (ShootFailedError, ConjugateObstructionError,
                InadmissibleControlError) as err:
            notes.append(f"shooting leg failed: {err}")
            if isinstance(err, ConjugateObstructionError):
                conjugate_cleared = False

    smooth = _and3(fair, tame, conjugate_cleared)

    confidence = "heuristic"
    strong_coverage = cset.n_failed == 0 and len(cset.clusters) == 1
    strong_normal = bool(best_normal) and best_normal[0].residual <= TAU_NORMAL / 10.0
    strong_rank = tame and all(
        s[m - 1] >= 10.0 * RANK_RTOL * s[0] for s in svals if len(s) >= m)
    if strong_coverage and strong_normal and strong_rank and conjugate_cleared is True:
        confidence = "certified-numeric"

    return ClassificationReport(
        target=x_target, candidates=cset, ranks=ranks, singular_values=svals,
        class_x=class_x, multiplier_lists=mult_lists, fair=fair, tame=tame,
        smooth=smooth, conjugate_cleared=conjugate_cleared,
        conjugate_times_found=ct_found, confidence=confidence,
        value=cset.value(), shoot_covector=shoot_p0, shoot_cost=shoot_cost,
        notes=notes)
