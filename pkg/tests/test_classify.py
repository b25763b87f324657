import numpy as np
import pytest

from aoclab import (Control, SolveOptions, classify_point, multipliers, rank_dE,
                    value_estimate, xi_space)
from aoclab.benchmarks import martinet_singular_control
from aoclab.classify import normal_fit_residual
from aoclab.flow import pushforward, variational_flow

from test_flow import scalar_spec

FAST = SolveOptions(multistart_count=4, seed=0)


class TestRank:
    def test_scalar_always_one(self, rng):
        spec = scalar_spec(N=8)
        for _ in range(3):
            rank, _ = rank_dE(spec, Control(1.0, rng.normal(size=(8, 1))))
            assert rank == 1

    def test_martinet_singular_line_drops_rank(self, martinet):
        spec = martinet.spec(N=128)
        rank, sigmas = rank_dE(spec, martinet_singular_control(spec))
        assert rank == 2
        assert sigmas[2] <= 1e-12 * sigmas[0]

    def test_heisenberg_generic_control_full_rank(self, heisenberg):
        spec = heisenberg.spec(N=32)
        rank, _ = rank_dE(spec, spec.constant_control([1.0, 0.0]))
        assert rank == 3

    def test_rank_lower_semicontinuity_surrogate(self, martinet, rng):
        # perturbations of the singular control regain full rank, so the
        # liminf of perturbed ranks dominates the limit rank
        spec = martinet.spec(N=32)
        u_sing = martinet_singular_control(spec)
        limit_rank, _ = rank_dE(spec, u_sing)
        w = rng.normal(size=(32, 2))
        perturbed = []
        for n in (4, 16, 64):
            u_n = Control(spec.T, u_sing.values + w / n)
            perturbed.append(rank_dE(spec, u_n)[0])
        assert min(perturbed) >= limit_rank


class TestMultipliers:
    def test_lq_optimum_is_strictly_normal(self, lq):
        spec = lq.spec(N=16)
        muls = multipliers(spec, spec.constant_control([1.0]))
        normals = [m for m in muls if m.nu == -1]
        abnormals = [m for m in muls if m.nu == 0]
        assert len(normals) == 1 and not abnormals
        assert normals[0].lambda_T[0] == pytest.approx(1.0, abs=1e-10)
        assert normals[0].residual <= 1e-10

    def test_martinet_singular_control_is_normal_and_abnormal(self, martinet):
        spec = martinet.spec(N=128)
        muls = multipliers(spec, martinet_singular_control(spec))
        normals = [m for m in muls if m.nu == -1]
        abnormals = [m for m in muls if m.nu == 0]
        assert normals and abnormals
        cosine = abs(abnormals[0].lambda_T @ np.array([0.0, 0.0, 1.0]))
        assert cosine >= 0.999

    def test_generic_control_has_no_multiplier(self, heisenberg, rng):
        spec = heisenberg.spec(N=16)
        u = Control(spec.T, rng.normal(size=(16, 2)))
        muls = multipliers(spec, u)
        assert muls == []
        assert normal_fit_residual(spec, u) > 1e-2

    def test_exclusivity_flags(self, lq, martinet):
        # strictly normal: full rank and empty abnormal list
        spec = lq.spec(N=16)
        muls = multipliers(spec, spec.constant_control([1.0]))
        rank, _ = rank_dE(spec, spec.constant_control([1.0]))
        assert rank == spec.m and all(m.nu == -1 for m in muls)
        # normal + abnormal co-occur without being "strict" on the singular line
        spec_m = martinet.spec(N=64)
        muls_m = multipliers(spec_m, martinet_singular_control(spec_m))
        kinds = {m.nu for m in muls_m}
        assert kinds == {-1, 0}


class TestXiSpace:
    def test_full_rank_kernel_is_trivial(self, lq):
        spec = lq.spec(N=16)
        xi = xi_space(spec, spec.constant_control([1.0]))
        assert xi.dim == 0
        assert xi.eta is not None
        assert xi.rank == 1

    def test_martinet_kernel_is_vertical_line(self, martinet):
        spec = martinet.spec(N=64)
        xi = xi_space(spec, martinet_singular_control(spec))
        assert xi.dim == 1
        assert abs(xi.kernel_basis[0] @ [0.0, 0.0, 1.0]) >= 0.999
        assert xi.eta is not None  # the singular line also has a normal lift
        assert xi.rank + xi.dim == spec.m

    def test_pullback_duality(self, martinet, rng):
        spec = martinet.spec(N=32)
        u = martinet_singular_control(spec)
        xi = xi_space(spec, u)
        vf = variational_flow(spec, u)
        push = pushforward(vf, 0.0, spec.T)
        for row, pulled in zip(xi.kernel_basis, xi.pulled_back_kernel):
            for _ in range(3):
                v = rng.normal(size=3)
                assert pulled @ v == pytest.approx(row @ (push @ v), abs=1e-12)


class TestClassifyPoint:
    def test_lq_point_is_smooth(self, lq):
        spec = lq.spec(N=16)
        rep = classify_point(spec, [0.6], FAST)
        assert (rep.fair, rep.tame, rep.smooth) == (True, True, True)
        assert rep.class_x == 1
        assert rep.conjugate_cleared is True
        assert rep.confidence in ("certified-numeric", "heuristic")
        assert rep.label() == "smooth"

    def test_smooth_report_has_dimension_bookkeeping(self, lq):
        spec = lq.spec(N=16)
        rep = classify_point(spec, [0.6], FAST)
        xi = xi_space(spec, rep.candidates.best().control)
        assert xi.dim == spec.m - rep.class_x

    def test_martinet_singular_target(self, martinet):
        spec = martinet.spec(N=32)
        seed = martinet_singular_control(spec)
        opts = SolveOptions(multistart_count=8, seed=0, seed_controls=(seed,))
        rep = classify_point(spec, [0.0, 1.0, 0.0], opts)
        assert 2 in rep.ranks          # the singular candidate is near-optimal
        assert rep.class_x <= 2
        assert rep.tame in (False, None)
        assert rep.smooth in (False, None)
        xi = xi_space(spec, seed)
        assert xi.dim == spec.m - rep.class_x

    def test_oscillator_past_focal_time_is_not_smooth(self, oscillator):
        spec = oscillator.spec(T=4.0)
        opts = SolveOptions(multistart_count=3, seed=0, max_outer=5, max_inner=40)
        rep = classify_point(spec, [0.3], opts)
        assert rep.smooth is False
        assert rep.conjugate_cleared is False
        assert any(abs(t - np.pi) <= 1e-2 for t in rep.conjugate_times_found)

    def test_unreachable_target_reports_inconclusive(self):
        from test_flow import make_spec
        from aoclab import Poly

        spec = make_spec([Poly.zero(2), Poly.zero(2)],
                         [[Poly.constant(2, 1.0), Poly.zero(2)]],
                         [0.0, 0.0], N=8)
        opts = SolveOptions(multistart_count=2, seed=0, max_outer=4, max_inner=30)
        rep = classify_point(spec, [0.0, 0.5], opts, check_conjugate=False)
        assert rep.candidates.status == "no-candidates"
        assert rep.fair is None and rep.tame is None
        assert rep.confidence == "inconclusive"
        assert rep.label() == "unreached"

    def test_report_serialization(self, lq):
        spec = lq.spec(N=16)
        rep = classify_point(spec, [0.6], FAST)
        doc = rep.to_json_dict(verbose=True)
        assert doc["fair"] is True
        assert doc["class_x"] == 1
        assert "multipliers" in doc and "singular_values" in doc
        compact = rep.to_json_dict(verbose=False)
        assert "multipliers" not in compact


class TestSmoothCovectorConsistency:
    def test_value_gradient_matches_multiplier(self, lq):
        # at a smooth point the value map is differentiable with gradient
        # equal to the terminal covector
        spec = lq.spec(N=16)
        x = 0.6
        rep = classify_point(spec, [x], FAST)
        lam = [m for m in rep.multiplier_lists[0] if m.nu == -1][0].lambda_T[0]
        delta = 1e-2
        vp = value_estimate(spec, [x + delta], FAST)
        vm = value_estimate(spec, [x - delta], FAST)
        fd = (vp - vm) / (2 * delta)
        assert abs(fd - lam) / max(abs(lam), 1e-12) <= 1e-2
