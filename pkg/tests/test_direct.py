import numpy as np
import pytest

from aoclab import (Control, Poly, Potential, ShapeError, SolveOptions,
                    solve_fixed_endpoint, value_estimate)
from aoclab.direct import stationarity_residual

from test_flow import make_spec, scalar_spec

FAST = SolveOptions(multistart_count=4, seed=0)


class TestLQScalar:
    def test_unique_constant_minimizer(self):
        spec = scalar_spec(N=16)
        cset = solve_fixed_endpoint(spec, [1.0], FAST)
        assert cset.status == "ok"
        assert len(cset.clusters) == 1
        best = cset.best()
        assert best.cost_value == pytest.approx(0.5, abs=1e-4)
        np.testing.assert_allclose(best.control.values, 1.0, atol=1e-4)

    def test_target_at_start_costs_nothing(self, heisenberg):
        spec = heisenberg.spec(N=8)
        cset = solve_fixed_endpoint(spec, spec.x0, FAST)
        assert cset.value() == pytest.approx(0.0, abs=1e-6)
        assert cset.best().control.l2_norm() <= 1e-3

    def test_constant_potential_shifts_value_exactly(self):
        c = 0.9
        spec0 = scalar_spec(N=16)
        spec_c = make_spec([Poly.zero(1)], [[Poly.constant(1, 1.0)]], [0.0],
                           N=16, potential=Potential.from_polynomial(Poly.constant(1, c)))
        v0 = value_estimate(spec0, [0.6], FAST)
        vc = value_estimate(spec_c, [0.6], FAST)
        assert vc - v0 == pytest.approx(-c * spec0.T / 2.0, abs=1e-6)


class TestGramianCrossCheck:
    def test_double_integrator_minimum_energy(self, double_integrator, rng):
        spec = double_integrator.spec(N=128)
        g_mat = np.array([[1.0 / 3.0, 0.5], [0.5, 1.0]])
        for _ in range(3):
            xi = rng.uniform(-0.7, 0.7, size=2)
            v = value_estimate(spec, xi, FAST)
            v_ref = 0.5 * xi @ np.linalg.solve(g_mat, xi)
            assert abs(v - v_ref) <= 1e-3 * (1.0 + abs(v_ref))


class TestCandidateSetContracts:
    def test_feasibility_of_every_candidate(self, heisenberg):
        spec = heisenberg.spec()
        opts = SolveOptions(multistart_count=8, seed=1)
        cset = solve_fixed_endpoint(spec, [0.0, 0.0, 0.1], opts)
        scale = max(1.0, np.linalg.norm(cset.target))
        for cand in cset.candidates:
            assert cand.endpoint_residual <= opts.constraint_tol * scale
        costs = [c.cost_value for c in cset.candidates]
        assert costs == sorted(costs)

    def test_stationarity_surrogate(self, heisenberg):
        spec = heisenberg.spec()
        cset = solve_fixed_endpoint(spec, [0.3, -0.2, 0.04],
                                    SolveOptions(multistart_count=6, seed=2))
        assert cset.status == "ok"
        for cand in cset.candidates[:3]:
            assert stationarity_residual(spec, cand) <= 1e-4

    def test_clusters_partition_candidates(self, heisenberg):
        spec = heisenberg.spec()
        cset = solve_fixed_endpoint(spec, [0.0, 0.0, 0.08],
                                    SolveOptions(multistart_count=8, seed=3))
        seen = sorted(i for cluster in cset.clusters for i in cluster)
        assert seen == list(range(len(cset.candidates)))

    def test_unreachable_target_reports_no_candidates(self):
        # single horizontal field in the plane: nothing moves vertically
        spec = make_spec([Poly.zero(2), Poly.zero(2)],
                         [[Poly.constant(2, 1.0), Poly.zero(2)]],
                         [0.0, 0.0], N=8)
        opts = SolveOptions(multistart_count=3, seed=0, max_outer=6, max_inner=40)
        cset = solve_fixed_endpoint(spec, [0.0, 1.0], opts)
        assert cset.status == "no-candidates"
        assert value_estimate(spec, [0.0, 1.0], opts) == np.inf

    def test_target_outside_chart_rejected(self):
        spec = scalar_spec()
        with pytest.raises(ShapeError):
            solve_fixed_endpoint(spec, [20.0], FAST)


class TestRefinement:
    def test_value_nonincreasing_under_grid_doubling(self, heisenberg):
        target = [0.0, 0.0, 0.1]
        prev_value, prev_ctrl = None, None
        for n_int in (16, 32, 64):
            spec = heisenberg.spec(N=n_int)
            seeds = (prev_ctrl.refine(2),) if prev_ctrl is not None else ()
            opts = SolveOptions(multistart_count=8, seed=4, seed_controls=seeds)
            cset = solve_fixed_endpoint(spec, target, opts)
            val = cset.value()
            if prev_value is not None:
                assert val <= prev_value + 1e-6
            prev_value, prev_ctrl = val, cset.best().control

    def test_seed_controls_must_match_grid(self):
        spec = scalar_spec(N=16)
        bad_seed = Control.zeros(1.0, 8, 1)
        with pytest.raises(ShapeError):
            solve_fixed_endpoint(spec, [0.5],
                                 SolveOptions(multistart_count=1, seed=0,
                                              seed_controls=(bad_seed,)))


class TestDeterminism:
    def test_same_seed_same_answer(self, heisenberg):
        spec = heisenberg.spec()
        opts = SolveOptions(multistart_count=4, seed=9)
        a = solve_fixed_endpoint(spec, [0.0, 0.0, 0.05], opts)
        b = solve_fixed_endpoint(spec, [0.0, 0.0, 0.05], opts)
        assert a.value() == b.value()
        np.testing.assert_array_equal(a.best().control.values,
                                      b.best().control.values)


def test_solve_options_validation():
    with pytest.raises(ShapeError):
        SolveOptions(penalty_growth=1.0)
    with pytest.raises(ShapeError):
        SolveOptions(grad_tol=-1e-6)
    with pytest.raises(ShapeError):
        SolveOptions(near_optimal_gap=0.0)


def test_numpy_fallback_matches_compiled_solver(monkeypatch):
    # force the pure-numpy stepper and adjoint paths end to end
    import aoclab._kernels as kernels
    from aoclab.flow import _dynamics_cache

    spec = scalar_spec(N=8)
    baseline = solve_fixed_endpoint(spec, [0.7], FAST)
    monkeypatch.setattr(kernels, "HAVE_NUMBA", False)
    _dynamics_cache.clear()
    fallback = solve_fixed_endpoint(spec, [0.7], FAST)
    assert fallback.status == "ok"
    assert fallback.value() == pytest.approx(baseline.value(), abs=1e-9)
    np.testing.assert_allclose(fallback.best().control.values,
                               baseline.best().control.values, atol=1e-6)
