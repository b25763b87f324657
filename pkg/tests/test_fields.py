import numpy as np
import pytest

from aoclab import Poly, Potential, ShapeError, VectorField, lie_bracket
from aoclab.fields import (lie_bracket_field, polynomial_field_from_tables,
                           random_polynomial_field, weak_hormander_rank)


def unit_field(m, comp):
    polys = [Poly.zero(m) for _ in range(m)]
    polys[comp] = Poly.constant(m, 1.0)
    return VectorField.from_polynomials(polys)


class TestPoly:
    def test_arithmetic(self):
        x = Poly.coordinate(2, 0)
        y = Poly.coordinate(2, 1)
        p = x * x + y.scale(3.0)
        assert p([2.0, 1.0]) == pytest.approx(7.0)
        assert p.diff(0)([2.0, 1.0]) == pytest.approx(4.0)
        assert p.diff(1)([2.0, 1.0]) == pytest.approx(3.0)
        assert (p - p).is_zero()

    def test_degree_and_batch_eval(self):
        p = Poly(2, {(2, 1): 1.0, (0, 0): -1.0})
        assert p.degree() == 3
        pts = np.array([[1.0, 2.0], [0.5, 4.0]])
        np.testing.assert_allclose(p(pts), [1.0, 0.0])


class TestVectorField:
    def test_polynomial_jacobian_matches_finite_differences(self, rng):
        f = random_polynomial_field(rng, nvars=3, degree=3)
        f.validate(rng.uniform(-0.8, 0.8, size=(5, 3)))

    def test_output_length(self):
        f = unit_field(3, 1)
        assert f([0.1, 0.2, 0.3]).shape == (3,)

    def test_hessian_exact_for_polynomials(self):
        # f = (x^2 y, 0): d2 f1 / dx dy = 2x
        f = VectorField.from_polynomials(
            [Poly(2, {(2, 1): 1.0}), Poly.zero(2)])
        h = f.hessian([2.0, 3.0])
        assert h[0, 0, 1] == pytest.approx(4.0)
        assert h[0, 0, 0] == pytest.approx(6.0)

    def test_callable_field_finite_difference_hessian(self):
        f = VectorField.from_callables(
            1, lambda x: np.sin(x), lambda x: np.cos(x)[..., None])
        h = f.hessian(np.array([0.3]))
        assert h[0, 0, 0] == pytest.approx(-np.sin(0.3), abs=1e-6)


class TestPotential:
    def test_gradient_matches_finite_differences(self):
        q = Potential.from_polynomial(Poly(2, {(2, 0): 1.0, (1, 1): -0.5}))
        x = np.array([0.4, -0.2])
        eps = 1e-6
        for j in range(2):
            dx = np.zeros(2)
            dx[j] = eps
            fd = (q(x + dx) - q(x - dx)) / (2 * eps)
            assert q.gradient(x)[j] == pytest.approx(fd, rel=1e-5)


class TestLieBracket:
    def test_constant_fields_commute(self):
        assert np.allclose(lie_bracket(unit_field(2, 0), unit_field(2, 1),
                                       [0.3, -0.1]), 0.0)

    def test_heisenberg_bracket(self, heisenberg):
        # [X1, X2] = DX2 X1 - DX1 X2 = (0, 0, 1/2) - (0, 0, -1/2)
        f1, f2 = heisenberg.system.controls
        for pt in ([0.0, 0.0, 0.0], [1.0, -2.0, 0.5]):
            np.testing.assert_allclose(lie_bracket(f1, f2, pt), [0, 0, 1], atol=1e-12)

    def test_antisymmetry_and_self_bracket(self, rng):
        f = random_polynomial_field(rng, 2, degree=3)
        g = random_polynomial_field(rng, 2, degree=3)
        x = rng.uniform(-0.5, 0.5, 2)
        np.testing.assert_allclose(lie_bracket(f, g, x), -lie_bracket(g, f, x),
                                   atol=1e-12)
        np.testing.assert_allclose(lie_bracket(f, f, x), 0.0, atol=1e-12)

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ShapeError):
            lie_bracket(unit_field(2, 0), unit_field(3, 0), [0.0, 0.0])

    def test_jacobi_identity_residual(self, rng):
        fields = [random_polynomial_field(rng, 3, degree=2, scale=0.5)
                  for _ in range(3)]
        f, g, h = fields

        def nested(a, b, c):
            return lie_bracket_field(a, lie_bracket_field(b, c))

        jac_sum = None
        for a, b, c in ((f, g, h), (g, h, f), (h, f, g)):
            fld = nested(a, b, c)
            jac_sum = fld if jac_sum is None else VectorField.from_polynomials(
                [p + q for p, q in zip(jac_sum.components, fld.components)])
        for _ in range(5):
            x = rng.uniform(-0.5, 0.5, 3)
            assert np.abs(jac_sum(x)).max() < 1e-10


class TestBracketRank:
    def test_heisenberg_depth_one_spans(self, heisenberg):
        assert weak_hormander_rank(heisenberg.system, np.zeros(3), 1) == 3

    def test_single_constant_field(self):
        f = unit_field(2, 0)
        drift = VectorField.from_polynomials([Poly.zero(2)] * 2)
        from aoclab import ControlSystem
        sys1 = ControlSystem(m=2, d=1, drift=drift, controls=(f,),
                             potential=Potential.zero(2),
                             chart_bounds=[[-1, 1]] * 2)
        for depth in (0, 1, 3):
            assert weak_hormander_rank(sys1, [0.0, 0.0], depth) == 1

    def test_double_integrator_needs_drift_bracket(self, double_integrator):
        sys = double_integrator.system
        # [X0, X1] = -d/dx1 enters at depth 1
        assert weak_hormander_rank(sys, np.zeros(2), 0) == 1
        assert weak_hormander_rank(sys, np.zeros(2), 1) == 2

    def test_martinet_needs_depth_two_at_origin(self, martinet):
        sys = martinet.system
        assert weak_hormander_rank(sys, np.zeros(3), 1) == 2
        assert weak_hormander_rank(sys, np.zeros(3), 2) == 3
        # off the singular plane the first bracket already spans
        assert weak_hormander_rank(sys, np.array([0.5, 0.0, 0.0]), 1) == 3

    def test_monotone_in_depth_and_bounded(self, drifted_heisenberg):
        sys = drifted_heisenberg.system
        ranks = [weak_hormander_rank(sys, np.zeros(3), k) for k in range(4)]
        assert all(a <= b for a, b in zip(ranks, ranks[1:]))
        assert all(r <= sys.m for r in ranks)


def test_polynomial_field_from_tables_roundtrip():
    # X = (x2^2, -x1): one quadratic term, one linear term
    f = polynomial_field_from_tables([[[1.0, 0, 2]], [[-1.0, 1, 0]]], nvars=2)
    np.testing.assert_allclose(f([2.0, 3.0]), [9.0, -2.0])
    with pytest.raises(ShapeError):
        polynomial_field_from_tables([[[1.0, 0]]], nvars=2)


def test_validate_rejects_wrong_jacobian():
    # eval is x^2 but the claimed Jacobian is the identity
    f = VectorField.from_callables(
        1, lambda x: x ** 2, lambda x: np.ones(x.shape[:-1] + (1, 1)))
    with pytest.raises(ValueError, match="finite"):
        f.validate(np.array([[2.0]]))
