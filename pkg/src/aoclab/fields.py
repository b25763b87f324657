"""Vector fields and potentials on a coordinate chart.

Fields are smooth maps R^m -> R^m supplied either as exact multivariate
polynomials (the configuration format and all built-in benchmarks) or as
user callables.  Polynomial backing gives exact Jacobians and Hessians by
coefficient differentiation and lets Lie brackets be formed symbolically,
which is what the bracket-generation rank diagnostic needs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeError
from .linalg import numeric_rank

_COEFF_EPS = 1e-14


class Poly:
    """Exact multivariate polynomial: {exponent tuple: coefficient}."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Optional[dict] = None):
        self.nvars = int(nvars)
        self.terms: dict[tuple, float] = {}
        if terms:
            for expo, c in terms.items():
                e = tuple(int(k) for k in expo)
                if len(e) != self.nvars:
                    raise ShapeError(f"exponent {e} has wrong arity for {self.nvars} variables")
                if any(k < 0 for k in e):
                    raise ValueError(f"negative exponent in {e}")
                c = float(c)
                if abs(c) > _COEFF_EPS:
                    self.terms[e] = self.terms.get(e, 0.0) + c
            self._clean()

    def _clean(self):
        self.terms = {e: c for e, c in self.terms.items() if abs(c) > _COEFF_EPS}

    @classmethod
    def zero(cls, nvars: int) -> "Poly":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, value: float) -> "Poly":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def coordinate(cls, nvars: int, index: int) -> "Poly":
        e = [0] * nvars
        e[index] = 1
        return cls(nvars, {tuple(e): 1.0})

    def copy(self) -> "Poly":
        p = Poly(self.nvars)
        p.terms = dict(self.terms)
        return p

    def __add__(self, other: "Poly") -> "Poly":
        out = self.copy()
        for e, c in other.terms.items():
            out.terms[e] = out.terms.get(e, 0.0) + c
        out._clean()
        return out

    def __sub__(self, other: "Poly") -> "Poly":
        return self + other.scale(-1.0)

    def scale(self, a: float) -> "Poly":
        p = Poly(self.nvars)
        p.terms = {e: a * c for e, c in self.terms.items()}
        p._clean()
        return p

    def __mul__(self, other: "Poly") -> "Poly":
        out = Poly(self.nvars)
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out.terms[e] = out.terms.get(e, 0.0) + c1 * c2
        out._clean()
        return out

    def diff(self, var: int) -> "Poly":
        out = Poly(self.nvars)
        for e, c in self.terms.items():
            k = e[var]
            if k > 0:
                e2 = list(e)
                e2[var] = k - 1
                out.terms[tuple(e2)] = out.terms.get(tuple(e2), 0.0) + c * k
        out._clean()
        return out

    def degree(self) -> int:
        if not self.terms:
            return 0
        return max(sum(e) for e in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for e, c in self.terms.items():
            term = np.full(x.shape[:-1], c)
            for j, k in enumerate(e):
                if k:
                    term = term * x[..., j] ** k
            out = out + term
        return out

    def __repr__(self):
        return f"Poly({self.nvars}, {self.terms!r})"


class MonomialBasis:
    """Shared monomial evaluation for a set of exponent vectors.

    Powers are built by cumulative multiplication (no ``pow`` calls), and a
    single basis evaluation feeds values, Jacobians and Hessians of every
    field compiled against it.
    """

    def __init__(self, nvars: int, exponents: np.ndarray):
        self.nvars = nvars
        self.exponents = np.asarray(exponents, dtype=np.int64).reshape(-1, nvars)
        self.n_terms = self.exponents.shape[0]
        self.max_deg = int(self.exponents.max(initial=0))

    def values(self, x: np.ndarray) -> np.ndarray:
        """Monomial values, shape x.shape[:-1] + (n_terms,)."""
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        # power table P[..., j, k] = x_j ** k, built multiplicatively
        p = np.ones(lead + (self.nvars, self.max_deg + 1))
        for k in range(1, self.max_deg + 1):
            p[..., k] = p[..., k - 1] * x
        gathered = p[..., np.arange(self.nvars), self.exponents]  # (..., n_terms, nvars)
        return gathered.prod(axis=-1)


def _compile_polys(polys: Sequence[Poly], basis_exponents: set) -> None:
    for p in polys:
        basis_exponents.update(p.terms.keys())


def _coeff_matrix(polys: Sequence[Poly], basis: MonomialBasis) -> np.ndarray:
    index = {tuple(e): i for i, e in enumerate(basis.exponents.tolist())}
    c = np.zeros((len(polys), basis.n_terms))
    for row, p in enumerate(polys):
        for e, coef in p.terms.items():
            c[row, index[e]] = coef
    return c


@dataclass(eq=False)
class VectorField:
    """Smooth vector field with evaluation, Jacobian and (optional) Hessian.

    ``eval_fn`` maps (..., m) states to (..., m) tangent vectors; ``jac_fn``
    returns (..., m, m) with entry [a, b] = d eval_a / d x_b.  ``hess_fn``
    (entry [l, a, b] = d^2 eval_l / dx_a dx_b) is exact for polynomial fields
    and falls back to central differences of the Jacobian otherwise.
    Instances are immutable by convention and safe to share across workers.
    """

    dim: int
    eval_fn: Callable[[np.ndarray], np.ndarray]
    jac_fn: Callable[[np.ndarray], np.ndarray]
    hess_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    components: Optional[tuple] = None  # tuple[Poly, ...] when polynomial-backed
    name: str = ""

    @classmethod
    def from_polynomials(cls, polys: Sequence[Poly], name: str = "") -> "VectorField":
        polys = tuple(p.copy() for p in polys)
        m = len(polys)
        if any(p.nvars != m for p in polys):
            raise ShapeError("polynomial components must use m variables for an m-dim field")
        expo: set = set()
        jac_polys = [[p.diff(b) for b in range(m)] for p in polys]
        hess_polys = [[[p.diff(a).diff(b) for b in range(m)] for a in range(m)] for p in polys]
        _compile_polys(polys, expo)
        for row in jac_polys:
            _compile_polys(row, expo)
        for mat in hess_polys:
            for row in mat:
                _compile_polys(row, expo)
        expo.add((0,) * m)
        basis = MonomialBasis(m, np.array(sorted(expo)))
        c_val = _coeff_matrix(polys, basis)
        c_jac = _coeff_matrix([q for row in jac_polys for q in row], basis)
        c_hess = _coeff_matrix([q for mat in hess_polys for row in mat for q in row], basis)

        def eval_fn(x, _b=basis, _c=c_val):
            return _b.values(x) @ _c.T

        def jac_fn(x, _b=basis, _c=c_jac, _m=m):
            v = _b.values(x) @ _c.T
            return v.reshape(v.shape[:-1] + (_m, _m))

        def hess_fn(x, _b=basis, _c=c_hess, _m=m):
            v = _b.values(x) @ _c.T
            return v.reshape(v.shape[:-1] + (_m, _m, _m))

        return cls(dim=m, eval_fn=eval_fn, jac_fn=jac_fn, hess_fn=hess_fn,
                   components=polys, name=name)

    @classmethod
    def from_callables(cls, dim: int, eval_fn, jac_fn, hess_fn=None, name: str = "") -> "VectorField":
        return cls(dim=dim, eval_fn=eval_fn, jac_fn=jac_fn, hess_fn=hess_fn, name=name)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.eval_fn(np.asarray(x, dtype=float)))

    def jacobian(self, x) -> np.ndarray:
        return np.asarray(self.jac_fn(np.asarray(x, dtype=float)))

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.hess_fn is not None:
            return np.asarray(self.hess_fn(x))
        return _fd_hessian_of_field(self, x)

    @property
    def is_polynomial(self) -> bool:
        return self.components is not None

    def validate(self, points: np.ndarray, rtol: float = 1e-5) -> None:
        """Check the Jacobian against central differences of ``eval``."""
        for x in np.atleast_2d(points):
            jac = self.jacobian(x)
            fd = _fd_jacobian(self, x)
            scale = max(1.0, float(np.abs(jac).max()))
            if np.abs(jac - fd).max() > rtol * scale:
                raise ValueError(
                    f"field {self.name or '<anon>'}: Jacobian disagrees with finite "
                    f"differences at {x} (max err {np.abs(jac - fd).max():.3e})")
            if self(x).shape != (self.dim,):
                raise ShapeError(f"field output has wrong length at {x}")


def _fd_jacobian(f: VectorField, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    m = f.dim
    out = np.zeros((m, m))
    for j in range(m):
        dx = np.zeros(m)
        dx[j] = h * max(1.0, abs(x[j]))
        out[:, j] = (f(x + dx) - f(x - dx)) / (2 * dx[j])
    return out


def _fd_hessian_of_field(f: VectorField, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    m = f.dim
    out = np.zeros((m, m, m))
    for b in range(m):
        dx = np.zeros(m)
        dx[b] = h * max(1.0, abs(x[b]))
        out[:, :, b] = (f.jacobian(x + dx) - f.jacobian(x - dx)) / (2 * dx[b])
    return out


@dataclass(eq=False)
class Potential:
    """Scalar potential with gradient and (optional) Hessian.

    ``upper_bound_hint`` is an a-priori upper bound for the potential on the
    working chart; when present it is spot-checked at problem construction
    and violations raise a warning, never an error.
    """

    eval_fn: Callable[[np.ndarray], np.ndarray]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    hess_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    upper_bound_hint: Optional[float] = None
    poly: Optional[Poly] = None
    name: str = ""

    @classmethod
    def zero(cls, dim: int) -> "Potential":
        return cls.from_polynomial(Poly.zero(dim), name="zero")

    @classmethod
    def from_polynomial(cls, p: Poly, upper_bound_hint: Optional[float] = None,
                        name: str = "") -> "Potential":
        m = p.nvars
        grads = [p.diff(a) for a in range(m)]
        hesses = [[p.diff(a).diff(b) for b in range(m)] for a in range(m)]
        expo: set = {(0,) * m}
        _compile_polys([p], expo)
        _compile_polys(grads, expo)
        for row in hesses:
            _compile_polys(row, expo)
        basis = MonomialBasis(m, np.array(sorted(expo)))
        c_val = _coeff_matrix([p], basis)
        c_grad = _coeff_matrix(grads, basis)
        c_hess = _coeff_matrix([q for row in hesses for q in row], basis)

        def eval_fn(x, _b=basis, _c=c_val):
            return (_b.values(x) @ _c.T)[..., 0]

        def grad_fn(x, _b=basis, _c=c_grad):
            return _b.values(x) @ _c.T

        def hess_fn(x, _b=basis, _c=c_hess, _m=m):
            v = _b.values(x) @ _c.T
            return v.reshape(v.shape[:-1] + (_m, _m))

        return cls(eval_fn=eval_fn, grad_fn=grad_fn, hess_fn=hess_fn,
                   upper_bound_hint=upper_bound_hint, poly=p.copy(), name=name)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.eval_fn(np.asarray(x, dtype=float)))

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self.grad_fn(np.asarray(x, dtype=float)))

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.hess_fn is not None:
            return np.asarray(self.hess_fn(x))
        m = x.shape[-1]
        out = np.zeros((m, m))
        for b in range(m):
            dx = np.zeros(m)
            dx[b] = 1e-5 * max(1.0, abs(x[b]))
            out[:, b] = (self.gradient(x + dx) - self.gradient(x - dx)) / (2 * dx[b])
        return out

    @property
    def is_polynomial(self) -> bool:
        return self.poly is not None


def lie_bracket(x_field: VectorField, y_field: VectorField, x) -> np.ndarray:
    """[X, Y](x) = DY(x) X(x) - DX(x) Y(x)."""
    if x_field.dim != y_field.dim:
        raise ShapeError("bracket of fields with different dimensions")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != x_field.dim:
        raise ShapeError("point has wrong dimension for bracket")
    return y_field.jacobian(x) @ x_field(x) - x_field.jacobian(x) @ y_field(x)


def lie_bracket_field(x_field: VectorField, y_field: VectorField) -> VectorField:
    """Exact bracket of polynomial-backed fields, as a new polynomial field."""
    if not (x_field.is_polynomial and y_field.is_polynomial):
        raise ValueError("symbolic bracket needs polynomial-backed fields")
    m = x_field.dim
    xs, ys = x_field.components, y_field.components
    comps = []
    for a in range(m):
        acc = Poly.zero(m)
        for b in range(m):
            acc = acc + ys[a].diff(b) * xs[b] - xs[a].diff(b) * ys[b]
        comps.append(acc)
    return VectorField.from_polynomials(comps, name=f"[{x_field.name},{y_field.name}]")


def _poly_field_key(f: VectorField, digits: int = 12):
    rounded = []
    for p in f.components:
        rounded.append(tuple(sorted((e, round(c, digits)) for e, c in p.terms.items())))
    return tuple(rounded)


def bracket_generators(system, depth: int) -> list[VectorField]:
    """Fields spanning the bracket-generated distribution up to ``depth``.

    Seeds are (ad X0)^j Xi for 0 <= j <= depth; iterated brackets among the
    seeds carry weight w([F, G]) = w(F) + w(G) + 1 and are kept while the
    weight stays <= depth.  All fields must be polynomial-backed.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    drift = system.drift
    if not drift.is_polynomial or not all(f.is_polynomial for f in system.controls):
        raise ValueError("bracket generation requires polynomial-backed fields")

    generated: list[tuple[int, VectorField]] = []
    seen = set()

    def push(weight: int, f: VectorField) -> None:
        if all(p.is_zero() for p in f.components):
            return
        key = _poly_field_key(f)
        if key in seen:
            return
        seen.add(key)
        generated.append((weight, f))

    for fi in system.controls:
        cur, j = fi, 0
        while j <= depth:
            push(j, cur)
            if j == depth:
                break
            cur = lie_bracket_field(drift, cur)
            j += 1

    # close under brackets among the generated fields, bounded by total weight
    frontier = list(generated)
    while frontier:
        new_items = []
        snapshot = list(generated)
        for (wa, fa) in frontier:
            for (wb, fb) in snapshot:
                w = wa + wb + 1
                if w > depth:
                    continue
                br = lie_bracket_field(fa, fb)
                if all(p.is_zero() for p in br.components):
                    continue
                key = _poly_field_key(br)
                if key in seen:
                    continue
                seen.add(key)
                item = (w, br)
                generated.append(item)
                new_items.append(item)
        frontier = new_items
    return [f for _, f in generated]


def weak_hormander_rank(system, x, depth: int) -> int:
    """Rank at ``x`` of the span of (ad X0)^j Xi seeds and their brackets.

    The result is a rank *at the given depth*; the untruncated condition
    quantifies over all orders, so a value below m never certifies failure.
    """
    x = np.asarray(x, dtype=float)
    fields = bracket_generators(system, depth)
    if not fields:
        return 0
    vectors = np.array([f(x) for f in fields])
    rank, _ = numeric_rank(vectors)
    return min(rank, system.m)


def polynomial_field_from_tables(tables: Sequence[Sequence[Sequence[float]]],
                                 nvars: int, name: str = "") -> VectorField:
    """Build a field from per-component term tables.

    Each component is a list of terms ``[coeff, e1, ..., em]``; the term
    format matches the run-configuration file layout.
    """
    comps = []
    for comp_idx, terms in enumerate(tables):
        p = Poly.zero(nvars)
        for term in terms:
            if len(term) != nvars + 1:
                raise ShapeError(
                    f"component {comp_idx + 1}: term {term} must be [coeff, e1..e{nvars}]")
            p = p + Poly(nvars, {tuple(int(e) for e in term[1:]): float(term[0])})
        comps.append(p)
    if len(comps) != nvars:
        raise ShapeError(f"field needs {nvars} components, got {len(comps)}")
    return VectorField.from_polynomials(comps, name=name)


def random_polynomial_field(rng: np.random.Generator, nvars: int, degree: int = 3,
                            density: float = 0.4, scale: float = 1.0) -> VectorField:
    """Random sparse polynomial field; used by property-style tests."""
    comps = []
    exps = [e for e in itertools.product(range(degree + 1), repeat=nvars)
            if sum(e) <= degree]
    for _ in range(nvars):
        terms = {}
        for e in exps:
            if rng.random() < density:
                terms[e] = scale * rng.standard_normal()
        comps.append(Poly(nvars, terms))
    return VectorField.from_polynomials(comps)
