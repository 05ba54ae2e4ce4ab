"""Exact sparse polynomial vector fields on R^d.

Each component is a map from an exponent tuple to a :class:`fractions.Fraction`
coefficient. Zero coefficients are never stored, so two fields are equal iff
their canonical (sorted) term tuples are equal.
"""

from __future__ import annotations

from fractions import Fraction
from functools import cached_property
from numbers import Rational
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]
Poly = dict[Exponent, Fraction]


class DimensionError(ValueError):
    """Operands live in spaces of different dimension."""


def as_fraction(value) -> Fraction:
    """Convert ints, rationals, floats and ``"num/den"`` strings exactly."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, Rational)):
        return Fraction(value)
    if isinstance(value, (float, np.floating)):
        if not np.isfinite(value):
            raise ValueError(f"non-finite coefficient {value!r}")
        return Fraction(float(value))
    if isinstance(value, np.integer):
        return Fraction(int(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot convert {type(value).__name__} to Fraction")


# -- scalar polynomial helpers ------------------------------------------------

def _clean(p: Mapping[Exponent, Fraction]) -> Poly:
    return {e: c for e, c in p.items() if c != 0}


def poly_add(p: Mapping, q: Mapping, scale: Fraction = Fraction(1)) -> Poly:
    out = dict(p)
    for e, c in q.items():
        out[e] = out.get(e, Fraction(0)) + scale * c
    return _clean(out)


def poly_mul(p: Mapping, q: Mapping) -> Poly:
    out: Poly = {}
    for e1, c1 in p.items():
        for e2, c2 in q.items():
            e = tuple(a + b for a, b in zip(e1, e2))
            out[e] = out.get(e, Fraction(0)) + c1 * c2
    return _clean(out)


def poly_diff(p: Mapping, k: int) -> Poly:
    out: Poly = {}
    for e, c in p.items():
        if e[k] == 0:
            continue
        e2 = e[:k] + (e[k] - 1,) + e[k + 1:]
        out[e2] = out.get(e2, Fraction(0)) + c * e[k]
    return _clean(out)


class PolyVectorField:
    """Immutable polynomial vector field ``x -> (P_1(x), ..., P_d(x))``.

    Parameters
    ----------
    dim : int
        Ambient dimension.
    components : sequence of mappings
        ``components[i]`` maps exponent tuples of length ``dim`` to
        coefficients (anything :func:`as_fraction` accepts).
    """

    def __init__(self, dim: int, components: Sequence[Mapping] | None = None):
        if dim < 1:
            raise ValueError("dim must be positive")
        components = components if components is not None else [{}] * dim
        if len(components) != dim:
            raise DimensionError(f"expected {dim} components, got {len(components)}")
        terms = []
        for comp in components:
            clean = {}
            for e, c in comp.items():
                e = tuple(int(v) for v in e)
                if len(e) != dim or any(v < 0 for v in e):
                    raise ValueError(f"bad exponent {e} for dim {dim}")
                c = as_fraction(c)
                if c != 0:
                    clean[e] = clean.get(e, Fraction(0)) + c
            terms.append(tuple(sorted((e, c) for e, c in clean.items() if c != 0)))
        self.dim = dim
        self._terms: tuple[tuple[tuple[Exponent, Fraction], ...], ...] = tuple(terms)

    # -- constructors ---------------------------------------------------------
    @classmethod
    def zero(cls, dim: int) -> "PolyVectorField":
        return cls(dim)

    @classmethod
    def constant(cls, vec: Sequence) -> "PolyVectorField":
        d = len(vec)
        zero = (0,) * d
        return cls(d, [{zero: v} for v in vec])

    @classmethod
    def linear(cls, matrix) -> "PolyVectorField":
        """The field ``x -> M x``."""
        rows = [list(r) for r in matrix]
        d = len(rows)
        comps = []
        for row in rows:
            if len(row) != d:
                raise DimensionError("matrix must be square")
            comp = {}
            for k, v in enumerate(row):
                e = tuple(1 if j == k else 0 for j in range(d))
                comp[e] = v
            comps.append(comp)
        return cls(d, comps)

    # -- accessors ------------------------------------------------------------
    def component(self, i: int) -> Poly:
        return dict(self._terms[i])

    @property
    def components(self) -> list[Poly]:
        return [dict(t) for t in self._terms]

    def terms(self) -> Iterable[tuple[int, Exponent, Fraction]]:
        for i, comp in enumerate(self._terms):
            for e, c in comp:
                yield i, e, c

    def is_zero(self) -> bool:
        return all(len(t) == 0 for t in self._terms)

    def degrees(self) -> set[int]:
        return {sum(e) for _, e, _ in self.terms()}

    def homogeneous_degree(self) -> int | None:
        """Common total degree of every term, or None if mixed/empty."""
        degs = self.degrees()
        return degs.pop() if len(degs) == 1 else None

    @property
    def max_degree(self) -> int:
        return max(self.degrees(), default=0)

    def is_constant(self) -> bool:
        return self.degrees() <= {0}

    # -- algebra --------------------------------------------------------------
    def _check(self, other: "PolyVectorField"):
        if not isinstance(other, PolyVectorField):
            return NotImplemented
        if other.dim != self.dim:
            raise DimensionError(f"dims {self.dim} and {other.dim} differ")
        return None

    def __add__(self, other):
        bad = self._check(other)
        if bad is NotImplemented:
            return bad
        return PolyVectorField(
            self.dim, [poly_add(a, b) for a, b in zip(self.components, other.components)]
        )

    def __sub__(self, other):
        bad = self._check(other)
        if bad is NotImplemented:
            return bad
        return PolyVectorField(
            self.dim,
            [poly_add(a, b, Fraction(-1)) for a, b in zip(self.components, other.components)],
        )

    def __neg__(self):
        return self.scale(-1)

    def scale(self, s) -> "PolyVectorField":
        s = as_fraction(s)
        return PolyVectorField(self.dim, [{e: s * c for e, c in t} for t in self._terms])

    __rmul__ = scale

    def partial(self, k: int) -> "PolyVectorField":
        """Componentwise derivative with respect to x_k."""
        return PolyVectorField(self.dim, [poly_diff(c, k) for c in self.components])

    def directional(self, other: "PolyVectorField") -> "PolyVectorField":
        """``(D self) other``: the derivative of self along the field ``other``."""
        self._check(other)
        out = [dict() for _ in range(self.dim)]
        for k in range(self.dim):
            ok = other.component(k)
            if not ok:
                continue
            dk = self.partial(k)
            for i in range(self.dim):
                ci = dk.component(i)
                if ci:
                    out[i] = poly_add(out[i], poly_mul(ci, ok))
        return PolyVectorField(self.dim, out)

    def dot(self, other: "PolyVectorField") -> Poly:
        """Scalar polynomial ``self(x) . other(x)``."""
        self._check(other)
        acc: Poly = {}
        for a, b in zip(self.components, other.components):
            acc = poly_add(acc, poly_mul(a, b))
        return acc

    def dot_identity(self) -> Poly:
        """Scalar polynomial ``self(x) . x``."""
        return self.dot(PolyVectorField.linear(np.eye(self.dim, dtype=int).tolist()))

    def divergence(self) -> Poly:
        acc: Poly = {}
        for i in range(self.dim):
            acc = poly_add(acc, poly_diff(self.component(i), i))
        return acc

    def substitute_scale(self, lam) -> "PolyVectorField":
        """The field ``x -> self(lam * x)``."""
        lam = as_fraction(lam)
        return PolyVectorField(
            self.dim, [{e: c * lam ** sum(e) for e, c in t} for t in self._terms]
        )

    # -- canonical forms ------------------------------------------------------
    def canonical(self) -> tuple:
        return self._terms

    def direction_key(self) -> tuple | None:
        """Key identifying the field up to a nonzero scalar multiple."""
        lead = None
        for comp in self._terms:
            if comp:
                lead = comp[0][1]
                break
        if lead is None:
            return None
        return tuple(tuple((e, c / lead) for e, c in comp) for comp in self._terms)

    def __eq__(self, other):
        if not isinstance(other, PolyVectorField):
            return NotImplemented
        return self.dim == other.dim and self._terms == other._terms

    def __hash__(self):
        return hash((self.dim, self._terms))

    def __repr__(self):
        nterms = sum(len(t) for t in self._terms)
        return f"PolyVectorField(dim={self.dim}, terms={nterms})"

    # -- evaluation -----------------------------------------------------------
    def evaluate_exact(self, x: Sequence) -> list[Fraction]:
        xs = [as_fraction(v) for v in x]
        if len(xs) != self.dim:
            raise DimensionError(f"point has length {len(xs)}, field dim {self.dim}")
        out = []
        for comp in self._terms:
            acc = Fraction(0)
            for e, c in comp:
                m = c
                for xi, k in zip(xs, e):
                    if k:
                        m *= xi ** k
                acc += m
            out.append(acc)
        return out

    @cached_property
    def _packed(self):
        """Flat float arrays (component, coefficient, exponents) for evaluation."""
        rows = [(i, float(c), e) for i, e, c in self.terms()]
        if not rows:
            return (np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros((0, self.dim), dtype=np.int64))
        comp = np.array([r[0] for r in rows], dtype=np.int64)
        coef = np.array([r[1] for r in rows])
        expo = np.array([r[2] for r in rows], dtype=np.int64)
        return comp, coef, expo

    @cached_property
    def _monomial_form(self):
        """Unique exponents and the ``(n_monomials, dim)`` coefficient matrix."""
        comp, coef, expo = self._packed
        if coef.size == 0:
            return expo, np.zeros((0, self.dim))
        uniq, inv = np.unique(expo, axis=0, return_inverse=True)
        C = np.zeros((len(uniq), self.dim))
        np.add.at(C, (inv.ravel(), comp), coef)
        return uniq, C

    def __call__(self, x, block: int = 4096) -> np.ndarray:
        """Float evaluation by direct monomial summation.

        ``x`` may have shape ``(d,)`` or ``(..., d)``.
        """
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"point has length {x.shape[-1]}, field dim {self.dim}")
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.dim)
        expo, C = self._monomial_form
        out = np.zeros((flat.shape[0], self.dim))
        if C.shape[0] == 0:
            return out.reshape(lead + (self.dim,))
        maxpow = int(expo.max(initial=0))
        for s in range(0, flat.shape[0], block):
            xb = flat[s:s + block]
            mono = np.ones((xb.shape[0], len(expo)))
            for k in range(self.dim):
                ek = expo[:, k]
                if not ek.any():
                    continue
                powers = xb[:, k:k + 1] ** np.arange(maxpow + 1)
                mono *= powers[:, ek]
            out[s:s + block] = mono @ C
        return out.reshape(lead + (self.dim,))

    def to_float_terms(self):
        """Arrays ``(component, coefficient, exponents)`` for compiled kernels."""
        comp, coef, expo = self._packed
        return comp.copy(), coef.copy(), expo.copy()


def witness_monomial(p: Mapping[Exponent, Fraction]) -> tuple[Exponent, Fraction] | None:
    """Smallest nonzero term of a scalar polynomial, or None when p == 0."""
    items = sorted((e, c) for e, c in p.items() if c != 0)
    return items[0] if items else None


def monomial_str(e: Exponent) -> str:
    parts = []
    for k, v in enumerate(e):
        if v == 1:
            parts.append(f"x{k + 1}")
        elif v > 1:
            parts.append(f"x{k + 1}^{v}")
    return "*".join(parts) if parts else "1"
