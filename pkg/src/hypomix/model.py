"""Model definitions for dissipative, energy-conserving SDEs with additive noise.

The SDE is

    dx = -eps*A x dt - eps**alpha * B x dt - N(x) dt + sqrt(2*eps) * sum_j Z_j dW_j

with A symmetric positive definite, B skew, and N a homogeneous polynomial
field with ``N(x).x == 0`` and ``div N == 0``. Structural properties are
checked in exact rational arithmetic.

Sign conventions of the built-in models
---------------------------------------
``N`` is stored so that the *drift* is ``-N``. For Lorenz-96 this means
``N_m(u) = -(u[m+1] - u[m-2]) * u[m-1]`` so that the drift reproduces the
usual right-hand side ``(u[m+1] - u[m-2]) * u[m-1] - eps*u[m]``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .poly import (
    DimensionError,
    PolyVectorField,
    as_fraction,
    monomial_str,
    witness_monomial,
)

Matrix = tuple[tuple[Fraction, ...], ...]


class ModelError(ValueError):
    """Invalid model construction or a model that fails a precondition."""


def _as_matrix(m, d: int) -> Matrix:
    rows = [list(r) for r in m]
    if len(rows) != d or any(len(r) != d for r in rows):
        raise DimensionError(f"expected a {d}x{d} matrix")
    return tuple(tuple(as_fraction(v) for v in r) for r in rows)


def _as_vector(v, d: int) -> tuple[Fraction, ...]:
    v = list(v)
    if len(v) != d:
        raise DimensionError(f"expected a vector of length {d}, got {len(v)}")
    return tuple(as_fraction(c) for c in v)


@dataclass(frozen=True)
class ModelSpec:
    """One concrete member of the SDE family.

    ``A``, ``B`` and ``Z`` are stored exactly (as Fractions); the float views
    ``A_f``, ``B_f``, ``Z_f`` are what the simulators use.
    """

    dim: int
    A: Matrix
    B: Matrix
    N: PolyVectorField
    Z: tuple[tuple[Fraction, ...], ...]
    alpha: float = 1.0
    epsilon: float = 0.1
    delta: float = 0.0
    label: str = "model"

    def __post_init__(self):
        d = self.dim
        object.__setattr__(self, "A", _as_matrix(self.A, d))
        object.__setattr__(self, "B", _as_matrix(self.B, d))
        object.__setattr__(self, "Z", tuple(_as_vector(z, d) for z in self.Z))
        if self.N.dim != d:
            raise DimensionError(f"N has dim {self.N.dim}, model dim {d}")
        if not 0.0 < float(self.epsilon) <= 1.0:
            raise ModelError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not 0.0 <= float(self.delta) <= 1.0:
            raise ModelError(f"delta must lie in [0, 1], got {self.delta}")
        if float(self.alpha) < 0:
            raise ModelError("alpha must be >= 0")
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "alpha", float(self.alpha))

    # float views
    @property
    def A_f(self) -> np.ndarray:
        return np.array([[float(c) for c in r] for r in self.A])

    @property
    def B_f(self) -> np.ndarray:
        return np.array([[float(c) for c in r] for r in self.B])

    @property
    def Z_f(self) -> np.ndarray:
        """Noise directions as an ``(r, d)`` array."""
        if not self.Z:
            return np.zeros((0, self.dim))
        return np.array([[float(c) for c in z] for z in self.Z])

    @property
    def r(self) -> int:
        return len(self.Z)

    @property
    def noise_power(self) -> float:
        """``sum_j |Z_j|^2``, the stationary value of ``E[Ax.x]``."""
        return float(sum(sum(c * c for c in z) for z in self.Z))

    @property
    def degree(self) -> int | None:
        return self.N.homogeneous_degree()

    def with_params(self, **kw) -> "ModelSpec":
        data = dict(
            dim=self.dim, A=self.A, B=self.B, N=self.N, Z=self.Z, alpha=self.alpha,
            epsilon=self.epsilon, delta=self.delta, label=self.label,
        )
        data.update(kw)
        return ModelSpec(**data)

    def model_hash(self) -> str:
        # imported lazily: modelfile depends on this module
        from .modelfile import dump_model

        return hashlib.sha256(dump_model(self).encode()).hexdigest()[:16]


# -- evaluation ---------------------------------------------------------------

def drift_eval(model: ModelSpec, x) -> np.ndarray:
    """Drift ``-eps*A x - eps**alpha * B x - N(x)``; ``x`` may be batched ``(..., d)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dim:
        raise DimensionError(f"state has length {x.shape[-1]}, model dim {model.dim}")
    eps = model.epsilon
    lin = eps * model.A_f + eps ** model.alpha * model.B_f
    return -(x @ lin.T) - model.N(x)


# -- structure ----------------------------------------------------------------

@dataclass
class StructureReport:
    A_spd: bool
    B_skew: bool
    energy_conserving: bool
    divergence_free: bool
    degree: int | None
    witnesses: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return (
            self.A_spd and self.B_skew and self.energy_conserving
            and self.divergence_free and self.degree is not None and self.degree >= 2
        )

    def as_dict(self) -> dict:
        return {
            "A_spd": self.A_spd,
            "B_skew": self.B_skew,
            "energy_conserving": self.energy_conserving,
            "divergence_free": self.divergence_free,
            "degree": self.degree,
            "ok": self.ok,
            "witnesses": dict(self.witnesses),
        }


def exact_spd(A: Matrix) -> bool:
    """Symmetry plus positive pivots of an exact LDL^T factorisation."""
    d = len(A)
    if any(A[i][j] != A[j][i] for i in range(d) for j in range(i)):
        return False
    M = [list(r) for r in A]
    for k in range(d):
        piv = M[k][k]
        if piv <= 0:
            return False
        for i in range(k + 1, d):
            f = M[i][k] / piv
            for j in range(k, d):
                M[i][j] -= f * M[k][j]
    return True


def check_structure(model: ModelSpec) -> StructureReport:
    """Exact check of the conservation structure; failures carry a witness."""
    d = model.dim
    wit: dict[str, str] = {}
    spd = exact_spd(model.A)
    if not spd:
        wit["A_spd"] = "A is not symmetric positive definite"
    skew = all(model.B[i][j] == -model.B[j][i] for i in range(d) for j in range(d))
    if not skew:
        i, j = next((i, j) for i in range(d) for j in range(d) if model.B[i][j] != -model.B[j][i])
        wit["B_skew"] = f"B[{i + 1},{j + 1}] + B[{j + 1},{i + 1}] != 0"
    nx = model.N.dot_identity()
    w = witness_monomial(nx)
    if w is not None:
        wit["energy_conserving"] = f"N(x).x contains {w[1]} * {monomial_str(w[0])}"
    div = model.N.divergence()
    wd = witness_monomial(div)
    if wd is not None:
        wit["divergence_free"] = f"div N contains {wd[1]} * {monomial_str(wd[0])}"
    p = model.N.homogeneous_degree()
    if p is None or p < 2:
        wit["degree"] = f"N is not homogeneous of degree >= 2 (degrees {sorted(model.N.degrees())})"
    return StructureReport(spd, skew, w is None, wd is None, p, wit)


def require_structure(model: ModelSpec) -> StructureReport:
    rep = check_structure(model)
    if not rep.ok:
        raise ModelError(f"model {model.label!r} fails structure check: {rep.witnesses}")
    return rep


def lambda_min(A: Matrix) -> float:
    """Smallest eigenvalue; exact for diagonal A."""
    d = len(A)
    if all(A[i][j] == 0 for i in range(d) for j in range(d) if i != j):
        return float(min(A[i][i] for i in range(d)))
    Af = np.array([[float(c) for c in r] for r in A])
    w, v = np.linalg.eigh(Af)
    resid = np.linalg.norm(Af @ v[:, 0] - w[0] * v[:, 0])
    if resid > 1e-10 * max(1.0, np.abs(Af).max()):
        raise ModelError(f"eigensolve residual {resid:.2e} too large")
    return float(w[0])


def lambda_max(A: Matrix) -> float:
    Af = np.array([[float(c) for c in r] for r in A])
    return float(np.linalg.eigvalsh(Af)[-1])


# -- builders -----------------------------------------------------------------

def _unit(d: int, i: int, scale=1) -> tuple:
    return tuple(as_fraction(scale) if k == i else Fraction(0) for k in range(d))


def _eye(d: int) -> list[list[int]]:
    return [[1 if i == j else 0 for j in range(d)] for i in range(d)]


def _mono(d: int, *idx: int) -> tuple[int, ...]:
    e = [0] * d
    for i in idx:
        e[i] += 1
    return tuple(e)


def build_lorenz96(n: int, q: Sequence, epsilon: float = 0.1, alpha: float = 1.0,
                   delta: float = 0.0) -> ModelSpec:
    """Lorenz-96 ring of ``n`` oscillators with forcing ``q_m`` on oscillator ``m``."""
    if n < 4:
        raise ModelError("Lorenz-96 needs n >= 4")
    q = list(q)
    if len(q) != n:
        raise DimensionError(f"q must have length {n}")
    comps = []
    for m in range(n):
        p1, m2, m1 = (m + 1) % n, (m - 2) % n, (m - 1) % n
        comp: dict = {}
        # N_m = -(u_{m+1} - u_{m-2}) u_{m-1}
        for idx, c in ((_mono(n, p1, m1), -1), (_mono(n, m2, m1), 1)):
            comp[idx] = comp.get(idx, 0) + c
        comps.append(comp)
    Z = [_unit(n, m, q[m]) for m in range(n) if as_fraction(q[m]) != 0]
    zero = [[0] * n for _ in range(n)]
    return ModelSpec(n, _eye(n), zero, PolyVectorField(n, comps), Z, alpha, epsilon, delta,
                     label=f"lorenz96-n{n}")


def build_sabra(J: int, delta_param, q: Sequence, p: Sequence, epsilon: float = 0.1,
                alpha: float = 1.0, delta: float = 0.0) -> ModelSpec:
    """SABRA shell model with ``J`` complex shells in real coordinates.

    State ordering is ``(a_1, ..., a_J, b_1, ..., b_J)`` with ``u_m = a_m + i b_m``.
    The complex right-hand side is

        i 2^m ( conj(u_{m+1}) u_{m+2} - (c/2) conj(u_{m-1}) u_{m+1}
                + ((1-c)/4) u_{m-2} u_{m-1} ) - eps 4^m u_m

    (``c`` = ``delta_param``), the coefficient choice for which
    ``sum |u_m|^2`` is conserved by the nonlinearity.
    """
    if J < 3:
        raise ModelError("SABRA needs J >= 3")
    c = as_fraction(delta_param)
    if c in (0, 1, 2) or not 0 < c < 2:
        raise ModelError("delta_param must lie in (0, 2) and differ from 1")
    q, p = list(q), list(p)
    if len(q) != J or len(p) != J:
        raise DimensionError(f"q and p must have length {J}")
    d = 2 * J
    ia = lambda k: k - 1  # noqa: E731
    ib = lambda k: J + k - 1  # noqa: E731
    inside = lambda k: 1 <= k <= J  # noqa: E731
    half_c = c / 2
    quarter = (1 - c) / 4
    drift = [dict() for _ in range(d)]

    def add(comp: int, coef, *idx):
        if coef == 0:
            return
        e = _mono(d, *idx)
        drift[comp][e] = drift[comp].get(e, Fraction(0)) + coef

    for m in range(1, J + 1):
        s = Fraction(2) ** m
        # i * k * conj(u_{m+1}) u_{m+2}
        if inside(m + 1) and inside(m + 2):
            a1, b1, a2, b2 = ia(m + 1), ib(m + 1), ia(m + 2), ib(m + 2)
            add(ia(m), -s, a1, b2)
            add(ia(m), s, b1, a2)
            add(ib(m), s, a1, a2)
            add(ib(m), s, b1, b2)
        # -i * k * (c/2) conj(u_{m-1}) u_{m+1}
        if inside(m - 1) and inside(m + 1):
            a1, b1, a2, b2 = ia(m - 1), ib(m - 1), ia(m + 1), ib(m + 1)
            add(ia(m), s * half_c, a1, b2)
            add(ia(m), -s * half_c, b1, a2)
            add(ib(m), -s * half_c, a1, a2)
            add(ib(m), -s * half_c, b1, b2)
        # i * k * ((1-c)/4) u_{m-2} u_{m-1}
        if inside(m - 2) and inside(m - 1):
            a1, b1, a2, b2 = ia(m - 2), ib(m - 2), ia(m - 1), ib(m - 1)
            add(ia(m), -s * quarter, a1, b2)
            add(ia(m), -s * quarter, b1, a2)
            add(ib(m), s * quarter, a1, a2)
            add(ib(m), -s * quarter, b1, b2)
    N = -PolyVectorField(d, drift)
    A = [[0] * d for _ in range(d)]
    for m in range(1, J + 1):
        A[ia(m)][ia(m)] = 4 ** m
        A[ib(m)][ib(m)] = 4 ** m
    Z = [_unit(d, ia(m), q[m - 1]) for m in range(1, J + 1) if as_fraction(q[m - 1]) != 0]
    Z += [_unit(d, ib(m), p[m - 1]) for m in range(1, J + 1) if as_fraction(p[m - 1]) != 0]
    zero = [[0] * d for _ in range(d)]
    return ModelSpec(d, A, zero, N, Z, alpha, epsilon, delta, label=f"sabra-J{J}")


def build_triad(alphas: Sequence, q1=1, q2=1, epsilon: float = 0.1, alpha: float = 1.0,
                delta: float = 0.0) -> ModelSpec:
    """Three-mode model ``N = (a1 x2 x3, a2 x1 x3, a3 x1 x2)`` forced on modes 1 and 2."""
    a = [as_fraction(v) for v in alphas]
    if len(a) != 3:
        raise DimensionError("alphas must have length 3")
    if sum(a) != 0:
        raise ModelError(f"alphas must sum to zero (energy conservation), sum = {sum(a)}")
    if a[2] == 0:
        raise ModelError("alphas[2] must be nonzero: the bracket [e2,[e1,N]] spans x3 only then")
    if as_fraction(q1) == 0 or as_fraction(q2) == 0:
        raise ModelError("q1 and q2 must be nonzero")
    N = PolyVectorField(3, [{(0, 1, 1): a[0]}, {(1, 0, 1): a[1]}, {(1, 1, 0): a[2]}])
    Z = [_unit(3, 0, q1), _unit(3, 1, q2)]
    zero = [[0] * 3 for _ in range(3)]
    return ModelSpec(3, _eye(3), zero, N, Z, alpha, epsilon, delta, label="triad")


def build_ou(a=1, z: Sequence = (1,), epsilon: float = 0.1, delta: float = 0.0) -> ModelSpec:
    """Linear control model: ``dx = -eps*a*x dt + sqrt(2 eps) z dW`` in one or more dimensions.

    ``z`` lists scalar noise amplitudes; each one is a separate noise direction
    along the single coordinate. ``N`` is identically zero, so this model is
    only used as an oracle fixture and deliberately fails :func:`check_structure`'s
    degree requirement.
    """
    Z = [(as_fraction(v),) for v in z if as_fraction(v) != 0]
    return ModelSpec(1, [[a]], [[0]], PolyVectorField(1), Z, 1.0, epsilon, delta, label="ou")


def is_linear_model(model: ModelSpec) -> bool:
    return model.N.is_zero()


def require_simulable(model: ModelSpec) -> None:
    """Simulation preconditions: full structure, or a linear (N = 0) oracle model."""
    if is_linear_model(model):
        if not exact_spd(model.A):
            raise ModelError("A must be symmetric positive definite")
        d = model.dim
        if any(model.B[i][j] != -model.B[j][i] for i in range(d) for j in range(d)):
            raise ModelError("B must be skew")
        return
    require_structure(model)


BUILTINS = {
    "lorenz96": build_lorenz96,
    "sabra": build_sabra,
    "triad": build_triad,
    "ou": build_ou,
}


# -- Lyapunov certificate -----------------------------------------------------

@dataclass
class LyapunovCertificate:
    """Drift bound ``(L + eps*delta*Lap) V <= -eps*kappa*V + eps*b`` for ``V = exp(gamma |x|^2)``."""

    gamma: float
    kappa: float
    b: float
    grid_radius: float
    verified_on_grid: bool
    leading_coefficient: float = 0.0
    b_grid: float = 0.0
    b_radial: float = 0.0
    n_nodes: int = 0
    worst_margin: float = 0.0
    checked_pairs: list = field(default_factory=list)

    @property
    def budget(self) -> float:
        """``b/kappa``: the stationary bound on ``E V``."""
        return self.b / self.kappa

    def V(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.exp(self.gamma * np.sum(x * x, axis=-1))


def lyapunov_ratio(model: ModelSpec, gamma: float, x, delta: float) -> np.ndarray:
    """``(L + eps*delta*Lap) V / (eps V)`` for ``V = exp(gamma |x|^2)``.

    The ``B`` and ``N`` contributions vanish identically, so the result does not
    depend on ``eps`` or ``alpha``.
    """
    x = np.asarray(x, dtype=float)
    d = model.dim
    Zf = model.Z_f
    r2 = np.sum(x * x, axis=-1)
    zx = x @ Zf.T if Zf.size else np.zeros(x.shape[:-1] + (0,))
    noise = np.sum(2 * gamma * np.sum(Zf * Zf, axis=1) + 4 * gamma**2 * zx**2, axis=-1)
    reg = delta * (2 * gamma * d + 4 * gamma**2 * r2)
    diss = 2 * gamma * np.einsum("...i,ij,...j->...", x, model.A_f, x)
    return noise + reg - diss


def _grid_nodes(d: int, radius: float, points: int, max_nodes: int = 200_000,
                seed: int = 0) -> np.ndarray:
    if points ** d <= max_nodes:
        axis = np.linspace(-radius, radius, points)
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)
    from scipy.stats import qmc

    sob = qmc.Sobol(d, scramble=True, seed=seed).random(2 ** int(math.ceil(math.log2(max_nodes))))
    nodes = (2 * sob - 1) * radius
    return np.vstack([np.zeros((1, d)), nodes])


def lyapunov_certificate(model: ModelSpec, grid_radius: float, grid_points: int = 21,
                         epsilons: Sequence[float] = (1e-3, 1e-2, 1e-1, 1.0),
                         deltas: Sequence[float] = (0.0, 0.1, 1.0)) -> LyapunovCertificate:
    """Certificate for ``V = exp(gamma |x|^2)`` valid for every eps and every delta in [0, 1].

    ``gamma = lambda_min(A) / (4 (sum|Z_j|^2 + d))`` and ``kappa = gamma * lambda_min(A)``.
    ``b`` is the larger of the grid supremum of ``(ratio + kappa) V`` and a radial
    bound that holds on all of R^d, so the certificate is valid off-grid as well.
    """
    if not exact_spd(model.A):
        raise ModelError("A must be symmetric positive definite")
    if model.N.dot_identity():
        raise ModelError("N(x).x is not identically zero")
    Bx = PolyVectorField.linear(model.B)
    if Bx.dot_identity():
        raise ModelError("Bx.x is not identically zero")

    d = model.dim
    lam = lambda_min(model.A)
    S = model.noise_power
    gamma = lam / (4.0 * (S + d))
    kappa = gamma * lam
    # |x|^2 coefficient of the ratio at delta = 1, bounded via (Z.x)^2 <= |Z|^2 |x|^2
    lead = 4 * gamma**2 * (S + 1.0) - 2 * gamma * lam
    # radial majorant: (c0 - c1 s) e^{gamma s}, s = |x|^2
    c0 = 2 * gamma * (S + d) + kappa
    c1 = -lead
    s_star = c0 / c1 - 1.0 / gamma
    b_radial = c0 if s_star <= 0 else (c1 / gamma) * math.exp(gamma * s_star)

    nodes = _grid_nodes(d, grid_radius, grid_points)
    V = np.exp(gamma * np.sum(nodes * nodes, axis=-1))
    worst = lyapunov_ratio(model, gamma, nodes, 1.0)
    b_grid = float(np.max((worst + kappa) * V))
    b = max(b_grid, b_radial)

    ok = lead < 0
    margin = np.inf
    pairs = []
    for eps in epsilons:
        for dl in deltas:
            lhs = eps * V * lyapunov_ratio(model, gamma, nodes, dl)
            rhs = -eps * kappa * V + eps * b
            slack = rhs - lhs
            scale = eps * (b + kappa * V)
            rel = float(np.min(slack / scale))
            margin = min(margin, rel)
            good = bool(np.all(slack >= -1e-12 * scale))
            pairs.append({"epsilon": eps, "delta": dl, "ok": good, "min_rel_slack": rel})
            ok = ok and good
    return LyapunovCertificate(
        gamma=gamma, kappa=kappa, b=b, grid_radius=float(grid_radius), verified_on_grid=ok,
        leading_coefficient=lead, b_grid=b_grid, b_radial=b_radial, n_nodes=len(nodes),
        worst_margin=float(margin), checked_pairs=pairs,
    )
