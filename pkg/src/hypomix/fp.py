"""Finite-volume Fokker-Planck operators on a box with zero-flux walls.

The forward operator discretises

    div( eps (Z Z^T + delta I) grad f + (eps A x + eps^alpha B x + N(x)) f )

so that column sums vanish (mass conservation) and every off-diagonal entry
is nonnegative (positivity). The backward generator is the exact transpose.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .model import ModelSpec, drift_eval

PECLET_WARN = 2.0
SCHEMES = ("upwind", "hybrid")


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    dim: int
    R: float
    n: int

    def __post_init__(self):
        if not 1 <= self.dim <= 3:
            raise ValueError("grids are limited to d <= 3")
        if self.n < 16:
            raise ValueError("need n >= 16 points per axis")
        if self.R <= 0:
            raise ValueError("box radius must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.R / self.n

    @property
    def size(self) -> int:
        return self.n ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    def axis(self) -> np.ndarray:
        return -self.R + (np.arange(self.n) + 0.5) * self.h

    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis()] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def locate(self, x) -> int:
        """Flat index of the cell containing ``x`` (clamped to the box)."""
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.floor((x + self.R) / self.h).astype(int), 0, self.n - 1)
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def as_dict(self) -> dict:
        return {"dim": self.dim, "R": self.R, "n": self.n}


@dataclass
class DiscreteOperator:
    grid: GridSpec
    matrix: sparse.csr_matrix
    epsilon: float
    delta: float
    model_hash: str
    scheme: str = "hybrid"
    peclet: float = 0.0
    cross_limited: bool = False
    warnings: list[str] = field(default_factory=list)
    face_peclet: float = 0.0
    _shifted: tuple | None = field(default=None, repr=False, compare=False)
    _stationary: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def backward(self) -> sparse.csr_matrix:
        return self.matrix.T.tocsr()

    def release(self) -> None:
        """Drop cached factors (they dominate memory on 3-D grids)."""
        self._shifted = None

    def scaled(self, c: float) -> "DiscreteOperator":
        return DiscreteOperator(self.grid, (self.matrix * c).tocsr(), self.epsilon, self.delta,
                                self.model_hash, self.scheme, self.peclet, self.cross_limited,
                                list(self.warnings), self.face_peclet)

    def norm(self) -> float:
        return float(spla.norm(self.matrix, 1))


def _pair_arrays(grid: GridSpec, shift: np.ndarray):
    """Flat indices ``(i, j)`` of all cell pairs with ``j = i + shift`` inside the box."""
    n, d = grid.n, grid.dim
    ranges = []
    for s in shift:
        lo, hi = max(0, -s), min(n, n - s)
        ranges.append(np.arange(lo, hi))
    mesh = np.meshgrid(*ranges, indexing="ij")
    src = tuple(m.ravel() for m in mesh)
    dst = tuple(m + s for m, s in zip(src, shift))
    return np.ravel_multi_index(src, grid.shape), np.ravel_multi_index(dst, grid.shape), src


def discretize(model: ModelSpec, grid: GridSpec, delta: float | None = None,
               scheme: str = "hybrid") -> DiscreteOperator:
    """Assemble the forward operator on ``grid``.

    ``scheme="upwind"`` takes every drift flux from the upstream cell.
    ``"hybrid"`` (the default) uses central fluxes on faces with cell Peclet
    number at most 2, where they keep the M-matrix property, and upwind
    fluxes elsewhere. It removes the O(h) numerical diffusion wherever the
    physical diffusion allows.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    if model.dim != grid.dim:
        raise ValueError(f"model dim {model.dim} != grid dim {grid.dim}")
    delta = model.delta if delta is None else float(delta)
    if delta < 0:
        raise ValueError("delta must be >= 0")
    eps, d, h = model.epsilon, grid.dim, grid.h
    Zf = model.Z_f
    D = eps * (Zf.T @ Zf + delta * np.eye(d))

    rows, cols, vals = [], [], []

    def exchange(i, j, c_ij, c_ji):
        # flux i -> j carries c_ij f_i - c_ji f_j
        rows.extend([i, i, j, j])
        cols.extend([i, j, i, j])
        vals.extend([-c_ij, c_ji, c_ij, -c_ji])

    # cross diffusion on diagonal neighbours, limited to keep axis terms >= 0
    Dax = np.diag(D).copy()
    off = [(k, l) for k in range(d) for l in range(k + 1, d) if D[k, l] != 0]
    need = np.zeros(d)
    for k, l in off:
        need[k] += abs(D[k, l])
        need[l] += abs(D[k, l])
    scale = 1.0
    limited = False
    for k in range(d):
        if need[k] > Dax[k] + 1e-15:
            scale = min(scale, Dax[k] / need[k] if need[k] else 1.0)
            limited = True
    for k, l in off:
        c = scale * abs(D[k, l])
        Dax[k] -= c
        Dax[l] -= c
        shift = np.zeros(d, dtype=int)
        shift[k] = 1
        shift[l] = 1 if D[k, l] > 0 else -1
        i, j, _ = _pair_arrays(grid, shift)
        w = np.full(len(i), c / h ** 2)
        exchange(i, j, w, w)
    Dax = np.maximum(Dax, 0.0)

    peclet_face = 0.0
    umax = 0.0
    axis = grid.axis()
    for k in range(d):
        shift = np.zeros(d, dtype=int)
        shift[k] = 1
        i, j, src = _pair_arrays(grid, shift)
        pts = np.stack([axis[s] for s in src], axis=-1)
        pts[:, k] += 0.5 * h
        u = drift_eval(model, pts)[:, k]
        umax = max(umax, float(np.abs(u).max(initial=0.0)))
        Dk = Dax[k]
        up, um = np.maximum(u, 0.0), np.maximum(-u, 0.0)
        c_ij = Dk / h + up
        c_ji = Dk / h + um
        if scheme == "hybrid" and Dk > 0:
            central = np.abs(u) * h <= 2.0 * Dk
            c_ij = np.where(central, Dk / h + 0.5 * u, c_ij)
            c_ji = np.where(central, Dk / h - 0.5 * u, c_ji)
        if Dk > 0:
            peclet_face = max(peclet_face, float((np.abs(u) * h / Dk).max(initial=0.0)))
        elif np.any(u != 0):
            peclet_face = math.inf
        exchange(i, j, c_ij / h, c_ji / h)

    N = grid.size
    L = sparse.coo_matrix(
        (np.concatenate([np.ravel(v) for v in vals]) if vals else np.zeros(0),
         (np.concatenate([np.ravel(r) for r in rows]) if rows else np.zeros(0, int),
          np.concatenate([np.ravel(c) for c in cols]) if cols else np.zeros(0, int))),
        shape=(N, N),
    ).tocsr()
    L.sum_duplicates()

    zz = np.diag(Zf.T @ Zf) if len(Zf) else np.zeros(d)
    denom = 2 * eps * float(zz.min()) + eps * delta
    peclet = h * umax / denom if denom > 0 else (math.inf if umax > 0 else 0.0)
    warnings = []
    if peclet > PECLET_WARN:
        warnings.append(f"cell Peclet number {peclet:.3g} exceeds {PECLET_WARN}")
    if limited:
        warnings.append("cross-diffusion limited to keep the M-matrix property")
    return DiscreteOperator(grid, L, eps, delta, model.model_hash(), scheme, peclet, limited,
                            warnings, peclet_face)


# -- linear solves ------------------------------------------------------------------

def nested_dissection(shape, leaf: int = 8) -> np.ndarray:
    """Geometric nested-dissection ordering of a structured grid (separators last)."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    out = []

    def rec(block):
        if block.size <= leaf ** block.ndim or max(block.shape) < 3:
            out.append(block.ravel())
            return
        ax = int(np.argmax(block.shape))
        mid = block.shape[ax] // 2
        sl = [slice(None)] * block.ndim
        sl[ax] = slice(0, mid)
        rec(block[tuple(sl)])
        sl[ax] = slice(mid + 1, None)
        rec(block[tuple(sl)])
        sl[ax] = mid
        out.append(block[tuple(sl)].ravel())

    rec(idx)
    return np.concatenate(out)


class SparseSolver:
    """LU of a column diagonally dominant matrix in nested-dissection order.

    Column dominance makes elimination without pivoting stable, and keeping
    the diagonal pivots preserves the ordering's low fill.
    """

    def __init__(self, M, shape):
        self.perm = nested_dissection(shape)
        Mp = M.tocsr()[self.perm][:, self.perm].tocsc()
        try:
            self.lu = spla.splu(Mp, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"sparse LU failed: {exc}") from exc

    def solve(self, b, trans: str = "N"):
        b = np.asarray(b, dtype=float)
        y = self.lu.solve(np.ascontiguousarray(b[self.perm]), trans=trans)
        out = np.empty_like(y)
        out[self.perm] = y
        return out


def _shifted_solver(op: "DiscreteOperator") -> tuple[SparseSolver, float]:
    """Factor ``L - sigma I`` once per operator; ``sigma`` is tiny and positive."""
    if op._shifted is None:
        sigma = 1e-8 * op.norm()
        N = op.matrix.shape[0]
        op._shifted = (SparseSolver(op.matrix - sigma * sparse.identity(N, format="csr"), op.grid.shape),
                       sigma)
    return op._shifted


# -- stationary state -----------------------------------------------------------

def stationary_solve(op: DiscreteOperator, tol: float = 1e-8, max_iter: int = 50) -> np.ndarray:
    """Null vector of the forward operator by shifted inverse iteration, normalised to unit mass."""
    if op._stationary is not None:
        return op._stationary.copy()
    L = op.matrix
    N = L.shape[0]
    nrm = op.norm()
    solver, _ = _shifted_solver(op)
    vol = op.grid.cell_volume
    f = np.full(N, 1.0 / (N * vol))
    history = []
    for _ in range(max_iter):
        f = solver.solve(f)
        s = f.sum() * vol
        if not np.isfinite(s) or s == 0:
            raise SolverError("inverse iteration broke down")
        f /= s
        res = float(np.linalg.norm(L @ f) / (nrm * np.linalg.norm(f)))
        history.append(res)
        if res <= tol:
            break
    else:
        raise SolverError(f"inverse iteration stagnated; residual history {history}")
    fmax = float(np.abs(f).max())
    if f.min() < -1e-10 * fmax:
        raise SolverError(f"stationary vector has negative entries down to {f.min():.3g}")
    f = np.maximum(f, 0.0)
    f /= f.sum() * vol
    op._stationary = f
    return f.copy()


# -- spectrum ---------------------------------------------------------------------

@dataclass
class GapResult:
    gap: float
    eigenvalues: np.ndarray
    residuals: np.ndarray


def spectral_gap(op: DiscreteOperator, k: int = 12, tol: float = 1e-10) -> GapResult:
    """``-max Re(lambda)`` over the nonzero eigenvalues nearest 0 (shift-invert Arnoldi on the backward generator)."""
    G = op.backward
    N = G.shape[0]
    k = min(k, N - 2)
    solver, sigma = _shifted_solver(op)
    # (L^T - sigma I)^{-1} is the transposed solve with the same factors
    opinv = spla.LinearOperator((N, N), matvec=lambda v: solver.solve(v, trans="T"), dtype=float)
    try:
        vals, vecs = spla.eigs(G, k=k, sigma=sigma, which="LM", OPinv=opinv, tol=tol)
    except spla.ArpackNoConvergence as exc:
        raise SolverError(f"Arnoldi did not converge; Ritz values {exc.eigenvalues}") from exc
    res = np.array([np.linalg.norm(G @ vecs[:, i] - vals[i] * vecs[:, i]) for i in range(len(vals))])
    zero = np.argmin(np.abs(vals))
    rest = np.delete(vals, zero)
    if len(rest) == 0:
        raise SolverError("no nonzero eigenvalue found")
    order = np.argsort(-rest.real)
    return GapResult(float(-rest.real.max()), rest[order], np.delete(res, zero)[order])


# -- evolution ----------------------------------------------------------------------

@dataclass
class Evolution:
    values: np.ndarray
    undershoot: bool
    mass_drift: float


class Propagator:
    """Crank-Nicolson stepping with a fixed step, two implicit-Euler half-steps at start.

    ``backward=True`` evolves observables with the transposed generator.
    """

    def __init__(self, op: DiscreteOperator, dt: float, backward: bool = False):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.op, self.dt, self.backward = op, dt, backward
        L = op.matrix
        I = sparse.identity(L.shape[0], format="csr")
        self._cn = SparseSolver(I - 0.5 * dt * L, op.grid.shape)
        self._rhs = (I + 0.5 * dt * L).tocsr()
        self._rhs_t = self._rhs.T.tocsr()
        self._trans = "T" if backward else "N"

    def _cn_step(self, f):
        rhs = (self._rhs_t if self.backward else self._rhs) @ f
        return self._cn.solve(rhs, trans=self._trans)

    def _euler_half(self, f):
        # I - (dt/2) L is exactly the CN left-hand side
        return self._cn.solve(f, trans=self._trans)

    def run(self, f0, steps: int, record_every: int | None = None):
        """Advance ``steps`` steps; the first one is replaced by two implicit-Euler half-steps."""
        f = np.array(f0, dtype=float)
        out = [f.copy()] if record_every else None
        for s in range(steps):
            if s == 0:
                f = self._euler_half(self._euler_half(f))
            else:
                f = self._cn_step(f)
            if record_every and (s + 1) % record_every == 0:
                out.append(f.copy())
        return (f, out) if record_every else f


def semigroup_apply(op: DiscreteOperator, f0, t: float, steps: int | None = None) -> Evolution:
    """Forward density evolution to time ``t``."""
    f0 = np.asarray(f0, dtype=float)
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return Evolution(f0.copy(), False, 0.0)
    if steps is None:
        steps = default_steps(op, t)
    prop = Propagator(op, t / steps)
    f = prop.run(f0, steps)
    vol = op.grid.cell_volume
    m0 = f0.sum(axis=0) * vol
    drift = float(np.max(np.abs(f.sum(axis=0) * vol - m0)))
    under = bool(np.min(f) < -1e-10 * np.max(np.abs(f0)))
    return Evolution(f, under, drift)


def default_steps(op: DiscreteOperator, t: float, per_unit: float = 20.0) -> int:
    """About ``per_unit`` steps per unit of rescaled time ``eps t``, at least 20."""
    return max(20, int(math.ceil(per_unit * op.epsilon * t)))


def delta_vector(grid: GridSpec, x) -> np.ndarray:
    f = np.zeros(grid.size)
    f[grid.locate(x)] = 1.0 / grid.cell_volume
    return f


def tv_overlap(op: DiscreteOperator, x, y, t: float, steps: int | None = None) -> float:
    """``sum |p_t(x, .) - p_t(y, .)| h^d`` from two discrete delta initial conditions."""
    g = op.grid
    i, j = g.locate(x), g.locate(y)
    if i == j:
        return 0.0
    F0 = np.stack([delta_vector(g, x), delta_vector(g, y)], axis=1)
    ev = semigroup_apply(op, F0, t, steps)
    return float(np.abs(ev.values[:, 0] - ev.values[:, 1]).sum() * g.cell_volume)


def tv_matrix(op: DiscreteOperator, points, t: float, steps: int | None = None) -> np.ndarray:
    """Pairwise TV distances between the laws started at each of ``points``."""
    g = op.grid
    F0 = np.stack([delta_vector(g, p) for p in points], axis=1)
    P = semigroup_apply(op, F0, t, steps).values
    k = len(points)
    out = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            out[a, b] = out[b, a] = np.abs(P[:, a] - P[:, b]).sum() * g.cell_volume
    return out


# -- collapse and regularisation ------------------------------------------------------

@dataclass
class CollapseReport:
    s_grid: np.ndarray
    curves: dict
    defect: float
    worst_pair: tuple | None
    monotone: dict

    def as_dict(self) -> dict:
        return {
            "s_grid": self.s_grid.tolist(),
            "curves": {str(k): v.tolist() for k, v in self.curves.items()},
            "defect": self.defect,
            "worst_pair": list(self.worst_pair) if self.worst_pair else None,
            "monotone": {str(k): v for k, v in self.monotone.items()},
        }


def decay_curve(op: DiscreteOperator, f_obs, s_grid, mu=None, substeps: int = 4) -> np.ndarray:
    """``D(s) = |P_{s/eps} f - mu(f)|_{L2(mu)} / |f - mu(f)|_inf`` on a uniform grid of rescaled times."""
    s_grid = np.asarray(s_grid, dtype=float)
    ds = np.diff(s_grid)
    if len(ds) and not np.allclose(ds, ds[0], rtol=1e-9):
        raise ValueError("s_grid must be uniform")
    vol = op.grid.cell_volume
    if mu is None:
        mu = stationary_solve(op)
    f = np.asarray(f_obs, dtype=float)
    mean = float((f * mu).sum() * vol)
    g0 = f - mean
    sup = float(np.abs(g0).max())
    if sup == 0:
        return np.zeros(len(s_grid))

    def l2(g):
        c = float((g * mu).sum() * vol)
        return math.sqrt(max(float(((g - c) ** 2 * mu).sum() * vol), 0.0))

    out = [l2(g0) / sup]
    if len(s_grid) > 1:
        dt = ds[0] / op.epsilon / substeps
        prop = Propagator(op, dt, backward=True)
        _, snaps = prop.run(g0, substeps * (len(s_grid) - 1), record_every=substeps)
        out = [l2(g) / sup for g in snaps]
    return np.array(out)


def collapse_check(op_list, f_obs, s_max: float = 4.0, n_s: int = 41, substeps: int = 4) -> CollapseReport:
    """Compare decay curves across operators on common rescaled times ``s = eps t``."""
    s_grid = np.linspace(0.0, s_max, n_s)
    curves, mono = {}, {}
    for op in op_list:
        c = decay_curve(op, f_obs, s_grid, substeps=substeps)
        curves[op.epsilon] = c
        mono[op.epsilon] = bool(np.all(np.diff(c) <= 1e-12 * max(1.0, c[0])))
    defect, worst = 0.0, None
    keys = list(curves)
    for a in range(len(keys)):
        for b in range(a + 1, len(keys)):
            dv = float(np.abs(curves[keys[a]] - curves[keys[b]]).max())
            if dv > defect or worst is None:
                defect, worst = dv, (keys[a], keys[b])
    return CollapseReport(s_grid, curves, defect, worst, mono)


def parreg_diagnostic(op: DiscreteOperator, trials: int = 20, seed: int = 0, blocks: int = 4,
                      mu=None, steps: int | None = None) -> float:
    """Max over random +-1 observables of ``|P_{1/eps} f|_{L_inf(B_{R/2})} / |f|_{L2(mu)}``.

    The observables are constant on ``blocks^d`` coarse blocks of cells.
    """
    g = op.grid
    if mu is None:
        mu = stationary_solve(op)
    vol = g.cell_volume
    rng = np.random.default_rng(seed)
    block_of = np.minimum((np.arange(g.n) * blocks) // g.n, blocks - 1)
    mesh = np.meshgrid(*([block_of] * g.dim), indexing="ij")
    flat_block = np.ravel_multi_index(tuple(m.ravel() for m in mesh), (blocks,) * g.dim)
    F = np.empty((g.size, trials))
    for k in range(trials):
        signs = rng.choice([-1.0, 1.0], size=blocks ** g.dim)
        F[:, k] = signs[flat_block]
    t = 1.0 / op.epsilon
    steps = steps or default_steps(op, t)
    P = Propagator(op, t / steps, backward=True).run(F, steps)
    inner = np.linalg.norm(g.centers(), axis=1) <= g.R / 2
    num = np.abs(P[inner]).max(axis=0)
    den = np.sqrt((F ** 2 * mu[:, None]).sum(axis=0) * vol)
    return float((num / den).max())


# -- delta limit ---------------------------------------------------------------------

@dataclass
class DeltaTable:
    deltas: list[float]
    l1: list[float]
    monotone: bool

    def as_dict(self) -> dict:
        return {"deltas": self.deltas, "l1": self.l1, "monotone": self.monotone}


def delta_limit_check(model: ModelSpec, grid: GridSpec, eps: float, delta_list,
                      scheme: str = "hybrid", tol: float = 1e-10) -> DeltaTable:
    """``|f_{eps,delta} - f_{eps,0}|_{L1}`` along a decreasing list ending in 0."""
    deltas = [float(v) for v in delta_list]
    if any(b > a for a, b in zip(deltas, deltas[1:])) or deltas[-1] != 0:
        raise ValueError("delta_list must be decreasing and end with 0")
    m = model.with_params(epsilon=eps)
    sols = [stationary_solve(discretize(m, grid, dlt, scheme)) for dlt in deltas]
    ref = sols[-1]
    l1 = [float(np.abs(s - ref).sum() * grid.cell_volume) for s in sols]
    mono = all(b < a + tol for a, b in zip(l1, l1[1:]))
    return DeltaTable(deltas, l1, mono)


# -- truncation ---------------------------------------------------------------------------

@dataclass
class TruncationProbe:
    R: float
    R_wide: float
    l1_inner: float
    mass_outside: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def truncation_probe(model: ModelSpec, grid: GridSpec, scheme: str = "hybrid") -> TruncationProbe:
    """Compare stationary densities on ``grid`` and on a box 1.25x wider with the same cell width.

    ``l1_inner`` is the L1 distance over the original box; ``mass_outside`` is
    the wide solution's mass beyond it. ``grid.n`` must be divisible by 8.
    """
    if grid.n % 8:
        raise ValueError("truncation probe needs n divisible by 8 to keep the cell width")
    pad = grid.n // 8
    wide = GridSpec(grid.dim, 1.25 * grid.R, grid.n + 2 * pad)
    f = stationary_solve(discretize(model, grid, scheme=scheme))
    fw = stationary_solve(discretize(model, wide, scheme=scheme)).reshape(wide.shape)
    inner = fw[(slice(pad, pad + grid.n),) * grid.dim].ravel()
    vol = grid.cell_volume
    return TruncationProbe(grid.R, wide.R, float(np.abs(inner - f).sum() * vol),
                           float(1.0 - inner.sum() * vol))


# -- persistence ------------------------------------------------------------------------

_MAGIC = b"HYPOMIXG"


def write_grid_values(path, grid: GridSpec, values, meta: dict | None = None) -> Path:
    """Binary container: magic, header length, JSON header, float64 payload in row-major order."""
    values = np.ascontiguousarray(values, dtype="<f8")
    header = json.dumps({"grid": grid.as_dict(), "shape": list(values.shape), "meta": meta or {}},
                        sort_keys=True).encode()
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(values.tobytes())
    return path


def read_grid_values(path) -> tuple[GridSpec, np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError("not a grid container")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    vals = np.frombuffer(raw[16 + hlen:], dtype="<f8").reshape(header["shape"]).copy()
    return GridSpec(**header["grid"]), vals, header["meta"]


def grid_csv(grid: GridSpec, values) -> str:
    lines = [",".join([f"x{k + 1}" for k in range(grid.dim)] + ["value"])]
    for c, v in zip(grid.centers(), np.ravel(values)):
        lines.append(",".join(repr(float(t)) for t in c) + f",{float(v)!r}")
    return "\n".join(lines) + "\n"
