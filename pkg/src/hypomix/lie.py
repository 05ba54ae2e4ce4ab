"""Exact Lie brackets and grid certificates of the uniform parabolic Hormander condition."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import sparse

from .model import ModelSpec, require_structure
from .poly import DimensionError, PolyVectorField

MAX_DEPTH = 6
MAX_FIELDS = 5000
TIE_RTOL = 1e-9


class FiltrationBlowup(RuntimeError):
    """The bracket filtration exceeded its configured size cap."""


def lie_bracket(X: PolyVectorField, Y: PolyVectorField) -> PolyVectorField:
    """``[X, Y] = (DY) X - (DX) Y``."""
    if X.dim != Y.dim:
        raise DimensionError(f"dims {X.dim} and {Y.dim} differ")
    return Y.directional(X) - X.directional(Y)


@dataclass(frozen=True)
class TaggedField:
    """A filtration member and the bracket word that produced it.

    ``tag = (j1, j2, ..., jm, i)`` stands for ``[X_j1, [X_j2, ... [X_jm, X_i]]]``
    where index 0 is the drift and 1..k are the noise fields.
    """

    tag: tuple[int, ...]
    field: PolyVectorField

    @property
    def depth(self) -> int:
        return len(self.tag) - 1

    @property
    def order_key(self):
        return (self.depth, self.tag)


def iter_filtration(x0: PolyVectorField, spanning_fields: Sequence[PolyVectorField],
                    depth: int, max_depth: int = MAX_DEPTH, cap: int = MAX_FIELDS):
    """Lazily yield the levels ``V_0 .. V_depth`` of the parabolic bracket filtration.

    ``V_0`` holds the noise fields only; ``V_n`` adds ``[X_j, Y]`` for every
    generator ``X_j`` (drift included) and every ``Y`` new at level ``n-1``.
    Brackets with older members are already present one level earlier, so only
    new members are extended. Zero fields and scalar multiples of earlier
    members are dropped. Each yielded level is a list sorted by ``(depth, tag)``.
    """
    if depth > max_depth:
        raise ValueError(f"depth {depth} exceeds the configured maximum {max_depth}")
    gens = [x0] + list(spanning_fields)
    seen: set = set()
    level = []
    for j, Z in enumerate(spanning_fields, start=1):
        key = Z.direction_key()
        if key is None or key in seen:
            continue
        seen.add(key)
        level.append(TaggedField((j,), Z))
    yield list(level)
    frontier = level
    for n in range(1, depth + 1):
        new = []
        for Y in frontier:
            for j, X in enumerate(gens):
                if j > 0 and X.is_constant() and Y.field.is_constant():
                    continue
                br = lie_bracket(X, Y.field)
                key = br.direction_key()
                if key is None or key in seen:
                    continue
                seen.add(key)
                new.append(TaggedField((j,) + Y.tag, br))
        new.sort(key=lambda t: t.order_key)
        total = len(level) + len(new)
        if total > cap:
            raise FiltrationBlowup(
                f"|V_{n}| = {total} exceeds cap {cap}; reduce depth or raise the cap"
            )
        level = level + new
        yield list(level)
        frontier = new


def generate_filtration(x0: PolyVectorField, spanning_fields: Sequence[PolyVectorField],
                        depth: int, max_depth: int = MAX_DEPTH,
                        cap: int = MAX_FIELDS) -> list[list[TaggedField]]:
    """All levels ``V_0 .. V_depth`` at once; see :func:`iter_filtration`."""
    return list(iter_filtration(x0, spanning_fields, depth, max_depth, cap))


@dataclass
class SpanFailure:
    node: list[float]
    rank: int
    n_fields: int
    message: str = ""

    def __bool__(self):
        return False


@dataclass
class BracketCertificate:
    N0: int
    frame: list[tuple[int, ...]]
    grid_radius: float
    grid_spec: str
    min_abs_det: float
    C0: float
    pointwise_min_abs_det: float = 0.0
    n_nodes: int = 0
    epsilon_pairs_tested: list[tuple[float, float]] = field(default_factory=list)
    uniform_across_eps: bool | None = None
    model_label: str = ""
    per_pair: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        d["frame"] = [list(t) for t in self.frame]
        d["epsilon_pairs_tested"] = [list(p) for p in self.epsilon_pairs_tested]
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BracketCertificate":
        d = json.loads(text)
        d["frame"] = [tuple(t) for t in d["frame"]]
        d["epsilon_pairs_tested"] = [tuple(p) for p in d["epsilon_pairs_tested"]]
        return cls(**d)


def certificate_nodes(d: int, R: float, grid_points: int | None = None,
                      n_random: int = 10_000, seed: int = 12345) -> tuple[np.ndarray, str]:
    """Tensor grid (default 9 per axis) for d <= 5, else scrambled Sobol points plus the origin."""
    if d <= 5:
        n = grid_points or 9
        axis = np.linspace(-R, R, n)
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1), f"tensor:{n}"
    from scipy.stats import qmc

    m = int(math.ceil(math.log2(n_random)))
    pts = (2 * qmc.Sobol(d, scramble=True, seed=seed).random_base2(m) - 1) * R
    return np.vstack([np.zeros((1, d)), pts]), f"sobol:{len(pts)}+origin"


def _greedy_frames(F: np.ndarray, block: int = 4096) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-pivoted Gram-Schmidt at every node.

    ``F`` has shape ``(nodes, d, nfields)`` with columns pre-sorted by
    ``(depth, tag)``. Near-ties (relative ``TIE_RTOL``) resolve to the earliest
    column. Returns chosen indices ``(nodes, d)``, ``|det|`` of the chosen
    columns (recomputed by LU), and the achieved rank per node.
    """
    nodes, d, m = F.shape
    chosen = np.zeros((nodes, d), dtype=np.int64)
    absdet = np.zeros(nodes)
    rank = np.zeros(nodes, dtype=np.int64)
    scale = max(1.0, float(np.abs(F).max(initial=0.0)))
    for s in range(0, nodes, block):
        R = F[s:s + block].copy()
        n = R.shape[0]
        rows = np.arange(n)
        used = np.zeros((n, m), dtype=bool)
        for step in range(d):
            norms = np.sqrt(np.einsum("nim,nim->nm", R, R))
            norms[used] = -1.0
            best = norms.max(axis=1)
            ok = best > 1e-12 * scale
            rank[s:s + n] += ok
            pick = np.argmax(norms >= best[:, None] * (1 - TIE_RTOL), axis=1)
            chosen[s:s + n, step] = pick
            used[rows, pick] = True
            q = R[rows, :, pick] / np.where(ok, best, 1.0)[:, None]
            q[~ok] = 0.0
            proj = np.einsum("ni,nim->nm", q, R)
            R -= q[:, :, None] * proj[:, None, :]
        sub = np.take_along_axis(F[s:s + n], chosen[s:s + n, None, :], axis=2)
        absdet[s:s + n] = np.where(rank[s:s + n] == d, np.abs(np.linalg.det(sub)), 0.0)
    return chosen, absdet, rank


def evaluate_fields(fields: Sequence[PolyVectorField], nodes: np.ndarray,
                    block: int = 4096) -> np.ndarray:
    """Stack field values into ``(nodes, d, nfields)``.

    Monomials are shared across fields: one table per node block, then a
    single sparse product with the stacked coefficients.
    """
    nodes = np.asarray(nodes, dtype=float)
    d = nodes.shape[-1]
    m = len(fields)
    if m == 0:
        return np.zeros((len(nodes), d, 0))
    index: dict[tuple, int] = {}
    rows, cols, vals = [], [], []
    for j, f in enumerate(fields):
        for i, e, c in f.terms():
            rows.append(index.setdefault(e, len(index)))
            cols.append(i * m + j)
            vals.append(float(c))
    out = np.zeros((len(nodes), d * m))
    if not index:
        return out.reshape(len(nodes), d, m)
    expo = np.array(list(index), dtype=np.int64)
    C = sparse.csr_matrix((vals, (rows, cols)), shape=(len(index), d * m))
    maxpow = int(expo.max())
    for s in range(0, len(nodes), block):
        xb = nodes[s:s + block]
        mono = np.ones((len(xb), len(expo)))
        for k in range(d):
            ek = expo[:, k]
            if ek.any():
                powers = np.cumprod(
                    np.concatenate([np.ones((len(xb), 1)), np.repeat(xb[:, k:k + 1], maxpow, 1)], 1),
                    axis=1,
                )
                mono *= powers[:, ek]
        out[s:s + block] = np.asarray((C.T @ mono.T).T)
    return out.reshape(len(nodes), d, m)


def _exact_det(cols: list[list[Fraction]]) -> Fraction:
    """Determinant of a small rational matrix (given by columns) by fraction-exact elimination."""
    M = [list(r) for r in zip(*cols)]
    d = len(M)
    det = Fraction(1)
    for k in range(d):
        piv = next((i for i in range(k, d) if M[i][k] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != k:
            M[k], M[piv] = M[piv], M[k]
            det = -det
        det *= M[k][k]
        for i in range(k + 1, d):
            f = M[i][k] / M[k][k]
            if f:
                M[i] = [a - f * b for a, b in zip(M[i], M[k])]
    return det


def _constant_frame(members: list[TaggedField], d: int) -> tuple[list[int], float] | None:
    """Greedy frame among the constant members, with its exact ``|det|``, or None if they do not span."""
    idx = [i for i, t in enumerate(members) if t.field.is_constant()]
    if len(idx) < d:
        return None
    origin = np.zeros((1, d))
    F = evaluate_fields([members[i].field for i in idx], origin)
    chosen, _, rank = _greedy_frames(F)
    if rank[0] < d:
        return None
    frame = sorted(idx[k] for k in chosen[0])
    zero = [0] * d
    det = _exact_det([members[i].field.evaluate_exact(zero) for i in frame])
    return frame, float(abs(det))


def _frame_key(members: list[TaggedField], cand) -> tuple:
    return (max(members[i].depth for i in cand), [members[i].order_key for i in cand])


def spanning_check(filtration, R: float, grid_points: int | None = None,
                   nodes: np.ndarray | None = None,
                   F: np.ndarray | None = None) -> BracketCertificate | SpanFailure:
    """Grid check that the last level of ``filtration`` spans R^d uniformly on ``[-R, R]^d``.

    ``min_abs_det`` is the worst-node ``|det|`` of the reported frame, so the
    frame alone witnesses ``C0``; the minimum over nodes of the best pointwise
    ``|det|`` is kept as ``pointwise_min_abs_det``. The reported frame is the
    one with the largest worst-node ``|det|`` among the per-node winners and,
    when the constant members already span, the greedy frame of constant
    members (which is then preferred: its determinant is exact and
    independent of x). ``F`` may supply precomputed field values in member
    order.
    """
    members: list[TaggedField] = sorted(filtration[-1], key=lambda t: t.order_key)
    if not members:
        raise ValueError("filtration is empty")
    d = members[0].field.dim
    if nodes is None:
        nodes, spec = certificate_nodes(d, R, grid_points)
    else:
        spec = f"explicit:{len(nodes)}"
    if len(members) < d:
        F0 = evaluate_fields([t.field for t in members], nodes[:1])
        return SpanFailure(nodes[0].tolist(), int(np.linalg.matrix_rank(F0[0])) if members else 0,
                           len(members), f"only {len(members)} fields for dimension {d}")
    if F is None:
        F = evaluate_fields([t.field for t in members], nodes)
    chosen, absdet, rank = _greedy_frames(F)
    if rank.min() < d:
        bad = int(np.argmin(rank))
        return SpanFailure(nodes[bad].tolist(), int(rank[bad]), len(members),
                           f"rank {rank[bad]} < {d} at node {bad}")

    const = _constant_frame(members, d)
    if const is not None:
        best_frame, best_val = const
    else:
        best_frame, best_val, best_key = None, -1.0, None
        for cand in sorted({tuple(sorted(row)) for row in chosen.tolist()}):
            worst = float(np.min(np.abs(np.linalg.det(F[:, :, list(cand)]))))
            key = _frame_key(members, cand)
            if worst > best_val * (1 + TIE_RTOL) or (
                worst >= best_val * (1 - TIE_RTOL) and (best_key is None or key < best_key)
            ):
                best_frame, best_val, best_key = cand, worst, key
    return BracketCertificate(
        N0=len(filtration) - 1,
        frame=[members[i].tag for i in best_frame],
        grid_radius=float(R),
        grid_spec=spec,
        min_abs_det=best_val,
        C0=1.0 / best_val,
        pointwise_min_abs_det=float(absdet.min()),
        n_nodes=len(nodes),
    )


EPS_PAIRS = tuple((Fraction(a), Fraction(b)) for a in ("0", "1/2", "1") for b in ("0", "1/2", "1"))


def drift_field(model: ModelSpec, eps1, eps2) -> PolyVectorField:
    X0 = model.N
    if eps1:
        X0 = X0 + PolyVectorField.linear(model.A).scale(eps1)
    if eps2:
        X0 = X0 + PolyVectorField.linear(model.B).scale(eps2)
    return X0


def certify_drift(model: ModelSpec, X0: PolyVectorField, R: float,
                  max_depth: int = MAX_DEPTH, grid_points: int | None = None,
                  nodes: np.ndarray | None = None, cap: int = MAX_FIELDS):
    """Smallest depth at which the filtration generated by (X0, Z) certifies on the grid.

    The node nearest the origin is probed first at each depth, so levels that are rank
    deficient there cost one evaluation instead of a full grid sweep.
    """
    Zs = [PolyVectorField.constant(z) for z in model.Z]
    if nodes is None:
        nodes, _ = certificate_nodes(model.dim, R, grid_points)
    if all(z.is_zero() for z in Zs):
        return SpanFailure(nodes[0].tolist(), 0, 0, "no noise directions: V_0 is empty")
    probe = nodes[[int(np.argmin(np.einsum("ni,ni->n", nodes, nodes)))]]
    cols: list[np.ndarray] = []
    result = None
    levels = []
    for level in iter_filtration(X0, Zs, max_depth, max_depth=max_depth, cap=cap):
        levels.append(level)
        # members are appended in (depth, tag) order, so cached columns stay aligned
        cols += [None] * (len(level) - len(cols))
        at0 = evaluate_fields([t.field for t in level], probe)[0]
        r0 = int(np.linalg.matrix_rank(at0)) if len(level) else 0
        if r0 < model.dim:
            result = SpanFailure(probe[0].tolist(), r0, len(level),
                                 f"rank {r0} < {model.dim} at the node nearest the origin at depth {len(levels) - 1}")
            continue
        missing = [i for i, c in enumerate(cols) if c is None]
        fresh = evaluate_fields([level[i].field for i in missing], nodes)
        for k, i in enumerate(missing):
            cols[i] = fresh[:, :, k]
        F = np.stack(cols, axis=-1)
        result = spanning_check(levels, R, grid_points, nodes=nodes, F=F)
        if isinstance(result, BracketCertificate):
            return result
    return result


def assumption2_check(model: ModelSpec, R: float, max_depth: int = MAX_DEPTH,
                      grid_points: int | None = None) -> BracketCertificate | SpanFailure:
    """Certify ``{N + e1 A x + e2 B x, Z_1..Z_r}`` for ``(e1, e2)`` in ``{0, 1/2, 1}^2`` and for ``N`` alone.

    Returns the worst certificate (largest C0) annotated with all tested pairs
    and whether frame and constants agreed across them.
    """
    require_structure(model)
    nodes, spec = certificate_nodes(model.dim, R, grid_points)
    results = []
    memo: dict = {}
    runs = [("N", None)] + [(f"{float(a)},{float(b)}", (a, b)) for a, b in EPS_PAIRS]
    for name, pair in runs:
        X0 = model.N if pair is None else drift_field(model, *pair)
        if X0 not in memo:
            memo[X0] = certify_drift(model, X0, R, max_depth, grid_points, nodes=nodes)
        res = copy.copy(memo[X0])
        if isinstance(res, SpanFailure):
            res.message = f"{name}: {res.message}"
            return res
        results.append((name, pair, res))
    worst = max(results, key=lambda t: t[2].C0)[2]
    frames = {tuple(r.frame) for _, _, r in results}
    ref = results[0][2].min_abs_det
    same_const = all(
        r.N0 == results[0][2].N0 and math.isclose(r.min_abs_det, ref, rel_tol=1e-12)
        for _, _, r in results
    )
    out = BracketCertificate(
        N0=max(r.N0 for _, _, r in results),
        frame=list(worst.frame),
        grid_radius=float(R),
        grid_spec=spec,
        min_abs_det=worst.min_abs_det,
        C0=worst.C0,
        pointwise_min_abs_det=min(r.pointwise_min_abs_det for _, _, r in results),
        n_nodes=len(nodes),
        epsilon_pairs_tested=[(float(a), float(b)) for a, b in EPS_PAIRS],
        uniform_across_eps=len(frames) == 1 and same_const,
        model_label=model.label,
        per_pair=[
            {"pair": name, "N0": r.N0, "frame": [list(t) for t in r.frame],
             "min_abs_det": r.min_abs_det, "pointwise_min_abs_det": r.pointwise_min_abs_det}
            for name, _, r in results
        ],
    )
    return out
