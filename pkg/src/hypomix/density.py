"""Histogram estimates of stationary densities and their tail/positivity diagnostics."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

EXP_CLIP = 700.0


@dataclass
class DensityEstimate:
    """Histogram on ``[-R, R]^d`` (``d <= 3``) or all 2-D marginals (``d > 3``).

    ``values`` integrate to the fraction of samples inside the box; for
    marginals, ``values`` maps ``(i, j)`` to a 2-D array.
    """

    box_radius: float
    bins: int
    dim: int
    counts: np.ndarray | dict
    values: np.ndarray | dict
    sample_count: int
    inside_fraction: float
    epsilon: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def full_grid(self) -> bool:
        return self.dim <= 3

    @property
    def width(self) -> float:
        return 2.0 * self.box_radius / self.bins

    @property
    def cell_volume(self) -> float:
        return self.width ** min(self.dim, 3 if self.full_grid else 2)

    @property
    def out_fraction(self) -> float:
        return 1.0 - self.inside_fraction

    def centers(self) -> np.ndarray:
        """Cell centres with shape ``bins^k x k`` in C order (full grid only)."""
        if not self.full_grid:
            raise ValueError("cell centres are only defined for full-grid estimates")
        axis = -self.box_radius + (np.arange(self.bins) + 0.5) * self.width
        mesh = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.full_grid:
            cols = [f"x{k + 1}" for k in range(self.dim)]
            buf.write(",".join(cols + ["f"]) + "\n")
            for c, v in zip(self.centers(), np.ravel(self.values)):
                buf.write(",".join(repr(float(t)) for t in c) + f",{float(v)!r}\n")
        else:
            buf.write("i,j,xi,xj,f\n")
            axis = -self.box_radius + (np.arange(self.bins) + 0.5) * self.width
            for (i, j), arr in sorted(self.values.items()):
                for a in range(self.bins):
                    for b in range(self.bins):
                        buf.write(f"{i + 1},{j + 1},{axis[a]!r},{axis[b]!r},{float(arr[a, b])!r}\n")
        return buf.getvalue()


def estimate_density(samples, R: float, bins: int = 40, epsilon: float | None = None,
                     check_size: bool = True) -> DensityEstimate:
    """Histogram density on the box ``[-R, R]^d``."""
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty (n, d) sample matrix")
    n, d = X.shape
    if check_size and n < 10 * bins ** min(d, 2):
        raise ValueError(f"need at least {10 * bins ** min(d, 2)} samples for {bins} bins, got {n}")
    edges = np.linspace(-R, R, bins + 1)
    h = 2.0 * R / bins
    if d <= 3:
        counts, _ = np.histogramdd(X, bins=[edges] * d)
        inside = counts.sum()
        values = counts / (n * h ** d)
    else:
        counts, values = {}, {}
        inside_all = np.all(np.abs(X) <= R, axis=1)
        inside = float(inside_all.sum())
        for i, j in combinations(range(d), 2):
            c, _, _ = np.histogram2d(X[:, i], X[:, j], bins=[edges, edges])
            counts[(i, j)] = c
            values[(i, j)] = c / (n * h * h)
    return DensityEstimate(R, bins, d, counts, values, n, float(inside) / n, epsilon)


@dataclass
class TailFit:
    lambda_hat: float
    r_squared: float
    radii: np.ndarray
    log_max: np.ndarray
    gaussian: bool

    def as_dict(self) -> dict:
        return {"lambda_hat": self.lambda_hat, "r_squared": self.r_squared,
                "gaussian": self.gaussian, "shells": len(self.radii)}


def shell_maxima(dens: DensityEstimate, r_min: float, r_max: float | None = None,
                 width: float | None = None, min_count: int = 20):
    """Radii and log maxima of the density over radial shells.

    Each shell is split into orthants and the maximum is taken over orthant
    averages. The maximum over single cells is biased upward by roughly
    ``sqrt(2 log M / count)`` for ``M`` cells per shell, which grows with the
    radius and flattens the tail; pooling keeps that term small while still
    resolving anisotropy at orthant scale. The reported radius is the mean cell
    radius of the winning orthant, which needs ``min_count`` hits.
    """
    c = dens.centers()
    rad = np.linalg.norm(c, axis=1)
    orthant = (c >= 0).astype(int) @ (1 << np.arange(dens.dim))
    r_max = dens.box_radius if r_max is None else r_max
    width = dens.width if width is None else width
    vals = np.ravel(dens.values)
    cnt = np.ravel(dens.counts)
    radii, logs = [], []
    lo = r_min
    while lo + width <= r_max + 1e-12:
        shell = (rad >= lo) & (rad < lo + width)
        best = None
        for o in np.unique(orthant[shell]):
            m = shell & (orthant == o)
            v = float(vals[m].mean())
            if best is None or v > best[0]:
                best = (v, float(rad[m].mean()), float(cnt[m].sum()))
        if best is not None and best[2] >= min_count:
            radii.append(best[1])
            logs.append(math.log(best[0]))
        lo += width
    return np.array(radii), np.array(logs)


def gaussian_tail_fit(dens: DensityEstimate, r_min: float, r_max: float | None = None,
                      min_count: int = 20, r2_threshold: float = 0.95) -> TailFit:
    """Fit ``log max_shell f = c - lambda r^2`` beyond ``r_min``."""
    if not dens.full_grid:
        raise ValueError("tail fits need a full-grid estimate")
    radii, logs = shell_maxima(dens, r_min, r_max, min_count=min_count)
    if len(radii) < 4:
        raise ValueError(f"only {len(radii)} occupied shells beyond r = {r_min}; need 4")
    x = radii ** 2
    slope, icpt = np.polyfit(x, logs, 1)
    fit = slope * x + icpt
    ss_res = float(((logs - fit) ** 2).sum())
    ss_tot = float(((logs - logs.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    lam = float(-slope)
    return TailFit(lam, r2, radii, logs, bool(r2 >= r2_threshold and lam > 0))


@dataclass
class LowerBound:
    value: float
    table: list[dict]
    spread: float | None

    def as_dict(self) -> dict:
        return {"value": self.value, "spread": self.spread, "table": self.table}


def compact_lowerbound(dens_list, R_inner: float) -> LowerBound:
    """``min_eps inf_{B(R_inner)} f_hat`` with one row per estimate."""
    table = []
    for dens in dens_list:
        if not dens.full_grid:
            raise ValueError("lower bounds need full-grid estimates")
        c = dens.centers()
        vals = np.ravel(dens.values)
        inner = np.linalg.norm(c, axis=1) <= R_inner
        if not inner.any():
            raise ValueError(f"no cell centre lies in the ball of radius {R_inner}")
        k = np.flatnonzero(inner)[np.argmin(vals[inner])]
        row = {"epsilon": dens.epsilon, "inf": float(vals[k]), "cell": c[k].tolist()}
        if vals[k] == 0:
            row["empty_cell"] = True
        table.append(row)
    infs = [r["inf"] for r in table]
    low = min(infs)
    spread = max(infs) / low if low > 0 else None
    return LowerBound(low, table, spread)


def exp_moment(samples, gamma: float, n_boot: int = 200, seed: int = 0,
               level: float = 0.95) -> tuple[float, tuple[float, float], int]:
    """``mean exp(gamma |x|^2)`` with a percentile bootstrap interval and the clip count."""
    X = np.asarray(samples, dtype=float)
    if gamma == 0:
        return 1.0, (1.0, 1.0), 0
    z = gamma * np.einsum("ij,ij->i", X, X)
    clipped = int((z > EXP_CLIP).sum())
    v = np.exp(np.minimum(z, EXP_CLIP))
    est = float(v.mean())
    rng = np.random.default_rng(seed)
    boots = np.array([v[rng.integers(0, len(v), len(v))].mean() for _ in range(n_boot)])
    a = (1 - level) / 2
    return est, (float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a))), clipped


def integrated_autocorr_time(series, c: float = 5.0) -> float:
    """Sokal's self-consistent window estimate, in units of the sampling interval."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = len(x)
    if n < 4 or not np.any(x):
        return 1.0
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 1.0
    for m in range(1, n):
        tau = 1.0 + 2.0 * acf[1:m + 1].sum()
        if m >= c * tau:
            break
    return max(float(tau), 1.0)


def reflection_test(dens: DensityEstimate, signs) -> dict:
    """Chi-square comparison of a full-grid histogram with its image under ``x -> signs * x``."""
    signs = np.asarray(signs)
    counts = np.asarray(dens.counts)
    flipped = counts
    for k, s in enumerate(signs):
        if s < 0:
            flipped = np.flip(flipped, axis=k)
    a, b = counts.ravel(), flipped.ravel()
    keep = (a + b) > 0
    # each unordered pair of mirror cells appears twice
    chi2 = float(((a[keep] - b[keep]) ** 2 / (a[keep] + b[keep])).sum()) / 2
    dof = max(int(keep.sum()) // 2, 1)
    from scipy.stats import chi2 as chi2_dist

    return {"chi2": chi2, "dof": dof, "p_value": float(chi2_dist.sf(chi2, dof))}


def summary_json(fits: dict, lower: LowerBound | None = None) -> str:
    out = {"tail_fits": {str(k): v.as_dict() for k, v in fits.items()}}
    if lower is not None:
        out["lower_bound"] = lower.as_dict()
    return json.dumps(out, indent=2, sort_keys=True)
