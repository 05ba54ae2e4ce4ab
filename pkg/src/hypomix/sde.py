"""Euler-Maruyama ensembles with per-trajectory counter-based noise.

Trajectories are processed in fixed chunks of ``CHUNK``; each chunk writes its
own partial sums and the chunks are reduced in index order, so the number of
worker threads never changes a single bit of the output.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numba as nb
import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .model import ModelError, ModelSpec, LyapunovCertificate, drift_eval, lambda_max, lambda_min, require_simulable
from .rng import fill_normals, split_seed

CHUNK = 256
EXP_CLIP = 700.0
EXPLODE_FRACTION = 1e-3
WORKERS_ENV = "HYPOMIX_WORKERS"


class SimulationError(RuntimeError):
    pass


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


@dataclass(frozen=True)
class SimConfig:
    """Run parameters. With ``rescaled_time`` the times ``dt``, ``t_final`` and
    ``burn_in`` are in units of ``s = eps * t`` and converted on use.

    ``initial`` is a point, ``None`` for the origin, or ``"stationary-restart"``
    (pass the earlier run to :func:`run_ensemble`). ``sample_stride > 0`` stores
    the state every that many steps after burn-in, for density estimation.
    """

    dt: float
    t_final: float
    n_traj: int = 1000
    master_seed: int = 0
    burn_in: float = 0.0
    record_stride: int = 1
    gamma_exp: float = 0.0
    initial: tuple | str | None = None
    r_bound: float | None = None
    rescaled_time: bool = False
    sample_stride: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.t_final < 0:
            raise ValueError("dt must be > 0 and t_final >= 0")
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.gamma_exp < 0:
            raise ValueError("gamma_exp must be >= 0")
        if self.burn_in < 0 or self.burn_in > self.t_final:
            raise ValueError("burn_in must lie in [0, t_final]")
        if isinstance(self.initial, str) and self.initial != "stationary-restart":
            raise ValueError(f"unknown initial condition {self.initial!r}")
        if self.initial is not None and not isinstance(self.initial, str):
            object.__setattr__(self, "initial", tuple(float(v) for v in self.initial))

    def physical(self, epsilon: float) -> tuple[float, float, float]:
        """``(dt, t_final, burn_in)`` in the unscaled time of the SDE."""
        k = 1.0 / epsilon if self.rescaled_time else 1.0
        return self.dt * k, self.t_final * k, self.burn_in * k

    def steps(self, epsilon: float) -> tuple[int, int]:
        dt, t_final, burn = self.physical(epsilon)
        return int(round(t_final / dt)), int(math.ceil(burn / dt - 1e-9))

    def as_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.initial, tuple):
            d["initial"] = list(self.initial)
        return d


# -- step-size guard ----------------------------------------------------------

def nonlinear_op_norm(model: ModelSpec, n_dirs: int = 2048) -> float:
    """``sup_{|x| = 1} |N(x)|`` by quasi-random search plus local polishing."""
    if model.N.is_zero():
        return 0.0
    d = model.dim
    pts = qmc.Sobol(d, scramble=True, seed=7).random(n_dirs) * 2 - 1
    pts = np.vstack([pts, np.eye(d), -np.eye(d)])
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    vals = np.linalg.norm(model.N(pts), axis=1)

    def neg(y):
        y = y / max(np.linalg.norm(y), 1e-300)
        return -float(np.linalg.norm(model.N(y)))

    best = float(vals.max())
    for i in np.argsort(vals)[-4:]:
        res = minimize(neg, pts[i], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12})
        best = max(best, -float(res.fun))
    return best


def default_r_bound(model: ModelSpec, x0=None) -> float:
    rms = math.sqrt(max(model.noise_power + model.delta * model.dim, 1.0) / lambda_min(model.A))
    r0 = float(np.linalg.norm(x0)) if x0 is not None else 0.0
    return 3.0 * rms + r0


def dt_max(model: ModelSpec, r_bound: float) -> float:
    """``0.1 / (eps lmax(A) + eps^alpha |B| + p |N|_op r^(p-1))``."""
    eps = model.epsilon
    p = model.degree or 0
    nb_ = float(np.linalg.norm(model.B_f, 2))
    denom = eps * lambda_max(model.A) + eps ** model.alpha * nb_
    if p:
        denom += p * nonlinear_op_norm(model) * r_bound ** (p - 1)
    return 0.1 / denom


# -- single step --------------------------------------------------------------

def step_em(model: ModelSpec, x, dt: float, gaussians) -> np.ndarray:
    """One Euler-Maruyama step driven by ``r`` (plus ``d`` when delta > 0) given normals."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(gaussians, dtype=float)
    r, d = model.r, model.dim
    need = r + (d if model.delta > 0 else 0)
    if g.shape[-1] < need:
        raise ValueError(f"need {need} gaussians, got {g.shape[-1]}")
    eps = model.epsilon
    out = x + drift_eval(model, x) * dt
    if r:
        out = out + math.sqrt(2 * eps * dt) * (g[..., :r] @ model.Z_f)
    if model.delta > 0:
        out = out + math.sqrt(2 * eps * model.delta * dt) * g[..., r:r + d]
    if not np.all(np.isfinite(out)):
        raise SimulationError("non-finite state: trajectory exploded")
    return out


# -- compiled kernel ----------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _run_chunk(t0, t1, X0, lin, comp, coef, fac, Zt, A, sq_noise, sq_delta, dt,
               n_steps, stride, burn_steps, gamma, k0, k1, start_step, sample_stride,
               rec_sum, rec_sq, rec_cnt, clip, ends, exploded, win_q, win_e, samples):
    d = X0.shape[1]
    r = Zt.shape[1]
    nd = d if sq_delta > 0.0 else 0
    ng = r + nd
    g = np.empty(max(ng, 1))
    x = np.empty(d)
    f = np.empty(d)
    nterms = coef.shape[0]
    n_samp = samples.shape[1]
    for i in range(t0, t1):
        li = i - t0
        for k in range(d):
            x[k] = X0[li, k]
        alive = True
        sq_acc = 0.0
        se_acc = 0.0
        n_win = 0
        n_stored = 0
        next_rec = 0
        next_sample = burn_steps if sample_stride > 0 else -1
        for s in range(n_steps + 1):
            if s > 0:
                for a in range(d):
                    acc = 0.0
                    for b in range(d):
                        acc += lin[a, b] * x[b]
                    f[a] = -acc
                for t in range(nterms):
                    m = coef[t]
                    for j in range(fac.shape[1]):
                        if fac[t, j] >= 0:
                            m *= x[fac[t, j]]
                    f[comp[t]] -= m
                if ng > 0:
                    fill_normals(g, ng, start_step + s, i, k0, k1)
                norm = 0.0
                for a in range(d):
                    v = x[a] + f[a] * dt
                    for j in range(r):
                        v += sq_noise * Zt[a, j] * g[j]
                    if nd > 0:
                        v += sq_delta * g[r + a]
                    x[a] = v
                    norm += v * v
                # NaN fails the comparison too
                if not norm < 1e300:
                    alive = False
                    exploded[li] = True
                    break
            at_rec = s == next_rec
            in_win = s >= burn_steps
            if not (at_rec or in_win):
                continue
            e = 0.0
            q = 0.0
            for a in range(d):
                e += x[a] * x[a]
                acc = 0.0
                for b in range(d):
                    acc += A[a, b] * x[b]
                q += x[a] * acc
            if in_win:
                sq_acc += q
                se_acc += e
                n_win += 1
                if s == next_sample and n_stored < n_samp:
                    for a in range(d):
                        samples[li, n_stored, a] = x[a]
                    n_stored += 1
                    next_sample += sample_stride
            if at_rec:
                k = s // stride
                next_rec += stride
                z = gamma * e
                if z > 700.0:
                    z = 700.0
                    clip[0] += 1
                v = math.exp(z)
                rec_sum[k, 0] += e
                rec_sum[k, 1] += q
                rec_sum[k, 2] += v
                rec_sq[k, 0] += e * e
                rec_sq[k, 1] += q * q
                rec_sq[k, 2] += v * v
                rec_cnt[k] += 1
        if alive:
            for a in range(d):
                ends[li, a] = x[a]
        else:
            for a in range(d):
                ends[li, a] = np.nan
        if n_win > 0:
            win_q[li] = sq_acc / n_win
            win_e[li] = se_acc / n_win
        else:
            win_q[li] = np.nan
            win_e[li] = np.nan


# -- ensemble -----------------------------------------------------------------

@dataclass
class EnsembleRun:
    times: np.ndarray
    mean_energy: np.ndarray
    mean_quad: np.ndarray
    exp_moment: np.ndarray
    se_energy: np.ndarray
    se_quad: np.ndarray
    se_exp: np.ndarray
    n_active: np.ndarray
    endpoints: np.ndarray
    window_quad: np.ndarray
    window_energy: np.ndarray
    n_exploded: int
    n_clipped: int
    total_steps: int
    epsilon: float
    model_hash: str
    model_label: str
    config: SimConfig
    samples: np.ndarray | None = None
    wall_time: float = field(default=0.0, compare=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,mean_energy,se_energy,mean_quad,se_quad,exp_moment,se_exp_moment,n_active\n")
        for row in zip(self.times, self.mean_energy, self.se_energy, self.mean_quad, self.se_quad,
                       self.exp_moment, self.se_exp, self.n_active):
            buf.write(",".join(repr(float(v)) for v in row[:-1]) + f",{int(row[-1])}\n")
        return buf.getvalue()

    def manifest(self) -> dict:
        return {
            "model_hash": self.model_hash,
            "model_label": self.model_label,
            "epsilon": self.epsilon,
            "config": self.config.as_dict(),
            "master_seed": self.config.master_seed,
            "n_exploded": self.n_exploded,
            "n_clipped": self.n_clipped,
            "total_steps": self.total_steps,
            "csv_sha256": hashlib.sha256(self.to_csv().encode()).hexdigest(),
        }

    def write(self, directory, stem: str = "ensemble") -> list:
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv = directory / f"{stem}.csv"
        csv.write_text(self.to_csv())
        man = directory / f"{stem}.json"
        man.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return [csv, man]


def _mean_se(s, sq, n):
    n = np.maximum(n, 1)
    mean = s / n
    var = np.maximum(sq / n - mean * mean, 0.0) * n / np.maximum(n - 1, 1)
    return mean, np.sqrt(var / n)


def run_ensemble(model: ModelSpec, config: SimConfig, workers: int | None = None,
                 restart_from: EnsembleRun | None = None, check_dt: bool = True) -> EnsembleRun:
    """Simulate ``config.n_traj`` trajectories; trajectory ``i`` uses stream ``(seed, i)``."""
    require_simulable(model)
    eps = model.epsilon
    dt, t_final, _ = config.physical(eps)
    n_steps, burn_steps = config.steps(eps)
    d = model.dim
    n = config.n_traj

    start_step = 0
    if config.initial == "stationary-restart":
        if restart_from is None:
            raise ValueError("stationary-restart needs the earlier run")
        X0 = np.array(restart_from.endpoints, dtype=float)
        if X0.shape != (n, d) or not np.all(np.isfinite(X0)):
            raise ValueError("restart endpoints must be finite with shape (n_traj, d)")
        start_step = restart_from.total_steps
    else:
        x0 = np.zeros(d) if config.initial is None else np.asarray(config.initial, dtype=float)
        if x0.shape != (d,):
            raise ValueError(f"initial point must have length {d}")
        X0 = np.tile(x0, (n, 1))

    if check_dt:
        # restart endpoints are stationary draws; only an explicit start point widens the bound
        x_ref = X0[0] if n and config.initial != "stationary-restart" else None
        rb = config.r_bound or default_r_bound(model, x_ref)
        limit = dt_max(model, rb)
        if dt > limit * (1 + 1e-12):
            raise SimulationError(f"dt = {dt:g} exceeds dt_max = {limit:g} (r_bound = {rb:g})")

    lin = eps * model.A_f + eps ** model.alpha * model.B_f
    comp, coef, expo = model.N.to_float_terms()
    # each term as a row of variable indices, padded with -1
    width = int(expo.sum(axis=1).max(initial=0))
    fac = np.full((len(coef), max(width, 1)), -1, dtype=np.int64)
    for t, e in enumerate(expo):
        idx = np.repeat(np.arange(d), e)
        fac[t, :len(idx)] = idx
    Zt = np.ascontiguousarray(model.Z_f.T)
    A = model.A_f
    sq_noise = math.sqrt(2 * eps * dt)
    sq_delta = math.sqrt(2 * eps * model.delta * dt) if model.delta > 0 else 0.0
    k0, k1 = split_seed(config.master_seed)
    n_rec = n_steps // config.record_stride + 1
    n_chunks = (n + CHUNK - 1) // CHUNK
    n_samp = 0
    if config.sample_stride > 0 and n_steps >= burn_steps:
        n_samp = (n_steps - burn_steps) // config.sample_stride + 1

    rec_sum = np.zeros((n_chunks, n_rec, 3))
    rec_sq = np.zeros((n_chunks, n_rec, 3))
    rec_cnt = np.zeros((n_chunks, n_rec), dtype=np.int64)
    clip = np.zeros((n_chunks, 1), dtype=np.int64)
    ends = np.zeros((n, d))
    exploded = np.zeros(n, dtype=np.bool_)
    win_q = np.zeros(n)
    win_e = np.zeros(n)
    samples = np.zeros((n, n_samp, d))

    def job(c):
        a, b = c * CHUNK, min(n, (c + 1) * CHUNK)
        _run_chunk(a, b, X0[a:b], lin, comp, coef, fac, Zt, A, sq_noise, sq_delta, dt,
                   n_steps, config.record_stride, burn_steps, float(config.gamma_exp),
                   np.uint32(k0), np.uint32(k1), start_step, config.sample_stride,
                   rec_sum[c], rec_sq[c], rec_cnt[c], clip[c], ends[a:b], exploded[a:b],
                   win_q[a:b], win_e[a:b], samples[a:b])

    tic = time.perf_counter()
    w = worker_count(workers)
    if w == 1:
        for c in range(n_chunks):
            job(c)
    else:
        with ThreadPoolExecutor(max_workers=w) as pool:
            list(pool.map(job, range(n_chunks)))
    wall = time.perf_counter() - tic

    n_bad = int(exploded.sum())
    if n_bad > EXPLODE_FRACTION * n:
        raise SimulationError(
            f"{n_bad} of {n} trajectories exploded; reduce dt (currently {dt:g})"
        )
    S = rec_sum.sum(axis=0)
    Q = rec_sq.sum(axis=0)
    C = rec_cnt.sum(axis=0)
    me, se_e = _mean_se(S[:, 0], Q[:, 0], C)
    mq, se_q = _mean_se(S[:, 1], Q[:, 1], C)
    mv, se_v = _mean_se(S[:, 2], Q[:, 2], C)
    times = np.arange(n_rec) * config.record_stride * dt
    return EnsembleRun(
        times=times, mean_energy=me, mean_quad=mq, exp_moment=mv,
        se_energy=se_e, se_quad=se_q, se_exp=se_v, n_active=C,
        endpoints=ends, window_quad=win_q, window_energy=win_e,
        n_exploded=n_bad, n_clipped=int(clip.sum()), total_steps=start_step + n_steps,
        epsilon=eps, model_hash=model.model_hash(), model_label=model.label,
        config=config, samples=samples if n_samp else None, wall_time=wall,
    )


# -- diagnostics --------------------------------------------------------------

def energy_balance_residual(run: EnsembleRun, model: ModelSpec) -> tuple[float, float]:
    """Relative gap between the post-burn-in average of ``E[Ax.x]`` and ``sum |Z_j|^2``.

    Each trajectory's window average is one batch; the standard error is taken
    across these independent batch means.
    """
    target = model.noise_power
    if target == 0:
        raise ModelError("sum |Z_j|^2 = 0: the balance target is degenerate")
    _, _, burn = run.config.physical(run.epsilon)
    if burn < 10.0 / run.epsilon - 1e-9:
        raise ValueError(f"burn_in must be >= 10/eps = {10.0 / run.epsilon:g} time units")
    w = run.window_quad[np.isfinite(run.window_quad)]
    est = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(len(w))) if len(w) > 1 else float("inf")
    return abs(est - target) / target, se / target


@dataclass
class RelaxationResult:
    entries: list[tuple[float, float | None, bool]]
    slope: float | None
    plateaus: list[float] = field(default_factory=list)


THRESHOLD = 1.0 - math.exp(-1.0)


def crossing_time(times: np.ndarray, values: np.ndarray, level: float) -> float | None:
    """First time ``values`` reaches ``level``, by linear interpolation between records."""
    idx = np.flatnonzero(values >= level)
    if len(idx) == 0:
        return None
    k = int(idx[0])
    if k == 0:
        return float(times[0])
    v0, v1 = values[k - 1], values[k]
    return float(times[k - 1] + (level - v0) / (v1 - v0) * (times[k] - times[k - 1]))


def loglog_slope(xs, ys) -> float | None:
    pts = [(x, y) for x, y in zip(xs, ys) if y is not None and y > 0]
    if len(pts) < 2:
        return None
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    return float(np.polyfit(lx, ly, 1)[0])


def relaxation_time(model: ModelSpec, epsilon_list, config_template,
                    workers: int | None = None) -> RelaxationResult:
    """Time for ``E|x_t|^2`` to reach ``1 - 1/e`` of its plateau (mean over the last 20% of records).

    ``config_template`` is a :class:`SimConfig` or a function of ``eps`` returning one.
    """
    config_for = config_template if callable(config_template) else (lambda eps: config_template)
    entries, plateaus = [], []
    for eps in epsilon_list:
        cfg = config_for(eps)
        if cfg.initial is not None and (isinstance(cfg.initial, str) or any(cfg.initial)):
            raise ValueError("relaxation runs start at the origin")
        run = run_ensemble(model.with_params(epsilon=eps), cfg, workers=workers)
        tail = max(1, int(round(0.2 * len(run.times))))
        plateau = float(run.mean_energy[-tail:].mean())
        tau = crossing_time(run.times, run.mean_energy, THRESHOLD * plateau)
        censored = tau is None or tau >= run.times[-tail]
        entries.append((float(eps), tau, censored))
        plateaus.append(plateau)
    usable = [(e, t) for e, t, c in entries if not c]
    slope = loglog_slope([e for e, _ in usable], [t for _, t in usable])
    return RelaxationResult(entries, slope, plateaus)


@dataclass
class MomentReport:
    passed: bool
    worst_margin: float
    worst_time: float
    clipped: int
    budget: float
    times: np.ndarray
    bound: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray


def moment_decay_check(model: ModelSpec, config: SimConfig, certificate: LyapunovCertificate,
                       workers: int | None = None, sigmas: float = 5.0) -> MomentReport:
    """Check ``E V(x_t) <= b/kappa + exp(-eps kappa t) V(x0)`` at every record, within ``sigmas`` standard errors."""
    if not math.isclose(config.gamma_exp, certificate.gamma, rel_tol=1e-12):
        config = replace(config, gamma_exp=certificate.gamma)
    if isinstance(config.initial, str):
        raise ValueError("moment check needs an explicit initial point")
    x0 = np.zeros(model.dim) if config.initial is None else np.asarray(config.initial)
    V0 = math.exp(certificate.gamma * float(x0 @ x0))
    run = run_ensemble(model, config, workers=workers)
    bound = certificate.budget + np.exp(-model.epsilon * certificate.kappa * run.times) * V0
    margin = bound + sigmas * run.se_exp - run.exp_moment
    k = int(np.argmin(margin))
    return MomentReport(
        passed=bool(np.all(margin >= 0)) and run.n_clipped == 0,
        worst_margin=float(margin[k]), worst_time=float(run.times[k]), clipped=run.n_clipped,
        budget=certificate.budget, times=run.times, bound=bound,
        estimate=run.exp_moment, stderr=run.se_exp,
    )


# -- command line -----------------------------------------------------------------------

def main(argv=None) -> int:
    """``python -m hypomix.sde --model FILE --eps 0.1 0.05 --dt ... --t-final ... --ntraj ... --seed ...``"""
    import argparse
    import sys
    from pathlib import Path

    from .modelfile import ModelFileError, load_model

    p = argparse.ArgumentParser(prog="python -m hypomix.sde",
                                description="Run Euler-Maruyama ensembles and write CSV plus JSON manifests.")
    p.add_argument("--model", required=True, metavar="FILE")
    p.add_argument("--eps", required=True, type=float, nargs="+", metavar="EPS")
    p.add_argument("--dt", required=True, type=float)
    p.add_argument("--t-final", required=True, type=float)
    p.add_argument("--ntraj", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--record-stride", type=int, default=1)
    p.add_argument("--rescaled-time", action="store_true",
                   help="read --dt and --t-final in units of eps*t")
    p.add_argument("--out", default=".", metavar="DIR")
    args = p.parse_args(argv)
    try:
        model = load_model(args.model)
        cfg = SimConfig(dt=args.dt, t_final=args.t_final, n_traj=args.ntraj, master_seed=args.seed,
                        record_stride=args.record_stride, rescaled_time=args.rescaled_time)
        for eps in args.eps:
            run = run_ensemble(model.with_params(epsilon=eps), cfg)
            for f in run.write(Path(args.out), f"ensemble_eps{eps!r}"):
                print(f)
    except (OSError, ModelFileError, ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
