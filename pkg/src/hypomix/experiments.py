"""Experiment configuration, dispatch and result manifests.

A config is a sectioned text file::

    [experiment]
    kind = relax-scaling
    model = triad
    epsilons = 0.2 0.1 0.05 0.025
    seed = 1

    [model]
    alphas = 1 1 -2

    [sim]
    n_traj = 1024
    dt_per_eps = 0.025
    t_final_rescaled = 5

``model`` is a built-in name (parameters in ``[model]``) or a path to a model
file. Times carry their unit in the key: ``*_rescaled`` values are in
``s = eps * t``; ``dt_per_eps`` is the physical step divided by eps.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .density import (
    compact_lowerbound, estimate_density, gaussian_tail_fit, integrated_autocorr_time,
)
from .fp import (
    GridSpec, collapse_check, delta_limit_check, discretize, spectral_gap, stationary_solve,
    truncation_probe, tv_matrix,
)
from .lie import BracketCertificate, assumption2_check
from .model import (
    BUILTINS, ModelSpec, check_structure, is_linear_model, lambda_min, lyapunov_certificate,
)
from .modelfile import load_model
from .poly import as_fraction
from .sde import (
    SimConfig, energy_balance_residual, moment_decay_check, relaxation_time,
    run_ensemble,
)
from .svg import emit_plot

KINDS = (
    "structure", "hormander", "lyapunov", "equilibrium", "relax-scaling",
    "density", "gap-fp", "tv-overlap", "collapse", "delta-limit",
)
REQUIRED_BLOCKS = {
    "equilibrium": ("sim",),
    "relax-scaling": ("sim",),
    "density": ("sim", "density"),
    "gap-fp": ("fp",),
    "tv-overlap": ("fp",),
    "collapse": ("fp",),
    "delta-limit": ("fp",),
}
NEEDS_EPS = {"lyapunov": 1, "equilibrium": 1, "relax-scaling": 3, "density": 1, "gap-fp": 1,
             "tv-overlap": 1, "collapse": 2, "delta-limit": 1}

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_ERROR = 0, 1, 2, 3


class ConfigError(ValueError):
    """Validation failure; ``problems`` lists every violated field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# -- configuration ------------------------------------------------------------------

def _fmt_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt_value(x) for x in v)
    return str(v)


@dataclass
class ExperimentConfig:
    kind: str
    model: str
    epsilons: tuple[float, ...] = ()
    seed: int = 0
    out: str = "runs"
    blocks: dict[str, dict[str, str]] = field(default_factory=dict)

    def block(self, name: str) -> dict[str, str]:
        return self.blocks.get(name, {})

    def get(self, section: str, key: str, default=None, cast=str):
        raw = self.block(section).get(key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError([f"{section}.{key}: cannot parse {raw!r} ({exc})"]) from exc

    def floats(self, section: str, key: str, default=None):
        raw = self.block(section).get(key)
        if raw is None:
            return default
        try:
            return tuple(float(as_fraction(v)) for v in raw.split())
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError([f"{section}.{key}: cannot parse {raw!r}"]) from exc

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["experiment"] = {
            "kind": self.kind,
            "model": self.model,
            "epsilons": _fmt_value(list(self.epsilons)),
            "seed": str(self.seed),
            "out": self.out,
        }
        for name in sorted(self.blocks):
            cp[name] = {k: self.blocks[name][k] for k in sorted(self.blocks[name])}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def with_overrides(self, overrides) -> "ExperimentConfig":
        """Apply ``section.key=value`` strings (``key=value`` means ``experiment.key``)."""
        text = self.to_text()
        cp = _parser()
        cp.read_string(text)
        for item in overrides:
            if "=" not in item:
                raise ConfigError([f"override {item!r} is not key=value"])
            key, val = item.split("=", 1)
            section, _, name = key.strip().rpartition(".")
            section = section or "experiment"
            if not cp.has_section(section):
                cp.add_section(section)
            cp[section][name] = val.strip()
        buf = io.StringIO()
        cp.write(buf)
        return parse_config(buf.getvalue())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    return cp


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc
    problems = []
    if not cp.has_section("experiment"):
        raise ConfigError(["missing [experiment] section"])
    head = cp["experiment"]
    kind = head.get("kind", "").strip()
    if kind not in KINDS:
        problems.append(f"experiment.kind: {kind!r} is not one of {', '.join(KINDS)}")
    model = head.get("model", "").strip()
    if not model:
        problems.append("experiment.model: required")
    eps: tuple[float, ...] = ()
    try:
        eps = tuple(float(as_fraction(v)) for v in head.get("epsilons", "").split())
    except (ValueError, ZeroDivisionError):
        problems.append(f"experiment.epsilons: cannot parse {head.get('epsilons')!r}")
    bad = [e for e in eps if not 0.0 < e <= 1.0]
    if bad:
        problems.append(f"experiment.epsilons: values must lie in (0, 1], got {bad}")
    need = NEEDS_EPS.get(kind, 0)
    if len(eps) < need:
        problems.append(f"experiment.epsilons: need ≥ {need} ε values, got {len(eps)}")
    try:
        seed = int(head.get("seed", "0"))
        if seed < 0:
            raise ValueError
    except ValueError:
        problems.append(f"experiment.seed: must be a nonnegative integer, got {head.get('seed')!r}")
        seed = 0
    extra = set(head) - {"kind", "model", "epsilons", "seed", "out"}
    if extra:
        problems.append(f"experiment: unknown keys {sorted(extra)}")
    blocks = {s: dict(cp[s]) for s in cp.sections() if s != "experiment"}
    for req in REQUIRED_BLOCKS.get(kind, ()):
        if req not in blocks:
            problems.append(f"[{req}] section is required for kind {kind!r}")
    if "sim" in blocks:
        problems += _check_sim(blocks["sim"])
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(kind, model, eps, seed, head.get("out", "runs").strip(), blocks)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


SIM_KEYS = {"n_traj", "dt_per_eps", "dt_rescaled", "t_final_rescaled", "burn_in_rescaled",
            "record_every_rescaled", "sample_every_rescaled", "gamma_exp", "initial"}


def _check_sim(sim: dict) -> list[str]:
    problems = []
    unknown = set(sim) - SIM_KEYS
    if unknown:
        problems.append(f"sim: unknown keys {sorted(unknown)}")
    if ("dt_per_eps" in sim) == ("dt_rescaled" in sim):
        problems.append("sim: give exactly one of dt_per_eps, dt_rescaled")
    for key in ("n_traj", "t_final_rescaled"):
        if key not in sim:
            problems.append(f"sim.{key}: required")
    for key in SIM_KEYS - {"initial"}:
        if key in sim:
            try:
                v = float(sim[key])
                if v < 0 or (key in ("n_traj", "dt_per_eps", "dt_rescaled", "t_final_rescaled") and v <= 0):
                    problems.append(f"sim.{key}: must be positive, got {sim[key]}")
            except ValueError:
                problems.append(f"sim.{key}: not a number: {sim[key]!r}")
    return problems


def sim_config(cfg: ExperimentConfig, eps: float) -> SimConfig:
    """Physical-time :class:`SimConfig` for one eps."""
    g = lambda k, d=None: cfg.get("sim", k, d, float)  # noqa: E731
    if "dt_rescaled" in cfg.block("sim"):
        dt = g("dt_rescaled") / eps
    else:
        dt = g("dt_per_eps") * eps
    t_final = g("t_final_rescaled") / eps
    burn = g("burn_in_rescaled", 0.0) / eps
    rec = g("record_every_rescaled", g("t_final_rescaled") / 100) / eps
    sample = g("sample_every_rescaled", 0.0) / eps
    init = cfg.block("sim").get("initial", "origin").strip()
    initial = None if init == "origin" else tuple(float(as_fraction(v)) for v in init.split())
    return SimConfig(
        dt=dt, t_final=t_final, n_traj=int(g("n_traj")), master_seed=cfg.seed, burn_in=burn,
        record_stride=max(1, int(round(rec / dt))), gamma_exp=g("gamma_exp", 0.0),
        initial=initial, sample_stride=int(round(sample / dt)) if sample else 0,
    )


# -- models ---------------------------------------------------------------------------

_DEFAULTS = {
    "triad": {"alphas": "1 1 -2", "q1": "1", "q2": "1"},
    "lorenz96": {"n": "5", "q": "1 1 0 0 0"},
    "sabra": {"J": "4", "delta_param": "1/2", "q": "1 1 0 0", "p": "1 1 0 0"},
    "ou": {"a": "1", "z": "1"},
}
_LISTS = {"alphas", "q", "p", "z"}
_INTS = {"n", "J"}


def build_model(cfg: ExperimentConfig, epsilon: float | None = None) -> ModelSpec:
    """Model named in the config, at ``epsilon`` (default: first of the eps list, else 0.1)."""
    eps = epsilon if epsilon is not None else (cfg.epsilons[0] if cfg.epsilons else 0.1)
    name = cfg.model
    if name in BUILTINS:
        params = dict(_DEFAULTS[name])
        params.update(cfg.block("model"))
        kw = {}
        for k, v in params.items():
            if k in _LISTS:
                kw[k] = [as_fraction(t) for t in v.split()]
            elif k in _INTS:
                kw[k] = int(v)
            elif k in ("alpha", "delta"):
                kw[k] = float(as_fraction(v))
            else:
                kw[k] = as_fraction(v)
        try:
            return BUILTINS[name](epsilon=eps, **kw)
        except TypeError as exc:
            raise ConfigError([f"model: bad parameters for {name!r}: {exc}"]) from exc
    path = Path(name)
    if not path.is_file():
        raise ConfigError([f"experiment.model: {name!r} is neither a built-in ({', '.join(BUILTINS)}) nor a file"])
    return load_model(path).with_params(epsilon=eps)


def rms_radius(model: ModelSpec) -> float:
    """Stationary RMS radius implied by ``E[Ax.x] = sum |Z_j|^2``."""
    return math.sqrt(max(model.noise_power, 1e-300) / lambda_min(model.A))


# -- results ----------------------------------------------------------------------------

@dataclass
class Verdict:
    name: str
    passed: bool
    value: object
    threshold: str

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "value": self.value, "threshold": self.threshold}


@dataclass
class ResultManifest:
    config_text: str
    model_hash: str
    version: str
    wall_clock: float
    files: list[dict]
    verdicts: list[Verdict]
    directory: str
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(v.passed for v in self.verdicts)

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return EXIT_ERROR
        return EXIT_PASS if self.passed else EXIT_FAIL

    def as_dict(self) -> dict:
        return {
            "config": self.config_text,
            "model_hash": self.model_hash,
            "version": self.version,
            "wall_clock_seconds": self.wall_clock,
            "files": self.files,
            "verdicts": [v.as_dict() for v in self.verdicts],
            "passed": self.passed,
            "error": self.error,
        }

    def verify(self) -> list[str]:
        """Files that are missing or whose content no longer matches the recorded hash."""
        bad = []
        for f in self.files:
            p = Path(self.directory) / f["path"]
            if not p.is_file() or _sha256(p.read_bytes()) != f["sha256"]:
                bad.append(f["path"])
        return bad


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class _Outputs:
    """Collects output files; everything is written at the end, single-threaded."""

    def __init__(self):
        self.files: dict[str, bytes] = {}
        self.schema: dict[str, list[str]] = {}

    def csv(self, name: str, header: list[str], rows) -> None:
        lines = [",".join(header)]
        for r in rows:
            lines.append(",".join(_cell(v) for v in r))
        self.files[name] = ("\n".join(lines) + "\n").encode()
        self.schema[name] = header

    def text(self, name: str, text: str) -> None:
        self.files[name] = text.encode()

    def json(self, name: str, obj) -> None:
        self.files[name] = (json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n").encode()

    def plot(self, name: str, series, kind: str, **kw) -> None:
        try:
            self.files[name] = emit_plot(series, kind, **kw).encode()
        except ValueError:
            # a plot with nothing to show is not an experiment failure
            pass


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serialisable: {type(o)}")


def _spread(values) -> float:
    vals = [v for v in values if v is not None]
    if not vals or min(vals) <= 0:
        return math.inf
    return max(vals) / min(vals)


# -- pipelines --------------------------------------------------------------------------

def _run_structure(cfg, model, out):
    rep = check_structure(model)
    out.json("structure.json", rep.as_dict())
    return [Verdict("structure identities exact", rep.ok, rep.as_dict()["witnesses"] or "all exact",
                    "A SPD, B skew, N.x = 0, div N = 0, degree >= 2")]


def _run_hormander(cfg, model, out):
    R = cfg.get("hormander", "grid_radius", 1.0, float)
    depth = cfg.get("hormander", "max_depth", 6, int)
    points = cfg.get("hormander", "grid_points", None, int)
    res = assumption2_check(model, R, depth, points)
    if not isinstance(res, BracketCertificate):
        out.json("certificate.json", {"failure": res.__dict__})
        return [Verdict("bracket spanning", False, res.message, "rank d on every node")]
    out.text("certificate.json", res.to_json() + "\n")
    verdicts = [
        Verdict("bracket spanning", True, {"N0": res.N0, "C0": res.C0}, "rank d on every node"),
        Verdict("uniform across eps pairs", bool(res.uniform_across_eps), res.uniform_across_eps,
                "same frame and constants"),
    ]
    expect = cfg.block("hormander").get("expect_c0")
    if expect is not None:
        target = float(as_fraction(expect))
        verdicts.append(Verdict("C0 matches", math.isclose(res.C0, target, rel_tol=1e-12),
                                res.C0, f"== {expect}"))
    return verdicts


def _run_lyapunov(cfg, model, out):
    mult = cfg.get("lyapunov", "rms_multiple", 3.0, float)
    pts = cfg.get("lyapunov", "grid_points", 21, int)
    deltas = cfg.floats("lyapunov", "deltas", (0.0, 1.0))
    cert = lyapunov_certificate(model, mult * rms_radius(model), pts, cfg.epsilons, deltas)
    out.json("certificate.json", cert.__dict__)
    out.csv("grid_check.csv", ["epsilon", "delta", "ok", "min_rel_slack"],
            [(p["epsilon"], p["delta"], p["ok"], p["min_rel_slack"]) for p in cert.checked_pairs])
    verdicts = [Verdict("drift inequality on grid", cert.verified_on_grid, cert.worst_margin,
                        "slack >= 0 at every node")]
    if "sim" in cfg.blocks:
        eps = cfg.get("lyapunov", "moment_epsilon", cfg.epsilons[0], float)
        m = model.with_params(epsilon=eps)
        rep = moment_decay_check(m, sim_config(cfg, eps), cert)
        out.csv("moment.csv", ["t", "estimate", "stderr", "bound"],
                zip(rep.times, rep.estimate, rep.stderr, rep.bound))
        verdicts.append(Verdict("moment bound (5 sigma)", rep.passed, rep.worst_margin,
                                "E V(x_t) <= b/kappa + exp(-eps kappa t) V(x0) + 5 se"))
    return verdicts


def _run_equilibrium(cfg, model, out):
    rows, ok = [], True
    linear = is_linear_model(model)
    for eps in cfg.epsilons:
        m = model.with_params(epsilon=eps)
        run = run_ensemble(m, sim_config(cfg, eps))
        out.files[f"ensemble_eps{eps!r}.csv"] = run.to_csv().encode()
        out.schema[f"ensemble_eps{eps!r}.csv"] = run.to_csv().splitlines()[0].split(",")
        rel, se = energy_balance_residual(run, m)
        # the linear control case is exact, so only sampling error is allowed
        tol = 3 * se if linear else max(0.05, 3 * se)
        good = rel <= tol
        ok &= good
        rows.append((eps, rel, se, tol, good, run.n_exploded))
    out.csv("energy_balance.csv", ["epsilon", "rel_residual", "rel_stderr", "tolerance", "passed",
                                   "n_exploded"], rows)
    thr = "<= 3 se" if linear else "<= max(0.05, 3 se)"
    return [Verdict("energy balance", bool(ok), [r[1] for r in rows], thr)]


def _run_relax(cfg, model, out):
    res = relaxation_time(model, cfg.epsilons, lambda eps: sim_config(cfg, eps))
    out.csv("relaxation.csv", ["epsilon", "tau", "censored", "plateau"],
            [(e, t, c, p) for (e, t, c), p in zip(res.entries, res.plateaus)])
    usable = [(e, t) for e, t, c in res.entries if not c]
    if len(usable) >= 2:
        out.plot("relaxation.svg", [("tau", [u[0] for u in usable], [u[1] for u in usable])],
                 "relax-scaling", title="relaxation time", xlabel="eps", ylabel="tau")
    slope = res.slope
    if is_linear_model(model):
        good = slope is not None and abs(slope + 1) <= 1e-3
        thr = "-1 +- 1e-3"
    else:
        good = slope is not None and -1.15 <= slope <= -0.85
        thr = "[-1.15, -0.85]"
    n_cens = sum(c for _, _, c in res.entries)
    v = [Verdict("log-log slope of tau(eps)", bool(good), slope, thr)]
    if n_cens:
        v.append(Verdict("no censored relaxation times", False, n_cens, "0"))
    return v


def _run_density(cfg, model, out):
    bins = cfg.get("density", "bins", 40, int)
    mult = cfg.get("density", "box_rms_multiple", 4.0, float)
    r_min = cfg.get("density", "r_min", 1.0, float)
    r_inner = cfg.get("density", "r_inner", 1.0, float)
    R = mult * rms_radius(model)
    fits, dens_list, rows = {}, [], []
    for eps in cfg.epsilons:
        m = model.with_params(epsilon=eps)
        run = run_ensemble(m, sim_config(cfg, eps))
        if run.samples is None:
            raise ConfigError(["sim.sample_every_rescaled: density runs need strided samples"])
        # correlation of |x|^2 along trajectories, in units of the sampling stride
        energy = (run.samples[: min(256, len(run.samples))] ** 2).sum(axis=2)
        tau = float(np.median([integrated_autocorr_time(e) for e in energy]))
        X = run.samples.reshape(-1, model.dim)
        X = X[np.all(np.isfinite(X), axis=1)]
        dens = estimate_density(X, R, bins, eps)
        dens_list.append(dens)
        if dens.full_grid:
            out.files[f"density_eps{eps!r}.csv"] = dens.to_csv().encode()
            fit = gaussian_tail_fit(dens, r_min)
            fits[eps] = fit
            rows.append((eps, len(X), dens.inside_fraction, fit.lambda_hat, fit.r_squared, len(fit.radii),
                         tau, 1.0 / tau))
    out.csv("tail_fits.csv", ["epsilon", "samples", "inside_fraction", "lambda_hat", "r_squared", "shells",
                              "tau_int_strides", "stride_over_tau_int"], rows)
    verdicts = []
    if fits:
        verdicts.append(Verdict("tail fit R^2", all(f.r_squared >= 0.95 for f in fits.values()),
                                [f.r_squared for f in fits.values()], ">= 0.95"))
        lam = [f.lambda_hat for f in fits.values()]
        expect = cfg.block("density").get("expect_lambda")
        if expect is not None:
            t = float(as_fraction(expect))
            verdicts.append(Verdict("lambda matches", all(abs(v - t) <= 0.05 for v in lam), lam, f"{t} +- 0.05"))
        else:
            verdicts.append(Verdict("lambda spread across eps", _spread(lam) <= 2.0, _spread(lam), "<= 2"))
        out.plot("shells.svg", [(f"eps={e}", f.radii ** 2, f.log_max) for e, f in fits.items()], "shell",
                 title="log max f over shells", xlabel="|x|^2", ylabel="log f")
        lb = compact_lowerbound(dens_list, r_inner)
        out.json("lower_bound.json", lb.as_dict())
        good = lb.value > 0 and lb.spread is not None and lb.spread <= 3.0
        verdicts.append(Verdict(f"inf of density over B({r_inner})", good,
                                {"min": lb.value, "spread": lb.spread}, "> 0 with spread <= 3"))
    return verdicts


def _grid(cfg, model) -> GridSpec:
    n = cfg.get("fp", "n", 48, int)
    R = cfg.get("fp", "box_radius", 4.0, float)
    return GridSpec(model.dim, R, n)


def _scheme(cfg) -> str:
    return cfg.get("fp", "scheme", "hybrid")


def _run_gap(cfg, model, out):
    g = _grid(cfg, model)
    rows = []
    for eps in cfg.epsilons:
        op = discretize(model.with_params(epsilon=eps), g, scheme=_scheme(cfg))
        mu = stationary_solve(op)
        gap = spectral_gap(op, k=cfg.get("fp", "arnoldi_k", 12, int))
        rows.append((eps, gap.gap, gap.gap / eps, op.peclet, float(mu.min())))
        op.release()
    out.csv("gap.csv", ["epsilon", "gap", "gap_over_eps", "peclet", "min_density"], rows)
    out.plot("gap.svg", [("gap/eps", [r[0] for r in rows], [r[2] for r in rows])], "gap",
             title="spectral gap / eps", xlabel="eps", ylabel="gap/eps")
    if cfg.get("fp", "truncation_probe", "false").strip().lower() in ("1", "true", "yes"):
        m = model.with_params(epsilon=cfg.epsilons[-1])
        out.json("truncation.json", truncation_probe(m, g, _scheme(cfg)).as_dict())
    ratios = [r[2] for r in rows]
    if is_linear_model(model):
        a = lambda_min(model.A)
        err = max(abs(r - a) / a for r in ratios)
        return [Verdict("gap matches eps*a", err <= 0.05, err, "relative error <= 5%")]
    return [Verdict("gap/eps spread", _spread(ratios) <= 2.0, _spread(ratios), "<= 2")]


def sample_points(dim: int, radius: float = 1.0) -> list[tuple[float, ...]]:
    """The ``3^d`` points ``{-r, 0, r}^d`` with ``r = radius / sqrt(d)``, so all lie in the closed ball."""
    r = radius / math.sqrt(dim)
    axis = (-r, 0.0, r)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return [tuple(float(v) for v in p) for p in np.stack([m.ravel() for m in mesh], axis=-1)]


def _run_tv(cfg, model, out):
    g = _grid(cfg, model)
    s = cfg.get("fp", "tv_t_rescaled", 5.0, float)
    steps = cfg.get("fp", "tv_steps", 40, int)
    pts = sample_points(model.dim, cfg.get("fp", "tv_radius", 1.0, float))
    rows = []
    for eps in cfg.epsilons:
        op = discretize(model.with_params(epsilon=eps), g, scheme=_scheme(cfg))
        T = tv_matrix(op, pts, s / eps, steps)
        rows.append((eps, float(T.max()), 2.0 - float(T.max())))
        op.release()
    out.csv("tv_overlap.csv", ["epsilon", "max_tv", "eta"], rows)
    eta = min(r[2] for r in rows)
    return [Verdict("common minorization eta", eta >= 0.1, eta, ">= 0.1")]


def _observable(cfg, grid: GridSpec) -> np.ndarray:
    name = cfg.get("fp", "observable", "x1").strip()
    if not (name.startswith("x") and name[1:].isdigit() and 1 <= int(name[1:]) <= grid.dim):
        raise ConfigError([f"fp.observable: expected x1..x{grid.dim}, got {name!r}"])
    return grid.centers()[:, int(name[1:]) - 1]


def _run_collapse(cfg, model, out):
    g = _grid(cfg, model)
    ops = []
    for eps in cfg.epsilons:
        op = discretize(model.with_params(epsilon=eps), g, scheme=_scheme(cfg))
        stationary_solve(op)
        op.release()
        ops.append(op)
    rep = collapse_check(ops, _observable(cfg, g), cfg.get("fp", "s_max", 4.0, float),
                         cfg.get("fp", "n_s", 41, int), cfg.get("fp", "substeps", 4, int))
    keys = list(rep.curves)
    out.csv("collapse.csv", ["s"] + [f"D_eps{k!r}" for k in keys],
            [(s, *(rep.curves[k][i] for k in keys)) for i, s in enumerate(rep.s_grid)])
    out.plot("collapse.svg", [(f"eps={k}", rep.s_grid, rep.curves[k]) for k in keys], "collapse",
             title="decay curves in rescaled time", xlabel="eps t", ylabel="D")
    tol = 1e-8 if is_linear_model(model) else 0.1
    return [
        Verdict("collapse defect", rep.defect <= tol, rep.defect, f"<= {tol}"),
        Verdict("monotone decay curves", all(rep.monotone.values()), rep.monotone, "nonincreasing"),
    ]


def gaussian_l1(var_a: float, var_b: float) -> float:
    """L1 distance between centred 1-D normals with the given variances."""
    from scipy.stats import norm

    if var_a == var_b:
        return 0.0
    s0, s1 = sorted((math.sqrt(var_a), math.sqrt(var_b)))
    xs = math.sqrt(2 * s0 * s0 * s1 * s1 * math.log(s1 / s0) / (s1 * s1 - s0 * s0))
    return 4.0 * (norm.cdf(xs / s0) - norm.cdf(xs / s1))


def _run_delta(cfg, model, out):
    g = _grid(cfg, model)
    deltas = cfg.floats("fp", "deltas", (0.5, 0.1, 0.02, 0.0))
    rows, verdicts = [], []
    linear = is_linear_model(model) and model.dim == 1
    for eps in cfg.epsilons:
        tab = delta_limit_check(model, g, eps, deltas, _scheme(cfg))
        strict = all(b < a for a, b in zip(tab.l1[:-1], tab.l1[1:-1])) and tab.l1[-2] > 0
        verdicts.append(Verdict(f"strictly decreasing (eps={eps})", strict, tab.l1, "l1 strictly decreasing"))
        for dlt, v in zip(tab.deltas, tab.l1):
            exact = None
            if linear:
                a = float(model.A[0][0])
                exact = gaussian_l1(model.noise_power / a, (model.noise_power + dlt) / a)
            rows.append((eps, dlt, v, exact))
    out.csv("delta_limit.csv", ["epsilon", "delta", "l1", "l1_exact"], rows)
    if linear:
        rel = [abs(r[2] - r[3]) / r[3] for r in rows if r[3]]
        verdicts.append(Verdict("matches Gaussian oracle", max(rel) <= 0.02, max(rel), "relative error <= 2%"))
    return verdicts


PIPELINES = {
    "structure": _run_structure,
    "hormander": _run_hormander,
    "lyapunov": _run_lyapunov,
    "equilibrium": _run_equilibrium,
    "relax-scaling": _run_relax,
    "density": _run_density,
    "gap-fp": _run_gap,
    "tv-overlap": _run_tv,
    "collapse": _run_collapse,
    "delta-limit": _run_delta,
}


def output_dir(cfg: ExperimentConfig, model: ModelSpec, root=None, tag: str | None = None) -> Path:
    root = Path(root if root is not None else cfg.out)
    tag = tag or time.strftime("%Y%m%dT%H%M%S")
    return root / cfg.kind / model.label / tag


def run_experiment(cfg: ExperimentConfig, out_root=None, tag: str | None = None) -> ResultManifest:
    """Run one experiment and write its outputs plus ``manifest.json``.

    Errors raised by the pipeline are recorded in the manifest (exit code 3)
    rather than propagated; configuration errors are raised.
    """
    model = build_model(cfg)
    directory = output_dir(cfg, model, out_root, tag)
    out = _Outputs()
    start = time.perf_counter()
    error = None
    verdicts: list[Verdict] = []
    try:
        verdicts = PIPELINES[cfg.kind](cfg, model, out)
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001 - captured into the manifest by design
        error = f"{type(exc).__name__}: {exc}"
    wall = time.perf_counter() - start

    directory.mkdir(parents=True, exist_ok=True)
    out.text("config.ini", cfg.to_text())
    out.json("schema.json", out.schema)
    files = []
    for name in sorted(out.files):
        data = out.files[name]
        (directory / name).write_bytes(data)
        files.append({"path": name, "sha256": _sha256(data)})
    manifest = ResultManifest(cfg.to_text(), model.model_hash(), __version__, wall, files, verdicts,
                              str(directory), error)
    (directory / "manifest.json").write_text(
        json.dumps(manifest.as_dict(), indent=2, sort_keys=True, default=_jsonable) + "\n")
    _link_latest(directory)
    return manifest


def _link_latest(directory: Path) -> None:
    link = directory.parent / "latest"
    try:
        if link.is_symlink() or link.exists():
            link.unlink()
        os.symlink(directory.name, link)
    except OSError:
        # filesystems without symlinks get a pointer file instead
        (directory.parent / "LATEST").write_text(directory.name + "\n")
