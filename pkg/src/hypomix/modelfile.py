"""Plain-text model files.

Example::

    [model]
    label = triad
    dim = 3
    alpha = 1
    epsilon = 1/10
    delta = 0

    [A]
    row = 1 0 0
    row = 0 1 0
    row = 0 0 1

    [B]
    row = 0 0 0
    row = 0 0 0
    row = 0 0 0

    [N]
    # coefficient monomial -> component (1-based)
    term = 1 x2*x3 -> 1
    term = 1 x1*x3 -> 2
    term = -2 x1*x2 -> 3

    [Z]
    vec = 1 0 0
    vec = 0 1 0

Keys may repeat inside the matrix/vector/term sections. Rationals are written
``num/den``; floats are accepted on input and stored exactly.
"""

from __future__ import annotations

import re
from fractions import Fraction
from pathlib import Path

from .model import ModelSpec
from .poly import PolyVectorField, as_fraction

_MONO = re.compile(r"^x(\d+)(?:\^(\d+))?$")


class ModelFileError(ValueError):
    pass


def _fmt(c: Fraction) -> str:
    c = as_fraction(c)
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def _fmt_float(v: float) -> str:
    f = Fraction(v)
    if f.denominator <= 10**6:
        return _fmt(f)
    return repr(float(v))


def _parse_monomial(text: str, dim: int) -> tuple[int, ...]:
    e = [0] * dim
    text = text.strip()
    if text == "1":
        return tuple(e)
    for factor in text.split("*"):
        m = _MONO.match(factor.strip())
        if not m:
            raise ModelFileError(f"bad monomial factor {factor!r}")
        k = int(m.group(1)) - 1
        if not 0 <= k < dim:
            raise ModelFileError(f"variable x{k + 1} out of range for dim {dim}")
        e[k] += int(m.group(2) or 1)
    return tuple(e)


def _monomial_text(e) -> str:
    parts = []
    for k, v in enumerate(e):
        if v == 1:
            parts.append(f"x{k + 1}")
        elif v > 1:
            parts.append(f"x{k + 1}^{v}")
    return "*".join(parts) if parts else "1"


def dump_model(model: ModelSpec) -> str:
    """Canonical text form; :func:`parse_model` inverts it exactly."""
    lines = [
        "[model]",
        f"label = {model.label}",
        f"dim = {model.dim}",
        f"alpha = {_fmt_float(model.alpha)}",
        f"epsilon = {_fmt_float(model.epsilon)}",
        f"delta = {_fmt_float(model.delta)}",
        "",
        "[A]",
    ]
    lines += ["row = " + " ".join(_fmt(c) for c in r) for r in model.A]
    lines += ["", "[B]"]
    lines += ["row = " + " ".join(_fmt(c) for c in r) for r in model.B]
    lines += ["", "[N]"]
    for i, e, c in sorted(model.N.terms(), key=lambda t: (t[0], t[1])):
        lines.append(f"term = {_fmt(c)} {_monomial_text(e)} -> {i + 1}")
    lines += ["", "[Z]"]
    lines += ["vec = " + " ".join(_fmt(c) for c in z) for z in model.Z]
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> ModelSpec:
    sections: dict[str, list[tuple[str, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, [])
            continue
        if current is None or "=" not in line:
            raise ModelFileError(f"line {lineno}: expected 'key = value' inside a section")
        key, val = (s.strip() for s in line.split("=", 1))
        sections[current].append((key, val))

    head = dict(sections.get("model", []))
    if "dim" not in head:
        raise ModelFileError("[model] section must define dim")
    d = int(head["dim"])

    def matrix(name: str):
        rows = [v.split() for k, v in sections.get(name, []) if k == "row"]
        if not rows:
            return [[0] * d for _ in range(d)]
        if len(rows) != d or any(len(r) != d for r in rows):
            raise ModelFileError(f"[{name}] must have {d} rows of {d} entries")
        return [[as_fraction(v) for v in r] for r in rows]

    comps: list[dict] = [dict() for _ in range(d)]
    for k, v in sections.get("N", []):
        if k != "term":
            continue
        try:
            lhs, comp = v.split("->")
            coef, mono = lhs.split(None, 1)
        except ValueError as exc:
            raise ModelFileError(f"bad N term {v!r}") from exc
        i = int(comp) - 1
        if not 0 <= i < d:
            raise ModelFileError(f"component {i + 1} out of range")
        e = _parse_monomial(mono, d)
        comps[i][e] = comps[i].get(e, Fraction(0)) + as_fraction(coef)
    Z = [[as_fraction(c) for c in v.split()] for k, v in sections.get("Z", []) if k == "vec"]
    return ModelSpec(
        dim=d,
        A=matrix("A"),
        B=matrix("B"),
        N=PolyVectorField(d, comps),
        Z=Z,
        alpha=float(as_fraction(head.get("alpha", "1"))),
        epsilon=float(as_fraction(head.get("epsilon", "1/10"))),
        delta=float(as_fraction(head.get("delta", "0"))),
        label=head.get("label", "model"),
    )


def load_model(path) -> ModelSpec:
    return parse_model(Path(path).read_text())


def save_model(model: ModelSpec, path) -> Path:
    path = Path(path)
    path.write_text(dump_model(model))
    return path
