from fractions import Fraction

import pytest

from hypomix.model import build_lorenz96, build_sabra, build_triad
from hypomix.modelfile import ModelFileError, dump_model, load_model, parse_model, save_model

TRIAD = """
[model]
label = triad
dim = 3
alpha = 1
epsilon = 1/10

[A]
row = 1 0 0
row = 0 1 0
row = 0 0 1

[N]
term = 1 x2*x3 -> 1
term = 1 x1*x3 -> 2
term = -2 x1*x2 -> 3

[Z]
vec = 1 0 0
vec = 0 1 0
"""


def test_parse_matches_builder():
    m = parse_model(TRIAD)
    ref = build_triad((1, 1, -2), epsilon=0.1)
    assert m.N == ref.N and m.Z == ref.Z and m.A == ref.A
    assert m.model_hash() == ref.model_hash()


@pytest.mark.parametrize("model", [
    build_triad((1, 1, -2)),
    build_lorenz96(5, [1, Fraction(1, 3), 0, 0, 0], alpha=0.5),
    build_sabra(3, Fraction(1, 2), [1, 0, 0], [0, 1, 0]),
])
def test_dump_parse_round_trip(model):
    again = parse_model(dump_model(model))
    assert again == model
    assert dump_model(again) == dump_model(model)


def test_save_and_load(tmp_path):
    m = build_triad((1, 1, -2))
    p = save_model(m, tmp_path / "t.model")
    assert load_model(p) == m


def test_errors():
    with pytest.raises(ModelFileError):
        parse_model("[model]\nlabel = x\n")
    with pytest.raises(ModelFileError):
        parse_model("[model]\ndim = 2\n[N]\nterm = 1 x3 -> 1\n")
    with pytest.raises(ModelFileError):
        parse_model("[model]\ndim = 2\n[A]\nrow = 1 0\n")
