"""Property tests for algebraic identities and solver invariants."""

from fractions import Fraction

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from hypomix.density import estimate_density
from hypomix.experiments import parse_config
from hypomix.fp import GridSpec, discretize
from hypomix.lie import lie_bracket
from hypomix.model import ModelSpec, build_lorenz96, build_sabra, build_triad, drift_eval
from hypomix.modelfile import dump_model, parse_model
from hypomix.poly import PolyVectorField
from hypomix.rng import normals

DIM = 2
small = st.integers(-3, 3)
exponent = st.tuples(*[st.integers(0, 2)] * DIM)
component = st.dictionaries(exponent, small, max_size=3)
field = st.lists(component, min_size=DIM, max_size=DIM).map(lambda c: PolyVectorField(DIM, c))


@given(field, field)
def test_bracket_antisymmetry(X, Y):
    assert lie_bracket(X, Y) == -lie_bracket(Y, X)


@given(field, field, field)
def test_jacobi_identity(X, Y, Z):
    total = (lie_bracket(X, lie_bracket(Y, Z)) + lie_bracket(Y, lie_bracket(Z, X))
             + lie_bracket(Z, lie_bracket(X, Y)))
    assert total.is_zero()


@given(field, field, field, small)
def test_bracket_bilinear(X, Y, Z, a):
    assert lie_bracket(X.scale(a) + Y, Z) == lie_bracket(X, Z).scale(a) + lie_bracket(Y, Z)


nonzero = st.integers(-3, 3).filter(bool)


@st.composite
def triads(draw):
    a1, a2 = draw(nonzero), draw(nonzero)
    if a1 + a2 == 0:
        a2 += 1 if a2 > 0 else -1
    return build_triad((a1, a2, -(a1 + a2)), epsilon=0.1)


structured = st.one_of(
    triads(),
    st.integers(4, 8).map(lambda n: build_lorenz96(n, [1, 1] + [0] * (n - 2))),
    st.integers(3, 5).map(lambda J: build_sabra(J, Fraction(1, 2), [1] * J, [1] * J)),
)
points = st.lists(st.floats(-3, 3, allow_nan=False), min_size=8, max_size=8)


@given(structured, points, st.floats(0.1, 3.0))
def test_nonlinearity_homogeneous(model, xs, lam):
    x = np.resize(np.array(xs), model.dim)
    N = model.N
    assert np.allclose(N(lam * x), lam ** 2 * N(x), rtol=1e-9, atol=1e-9)


@given(structured, points)
def test_energy_conserving_nonlinearity(model, xs):
    x = np.resize(np.array(xs), model.dim)
    assert abs(float(np.dot(model.N(x), x))) <= 1e-9 * (1 + np.dot(x, x) ** 1.5)


@given(structured, points)
def test_skew_part_does_no_work(model, xs):
    x = np.resize(np.array(xs), model.dim)
    assert abs(x @ model.B_f @ x) <= 1e-12 * (1 + x @ x)


@given(structured)
def test_model_file_round_trip(model):
    assert parse_model(dump_model(model)) == model


eps_values = st.lists(st.sampled_from(["1/5", "0.1", "0.05", "1", "1/40"]), min_size=1, max_size=4)


@given(eps_values, st.integers(0, 2**31), st.integers(1, 5000))
def test_config_round_trip(eps, seed, n_traj):
    text = (f"[experiment]\nkind = equilibrium\nmodel = triad\nepsilons = {' '.join(eps)}\n"
            f"seed = {seed}\n\n[sim]\nn_traj = {n_traj}\ndt_per_eps = 0.025\n"
            "t_final_rescaled = 5\n")
    cfg = parse_config(text)
    assert parse_config(cfg.to_text()) == cfg


@given(st.integers(0, 2**32 - 1), st.floats(0.5, 3.0), st.integers(4, 20))
def test_density_normalisation(seed, R, bins):
    X = np.random.default_rng(seed).normal(size=(40 * bins * bins, 2))
    dens = estimate_density(X, R, bins)
    inside = float(np.mean(np.all(np.abs(X) < R, axis=1)))
    assert abs(dens.values.sum() * dens.cell_volume - inside) <= 1e-12
    assert np.all(dens.values >= 0)


coef = st.integers(-2, 2)


@st.composite
def small_models(draw):
    a = draw(st.integers(1, 3))
    b = draw(coef)
    N = PolyVectorField(2, [{(0, 2): draw(coef)}, {(1, 1): draw(coef)}])
    Z = [(1, 0)] if draw(st.booleans()) else [(0, 1)]
    return ModelSpec(2, [[a, 0], [0, a]], [[0, b], [-b, 0]], N, Z,
                     epsilon=draw(st.sampled_from([0.05, 0.2, 1.0])),
                     delta=draw(st.sampled_from([0.0, 0.1, 1.0])))


@given(small_models(), st.sampled_from(["upwind", "hybrid"]))
def test_fp_operator_is_mass_conserving_m_matrix(model, scheme):
    op = discretize(model, GridSpec(2, 2.0, 16), scheme=scheme)
    L = op.matrix.tocoo()
    off = L.row != L.col
    assert L.data[off].min(initial=0.0) >= 0
    assert L.diagonal().max() <= 0
    assert np.abs(np.asarray(op.matrix.sum(axis=0))).max() <= 1e-12 * max(op.norm(), 1.0)


@given(st.integers(0, 2**63), st.integers(0, 10**6), st.integers(0, 10**6), st.integers(1, 9))
def test_philox_streams_are_pure_functions(seed, traj, step, n):
    a = normals(seed, traj, step, n)
    assert np.array_equal(a, normals(seed, traj, step, n))
    assert not np.array_equal(a, normals(seed, traj + 1, step, n))


@given(structured, points)
def test_drift_matches_components(model, xs):
    x = np.resize(np.array(xs), model.dim)
    eps = model.epsilon
    expect = -eps * model.A_f @ x - eps ** model.alpha * model.B_f @ x - model.N(x)
    assert np.allclose(drift_eval(model, x), expect)


@given(triads(), points, st.sampled_from([(1, -1, -1), (-1, 1, -1), (-1, -1, 1)]))
def test_triad_double_sign_flips_are_symmetries(model, xs, signs):
    x = np.array(xs[:3])
    R = np.array(signs, dtype=float)
    assert np.allclose(drift_eval(model, R * x), R * drift_eval(model, x))


def test_triad_single_flip_is_not_a_symmetry():
    triad = build_triad((1, 1, -2))
    x = np.array([0.3, -0.7, 1.1])
    R = np.array([1.0, 1.0, -1.0])
    assert not np.allclose(triad.N(R * x), R * triad.N(x))
