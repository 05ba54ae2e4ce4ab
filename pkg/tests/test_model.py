from fractions import Fraction

import numpy as np
import pytest

from hypomix.model import (
    DimensionError, ModelError, build_lorenz96, build_ou, build_sabra, build_triad,
    check_structure, drift_eval, lambda_min, lyapunov_certificate, lyapunov_ratio,
    require_simulable,
)
from hypomix.poly import PolyVectorField


def test_l96_drift_vanishes_at_origin():
    m = build_lorenz96(5, [1, 1, 0, 0, 0])
    assert np.array_equal(drift_eval(m, np.zeros(5)), np.zeros(5))


def test_l96_constant_state_only_feels_dissipation():
    m = build_lorenz96(5, [1, 1, 0, 0, 0], epsilon=0.1)
    np.testing.assert_allclose(drift_eval(m, np.ones(5)), -0.1 * np.ones(5), rtol=0, atol=1e-15)


def test_triad_drift_at_ones():
    m = build_triad((1, 1, -2), epsilon=0.1)
    np.testing.assert_allclose(drift_eval(m, [1, 1, 1]), [-1.1, -1.1, 1.9], atol=1e-15)


def test_drift_dimension_mismatch():
    m = build_triad((1, 1, -2))
    with pytest.raises(DimensionError):
        drift_eval(m, [1.0, 2.0])


def test_l96_n4_hand_expansion():
    m = build_lorenz96(4, [1, 1, 0, 0])
    u = [1, 2, 3, 4]
    # N_m = -(u_{m+1} - u_{m-2}) u_{m-1}, cyclic
    expected = [-(u[(k + 1) % 4] - u[(k - 2) % 4]) * u[(k - 1) % 4] for k in range(4)]
    assert m.N.evaluate_exact(u) == [Fraction(v) for v in expected]
    # (u2 - u3) u4 = -4, so N_1 = +4
    assert (u[1] - u[2]) * u[3] == -4 and expected[0] == 4
    np.testing.assert_allclose(drift_eval(m.with_params(epsilon=0.1), u),
                               -0.1 * np.array(u) - np.array(expected))


def test_l96_noise_directions_drop_zeros():
    assert build_lorenz96(5, [1, 1, 0, 0, 0]).r == 2
    assert build_lorenz96(5, [0] * 5).r == 0


def test_l96_needs_four_oscillators():
    with pytest.raises(ModelError):
        build_lorenz96(3, [1, 1, 1])


@pytest.mark.parametrize("n", [4, 5, 8])
def test_l96_structure(n):
    rep = check_structure(build_lorenz96(n, [1] * n))
    assert rep.ok and rep.degree == 2


def test_l96_flipped_sign_has_witness():
    m = build_lorenz96(5, [1, 1, 0, 0, 0])
    comps = m.N.components
    k = next(iter(comps[0]))
    comps[0] = dict(comps[0])
    comps[0][k] = -comps[0][k]
    bad = m.with_params(N=PolyVectorField(5, comps))
    rep = check_structure(bad)
    assert not rep.energy_conserving
    assert "energy_conserving" in rep.witnesses


@pytest.mark.parametrize("J", [3, 4])
def test_sabra_structure(J):
    rep = check_structure(build_sabra(J, Fraction(1, 2), [1] * J, [1] * J))
    assert rep.ok and rep.degree == 2


def test_sabra_zero_state():
    m = build_sabra(3, Fraction(1, 2), [1, 0, 0], [1, 0, 0])
    assert m.N.evaluate_exact([0] * 6) == [0] * 6


def test_sabra_hand_expansion_j4():
    c = Fraction(1, 2)
    m = build_sabra(4, c, [1, 1, 0, 0], [1, 1, 0, 0])
    a = [1, 0, 0, 0]
    b = [0, 1, 0, 0]
    u = [complex(x, y) for x, y in zip(a, b)]

    def get(k):
        return u[k - 1] if 1 <= k <= 4 else 0

    rhs = []
    for mm in range(1, 5):
        k = 2 ** mm
        rhs.append(1j * k * (get(mm + 1).conjugate() * get(mm + 2)
                             - c / 2 * get(mm - 1).conjugate() * get(mm + 1)
                             + (1 - c) / 4 * get(mm - 2) * get(mm - 1)))
    # the model stores N with dx = -N dt, so -N must equal the nonlinear rhs
    got = [-v for v in m.N.evaluate_exact(a + b)]
    expected = [Fraction(z.real).limit_denominator() for z in rhs] + \
               [Fraction(z.imag).limit_denominator() for z in rhs]
    assert got == expected
    assert any(v != 0 for v in got)


def test_sabra_rejects_bad_parameter():
    for c in (0, 1, 2):
        with pytest.raises(ModelError):
            build_sabra(3, c, [1] * 3, [1] * 3)


def test_sabra_dissipation_matrix():
    m = build_sabra(3, Fraction(1, 2), [1] * 3, [1] * 3)
    assert [m.A[i][i] for i in range(6)] == [4, 16, 64, 4, 16, 64]


def test_triad_structure_and_rejections():
    assert check_structure(build_triad((1, 1, -2))).ok
    with pytest.raises(ModelError, match="sum"):
        build_triad((1, 1, -1))
    with pytest.raises(ModelError, match="alphas\\[2\\]"):
        build_triad((1, -1, 0))
    with pytest.raises(ModelError, match="q1 and q2"):
        build_triad((1, 1, -2), q1=0)


def test_model_parameter_ranges():
    with pytest.raises(ModelError):
        build_triad((1, 1, -2), epsilon=0.0)
    with pytest.raises(ModelError):
        build_triad((1, 1, -2), delta=1.5)


def test_ou_is_simulable_but_not_structural():
    m = build_ou(2, (1,))
    require_simulable(m)
    assert not check_structure(m).ok


def test_lambda_min_exact_for_diagonal():
    assert lambda_min([[Fraction(3), 0], [0, Fraction(1, 2)]]) == 0.5


def test_lyapunov_1d_closed_form():
    a, z = 2.0, 1.5
    m = build_ou(a, (z,))
    cert = lyapunov_certificate(m, 3.0, 21, epsilons=(1e-3, 1.0), deltas=(0.0,))
    assert cert.gamma == pytest.approx(a / (4 * (z * z + 1)))
    x = np.linspace(-3, 3, 13)[:, None]
    g = cert.gamma
    # (L V) / (eps V) = 2 g z^2 + 4 g^2 z^2 x^2 - 2 g a x^2
    expected = 2 * g * z * z + 4 * g * g * z * z * x[:, 0] ** 2 - 2 * g * a * x[:, 0] ** 2
    np.testing.assert_allclose(lyapunov_ratio(m, g, x, 0.0), expected, rtol=1e-13)
    assert cert.verified_on_grid


def test_lyapunov_triad_certificate():
    m = build_triad((1, 1, -2))
    cert = lyapunov_certificate(m, 3 * np.sqrt(2), 21, epsilons=(1e-3, 1.0), deltas=(0.0, 1.0))
    assert cert.verified_on_grid
    assert cert.leading_coefficient < 0
    assert cert.kappa == pytest.approx(cert.gamma)


def test_lyapunov_without_noise():
    m = build_lorenz96(4, [0] * 4)
    cert = lyapunov_certificate(m, 2.0, 9)
    assert cert.gamma == pytest.approx(1 / 16)
    assert cert.verified_on_grid


def test_lyapunov_rejects_non_spd():
    m = build_ou(1, (1,)).with_params(A=[[-1]])
    with pytest.raises(ModelError):
        lyapunov_certificate(m, 1.0, 5)
