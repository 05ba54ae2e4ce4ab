import math

import numpy as np
import pytest

from hypomix.density import (
    compact_lowerbound, estimate_density, exp_moment, gaussian_tail_fit,
    integrated_autocorr_time, reflection_test, shell_maxima, summary_json,
)


def gaussian(n, d, seed=0, scale=1.0):
    return np.random.default_rng(seed).normal(scale=scale, size=(n, d))


def test_point_mass_fills_one_cell():
    dens = estimate_density(np.zeros((1000, 2)), 1.0, bins=10)
    assert np.count_nonzero(dens.values) == 1


def test_empty_samples_rejected():
    with pytest.raises(ValueError):
        estimate_density(np.zeros((0, 2)), 1.0)


def test_sample_size_precondition():
    with pytest.raises(ValueError, match="at least"):
        estimate_density(np.zeros((100, 2)), 1.0, bins=40)


def test_gaussian_oracle_2d():
    X = gaussian(10**6, 2, seed=1)
    dens = estimate_density(X, 3.0, bins=40)
    c = dens.centers()
    exact = np.exp(-0.5 * (c ** 2).sum(axis=1)) / (2 * np.pi)
    assert np.abs(np.ravel(dens.values) - exact).max() <= 0.02


def test_normalisation_identity():
    X = gaussian(20000, 3, seed=2, scale=1.5)
    dens = estimate_density(X, 2.0, bins=10)
    total = float(np.sum(dens.values)) * dens.cell_volume
    assert abs(total + dens.out_fraction - 1.0) <= 1e-12
    assert dens.out_fraction > 0


def test_marginals_above_three_dimensions():
    X = gaussian(20000, 4, seed=3)
    dens = estimate_density(X, 3.0, bins=20)
    assert not dens.full_grid
    assert sorted(dens.values) == [(i, j) for i in range(4) for j in range(i + 1, 4)]
    assert "i,j,xi,xj,f" in dens.to_csv().splitlines()[0]


def test_tail_fit_recovers_gaussian_rate():
    X = gaussian(10**6, 1, seed=4)
    dens = estimate_density(X, 4.0, bins=40)
    fit = gaussian_tail_fit(dens, 1.0)
    assert abs(fit.lambda_hat - 0.5) <= 0.05
    assert fit.r_squared >= 0.95 and fit.gaussian


def test_tail_fit_three_dimensional_gaussian():
    # single-cell shell maxima drift to about 0.38 here
    X = gaussian(10**6, 3, seed=6)
    fit = gaussian_tail_fit(estimate_density(X, 4 * np.sqrt(3), bins=40), 1.0)
    assert abs(fit.lambda_hat - 0.5) <= 0.05 and fit.r_squared >= 0.99


def test_tail_fit_needs_shells():
    dens = estimate_density(np.zeros((20000, 2)), 1.0, bins=10)
    with pytest.raises(ValueError, match="shells"):
        gaussian_tail_fit(dens, 0.5)


def test_shell_maxima_are_maxima():
    X = gaussian(200000, 2, seed=5)
    dens = estimate_density(X, 3.0, bins=30)
    radii, logs = shell_maxima(dens, 0.0, 3.0)
    assert np.all(np.diff(logs[2:]) < 0.2)
    assert len(radii) == len(logs) > 5


def test_lower_bound_table():
    a = estimate_density(gaussian(100000, 2, seed=6), 3.0, bins=20, epsilon=0.1)
    b = estimate_density(gaussian(100000, 2, seed=7, scale=1.2), 3.0, bins=20, epsilon=0.05)
    lb = compact_lowerbound([a, b], 1.0)
    assert lb.value > 0 and 1.0 <= lb.spread < 3
    assert [r["epsilon"] for r in lb.table] == [0.1, 0.05]


def test_lower_bound_with_empty_ball():
    X = np.full((20000, 2), 2.5)
    dens = estimate_density(X, 3.0, bins=10)
    lb = compact_lowerbound([dens], 1.0)
    assert lb.value == 0 and lb.spread is None
    assert lb.table[0]["empty_cell"]


def test_exp_moment_gamma_zero():
    est, ci, clipped = exp_moment(gaussian(100, 2), 0.0)
    assert est == 1.0 and ci == (1.0, 1.0) and clipped == 0


def test_exp_moment_gaussian_oracle():
    g = 0.2
    X = gaussian(200000, 1, seed=8)
    est, (lo, hi), _ = exp_moment(X, g)
    exact = 1 / math.sqrt(1 - 2 * g)
    assert lo <= est <= hi
    assert abs(est - exact) <= 2 * (hi - lo)


def test_exp_moment_clips():
    _, _, clipped = exp_moment(np.array([[100.0]]), 1.0, n_boot=2)
    assert clipped == 1


def test_autocorrelation_time_of_ar1():
    rho = 0.8
    rng = np.random.default_rng(9)
    x = np.zeros(100000)
    for k in range(1, len(x)):
        x[k] = rho * x[k - 1] + rng.normal()
    tau = integrated_autocorr_time(x)
    assert tau == pytest.approx((1 + rho) / (1 - rho), rel=0.15)
    assert integrated_autocorr_time(np.ones(10)) == 1.0


def test_reflection_test_symmetric_vs_shifted():
    X = gaussian(50000, 2, seed=10)
    sym = reflection_test(estimate_density(X, 3.0, bins=10), [1, -1])
    shifted = reflection_test(estimate_density(X + [0, 0.3], 3.0, bins=10), [1, -1])
    assert sym["p_value"] > 1e-3
    assert shifted["p_value"] < 1e-6


def test_summary_json_contents():
    dens = estimate_density(gaussian(200000, 1, seed=11), 4.0, bins=40)
    text = summary_json({0.1: gaussian_tail_fit(dens, 1.0)}, compact_lowerbound([dens], 1.0))
    assert '"lambda_hat"' in text and '"lower_bound"' in text


def test_density_csv_rows():
    dens = estimate_density(gaussian(4000, 2, seed=12), 2.0, bins=4)
    lines = dens.to_csv().splitlines()
    assert lines[0] == "x1,x2,f" and len(lines) == 17
