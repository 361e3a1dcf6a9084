import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenforecast import metrics as M
from oracles import (brier_loop, crps_quad, crps_step_integral, energy_loop, pinball_loop,
                     quantile_sorted, variogram_loop, winkler_loop)

RNG = np.random.default_rng(33)


def test_crps_point_mass_on_truth():
    assert M.crps_ensemble(np.full((5, 1), 0.3), np.array([0.3]))[0] == 0.0


def test_crps_zero_one():
    assert M.crps_ensemble(np.array([[0.0], [1.0]]), np.array([0.0]))[0] == 0.25
    assert crps_step_integral([0.0, 1.0], 0.0) == 0.25


def test_crps_matches_quadrature():
    for m in range(1, 11):
        ens, y = RNG.random(m), RNG.random()
        v = M.crps_ensemble(ens[:, None], np.array([y]))[0]
        assert abs(v - crps_quad(list(ens), y)) < 1e-6
        assert abs(v - crps_step_integral(list(ens), y)) < 1e-12


def test_crps_monte_carlo():
    ens, y = RNG.random(6), 0.4
    lo, hi = min(ens.min(), y), max(ens.max(), y)
    x = np.random.default_rng(0).uniform(lo, hi, 10 ** 6)
    F = (ens[None, :] <= x[:, None]).mean(1)
    mc = np.mean((F - (x >= y)) ** 2) * (hi - lo)
    assert abs(M.crps_ensemble(ens[:, None], np.array([y]))[0] - mc) < 1e-3


def test_crps_empty():
    with pytest.raises(ValueError, match="empty"):
        M.crps_avg(np.zeros((0, 3)), np.zeros(3))


def test_ss_crps():
    assert M.ss_crps(0.2, 0.2) == 0.0
    assert M.ss_crps(0.0, 0.3) == 1.0
    assert abs(M.ss_crps(0.0465, 0.0465 / 0.2755) - 0.7245) < 1e-12
    with pytest.raises(ValueError):
        M.ss_crps(0.1, 0.0)


def test_variogram_cases():
    Y = RNG.random((3, 5))
    assert M.variogram_score(Y, np.stack([Y, Y]), 1) == 0.0
    assert M.variogram_score(RNG.random((1, 5)), RNG.random((4, 1, 5)), 2) == 0.0
    Y, X = RNG.random((2, 3)), RNG.random((2, 2, 3))
    for k in (1, 2):
        assert abs(M.variogram_score(Y, X, k) - variogram_loop(Y, X, k)) < 1e-12
    with pytest.raises(ValueError, match="mismatch"):
        M.variogram_score(RNG.random((2, 3)), RNG.random((2, 3, 3)))


def test_energy_cases():
    y = RNG.random((4, 2))
    assert M.energy_score(np.stack([y, y, y]), y) == 0.0
    s = RNG.random((4, 2))
    assert abs(M.energy_score(s[None], y) - np.linalg.norm(s - y)) < 1e-14
    X = RNG.random((4, 4, 2))
    assert abs(M.energy_score(X, y) - energy_loop(X, y)) < 1e-12


def test_energy_scalar_equals_crps():
    X, y = RNG.random((7, 1)), RNG.random(1)
    assert abs(M.energy_score(X, y) - M.crps_ensemble(X, y)[0]) < 1e-14


def test_winkler_cases():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    lo, hi = quantile_sorted([0, 1, 2, 3], 0.05), quantile_sorted([0, 1, 2, 3], 0.95)
    assert abs(M.winkler_score(X, np.array([1.5])) - (hi - lo)) < 1e-14
    assert abs(M.winkler_score(X, np.array([lo - 0.1])) - ((hi - lo) + 20 * 0.1)) < 1e-12
    X, y = RNG.random((4, 3, 2)), RNG.random((3, 2))
    assert abs(M.winkler_score(X, y) - winkler_loop(X, y, 0.1)) < 1e-12
    with pytest.raises(ValueError):
        M.winkler_score(X[:1], y)


def test_quantiles_match_sort_oracle():
    X = RNG.random((4, 5))
    for q in (0.05, 0.1, 0.5, 0.77, 0.95):
        got = M.ensemble_quantiles(X, [q])[0]
        ref = [quantile_sorted(list(X[:, j]), q) for j in range(5)]
        np.testing.assert_allclose(got, ref, atol=1e-15)


def test_pinball_cases():
    y = RNG.random(3)
    assert M.pinball_avg(np.stack([y, y]), y) == 0.0
    X = np.array([[0.2], [0.4], [0.9]])
    assert abs(M.pinball_avg(X, np.array([0.1]), [0.5]) - 0.5 * 0.3) < 1e-15
    X, y = RNG.random((4, 3, 2)), RNG.random((3, 2))
    assert abs(M.pinball_avg(X, y) - pinball_loop(X, y, M.DEFAULT_QUANTILES)) < 1e-12
    with pytest.raises(ValueError):
        M.pinball_avg(X, y, [0.0, 0.5])


def test_brier_cases():
    y = RNG.random(3)
    assert M.brier_avg(np.stack([y, y]), y) == 0.0
    X = np.array([[0.8], [0.2]])
    assert M.brier_avg(X, np.array([0.9]), [0.5]) == 0.25
    X, y = RNG.random((4, 3, 2)), RNG.random((3, 2))
    assert abs(M.brier_avg(X, y) - brier_loop(X, y, M.DEFAULT_QUANTILES)) < 1e-12
    assert abs(M.brier_avg(X * 50, y * 50, capacity=50) - brier_loop(X * 50, y * 50,
                                                                    [50 * t for t in M.DEFAULT_QUANTILES])) < 1e-12
    with pytest.raises(ValueError):
        M.brier_avg(X, y, [])


def test_rmse_s_score():
    y = RNG.random((48, 2))
    assert M.rmse_avg(y, y, 24) == 0.0 and M.s_score(y, y, 24) == 0.0
    assert abs(M.rmse_avg(y + 0.1, y, 24) - 0.1) < 1e-12
    assert abs(M.s_score(y - 0.1, y, 24) - 0.1) < 1e-12
    t = RNG.random((48, 2))
    ref = np.mean([np.sqrt(np.mean((t[d * 24:(d + 1) * 24] - y[d * 24:(d + 1) * 24]) ** 2)) for d in range(2)])
    assert abs(M.rmse_avg(t, y, 24) - ref) < 1e-14
    with pytest.raises(ValueError, match="days"):
        M.rmse_avg(t[:47], y[:47], 24)


def test_apd_cases():
    y = np.full(50, 0.5)
    assert abs(M.apd(np.full((10, 50), 0.7), y) - 100 * np.mean(M.DEFAULT_COVERAGES)) < 1e-9
    g = np.random.default_rng(1)
    X = g.normal(size=(2000, 4000))
    assert M.apd(X, g.normal(size=4000)) < 2.0
    X = np.tile(np.arange(5.0)[:, None], (1, 4))
    assert M.apd(X, np.array([-1.0, 1.5, 2.5, 5.0]), [0.5]) == 0.0


def test_evaluate_report(tmp_path):
    X, y = RNG.random((6, 48, 2)), RNG.random((48, 2))
    rep = M.evaluate(X, y, RNG.random((48, 2)), 24)
    assert rep.rmse_avg >= 0 and rep.crps_avg >= 0 and rep.ss_crps <= 1 and 0 <= rep.apd_pct <= 100
    assert M.MetricsReport(**__import__("json").loads(rep.to_json())) == rep
    days = M.per_day(X, y, 24)
    assert len(days) == 2 and days[1]["day"] == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(0, 10 ** 6))
def test_scores_permutation_invariant(m, n, s, seed):
    g = np.random.default_rng(seed)
    X, y = g.random((m, n, s)), g.random((n, s))
    perm = g.permutation(m)
    for f in (M.crps_avg, M.energy_score, M.pinball_avg, M.brier_avg):
        assert abs(f(X, y) - f(X[perm], y)) < 1e-12
    if m >= 2:
        assert abs(M.winkler_score(X, y) - M.winkler_score(X[perm], y)) < 1e-12
    Xv = np.swapaxes(X, 1, 2)
    assert abs(M.variogram_score(y.T, Xv) - M.variogram_score(y.T, Xv[perm])) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(2, 5), st.integers(0, 10 ** 6))
def test_variogram_oracle_and_site_symmetry(m, s, L, seed):
    g = np.random.default_rng(seed)
    Y, X = g.random((s, L)), g.random((m, s, L))
    assert abs(M.variogram_score(Y, X, 1) - variogram_loop(Y, X, 1)) < 1e-12
    perm = g.permutation(s)
    assert abs(M.variogram_score(Y[perm], X[:, perm]) - M.variogram_score(Y, X)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=10), st.floats(0, 1))
def test_crps_nonnegative_and_integral(ens, y):
    v = M.crps_ensemble(np.array(ens)[:, None], np.array([y]))[0]
    assert v >= -1e-15
    assert abs(v - crps_step_integral(ens, y)) < 1e-12
