import dataclasses
import warnings

import mpmath
import numpy as np
import pytest

from truncmlmc.analysis import fit_rate
from truncmlmc.rng import Role, make_stream
from truncmlmc.schemes import (
    SchemeKind, TruncationConfig, TruncationWarning, default_truncation, em_step, make_truncation,
    simulate_coupled_pair, simulate_from_increments, simulate_level_batch, simulate_pair_batch,
    simulate_terminal, truncate_state, truncation_radius,
)
from truncmlmc.sde import LevelGrid, gbm, lewis, zero

CLASSIC, TRUNC = SchemeKind.CLASSIC_EM, SchemeKind.TRUNCATED_EM


def fixed_radius(r):
    """A config whose radius is ``r`` at every step."""
    return TruncationConfig(lambda u: u, lambda v: v, lambda s: r)


@pytest.mark.parametrize("x,radius,expected", [
    ([3.0, 4.0], 10.0, [3.0, 4.0]),
    ([6.0, 8.0], 5.0, [3.0, 4.0]),
    ([0.0, 0.0], 1.0, [0.0, 0.0]),
])
def test_truncate_state(x, radius, expected):
    assert truncate_state(x, radius).tolist() == expected


def test_truncated_norm_is_min_of_norm_and_radius():
    x = np.random.default_rng(1).normal(scale=5, size=(200, 3))
    y = truncate_state(x, 2.0)
    n = np.linalg.norm(x, axis=1)
    np.testing.assert_allclose(np.linalg.norm(y, axis=1), np.minimum(n, 2.0), rtol=1e-14)
    # direction is kept
    np.testing.assert_allclose(y / np.linalg.norm(y, axis=1)[:, None], x / n[:, None], rtol=1e-13)


def test_default_radius_high_precision():
    mpmath.mp.dps = 30
    expected = mpmath.cbrt(mpmath.root(32, 4) / 2)
    assert truncation_radius(default_truncation(), 1 / 32) == pytest.approx(float(expected), rel=1e-14)


def test_identity_omega_radius():
    cfg = make_truncation({"name": "identity"})
    assert truncation_radius(cfg, 1 / 16) == 2.0


def test_radius_nondecreasing_as_step_shrinks():
    cfg = default_truncation()
    radii = [truncation_radius(cfg, 2.0**-l) for l in range(0, 40)]
    assert all(b >= a for a, b in zip(radii, radii[1:]))


def test_step_above_s_star_warns():
    with pytest.warns(TruncationWarning):
        truncation_radius(default_truncation(s_star=0.5), 1.0)


def test_config_check():
    with pytest.warns(TruncationWarning):
        notes = default_truncation().check()
    assert notes and "omega(2)" in notes[0]
    bad = TruncationConfig(lambda u: u, lambda v: 2 * v, lambda s: s**-0.25)
    with pytest.raises(ValueError, match="inverse"):
        bad.check()
    grows = TruncationConfig(lambda u: u, lambda v: v, lambda s: s**-0.5)
    with pytest.raises(ValueError, match="1/4"):
        grows.check()
    with pytest.raises(ValueError):
        default_truncation(s_star=1.5)


def test_em_step_examples():
    p = lewis(1.0)
    assert em_step(p, CLASSIC, None, 0.25, [1.0], [0.1])[0] == 1.1
    assert em_step(p, TRUNC, fixed_radius(1.0), 0.25, [1.0], [0.1])[0] == 1.1
    mpmath.mp.dps = 30
    half = mpmath.mpf("0.5")
    oracle = 1 + (half - half**3) * mpmath.mpf("0.25") + half**mpmath.mpf("1.5") * mpmath.mpf("0.1")
    got = em_step(p, TRUNC, fixed_radius(0.5), 0.25, [1.0], [0.1])[0]
    assert got == pytest.approx(float(oracle), rel=1e-15)
    assert got == pytest.approx(1.1291053, abs=5e-8)


def test_iterate_itself_is_not_truncated():
    x = em_step(lewis(), TRUNC, fixed_radius(0.5), 0.25, [3.0], [0.0])
    assert x[0] == 3.0 + (0.5 - 0.125) * 0.25


def test_zero_problem_is_stationary():
    p = zero(x0=1.5)
    out = simulate_terminal(p, CLASSIC, None, 1 / 8, np.random.default_rng(0).normal(size=8))
    assert out.finite and out.terminal_state[0] == 1.5 and out.steps_taken == 8
    f, c = simulate_coupled_pair(p, TRUNC, default_truncation(), LevelGrid(2, 1.0), 3, make_stream(0, 3, 0))
    assert f.terminal_state[0] == c.terminal_state[0] == 1.5


def test_classic_blows_up_from_large_start():
    p = lewis(10.0, T=5.0)
    n_bad = 0
    for i in range(20):
        dB = np.sqrt(0.5) * np.random.default_rng(i).normal(size=10)
        out = simulate_terminal(p, CLASSIC, None, 0.5, dB)
        if not out.finite:
            n_bad += 1
            assert out.blowup_step == out.steps_taken and 1 <= out.blowup_step <= 10
    assert n_bad == 20


def test_truncated_stays_finite_where_classic_blows_up():
    p = lewis(10.0, T=5.0)
    dB = np.sqrt(0.5) * np.random.default_rng(0).normal(size=10)
    assert simulate_terminal(p, TRUNC, default_truncation(), 0.5, dB).finite


def test_horizon_mismatch_rejected():
    with pytest.raises(ValueError):
        simulate_terminal(gbm(), CLASSIC, None, 0.1, np.zeros(5))


def test_classic_pairs_on_lewis_diverge_sometimes():
    _, okf, _, okc = simulate_pair_batch(lewis(4.0), CLASSIC, None, LevelGrid(2, 1.0), 3, 4, np.arange(1000))
    bad = ~(okf & okc)
    assert 0 < bad.mean() < 1


@pytest.mark.parametrize("problem", [lewis(2.0), gbm()], ids=["lewis", "gbm"])
@pytest.mark.parametrize("scheme", [CLASSIC, TRUNC])
def test_compiled_and_numpy_paths_agree_bitwise(problem, scheme):
    plain = dataclasses.replace(problem, kernel=None)
    grid, cfg = LevelGrid(2, 1.0), default_truncation()
    with np.errstate(all="ignore"):
        a = simulate_pair_batch(problem, scheme, cfg, grid, 4, 9, np.arange(500))
        b = simulate_pair_batch(plain, scheme, cfg, grid, 4, 9, np.arange(500))
        c = simulate_level_batch(problem, scheme, cfg, grid, 3, 9, np.arange(500), Role.STANDALONE)
        d = simulate_level_batch(plain, scheme, cfg, grid, 3, 9, np.arange(500), Role.STANDALONE)
    for u, v in zip(a + c, b + d):
        assert np.array_equal(u, v, equal_nan=True)


def test_batch_matches_single_paths():
    p, grid, cfg = lewis(2.0), LevelGrid(2, 1.0), default_truncation()
    with np.errstate(all="ignore"):
        xf, okf, xc, okc = simulate_pair_batch(p, CLASSIC, cfg, grid, 3, 2, np.arange(40))
        for i in range(40):
            f, c = simulate_coupled_pair(p, CLASSIC, cfg, grid, 3, make_stream(2, 3, i))
            assert np.array_equal(f.terminal_state, xf[i], equal_nan=True) and f.finite == okf[i]
            assert np.array_equal(c.terminal_state, xc[i], equal_nan=True) and c.finite == okc[i]


def test_inactive_truncation_matches_classic():
    p = gbm()
    huge = make_truncation({"name": "power", "coef": 1e-12, "power": 1.0})
    dB = np.sqrt(1 / 64) * np.random.default_rng(3).normal(size=(1000, 64, 1))
    a, _ = simulate_from_increments(p, CLASSIC, None, 1 / 64, dB)
    b, _ = simulate_from_increments(p, TRUNC, huge, 1 / 64, dB)
    assert np.array_equal(a, b)


def test_gbm_coupled_differences_shrink_at_half_order():
    p, grid = gbm(), LevelGrid(2, 1.0)
    huge = make_truncation({"name": "power", "coef": 1e-12, "power": 1.0})
    pts = []
    for l in range(1, 7):
        xf, _, xc, _ = simulate_pair_batch(p, TRUNC, huge, grid, l, 1, np.arange(10_000))
        pts.append((grid.step(l), float(np.mean(np.abs(xf - xc)))))
    assert 0.35 <= fit_rate(pts).slope <= 0.65


def test_missing_config_for_truncated_scheme():
    with pytest.raises(ValueError):
        em_step(gbm(), TRUNC, None, 0.5, [1.0], [0.0])
