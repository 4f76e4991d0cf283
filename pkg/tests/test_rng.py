import numpy as np
import pytest

from truncmlmc.rng import (
    Role, brownian_increments, brownian_window, make_stream, philox4x32, reference_normals,
    standard_normals,
)

# Published Philox4x32-10 known-answer vectors (counter, key, output).
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF, 0xFFFFFFFF), (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    out = philox4x32(np.array([ctr], dtype=np.uint64), key)
    assert tuple(int(v) for v in out[0]) == expected


def test_same_stream_gives_same_increments():
    s = make_stream(7, 0, 0)
    a = brownian_increments(s, 16, 0.25, 1)
    b = brownian_increments(make_stream(7, 0, 0), 16, 0.25, 1)
    assert np.array_equal(a, b)


def test_distinct_sample_index_or_seed_differ():
    base = brownian_increments(make_stream(7, 0, 0), 8, 1.0, 1)
    assert not np.array_equal(base, brownian_increments(make_stream(7, 0, 1), 8, 1.0, 1))
    a = brownian_increments(make_stream(7, 1, 0), 8, 1.0, 1)
    assert not np.array_equal(a, brownian_increments(make_stream(8, 1, 0), 8, 1.0, 1))


def test_roles_and_levels_are_separate_streams():
    streams = [make_stream(1, l, 0, r) for l in (0, 1) for r in Role]
    draws = {tuple(brownian_increments(s, 4, 1.0, 1).ravel()) for s in streams}
    assert len(draws) == len(streams)


def test_increment_moments():
    # n_steps = 4, dt = 0.25, 10^6 entries in total
    n = 250_000
    dB = brownian_window(11, 0, np.arange(n), Role.STANDALONE, 0, 4, 0.25, 1).ravel()
    assert dB.size == 10**6
    assert abs(dB.mean()) <= 4 * np.sqrt(0.25 / dB.size)
    # the sample variance of 10^6 normals has relative sd sqrt(2 / 10^6) ~ 0.14%
    assert abs(dB.var() / 0.25 - 1) < 0.01


def test_nonpositive_dt_rejected():
    with pytest.raises(ValueError):
        brownian_increments(make_stream(1, 0, 0), 4, 0.0, 1)
    with pytest.raises(ValueError):
        brownian_increments(make_stream(1, 0, 0), 4, -1.0, 1)


def test_windows_concatenate_to_the_full_path():
    idx = np.arange(5)
    full = brownian_window(3, 2, idx, Role.MLMC_PAIR, 0, 12, 0.1, 2)
    parts = [brownian_window(3, 2, idx, Role.MLMC_PAIR, a, b, 0.1, 2) for a, b in [(0, 3), (3, 4), (4, 12)]]
    assert np.array_equal(full, np.concatenate(parts, axis=1))
    for i in idx:
        assert np.array_equal(full[i], brownian_increments(make_stream(3, 2, i), 12, 0.1, 2))


def test_compiled_normals_match_numpy_reference():
    idx = np.array([0, 1, 2**32 - 1], dtype=np.uint64)
    fast = standard_normals(2**63 + 5, 3, idx, Role.PILOT, 3, 40)
    ref = reference_normals(2**63 + 5, 3, idx, Role.PILOT, 3, 40)
    np.testing.assert_allclose(fast, ref, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("kwargs", [dict(seed=-1), dict(seed=2**64), dict(level=-1), dict(sample_index=2**32)])
def test_stream_key_ranges(kwargs):
    args = dict(seed=1, level=0, sample_index=0) | kwargs
    with pytest.raises(ValueError):
        make_stream(**args)
