import numpy as np
import pytest
from scipy import stats

from hypomix.rng import normals, philox4x32, split_seed

# Random123 known-answer vectors for Philox4x32-10
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    out = philox4x32(*ctr, *key)
    assert tuple(int(v) for v in out) == expected


def test_split_seed():
    assert split_seed(0x0123456789ABCDEF) == (0x89ABCDEF, 0x01234567)
    assert split_seed(-1) == (0xFFFFFFFF, 0xFFFFFFFF)


def test_normals_are_pure_functions_of_counter():
    a = normals(42, 7, 1000, 5)
    b = normals(42, 7, 1000, 5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, normals(42, 8, 1000, 5))
    assert not np.array_equal(a, normals(42, 7, 1001, 5))
    assert not np.array_equal(a, normals(43, 7, 1000, 5))


def test_prefix_consistency():
    # asking for fewer numbers returns a prefix of the longer draw
    assert np.array_equal(normals(1, 2, 3, 3), normals(1, 2, 3, 9)[:3])


def test_normal_distribution():
    x = np.concatenate([normals(5, t, s, 6) for t in range(40) for s in range(250)])
    assert abs(x.mean()) < 4 / np.sqrt(len(x))
    assert abs(x.var() - 1) < 0.02
    assert stats.kstest(x, "norm").pvalue > 1e-3


def test_steps_beyond_32_bits():
    a = normals(1, 0, 2**32 + 5, 4)
    b = normals(1, 0, 5, 4)
    assert np.all(np.isfinite(a)) and not np.array_equal(a, b)
