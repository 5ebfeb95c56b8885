import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcvorder import rng

# Published Philox4x32-10 known-answer vectors (Random123 kat_vectors).
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF, 0xFFFFFFFF), (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("counter,key,expected", KAT)
def test_philox_known_answers(counter, key, expected):
    out = rng.philox4x32(counter, key)
    assert tuple(int(w) for w in out) == expected


def test_seed_to_key_splits_words():
    assert rng.seed_to_key(0x0123456789ABCDEF) == (0x89ABCDEF, 0x01234567)
    with pytest.raises(ValueError):
        rng.seed_to_key(-1)
    with pytest.raises(ValueError):
        rng.seed_to_key(2**64)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), particle=st.integers(0, 2**40), step=st.integers(0, 2**20))
def test_normal_depends_only_on_its_counter(seed, particle, step):
    alone = rng.normals(seed, particle, step)
    batch = rng.normals(seed, np.array([particle, particle + 1, particle]), step)
    assert alone == batch[0] == batch[2]


def test_normals_moments_and_streams():
    z = rng.normals(11, np.arange(200_000), 3)
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 5 * np.sqrt(2 / z.size)
    other = rng.normals(11, np.arange(1000), 3, stream=rng.STREAM_PROBE)
    assert not np.array_equal(other, z[:1000])


def test_uniforms_in_open_interval():
    u = rng.uniforms(5, np.arange(100_000), 0)
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / u.size)
