"""Random streams and the .ten wire format."""

import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvfsr.errors import FormatError
from lvfsr.numeric.rng import Rng
from lvfsr.numeric.tenio import (atomic_write, read_ten, tensor_bytes,
                                 tensor_from_bytes, write_ten)

MASK = (1 << 64) - 1


def mix64_ref(z: int) -> int:
    # independent scalar SplitMix64 finalizer, plain Python ints
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def draws_ref(seed: int, n: int):
    golden = 0x9E3779B97F4A7C15
    return [mix64_ref((seed + (i + 1) * golden) & MASK) for i in range(n)]


@pytest.mark.parametrize("seed", [0, 1, 42, MASK])
def test_uniform_matches_scalar_reference(seed):
    got = Rng(seed).uniform((16,))
    want = np.array([(u >> 11) * 2.0**-53 for u in draws_ref(seed, 16)])
    assert np.array_equal(got, want)


def test_draws_continue_across_calls():
    r = Rng(7)
    a = np.concatenate([r.uniform((3,)), r.uniform((5,))])
    assert np.array_equal(a, Rng(7).uniform((8,)))


def test_same_seed_same_sequence():
    assert np.array_equal(Rng(123).uniform((64,)), Rng(123).uniform((64,)))


def test_stream_is_keyed_by_name():
    root = Rng(5)
    assert root.stream("a").seed == root.stream("a").seed
    assert root.stream("a").seed != root.stream("b").seed
    # sibling usage must not perturb a stream's draws
    isolated = Rng(5).stream("w").uniform((4,))
    r = Rng(5)
    r.stream("other").uniform((100,))
    assert np.array_equal(r.stream("w").uniform((4,)), isolated)


def test_stream_nesting_order_matters():
    r = Rng(9)
    assert r.stream("a").stream("b").seed != r.stream("b").stream("a").seed


def test_uniform_range_and_shape():
    u = Rng(3).uniform((100,), low=-2.0, high=5.0)
    assert u.shape == (100,)
    assert np.all(u >= -2.0) and np.all(u < 5.0)
    scalar = Rng(3).uniform()
    assert isinstance(scalar, float) or scalar.shape == ()


def test_integers_in_range():
    v = Rng(11).integers(1000, 7)
    assert v.min() >= 0 and v.max() < 7
    assert len(np.unique(v)) == 7  # 1000 draws cover all 7 residues


@pytest.mark.parametrize("n", [1, 2, 8, 33])
def test_permutation_is_permutation(n):
    p = Rng(n).permutation(n)
    assert sorted(p.tolist()) == list(range(n))


def test_permutation_varies_with_seed():
    assert not np.array_equal(Rng(0).permutation(50), Rng(1).permutation(50))


@given(st.integers(min_value=0, max_value=MASK), st.integers(0, 500))
@settings(max_examples=30, deadline=None)
def test_uniform_unit_interval_property(seed, skip):
    r = Rng(seed)
    if skip:
        r.uniform((skip,))
    u = r.uniform((32,))
    assert np.all((u >= 0.0) & (u < 1.0))


# --- .ten ---------------------------------------------------------------

@pytest.mark.parametrize("shape", [(), (1,), (5,), (3, 4), (2, 3, 4, 5)])
def test_ten_round_trip(tmp_path, shape):
    arr = np.arange(int(np.prod(shape)), dtype=np.float32).reshape(shape) * 0.5
    p = tmp_path / "t.ten"
    write_ten(p, arr)
    back = read_ten(p)
    assert back.shape == tuple(shape)
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)


def test_ten_bytes_are_canonical():
    arr = np.linspace(-1, 1, 12, dtype=np.float32).reshape(3, 4)
    buf = tensor_bytes(arr)
    assert buf == tensor_bytes(tensor_from_bytes(buf))


def test_ten_header_layout():
    buf = tensor_bytes(np.zeros((2, 3), dtype=np.float32))
    assert buf[:4] == b"LVT1"
    assert int.from_bytes(buf[4:8], "little") == 2
    assert int.from_bytes(buf[8:12], "little") == 2
    assert int.from_bytes(buf[12:16], "little") == 3
    assert len(buf) == 16 + 4 * 6


def test_ten_float64_written_as_float32(tmp_path):
    p = tmp_path / "d.ten"
    write_ten(p, np.array([1.0, 1.0 / 3.0], dtype=np.float64))
    assert read_ten(p).dtype == np.float32


def test_ten_bad_magic():
    buf = b"XXXX" + tensor_bytes(np.zeros(2, dtype=np.float32))[4:]
    with pytest.raises(FormatError, match="magic"):
        tensor_from_bytes(buf)


def test_ten_truncated_header():
    with pytest.raises(FormatError, match="truncated"):
        tensor_from_bytes(b"LVT1\x01")


def test_ten_truncated_extents():
    buf = b"LVT1" + (3).to_bytes(4, "little") + b"\x00" * 4
    with pytest.raises(FormatError, match="truncated"):
        tensor_from_bytes(buf)


def test_ten_payload_size_mismatch():
    buf = tensor_bytes(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(FormatError):
        tensor_from_bytes(buf[:-4])
    with pytest.raises(FormatError):
        tensor_from_bytes(buf + b"\x00\x00\x00\x00")


def test_ten_rank_too_large():
    buf = b"LVT1" + (9).to_bytes(4, "little") + b"\x00" * 64
    with pytest.raises(FormatError, match="rank"):
        tensor_from_bytes(buf)
    with pytest.raises(FormatError, match="rank"):
        tensor_bytes(np.zeros((1,) * 9, dtype=np.float32))


def test_ten_error_names_file(tmp_path):
    p = tmp_path / "bad.ten"
    p.write_bytes(b"LVT9" + b"\x00" * 16)
    with pytest.raises(FormatError, match="bad.ten"):
        read_ten(p)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    p = tmp_path / "out.bin"
    atomic_write(p, b"hello")
    assert p.read_bytes() == b"hello"
    atomic_write(p, b"replaced")
    assert p.read_bytes() == b"replaced"
    assert os.listdir(tmp_path) == ["out.bin"]
