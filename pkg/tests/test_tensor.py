import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minibit.errors import NumericError, ShapeError
from minibit.tensor import (Normal, Prng, Uniform, as_tensor, elementwise, matmul,
                            reduce_moments, reshape, tensor_new)

M64 = (1 << 64) - 1


def ref_pcg32(seed, stream, n):
    """Straight transcription of pcg32_srandom_r / pcg32_random_r on Python ints."""
    inc = ((stream << 1) | 1) & M64
    state = 0
    state = (state * 6364136223846793005 + inc) & M64
    state = (state + seed) & M64
    state = (state * 6364136223846793005 + inc) & M64
    out = []
    for _ in range(n):
        old = state
        state = (old * 6364136223846793005 + inc) & M64
        xs = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        out.append(((xs >> rot) | (xs << ((32 - rot) & 31))) & 0xFFFFFFFF)
    return out


# first outputs of the reference pcg32 demo (seed 42, sequence 54)
PCG32_KAT = [0xA15C02B7, 0x7B47F409, 0xBA1D3330, 0x83D2F293, 0xBFA4784B, 0xCBED606E]


def test_pcg32_known_answer():
    assert ref_pcg32(42, 54, 6) == PCG32_KAT
    rng = Prng(42)
    assert [rng.next_u32() for _ in range(6)] == PCG32_KAT


@pytest.mark.parametrize("seed,stream", [(0, 0), (42, 54), (2**64 - 1, 7), (123456789, 1013)])
def test_vector_fill_matches_scalar_reference(seed, stream):
    ref = ref_pcg32(seed, stream, 1000)
    rng = Prng(seed, stream)
    assert rng.u32_array(1000).tolist() == ref
    # the stream continues where the bulk fill stopped
    rng2 = Prng(seed, stream)
    rng2.u32_array(999)
    assert rng2.next_u32() == ref[-1]


def test_uniform_fill_seed42_matches_oracle():
    t = tensor_new([4], Uniform(0.0, 1.0), Prng(42))
    expected = np.array([(u >> 8) / 2**24 for u in PCG32_KAT[:4]], dtype=np.float32)
    assert t.dtype == np.float32
    assert np.array_equal(t, expected)


def test_constant_fills():
    assert np.array_equal(tensor_new([2, 2], 0), np.zeros((2, 2), np.float32))
    assert np.array_equal(tensor_new([3], 1), np.ones(3, np.float32))


def test_invalid_shapes():
    with pytest.raises(ShapeError):
        tensor_new([2, 0])
    with pytest.raises(ShapeError):
        tensor_new([])


def test_long_stream_reproducible():
    a = Prng(99).u32_array(1_000_000)
    b = Prng(99).u32_array(1_000_000)
    assert np.array_equal(a, b)


def test_state_round_trip():
    rng = Prng(5)
    rng.u32_array(17)
    clone = Prng.from_state(rng.get_state())
    assert clone.u32_array(50).tolist() == rng.u32_array(50).tolist()


def test_normal_moments():
    z = Prng(3).normal_array(200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01
    t = tensor_new([1000], Normal(2.0, 0.5), Prng(3))
    assert abs(float(t.mean()) - 2.0) < 0.05


def test_bounded_and_permutation():
    rng = Prng(11)
    draws = [rng.bounded(6) for _ in range(6000)]
    assert set(draws) == set(range(6))
    counts = np.bincount(draws)
    assert counts.min() > 850
    perm = Prng(11).permutation(50)
    assert sorted(perm) == list(range(50))
    assert perm == Prng(11).permutation(50)


def test_beta_range_and_mean():
    rng = Prng(8)
    xs = [rng.beta(0.1, 0.1) for _ in range(4000)]
    assert all(0.0 <= x <= 1.0 for x in xs)
    assert abs(np.mean(xs) - 0.5) < 0.03
    ys = [rng.beta(2.0, 5.0) for _ in range(4000)]
    assert abs(np.mean(ys) - 2 / 7) < 0.01


def test_elementwise_examples():
    a = as_tensor([1, 2])
    assert elementwise("add", a, as_tensor([3, 4])).tolist() == [4, 6]
    assert elementwise("scale", a, 0).tolist() == [0, 0]
    assert elementwise("mul", as_tensor([2, 3]), as_tensor([4, 5])).tolist() == [8, 15]
    assert elementwise("max", as_tensor([-1, 2]), 0).tolist() == [0, 2]
    with pytest.raises(ShapeError):
        elementwise("add", a, as_tensor([1, 2, 3]))


def test_reduce_moments_examples():
    m, v = reduce_moments(as_tensor([1, 3]), {0})
    assert (float(m[0]), float(v[0])) == (2.0, 1.0)
    m, v = reduce_moments(as_tensor([[1, 2], [3, 4]]), {0, 1})
    assert (float(m[0]), float(v[0])) == (2.5, 1.25)
    m, v = reduce_moments(as_tensor([7, 7, 7]), {0})
    assert float(v[0]) == 0.0
    with pytest.raises(ShapeError):
        reduce_moments(as_tensor([1, 2]), {1})


def test_matmul_examples():
    b = as_tensor([[1, 2], [3, 4]])
    assert np.array_equal(matmul(np.eye(2, dtype=np.float32), b), b)
    assert matmul(as_tensor([[1, 2]]), as_tensor([[3], [4]])).tolist() == [[11]]
    assert not matmul(np.zeros((2, 3), np.float32), np.ones((3, 4), np.float32)).any()
    with pytest.raises(ShapeError):
        matmul(as_tensor([[1, 2]]), as_tensor([[1, 2]]))


def test_as_tensor_rejects_nan():
    with pytest.raises(NumericError):
        as_tensor([1.0, float("nan")])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))
def test_reshape_round_trip(seed, a, b, c):
    t = tensor_new([a, b, c], Uniform(-1, 1), Prng(seed))
    back = reshape(reshape(t, [a * b * c]), [a, b, c])
    assert np.array_equal(back, t)
    with pytest.raises(ShapeError):
        reshape(t, [a * b * c + 1])


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3, allow_nan=False, width=32), st.integers(1, 5), st.integers(1, 5))
def test_constant_moments_exact(v, h, w):
    t = np.full((h, w), v, dtype=np.float32)
    m, var = reduce_moments(t, {0, 1})
    assert float(m[0]) == float(np.float32(v))
    assert float(var[0]) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_matmul_associativity(seed):
    rng = Prng(seed)
    a, b, c = (tensor_new([8, 8], Uniform(-1, 1), rng) for _ in range(3))
    assert np.max(np.abs(matmul(matmul(a, b), c) - matmul(a, matmul(b, c)))) <= 1e-4
