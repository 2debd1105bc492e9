"""Dense float32 tensors and the PCG32 generator every random draw goes through.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 in C order. The
helpers here enforce the invariants the rest of the library relies on
(rank >= 1, positive dimensions, finite values) and provide the handful of
primitives that are part of the public contract.

Random streams
--------------
``Prng`` is PCG-XSH-RR with 64-bit state and 32-bit output, seeded exactly
like the reference ``pcg32_srandom_r(seed, stream)``. Derived draws:

* ``uniform()``: ``u32 * 2**-32`` as a Python float in [0, 1).
* float32 uniform fills: ``(u32 >> 8) * 2**-24`` so every value is exactly
  representable and strictly below 1.
* normal: Box-Muller on two consecutive u32 draws, one output per pair.
* bounded integers: rejection sampling identical to ``pcg32_boundedrand_r``.
"""

from dataclasses import dataclass
from math import prod

import numpy as np

from minibit import kernels
from minibit.errors import NumericError, ShapeError

DTYPE = np.float32
Tensor = np.ndarray

_MASK64 = (1 << 64) - 1
_PCG_MULT = 6364136223846793005
DEFAULT_STREAM = 54


class Prng:
    """PCG32 generator. Single owner; never share across threads."""

    def __init__(self, seed, stream=DEFAULT_STREAM):
        seed = int(seed) & _MASK64
        self.inc = ((int(stream) << 1) | 1) & _MASK64
        self.state = 0
        self._step()
        self.state = (self.state + seed) & _MASK64
        self._step()

    def _step(self):
        self.state = (self.state * _PCG_MULT + self.inc) & _MASK64

    def get_state(self):
        return {"state": self.state, "inc": self.inc}

    @classmethod
    def from_state(cls, st):
        rng = cls.__new__(cls)
        rng.state = int(st["state"]) & _MASK64
        rng.inc = int(st["inc"]) & _MASK64
        return rng

    def next_u32(self):
        old = self.state
        self._step()
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    def u32_array(self, n):
        out, self.state = kernels.pcg32_fill(self.state, self.inc, int(n))
        return out

    def uniform(self):
        return self.next_u32() * 2.0**-32

    def uniform_array(self, n, lo=0.0, hi=1.0):
        u = (self.u32_array(n) >> np.uint32(8)).astype(np.float64) * 2.0**-24
        if lo == 0.0 and hi == 1.0:
            return u
        return lo + (hi - lo) * u

    def normal_array(self, n, mean=0.0, std=1.0):
        raw = self.u32_array(2 * n).astype(np.float64) * 2.0**-32
        u1 = 1.0 - raw[0::2]  # (0, 1], keeps log finite
        u2 = raw[1::2]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return mean + std * z

    def normal(self):
        return float(self.normal_array(1)[0])

    def bounded(self, bound):
        """Uniform integer in [0, bound)."""
        bound = int(bound)
        if bound < 1:
            raise ValueError("bound must be >= 1")
        threshold = ((1 << 32) - bound) % bound
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % bound

    def randint(self, lo, hi):
        """Uniform integer in [lo, hi] inclusive."""
        return lo + self.bounded(hi - lo + 1)

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.bounded(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def gamma(self, shape):
        """Marsaglia-Tsang Gamma(shape, 1); shapes below 1 use the U**(1/a) boost."""
        if shape <= 0:
            raise ValueError("gamma shape must be positive")
        if shape < 1.0:
            g = self.gamma(shape + 1.0)
            u = 1.0 - self.uniform()
            return g * u ** (1.0 / shape)
        d = shape - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = 1.0 + c * x
            if v <= 0.0:
                continue
            v = v * v * v
            u = 1.0 - self.uniform()
            if np.log(u) < 0.5 * x * x + d - d * v + d * np.log(v):
                return float(d * v)

    def beta(self, a, b):
        x = self.gamma(a)
        y = self.gamma(b)
        if x + y == 0.0:
            return 0.5
        return x / (x + y)


@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    std: float = 1.0


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0


def check_shape(shape):
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise ShapeError(f"invalid shape {shape}: need rank >= 1 and every dim >= 1")
    return shape


def check_finite(a, what="tensor"):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{what} contains NaN or Inf")
    return a


def as_tensor(values):
    a = np.ascontiguousarray(values, dtype=DTYPE)
    if a.ndim == 0:
        a = a.reshape(1)
    check_shape(a.shape)
    return check_finite(a)


def tensor_new(shape, fill=0.0, rng=None):
    """Allocate a tensor filled with a constant, ``Normal`` or ``Uniform`` draws.

    Random fills consume ``rng`` in row-major order.
    """
    shape = check_shape(shape)
    n = prod(shape)
    if isinstance(fill, Normal):
        if fill.std < 0:
            raise ValueError("std must be >= 0")
        values = rng.normal_array(n, fill.mean, fill.std)
    elif isinstance(fill, Uniform):
        values = rng.uniform_array(n, fill.lo, fill.hi)
    else:
        return np.full(shape, fill, dtype=DTYPE)
    return values.astype(DTYPE).reshape(shape)


def reshape(a, shape):
    shape = check_shape(shape)
    if prod(shape) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    return a.reshape(shape)


_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "scale": np.multiply,
    "max": np.maximum,
}


def elementwise(op, a, b):
    """Apply ``op`` in {add, sub, mul, scale, max}; only scalar broadcasting."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if np.isscalar(b):
        return fn(a, DTYPE(b)).astype(DTYPE)
    if op in ("scale", "max"):
        raise ShapeError(f"{op} takes a scalar operand")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return fn(a, b).astype(DTYPE)


def reduce_moments(a, axes):
    """Mean and population variance over ``axes``, accumulated in float64.

    An empty axis set returns ``(copy of a, zeros)``.
    """
    for ax in axes:
        if not -a.ndim <= int(ax) < a.ndim:
            raise ShapeError(f"axis {ax} out of range for rank {a.ndim}")
    axes = tuple(sorted({int(ax) % a.ndim for ax in axes}))
    if not axes:
        return a.copy(), np.zeros_like(a)
    a64 = a.astype(np.float64)
    mean = a64.mean(axis=axes, keepdims=True)
    var = ((a64 - mean) ** 2).mean(axis=axes)
    mean = np.squeeze(mean, axis=axes)
    if mean.ndim == 0:
        mean, var = mean.reshape(1), var.reshape(1)
    return mean.astype(a.dtype), var.astype(a.dtype)


def matmul(a, b):
    """Rank-2 matrix product, accumulated in float64 and rounded to float32."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(DTYPE)
