"""Arithmetic in Z_{2^L} and fixed-point encoding of reals into it.

Ring elements are either Python ints in ``[0, 2^L)`` or ``numpy.uint64``
arrays. Every operation accepts both and returns the same kind it was given,
so scalar examples and vectorised share arithmetic go through one code path.
The ring width is capped at 64 bits because elements live in ``uint64``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MagnitudeOverflow

DEFAULT_RING_BITS = 64
DEFAULT_FRAC_BITS = 16


def _is_scalar(x) -> bool:
    return isinstance(x, (int, np.integer))


@dataclass(frozen=True)
class Ring:
    """The ring of integers modulo ``2**bits``."""

    bits: int = DEFAULT_RING_BITS
    modulus: int = field(init=False, repr=False)
    mask: int = field(init=False, repr=False)

    def __post_init__(self):
        if not 2 <= self.bits <= 64:
            raise ValueError(f"ring width must be in [2, 64], got {self.bits}")
        object.__setattr__(self, "modulus", 1 << self.bits)
        object.__setattr__(self, "mask", (1 << self.bits) - 1)

    # -- element construction -------------------------------------------------

    def element(self, x):
        """Reduce an int or integer array into the ring."""
        if _is_scalar(x):
            return int(x) & self.mask
        arr = np.asarray(x)
        if arr.dtype.kind == "i":
            arr = arr.astype(np.int64).view(np.uint64)
        return self._wrap(arr.astype(np.uint64, copy=False))

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(shape, dtype=np.uint64)

    def random(self, rng: np.random.Generator, size=None):
        """Uniform draw(s) from the ring."""
        if size is None:
            return int(rng.integers(0, self.modulus, dtype=np.uint64))
        return rng.integers(0, self.modulus, size=size, dtype=np.uint64)

    def _wrap(self, arr: np.ndarray) -> np.ndarray:
        if self.bits == 64:
            return arr
        return arr & np.uint64(self.mask)

    # -- arithmetic -----------------------------------------------------------

    def add(self, a, b):
        if _is_scalar(a) and _is_scalar(b):
            return (int(a) + int(b)) & self.mask
        return self._wrap(np.add(a, b, dtype=np.uint64))

    def sub(self, a, b):
        if _is_scalar(a) and _is_scalar(b):
            return (int(a) - int(b)) & self.mask
        return self._wrap(np.subtract(a, b, dtype=np.uint64))

    def neg(self, a):
        if _is_scalar(a):
            return (-int(a)) & self.mask
        return self._wrap(np.subtract(np.uint64(0), a, dtype=np.uint64))

    def mul(self, a, b):
        if _is_scalar(a) and _is_scalar(b):
            return (int(a) * int(b)) & self.mask
        if _is_scalar(a):
            a = np.uint64(int(a) & self.mask)
        if _is_scalar(b):
            b = np.uint64(int(b) & self.mask)
        return self._wrap(np.multiply(a, b, dtype=np.uint64))

    # -- signed view ----------------------------------------------------------

    def to_signed(self, v):
        """Two's-complement reading: the upper half of the ring is negative."""
        if _is_scalar(v):
            v = int(v) & self.mask
            return v - self.modulus if v >> (self.bits - 1) else v
        v = self._wrap(np.asarray(v, dtype=np.uint64))
        if self.bits == 64:
            return v.view(np.int64)
        signed = v.astype(np.int64)
        return np.where(signed >= (1 << (self.bits - 1)), signed - self.modulus, signed)

    def shift_right_signed(self, v, bits: int):
        """Arithmetic right shift of the two's-complement reading (floor division)."""
        if _is_scalar(v):
            return self.element(self.to_signed(v) >> bits)
        return self.element(np.right_shift(self.to_signed(v), np.int64(bits)))

    def shift_right(self, v, bits: int):
        """Logical right shift of the canonical representative."""
        if _is_scalar(v):
            return (int(v) & self.mask) >> bits
        return np.right_shift(self._wrap(np.asarray(v, dtype=np.uint64)), np.uint64(bits))


@dataclass(frozen=True)
class FixedCodec:
    """Fixed-point encoding of reals as ``round(x * 2**precision_bits)`` in a ring."""

    precision_bits: int = DEFAULT_FRAC_BITS
    ring: Ring = field(default_factory=Ring)

    def __post_init__(self):
        if not 0 <= self.precision_bits < self.ring.bits - 1:
            raise ValueError("precision_bits must leave room for a sign bit")

    @property
    def scale(self) -> int:
        return 1 << self.precision_bits

    @property
    def bound(self) -> float:
        """Exclusive magnitude limit for encodable reals."""
        return float(2 ** (self.ring.bits - self.precision_bits - 1))

    @property
    def ulp(self) -> float:
        return 1.0 / self.scale

    def encode(self, x):
        """Encode a real (or array of reals) into the ring.

        Rounds half to even. Raises ``MagnitudeOverflow`` when ``|x|`` is not
        below ``2**(L - B - 1)`` or is not finite.
        """
        arr = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) >= self.bound):
            raise MagnitudeOverflow(
                f"value outside fixed-point range |x| < {self.bound:g}"
            )
        scaled = np.rint(arr * self.scale)
        if arr.ndim == 0:
            return self.ring.element(int(scaled))
        return self.ring.element(scaled.astype(np.int64))

    def decode(self, v):
        """Signed reading of ``v`` divided by the scale."""
        signed = self.ring.to_signed(v)
        if isinstance(signed, int):
            return signed / self.scale
        return signed.astype(np.float64) / self.scale
