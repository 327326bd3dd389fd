"""Two-party additive secret sharing over Z_{2^L}.

A secret ``x`` is held as ``(<x>_0, <x>_1)`` with ``<x>_0 + <x>_1 = x`` in the
ring. Linear operations are local; products of two secrets use a Beaver
triple supplied by a dealer and one public opening of the masked inputs.
Fixed-point products carry scale ``2^(2B)`` and are brought back to ``2^B`` by
local share truncation (each party shifts its own share, party 1 with a sign
correction), which is off by at most one unit in the last place except with
probability about ``|x| / 2^(L-1)``.

The functions here work on explicit share pairs and are what tests and kernels
use in-process. The networked runtime in :mod:`ppsr.protocol` reuses the same
per-party arithmetic (:func:`open_masked`, :func:`beaver_combine`,
:func:`truncate_share`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ChannelFailure, IndexMismatch, TripleExhaustion, TripleReuse
from .ring import FixedCodec, Ring

DEFAULT_RING = Ring()


@dataclass(frozen=True)
class Share:
    """One party's additive share of a scalar, vector or matrix secret."""

    party_index: int
    value: int | np.ndarray

    def __post_init__(self):
        if self.party_index not in (0, 1):
            raise IndexMismatch(f"party index must be 0 or 1, got {self.party_index}")

    @property
    def shape(self) -> tuple[int, ...]:
        return np.shape(self.value)


class SharedMatrix(Share):
    """A share of an ``m x n`` matrix (or length-``m`` vector) held by one party."""

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1] if len(self.shape) > 1 else 1


SharedPair = tuple[Share, Share]


def share(x, rng: np.random.Generator, ring: Ring = DEFAULT_RING) -> SharedPair:
    """Split ``x`` into ``(r, x - r)`` with ``r`` uniform over the ring."""
    x = ring.element(x)
    r = ring.random(rng, None if isinstance(x, int) else np.shape(x))
    return Share(0, r), Share(1, ring.sub(x, r))


def share_with_mask(x, r, ring: Ring = DEFAULT_RING) -> SharedPair:
    """Sharing of ``x`` under an explicitly supplied mask ``r``."""
    x, r = ring.element(x), ring.element(r)
    return Share(0, r), Share(1, ring.sub(x, r))


def reconstruct(s0: Share, s1: Share, ring: Ring = DEFAULT_RING):
    if {s0.party_index, s1.party_index} != {0, 1}:
        raise IndexMismatch("reconstruction needs one share from each party")
    return ring.add(s0.value, s1.value)


def add_public(s: Share, a, ring: Ring = DEFAULT_RING) -> Share:
    if s.party_index == 0:
        return Share(0, ring.add(s.value, ring.element(a)))
    return s


def sub_public(s: Share, a, ring: Ring = DEFAULT_RING) -> Share:
    if s.party_index == 0:
        return Share(0, ring.sub(s.value, ring.element(a)))
    return s


def mul_public(s: Share, a, ring: Ring = DEFAULT_RING) -> Share:
    return Share(s.party_index, ring.mul(s.value, ring.element(a)))


def _same_party(s: Share, t: Share) -> int:
    if s.party_index != t.party_index:
        raise IndexMismatch("cannot combine shares held by different parties")
    return s.party_index


def add_shared(s: Share, t: Share, ring: Ring = DEFAULT_RING) -> Share:
    return Share(_same_party(s, t), ring.add(s.value, t.value))


def sub_shared(s: Share, t: Share, ring: Ring = DEFAULT_RING) -> Share:
    return Share(_same_party(s, t), ring.sub(s.value, t.value))


# -- Beaver multiplication ---------------------------------------------------


@dataclass
class BeaverTriple:
    """Shares of ``(a, b, c)`` with ``c = a*b``; components may be arrays."""

    a: SharedPair
    b: SharedPair
    c: SharedPair
    consumed: bool = field(default=False, compare=False)

    def half(self, i: int) -> tuple:
        return self.a[i].value, self.b[i].value, self.c[i].value


@dataclass(frozen=True)
class BeaverOpening:
    """Public masked differences ``epsilon = x - a`` and ``delta = y - b``."""

    epsilon: int | np.ndarray
    delta: int | np.ndarray


def deal_triple_arrays(count: int, rng: np.random.Generator, ring: Ring = DEFAULT_RING) -> BeaverTriple:
    """One vector triple of length ``count``."""
    a = ring.random(rng, count)
    b = ring.random(rng, count)
    c = ring.mul(a, b)
    return BeaverTriple(share(a, rng, ring), share(b, rng, ring), share(c, rng, ring))


def deal_triples(count: int, rng: np.random.Generator, ring: Ring = DEFAULT_RING) -> list[BeaverTriple]:
    """``count`` independent scalar triples."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return []
    batch = deal_triple_arrays(count, rng, ring)
    out = []
    for k in range(count):
        parts = [
            (Share(0, int(p[0].value[k])), Share(1, int(p[1].value[k])))
            for p in (batch.a, batch.b, batch.c)
        ]
        out.append(BeaverTriple(*parts))
    return out


def open_masked(x_i, y_i, a_i, b_i, ring: Ring = DEFAULT_RING):
    """Party-local step: this party's shares of ``epsilon`` and ``delta``."""
    return ring.sub(x_i, a_i), ring.sub(y_i, b_i)


def beaver_combine(i: int, a_i, b_i, c_i, epsilon, delta, ring: Ring = DEFAULT_RING):
    """Party-local output ``c_i + eps*b_i + a_i*delta + i*eps*delta``."""
    out = ring.add(c_i, ring.mul(epsilon, b_i))
    out = ring.add(out, ring.mul(a_i, delta))
    if i == 1:
        out = ring.add(out, ring.mul(epsilon, delta))
    return out


class LocalExchange:
    """In-memory opening channel between the two halves of a product.

    Each call to :meth:`open` is one communication round: both parties'
    masked shares go in, the public opening comes out. Set ``fail=True`` to
    simulate a dead link.
    """

    def __init__(self, ring: Ring = DEFAULT_RING, fail: bool = False):
        self.ring = ring
        self.fail = fail
        self.rounds = 0
        self.transcript: list[BeaverOpening] = []

    def open(self, masked0, masked1) -> BeaverOpening:
        if self.fail:
            raise ChannelFailure("opening channel is down")
        self.rounds += 1
        eps = self.ring.add(masked0[0], masked1[0])
        delta = self.ring.add(masked0[1], masked1[1])
        opening = BeaverOpening(eps, delta)
        self.transcript.append(opening)
        return opening


def beaver_mul(
    x: SharedPair,
    y: SharedPair,
    triple: BeaverTriple,
    exchange: LocalExchange | None = None,
    ring: Ring = DEFAULT_RING,
) -> SharedPair:
    """Multiply two shared ring values with one opening round."""
    if triple.consumed:
        raise TripleReuse("Beaver triple already used")
    exchange = exchange if exchange is not None else LocalExchange(ring)
    halves = [triple.half(i) for i in (0, 1)]
    masked = [open_masked(x[i].value, y[i].value, halves[i][0], halves[i][1], ring) for i in (0, 1)]
    opening = exchange.open(masked[0], masked[1])
    triple.consumed = True
    return tuple(
        Share(i, beaver_combine(i, *halves[i], opening.epsilon, opening.delta, ring))
        for i in (0, 1)
    )


# -- truncation ---------------------------------------------------------------


def truncate_share(i: int, v, bits: int, ring: Ring = DEFAULT_RING):
    """Divide this party's share by ``2**bits`` without interaction.

    Both parties shift the signed reading of their share; party 1 rounds
    towards plus infinity instead of minus infinity. The two results sum to
    the truncated secret within one unit unless the signed shares overflow
    when added, which for a uniform mask happens with probability about
    ``|x| / 2**(L-1)``. Degenerate sharings such as ``(x, 0)`` are exact.
    """
    if i == 0:
        return ring.shift_right_signed(v, bits)
    return ring.neg(ring.shift_right_signed(ring.neg(v), bits))


def truncate(x: SharedPair, bits: int = 16, ring: Ring = DEFAULT_RING) -> SharedPair:
    """Rescale a shared fixed-point product from ``2^(2B)`` to ``2^B``."""
    return tuple(Share(s.party_index, truncate_share(s.party_index, s.value, bits, ring)) for s in x)


# -- dealer -------------------------------------------------------------------


class Dealer:
    """Trusted triple source with optional total budget.

    Triples come out as flat vector batches; :meth:`take` hands one
    length-``n`` vector triple to a caller and never revisits it.
    """

    def __init__(self, rng: np.random.Generator, ring: Ring = DEFAULT_RING, budget: int | None = None):
        self.rng = rng
        self.ring = ring
        self.budget = budget
        self.dealt = 0

    def take(self, n: int) -> BeaverTriple:
        if self.budget is not None and self.dealt + n > self.budget:
            raise TripleExhaustion(
                f"triple budget {self.budget} exhausted ({self.dealt} dealt, {n} requested)"
            )
        self.dealt += n
        return deal_triple_arrays(n, self.rng, self.ring)


# -- secure computation contexts ---------------------------------------------


class SecureContext:
    """Fixed-point secure arithmetic as seen by the kernels and the evaluator.

    Subclasses decide what a shared value is (a pair of shares for the
    in-process simulator, a single share for a networked party) and how
    openings travel. Everything above the primitives is written once here.
    ``rounds`` counts opening rounds, ``triples_used`` counts consumed
    scalar triples.
    """

    codec: FixedCodec

    def __init__(self, codec: FixedCodec):
        self.codec = codec
        self.rounds = 0
        self.triples_used = 0

    @property
    def ring(self) -> Ring:
        return self.codec.ring

    @property
    def frac_bits(self) -> int:
        return self.codec.precision_bits

    # primitives

    def public(self, template, value: float):
        raise NotImplementedError

    def add(self, x, y):
        raise NotImplementedError

    def sub(self, x, y):
        raise NotImplementedError

    def add_public_raw(self, x, v):
        raise NotImplementedError

    def mul_int(self, x, k: int):
        raise NotImplementedError

    def shift(self, x, bits: int):
        raise NotImplementedError

    def mul_raw_many(self, pairs: Sequence[tuple]) -> list:
        """Ring products of all pairs (no truncation), in a single round."""
        raise NotImplementedError

    # derived

    def neg(self, x):
        return self.mul_int(x, -1)

    def add_public(self, x, c: float):
        return self.add_public_raw(x, self.codec.encode(c))

    def mul_public(self, x, c: float):
        """Multiply by a public real: encode, scale, truncate. No round."""
        enc = self.codec.encode(c)
        return self.shift(self.mul_int(x, self.ring.to_signed(enc)), self.frac_bits)

    def mul_many(self, pairs: Sequence[tuple]) -> list:
        """Fixed-point products of all pairs in one opening round."""
        return [self.shift(p, self.frac_bits) for p in self.mul_raw_many(pairs)]

    def mul(self, x, y):
        return self.mul_many([(x, y)])[0]

    def square(self, x):
        return self.mul(x, x)


class PairContext(SecureContext):
    """Both parties simulated in lockstep in one thread.

    Shared values are ``(Share, Share)`` pairs. Triples come from a
    :class:`Dealer`; openings go through a :class:`LocalExchange`.
    """

    def __init__(self, codec: FixedCodec | None = None, dealer: Dealer | None = None, seed: int = 0):
        super().__init__(codec or FixedCodec())
        self.dealer = dealer or Dealer(np.random.default_rng(seed), self.ring)
        self.exchange = LocalExchange(self.ring)
        self._share_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])

    def share(self, values) -> SharedPair:
        """Secret-share real values (encoded first)."""
        return share(self.codec.encode(np.asarray(values, dtype=float)), self._share_rng, self.ring)

    def reveal(self, x: SharedPair):
        return self.codec.decode(reconstruct(*x, ring=self.ring))

    def public(self, template, value):
        shape = template[0].shape
        enc = self.codec.encode(np.full(shape, float(value)))
        return Share(0, enc), Share(1, self.ring.zeros(shape))

    def add(self, x, y):
        return add_shared(x[0], y[0], self.ring), add_shared(x[1], y[1], self.ring)

    def sub(self, x, y):
        return sub_shared(x[0], y[0], self.ring), sub_shared(x[1], y[1], self.ring)

    def add_public_raw(self, x, v):
        return add_public(x[0], v, self.ring), x[1]

    def mul_int(self, x, k):
        return mul_public(x[0], k, self.ring), mul_public(x[1], k, self.ring)

    def shift(self, x, bits):
        return truncate(x, bits, self.ring)

    def mul_raw_many(self, pairs):
        sizes = [np.size(p[0][0].value) for p in pairs]
        shapes = [p[0][0].shape for p in pairs]
        flat = lambda side, i: np.concatenate(  # noqa: E731
            [np.ravel(np.asarray(p[side][i].value, dtype=np.uint64)) for p in pairs]
        )
        xs = (Share(0, flat(0, 0)), Share(1, flat(0, 1)))
        ys = (Share(0, flat(1, 0)), Share(1, flat(1, 1)))
        n = int(sum(sizes))
        triple = self.dealer.take(n)
        prod = beaver_mul(xs, ys, triple, self.exchange, self.ring)
        self.rounds += 1
        self.triples_used += n
        out, start = [], 0
        for size, shape in zip(sizes, shapes):
            out.append(tuple(Share(i, prod[i].value[start:start + size].reshape(shape)) for i in (0, 1)))
            start += size
        return out


def run_pair(fn: Callable, values, codec: FixedCodec | None = None, seed: int = 0):
    """Share ``values``, apply ``fn(ctx, shared)``, and return the decoded result and context."""
    ctx = PairContext(codec, seed=seed)
    out = fn(ctx, ctx.share(values))
    return ctx.reveal(out), ctx
