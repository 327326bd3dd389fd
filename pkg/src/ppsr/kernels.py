"""Secure approximations of transcendental functions on shared fixed-point values.

All kernels are built only from the primitives of
:class:`ppsr.sharing.SecureContext` (local linear operations, public scaling,
local truncation and batched Beaver products), so they run unchanged in the
in-process simulator and inside a networked compute party.

Repeated squaring in fixed point loses precision when the iterate is stored
directly: shifting the input down by ``2^n`` throws away ``n`` fractional bits
that the ``n`` squarings then amplify back. The doubling kernels therefore
carry the iterate as an excess over one, ``z_k = 1 + w_k / 2^(n-k)``, which
turns ``z_{k+1} = z_k^2`` into ``w_{k+1} = w_k + w_k^2 / 2^(n-k+1)`` and keeps
every rounding error at the output scale.

Per-call opening rounds and scalar triples per element are fixed for a given
iteration count; see :func:`kernel_cost`.
"""

from __future__ import annotations

import math

from .sharing import SecureContext

TRIG_ITERATIONS = 10
EXP_ITERATIONS = 12
LOG_ITERATIONS = 2
LOG_ORDER = 8
RECIPROCAL_ITERATIONS = 10

TRIG_DOMAIN = 16.0
EXP_DOMAIN = (-8.0, 8.0)
POSITIVE_DOMAIN = (0.1, 100.0)


def _excess_step(ctx: SecureContext, w, shift: int):
    """``w + w^2 / 2^shift`` with a single truncation of the square."""
    (sq,) = ctx.mul_raw_many([(w, w)])
    return ctx.add(w, ctx.shift(sq, ctx.frac_bits + shift))


def sec_square(ctx: SecureContext, x):
    return ctx.square(x)


def sec_sincos(ctx: SecureContext, x, iterations: int = TRIG_ITERATIONS):
    """Cosine and sine together by doubling a small planar rotation.

    Starts from ``(1 - t^2/2, t)`` with ``t = x / 2^n`` and squares the
    complex number ``n`` times. No range reduction: inputs should satisfy
    ``|x| <= 16``.
    """
    n = iterations
    (xx,) = ctx.mul_raw_many([(x, x)])
    re = ctx.neg(ctx.shift(xx, ctx.frac_bits + n + 1))
    im = x
    for k in range(n):
        aa, bb, ab = ctx.mul_raw_many([(re, re), (im, im), (re, im)])
        re = ctx.add(re, ctx.shift(ctx.sub(aa, bb), ctx.frac_bits + n - k + 1))
        im = ctx.add(im, ctx.shift(ab, ctx.frac_bits + n - k))
    return ctx.add_public(re, 1.0), im


def sec_sin(ctx: SecureContext, x, iterations: int = TRIG_ITERATIONS):
    return sec_sincos(ctx, x, iterations)[1]


def sec_cos(ctx: SecureContext, x, iterations: int = TRIG_ITERATIONS):
    return sec_sincos(ctx, x, iterations)[0]


def sec_exp(ctx: SecureContext, x, iterations: int = EXP_ITERATIONS):
    """``(1 + x/2^n)^(2^n)``, usable for inputs above ``-2^n``."""
    n = iterations
    w = x
    for k in range(n):
        w = _excess_step(ctx, w, n - k + 1)
    return ctx.add_public(w, 1.0)


def sec_reciprocal(
    ctx: SecureContext,
    x,
    iterations: int = RECIPROCAL_ITERATIONS,
    exp_iterations: int = EXP_ITERATIONS,
):
    """Newton-Raphson ``z <- z (2 - x z)`` from ``z0 = 3 e^(0.5 - x) + 0.003``.

    Converges for positive inputs in ``[0.1, 100]``.
    """
    z = ctx.add_public(ctx.mul_public(sec_exp(ctx, ctx.add_public(ctx.neg(x), 0.5), exp_iterations), 3.0), 0.003)
    for _ in range(iterations):
        xz = ctx.mul(x, z)
        z = ctx.mul(z, ctx.add_public(ctx.neg(xz), 2.0))
    return z


def sec_log(
    ctx: SecureContext,
    x,
    iterations: int = LOG_ITERATIONS,
    order: int = LOG_ORDER,
    exp_iterations: int = EXP_ITERATIONS,
):
    """Natural log by Householder refinement of ``y`` solving ``e^y = x``.

    Initial guess ``y0 = x/120 - 20 e^(-2x-1) + 3``; each step sets
    ``h = 1 - x e^(-y)`` and ``y <- y - sum_{k<=order} h^k / k``.
    """
    y = ctx.add_public(
        ctx.sub(
            ctx.mul_public(x, 1.0 / 120.0),
            ctx.mul_public(sec_exp(ctx, ctx.add_public(ctx.mul_int(x, -2), -1.0), exp_iterations), 20.0),
        ),
        3.0,
    )
    for _ in range(iterations):
        h = ctx.add_public(ctx.neg(ctx.mul(x, sec_exp(ctx, ctx.neg(y), exp_iterations))), 1.0)
        powers = _powers(ctx, h, order)
        acc = None
        for k, p in enumerate(powers, start=1):
            coeff = ctx.ring.to_signed(ctx.codec.encode(1.0 / k))
            term = ctx.mul_int(p, coeff)
            acc = term if acc is None else ctx.add(acc, term)
        y = ctx.sub(y, ctx.shift(acc, ctx.frac_bits))
    return y


def _powers(ctx: SecureContext, h, order: int) -> list:
    """``[h, h^2, ..., h^order]`` in ``ceil(log2(order))`` rounds."""
    powers = [h]
    while len(powers) < order:
        top = powers[-1]
        need = min(len(powers), order - len(powers))
        powers.extend(ctx.mul_many([(top, powers[j]) for j in range(need)]))
    return powers


def kernel_cost(name: str, **params) -> tuple[int, int]:
    """(opening rounds per call, scalar triples per element) for a kernel."""
    n_trig = params.get("iterations", TRIG_ITERATIONS)
    n_exp = params.get("exp_iterations", EXP_ITERATIONS)
    if name == "square":
        return 1, 1
    if name in ("sin", "cos", "sincos"):
        return 1 + n_trig, 1 + 3 * n_trig
    if name == "exp":
        n = params.get("iterations", EXP_ITERATIONS)
        return n, n
    if name == "reciprocal":
        it = params.get("iterations", RECIPROCAL_ITERATIONS)
        return n_exp + 2 * it, n_exp + 2 * it
    if name == "log":
        it = params.get("iterations", LOG_ITERATIONS)
        order = params.get("order", LOG_ORDER)
        power_rounds = math.ceil(math.log2(order)) if order > 1 else 0
        per_iter_rounds = n_exp + 1 + power_rounds
        return n_exp + it * per_iter_rounds, n_exp + it * (n_exp + 1 + order - 1)
    raise KeyError(name)
