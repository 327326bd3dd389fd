"""
Secret sharing and fixed-point products
=======================================

Two servers each hold a random-looking half of every value. Additions are
local; a product costs one Beaver triple and one exchange of masked values.
"""

import numpy as np

from ppsr.ring import FixedCodec
from ppsr.sharing import Dealer, LocalExchange, beaver_mul, reconstruct, run_pair, share, truncate
from ppsr.kernels import sec_exp, sec_sincos

codec = FixedCodec()  # Z_2^64 with 16 fractional bits
rng = np.random.default_rng(0)

# encode two small vectors and split them into shares
a = np.array([1.5, -2.25, 3.0])
b = np.array([4.0, 0.5, -1.125])
xs, ys = share(codec.encode(a), rng), share(codec.encode(b), rng)
print("share of a held by P0:", xs[0].value)

# multiply with a dealer triple; the product has 32 fractional bits until truncated
raw = beaver_mul(xs, ys, Dealer(rng).take(3), LocalExchange())
prod = codec.decode(reconstruct(*truncate(raw, codec.precision_bits)))
print("secure a*b :", prod)
print("plain  a*b :", a * b)

# the nonlinear kernels are built from the same products
t = np.linspace(-np.pi, np.pi, 5)
cos, ctx = run_pair(lambda c, v: sec_sincos(c, v)[0], t)
print("secure cos:", np.round(cos, 4), f"({ctx.rounds} opening rounds)")
print("plain  cos:", np.round(np.cos(t), 4))

e, _ = run_pair(sec_exp, np.array([-2.0, 0.0, 1.0]))
print("secure exp:", np.round(e, 4))
