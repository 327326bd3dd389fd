"""
Recovering a formula, in the clear and under secret sharing
===========================================================

A small GP run on Nguyen-10, first with plaintext fitness and then with the
same seed driven by secure fitness. Secure scores differ from the plaintext
ones by fixed-point noise, so a near tie can go the other way and the two
runs may drift apart after a few generations.
"""

from ppsr.bench import BENCHMARKS, generate_dataset, vertical_split
from ppsr.expr import equivalent, simplify
from ppsr.gp import GpConfig, evolve
from ppsr.protocol import SessionConfig, run_secure_gp

spec = BENCHMARKS["nguyen10"]
train, _ = generate_dataset(spec, seed=1)
cfg = GpConfig(population_size=100, max_generations=10, rng_seed=1)

plain = evolve(cfg, train)
print("plaintext best :", simplify(plain.best.tree), f"MSE {plain.best.fitness:.2e}")
print("recovered      :", equivalent(plain.best.tree, spec.ground_truth, spec.n_vars))

secure, session = run_secure_gp(cfg, vertical_split(train, spec.assignment), session_config=SessionConfig(seed=1))
print("secure best    :", simplify(secure.best.tree), f"MSE {secure.best.fitness:.2e}")
print("best MSE per generation")
for g, (p, q) in enumerate(zip(plain.best_history, secure.best_history)):
    print(f"  {g:2d}  plain {p:.5f}  secure {q:.5f}")
print("triples used   :", session.triples_used)
