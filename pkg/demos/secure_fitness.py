"""
Scoring expressions over vertically split data
==============================================

Two clients hold different columns of the same rows; the second also holds
the target. They upload shares to P0/P1, and only the fitness (an MSE)
reaches the evolution server P3.
"""

from ppsr.bench import BENCHMARKS, generate_dataset, vertical_split
from ppsr.expr import parse
from ppsr.gp import fitness_mse
from ppsr.protocol import P3, Session, SessionConfig, opening_rounds

spec = BENCHMARKS["nguyen9"]
train, test = generate_dataset(spec, seed=3)
clients = vertical_split(train, spec.assignment)
print("client 1 columns:", clients[0].X.shape, " client 2 columns:", clients[1].X.shape)

trees = [
    spec.ground_truth,
    parse("(+ (sin x1) (* x2 x2))"),
    parse("(* x1 x2)"),
]

with Session(clients, SessionConfig(seed=3)) as s:
    s.share_dataset("train")
    secure = s.evaluate_fitness(trees)
    for t, z in zip(trees, secure):
        print(f"{str(t):45s} secure {z:.6f}  plain {fitness_mse(t, train):.6f}  rounds {opening_rounds(t) + 1}")
    kinds = sorted({m.kind for m in s.transport.inbox[P3]})
    print("message kinds P3 received:", kinds)
    print("triples used:", s.triples_used)
