"""Quick self-checks against independent oracles.

Each check builds its expected values without going through the code it
checks (Python integers for ring arithmetic, ``math`` for the kernels, a
plaintext evaluator for secure fitness). ``run_all`` returns one
:class:`CheckResult` per check; the CLI's ``verify`` prints them.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass

import numpy as np

from .bench import BENCHMARKS, generate_dataset, vertical_split
from .expr import equivalent, parse
from .gp import fitness_mse, full_tree
from .kernels import sec_exp, sec_log, sec_reciprocal, sec_sincos
from .protocol.parties import opening_rounds
from .protocol.session import Session, SessionConfig
from .ring import FixedCodec, Ring
from .sharing import Dealer, LocalExchange, beaver_mul, reconstruct, run_pair, share, truncate


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def check_beaver(n: int = 2000, seed: int = 1) -> CheckResult:
    ring = Ring()
    rng = np.random.default_rng(seed)
    x, y = ring.random(rng, n), ring.random(rng, n)
    xs, ys = share(x, rng, ring), share(y, rng, ring)
    prod = reconstruct(*beaver_mul(xs, ys, Dealer(rng, ring).take(n), LocalExchange(ring), ring), ring=ring)
    bad = sum(int(p) != (int(a) * int(b)) % 2**64 for p, a, b in zip(prod, x, y))
    return CheckResult("beaver exactness", bad == 0, f"{bad}/{n} mismatches")


def check_fixed_point(n: int = 2000, seed: int = 2) -> CheckResult:
    codec = FixedCodec()
    ring = codec.ring
    rng = np.random.default_rng(seed)
    # operands on the fixed-point grid, so input quantization is not counted
    a, b = (codec.decode(codec.encode(rng.uniform(-100, 100, n))) for _ in range(2))
    xs, ys = share(codec.encode(a), rng, ring), share(codec.encode(b), rng, ring)
    raw = beaver_mul(xs, ys, Dealer(rng, ring).take(n), LocalExchange(ring), ring)
    got = codec.decode(reconstruct(*truncate(raw, codec.precision_bits, ring), ring=ring))
    err = np.abs(got - a * b)
    bad = int(np.sum(err > 2.0 ** (1 - codec.precision_bits)))
    return CheckResult("fixed-point product", bad <= n // 10_000, f"max err {err.max():.2e}, {bad} outliers")


def check_kernels(n: int = 400, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    t = rng.uniform(-math.pi, math.pi, n)
    sin, _ = run_pair(lambda c, v: sec_sincos(c, v)[1], t)
    cos, _ = run_pair(lambda c, v: sec_sincos(c, v)[0], t)
    trig = max(np.max(np.abs(sin - np.sin(t))), np.max(np.abs(cos - np.cos(t))))
    pos = rng.uniform(0.1, 100, n)
    rec, _ = run_pair(sec_reciprocal, pos)
    log, _ = run_pair(sec_log, pos)
    e_in = rng.uniform(-4, 4, n)
    ex, _ = run_pair(sec_exp, e_in)
    rec_err = np.max(np.abs(rec * pos - 1))
    log_err = np.max(np.abs(log - np.log(pos)))
    exp_err = np.max(np.abs(ex / np.exp(e_in) - 1))
    ok = trig <= 1e-3 and rec_err <= 1e-2 and log_err <= 1e-2 and exp_err <= 1e-2
    return CheckResult(
        "kernels",
        ok,
        f"sin/cos {trig:.1e}, 1/x rel {rec_err:.1e}, log {log_err:.1e}, exp rel on [-4,4] {exp_err:.1e}",
    )


def check_equivalence() -> CheckResult:
    gt = BENCHMARKS["nguyen9"].ground_truth
    same = [gt, parse("(+ (sin (* x2 x2)) (sin x1))")]
    different = [parse("(+ (sin x1) (* x2 x2))"), parse("(+ (sin x1) (* x2 (sin x2)))")]
    ok = all(equivalent(t, gt, 2) for t in same) and not any(equivalent(t, gt, 2) for t in different)
    return CheckResult("equivalence ground truth", ok, f"{len(same)} equivalent, {len(different)} distinct cases")


def check_secure_fitness(trees: int = 10, seed: int = 4) -> CheckResult:
    rng = random.Random(seed)
    spec = BENCHMARKS["nguyen9"]
    train, _ = generate_dataset(spec, seed)
    sample = [full_tree(rng.randint(1, 4), 2, rng) for _ in range(trees)]
    with Session(vertical_split(train, spec.assignment), SessionConfig(seed=seed)) as s:
        s.share_dataset("train")
        worst, rounds_ok = 0.0, True
        for t in sample:
            before = s.opening_rounds
            (z,) = s.evaluate_fitness([t])
            rounds_ok &= s.opening_rounds - before == opening_rounds(t) + 1
            plain = fitness_mse(t, train)
            worst = max(worst, abs(z - plain) / max(1.0, plain))
    return CheckResult(
        "secure vs plaintext fitness",
        worst <= 1e-2 and rounds_ok,
        f"worst scaled gap {worst:.1e}, round counts {'match' if rounds_ok else 'differ'}",
    )


CHECKS = (check_beaver, check_fixed_point, check_kernels, check_equivalence, check_secure_fitness)


def run_all(progress=None) -> list[CheckResult]:
    out = []
    for check in CHECKS:
        start = time.perf_counter()
        try:
            res = check()
        except Exception as exc:  # noqa: BLE001 - reported as a failed check
            res = CheckResult(check.__name__.removeprefix("check_"), False, f"raised {exc!r}")
        res = CheckResult(res.name, res.passed, f"{res.detail} ({time.perf_counter() - start:.1f}s)")
        out.append(res)
        if progress:
            progress(res)
    return out

