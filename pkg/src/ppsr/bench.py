"""Benchmark problems, vertical splits and experiment orchestration.

A run generates fresh train/test data for its seed, evolves an expression in
plaintext or secure mode, then scores it on both splits and checks it against
the ground truth. Results go to a per-run CSV and a JSON summary.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IncompletePartition
from .expr import Binary, Constant, Node, Unary, Variable, equivalent, eval_rows, format_expr, parse
from .gp import Dataset, GpConfig, evolve, fitness_mse, metric_r2
from .protocol.parties import ClientData
from .protocol.session import Session, SessionConfig

SAMPLES = 20


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    n_vars: int
    ground_truth: Node
    assignment: tuple[tuple[int, ...], ...]
    sample_count: int = SAMPLES
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        def variables(t):
            if isinstance(t, Variable):
                yield t.index
            for c in getattr(t, "left", None), getattr(t, "right", None), getattr(t, "child", None):
                if c is not None:
                    yield from variables(c)

        bad = [k for k in variables(self.ground_truth) if k > self.n_vars]
        if bad:
            raise ValueError(f"{self.name}: ground truth uses undeclared variables {bad}")


def _friedman2() -> Node:
    x = [None] + [Variable(k) for k in range(1, 6)]
    c = Constant
    sine = Binary("*", c(10.0), Unary("sin", Binary("*", c(math.pi), Binary("*", x[1], x[2]))))
    centred = Binary("-", x[3], c(0.5))
    quad = Binary("*", c(20.0), Binary("*", centred, centred))
    return Binary("+", Binary("+", Binary("+", sine, quad), Binary("*", c(10.0), x[4])), Binary("*", c(5.0), x[5]))


BENCHMARKS: dict[str, BenchmarkSpec] = {
    "nguyen9": BenchmarkSpec("nguyen9", 2, parse("(+ (sin x1) (sin (* x2 x2)))"), ((1,), (2,))),
    "nguyen10": BenchmarkSpec("nguyen10", 2, parse("(* (* 2 (sin x1)) (cos x2))"), ((1,), (2,))),
    "nguyen12": BenchmarkSpec(
        "nguyen12",
        2,
        parse("(- (+ (- (* (* x1 x1) (* x1 x1)) (* (* x1 x1) x1)) (* 0.5 (* x2 x2))) x2)"),
        ((1,), (2,)),
    ),
    "friedman2": BenchmarkSpec("friedman2", 5, _friedman2(), ((1, 2, 3), (4, 5))),
}


def get_benchmark(name: str) -> BenchmarkSpec:
    key = name.lower().replace("-", "").replace("_", "")
    if key not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}")
    return BENCHMARKS[key]


def generate_dataset(spec: BenchmarkSpec, seed: int) -> tuple[Dataset, Dataset]:
    """Train split from ``seed``, test split from ``seed ^ 1``."""

    def draw(s):
        rng = np.random.default_rng(s)
        X = rng.uniform(*spec.domain, size=(spec.sample_count, spec.n_vars))
        return Dataset(X, eval_rows(spec.ground_truth, X))

    return draw(seed), draw(seed ^ 1)


def vertical_split(data: Dataset, assignment) -> list[ClientData]:
    """Column blocks per client in the given order; the last client also gets y.

    Blocks must partition ``1..n`` into consecutive ascending runs, so the
    joint matrix the servers assemble keeps the original column order.
    """
    flat = [k for block in assignment for k in block]
    if sorted(flat) != list(range(1, data.n + 1)) or len(flat) != data.n:
        raise IncompletePartition(f"assignment {assignment} does not partition x1..x{data.n}")
    if flat != list(range(1, data.n + 1)):
        raise IncompletePartition("client blocks must be consecutive and in column order")
    if len(assignment) < 2 or any(len(b) == 0 for b in assignment):
        raise IncompletePartition("need at least two non-empty client blocks")
    out = []
    for j, block in enumerate(assignment):
        cols = [k - 1 for k in block]
        y = data.y.copy() if j == len(assignment) - 1 else None
        out.append(ClientData(data.X[:, cols].copy(), y))
    return out


def merge(clients: list[ClientData]) -> Dataset:
    return Dataset(np.concatenate([c.X for c in clients], axis=1), clients[-1].y)


# -- experiments ----------------------------------------------------------------

CSV_COLUMNS = (
    "benchmark",
    "mode",
    "seed",
    "best_expr",
    "train_mse",
    "test_mse",
    "train_r2",
    "test_r2",
    "recovered",
    "generations",
    "wall_ms",
    "triples_used",
)


@dataclass(frozen=True)
class RunRecord:
    benchmark: str
    mode: str
    seed: int
    best_expr: str
    train_mse: float
    test_mse: float
    train_r2: float
    test_r2: float
    recovered: bool
    generations: int
    wall_ms: int
    triples_used: int

    @property
    def train_rmse(self) -> float:
        return math.sqrt(self.train_mse)

    @property
    def test_rmse(self) -> float:
        return math.sqrt(self.test_mse)


@dataclass
class ExperimentResult:
    benchmark: str
    mode: str
    config: dict
    records: list[RunRecord] = field(default_factory=list)

    @property
    def runs(self) -> int:
        return len(self.records)

    @property
    def recovered(self) -> int:
        return sum(r.recovered for r in self.records)

    @property
    def recovery_rate(self) -> float:
        return self.recovered / self.runs if self.records else 0.0

    def config_hash(self) -> str:
        return hashlib.sha1(json.dumps(self.config, sort_keys=True).encode()).hexdigest()

    def summary(self) -> dict:
        def stats(name):
            vals = np.array([getattr(r, name) for r in self.records], dtype=float)
            return {"median": float(np.median(vals)), "mean": float(np.mean(vals))} if len(vals) else {}

        return {
            "benchmark": self.benchmark,
            "mode": self.mode,
            "runs": self.runs,
            "recovered": self.recovered,
            "recovery_rate": self.recovery_rate,
            "train_mse": stats("train_mse"),
            "train_rmse": stats("train_rmse"),
            "test_rmse": stats("test_rmse"),
            "test_mse": stats("test_mse"),
            "train_r2": stats("train_r2"),
            "test_r2": stats("test_r2"),
            "triples_used": int(sum(r.triples_used for r in self.records)),
            "config": self.config,
            "config_hash": self.config_hash(),
        }


def _r2(mse: float, sst: float) -> float:
    return metric_r2(mse, sst) if sst > 0 else float("nan")


def run_once(
    spec: BenchmarkSpec,
    mode: str,
    seed: int,
    config: GpConfig,
    session_config: SessionConfig | None = None,
    transport: str = "inproc",
) -> RunRecord:
    train, test = generate_dataset(spec, seed)
    config = dataclasses.replace(config, rng_seed=seed)
    start = time.perf_counter()
    if mode == "plaintext":
        result = evolve(config, train)
        best = result.best.tree
        train_mse = result.best.fitness
        test_mse = fitness_mse(best, test)
        train_sst, test_sst = train.sst_over_m(), test.sst_over_m()
        triples = 0
    elif mode == "secure":
        session_config = dataclasses.replace(session_config or SessionConfig(), seed=seed)
        clients = vertical_split(train, spec.assignment)
        with Session(clients, session_config, transport, config_extra=dataclasses.asdict(config)) as session:
            session.share_dataset("train")
            result = evolve(config, session.oracle("train"), n_vars=spec.n_vars)
            best = result.best.tree
            train_mse = result.best.fitness
            session.share_dataset("test", vertical_split(test, spec.assignment))
            (test_mse,) = session.evaluate_fitness([best], "test")
            train_sst, test_sst = session.sst["train"], session.sst["test"]
            triples = session.triples_used
    else:
        raise ValueError(f"mode must be 'plaintext' or 'secure', got {mode!r}")
    wall_ms = int(round(1000 * (time.perf_counter() - start)))
    return RunRecord(
        benchmark=spec.name,
        mode=mode,
        seed=seed,
        best_expr=format_expr(best),
        train_mse=float(train_mse),
        test_mse=float(test_mse),
        train_r2=_r2(train_mse, train_sst),
        test_r2=_r2(test_mse, test_sst),
        recovered=equivalent(best, spec.ground_truth, spec.n_vars),
        generations=result.generations,
        wall_ms=wall_ms,
        triples_used=triples,
    )


def run_experiment(
    benchmark: str | BenchmarkSpec,
    mode: str,
    runs: int,
    config: GpConfig = GpConfig(),
    seed: int = 0,
    session_config: SessionConfig | None = None,
    transport: str = "inproc",
    out: str | Path | None = None,
    progress=None,
    workers: int = 1,
) -> ExperimentResult:
    """``runs`` independent runs with seeds ``seed, seed+1, ...``.

    With ``out`` set, writes ``<out>.csv`` and ``<out>.json``. ``workers > 1``
    spreads runs over processes; records come back in seed order either way.
    """
    spec = benchmark if isinstance(benchmark, BenchmarkSpec) else get_benchmark(benchmark)
    cfg_echo = {
        "gp": {k: v for k, v in dataclasses.asdict(config).items() if k != "rng_seed"},
        "seed": seed,
        "runs": runs,
        "transport": transport if mode == "secure" else None,
    }
    if mode == "secure":
        sc = session_config or SessionConfig()
        cfg_echo["ring_bits"], cfg_echo["frac_bits"] = sc.ring_bits, sc.frac_bits
    result = ExperimentResult(spec.name, mode, cfg_echo)
    args = [(spec, mode, seed + r, config, session_config, transport) for r in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = pool.map(run_once, *zip(*args))
            for rec in records:
                result.records.append(rec)
                if progress:
                    progress(rec)
    else:
        for a in args:
            rec = run_once(*a)
            result.records.append(rec)
            if progress:
                progress(rec)
    if out is not None:
        write_results(result, out)
    return result


# -- result files -----------------------------------------------------------------


def write_csv(records, path: str | Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for rec in records:
            row = []
            for name in CSV_COLUMNS:
                v = getattr(rec, name)
                if isinstance(v, bool):
                    row.append("true" if v else "false")
                elif isinstance(v, float):
                    row.append(repr(v))
                else:
                    row.append(str(v))
            w.writerow(row)


def read_csv(path: str | Path) -> list[RunRecord]:
    types = {f.name: f.type for f in dataclasses.fields(RunRecord)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kwargs = {}
            for name in CSV_COLUMNS:
                raw, kind = row[name], types[name]
                if kind == "bool":
                    kwargs[name] = raw == "true"
                elif kind == "int":
                    kwargs[name] = int(raw)
                elif kind == "float":
                    kwargs[name] = float(raw)
                else:
                    kwargs[name] = raw
            out.append(RunRecord(**kwargs))
    return out


def write_results(result: ExperimentResult, out: str | Path) -> tuple[Path, Path]:
    base = Path(out)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = base.with_suffix(".csv"), base.with_suffix(".json")
    write_csv(result.records, csv_path)
    summary = result.summary()
    summary["records_csv"] = csv_path.name
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default))
    return csv_path, json_path


def _json_default(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(type(v))
