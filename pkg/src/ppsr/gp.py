"""Tree-based genetic programming for symbolic regression.

The loop is generational with elitism: evaluate, select by tournament,
vary by subtree crossover and subtree mutation, replace, repeat. Fitness is
supplied by an oracle, a callable mapping a list of trees to a list of MSE
values, so the same loop drives plaintext and secure evaluation.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateTarget
from .expr import (
    Binary,
    Constant,
    Node,
    Unary,
    Variable,
    depth_at,
    eval_rows,
    node_at,
    replace_at,
)

WORST_FITNESS = math.inf
TERMINATION_MSE = 1e-10

FitnessOracle = Callable[[Sequence[Node]], list]


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 1000
    tournament_size: int = 5
    mutation_prob: float = 0.25
    crossover_prob: float = 0.95
    min_subtree_depth: int = 0
    max_subtree_depth: int = 2
    max_depth: int = 15
    max_length: int = 100
    init_method: str = "full"
    fitness: str = "mse"
    max_generations: int = 50
    elitism_count: int = 1
    rng_seed: int = 0
    init_min_depth: int = 2
    constant_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        for name in ("mutation_prob", "crossover_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        if min(self.population_size, self.tournament_size, self.max_depth, self.max_length) <= 0:
            raise ValueError("size limits must be positive")
        if self.tournament_size > self.population_size:
            raise ValueError("tournament_size cannot exceed population_size")
        if not 0 <= self.min_subtree_depth <= self.max_subtree_depth:
            raise ValueError("subtree depth range is empty")
        if not 0 <= self.elitism_count < self.population_size:
            raise ValueError("elitism_count must be below population_size")
        if self.init_method != "full":
            raise ValueError("only the 'full' initialisation method is supported")
        if self.fitness != "mse":
            raise ValueError("only the 'mse' fitness is supported")

    @property
    def init_max_depth(self) -> int:
        return self.max_subtree_depth + 2


@dataclass
class Individual:
    tree: Node
    fitness: float | None = None


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[0] != y.shape[0]:
            raise ValueError(f"inconsistent dataset shapes X{X.shape} y{y.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def sst_over_m(self) -> float:
        return float(np.mean((self.y - self.y.mean()) ** 2))


@dataclass
class RunResult:
    best: Individual
    best_history: list[float] = field(default_factory=list)
    mean_history: list[float] = field(default_factory=list)
    generations: int = 0
    evaluations: int = 0


# -- tree generation ----------------------------------------------------------

_FUNCTIONS = ("+", "-", "*", "sin", "cos")


def random_terminal(n_vars: int, rng: random.Random, constant_range=(-1.0, 1.0)) -> Node:
    k = rng.randrange(n_vars + 1)
    if k == n_vars:
        return Constant(rng.uniform(*constant_range))
    return Variable(k + 1)


def full_tree(depth: int, n_vars: int, rng: random.Random, constant_range=(-1.0, 1.0)) -> Node:
    """Tree whose every leaf sits exactly at ``depth``."""
    if depth == 0:
        return random_terminal(n_vars, rng, constant_range)
    op = _FUNCTIONS[rng.randrange(len(_FUNCTIONS))]
    if op in ("sin", "cos"):
        return Unary(op, full_tree(depth - 1, n_vars, rng, constant_range))
    left = full_tree(depth - 1, n_vars, rng, constant_range)
    return Binary(op, left, full_tree(depth - 1, n_vars, rng, constant_range))


def within_limits(tree: Node, config: GpConfig) -> bool:
    return tree.depth <= config.max_depth and tree.size <= config.max_length


def init_population(config: GpConfig, n_vars: int, rng: random.Random) -> list[Individual]:
    pop = []
    while len(pop) < config.population_size:
        depth = rng.randint(config.init_min_depth, config.init_max_depth)
        tree = full_tree(depth, n_vars, rng, config.constant_range)
        if within_limits(tree, config):
            pop.append(Individual(tree))
    return pop


# -- fitness ------------------------------------------------------------------


def fitness_mse(tree: Node, data: Dataset) -> float:
    """Mean squared error; non-finite results map to the worst fitness."""
    pred = eval_rows(tree, data.X)
    with np.errstate(all="ignore"):
        mse = float(np.mean((data.y - pred) ** 2))
    return mse if math.isfinite(mse) else WORST_FITNESS


def metric_rmse(mse: float) -> float:
    if mse < 0:
        raise ValueError("mse must be non-negative")
    return math.sqrt(mse)


def metric_r2(mse: float, sst_over_m: float) -> float:
    if sst_over_m == 0:
        raise DegenerateTarget("R^2 is undefined for a constant target")
    return 1.0 - mse / sst_over_m


class PlainOracle:
    """Plaintext MSE over a dataset."""

    def __init__(self, data: Dataset):
        self.data = data

    def __call__(self, trees: Sequence[Node]) -> list:
        return [fitness_mse(t, self.data) for t in trees]


# -- selection and variation --------------------------------------------------


def tournament_select(pop: Sequence[Individual], k: int, rng: random.Random) -> Individual:
    """Best of ``k`` draws with replacement; the earliest draw wins ties."""
    n = len(pop)
    best = pop[rng.randrange(n)]
    for _ in range(k - 1):
        cand = pop[rng.randrange(n)]
        if cand.fitness < best.fitness:
            best = cand
    return best


def crossover(a: Individual, b: Individual, rng: random.Random, config: GpConfig = GpConfig()):
    """Swap uniformly chosen subtrees; an over-limit child reverts to its parent."""
    i = rng.randrange(a.tree.size)
    j = rng.randrange(b.tree.size)
    sub_a, sub_b = node_at(a.tree, i), node_at(b.tree, j)
    child_a = replace_at(a.tree, i, sub_b)
    child_b = replace_at(b.tree, j, sub_a)
    out_a = Individual(child_a) if within_limits(child_a, config) else a
    out_b = Individual(child_b) if within_limits(child_b, config) else b
    return out_a, out_b


def mutate(a: Individual, rng: random.Random, config: GpConfig = GpConfig(), n_vars: int | None = None) -> Individual:
    """Replace a uniformly chosen subtree with a fresh full subtree."""
    if n_vars is None:
        from .expr import max_variable

        n_vars = max(1, max_variable(a.tree))
    k = rng.randrange(a.tree.size)
    depth = rng.randint(config.min_subtree_depth, config.max_subtree_depth)
    if depth_at(a.tree, k) + depth > config.max_depth:
        return a
    child = replace_at(a.tree, k, full_tree(depth, n_vars, rng, config.constant_range))
    return Individual(child) if within_limits(child, config) else a


# -- evolution ----------------------------------------------------------------


def _fitness_key(ind: Individual) -> float:
    return ind.fitness


def evolve(
    config: GpConfig,
    data_or_oracle: Dataset | FitnessOracle,
    rng: random.Random | None = None,
    n_vars: int | None = None,
    on_generation: Callable[[int, list[Individual]], None] | None = None,
) -> RunResult:
    """Run the generational loop until ``max_generations`` or a near-zero MSE.

    ``rng`` defaults to ``random.Random(config.rng_seed)``. When an oracle is
    passed instead of a dataset, ``n_vars`` must be given.
    """
    if isinstance(data_or_oracle, Dataset):
        oracle: FitnessOracle = PlainOracle(data_or_oracle)
        n_vars = data_or_oracle.n if n_vars is None else n_vars
    else:
        oracle = data_or_oracle
        if n_vars is None:
            raise ValueError("n_vars is required with a custom fitness oracle")
    rng = rng if rng is not None else random.Random(config.rng_seed)

    cache: dict[Node, float] = {}
    result = RunResult(best=None)

    def evaluate(pop):
        pending = {}
        for ind in pop:
            if ind.fitness is None:
                if ind.tree in cache:
                    ind.fitness = cache[ind.tree]
                else:
                    pending.setdefault(ind.tree, []).append(ind)
        if pending:
            trees = list(pending)
            values = oracle(trees)
            result.evaluations += len(trees)
            for tree, value in zip(trees, values):
                value = float(value)
                if not math.isfinite(value):
                    value = WORST_FITNESS
                cache[tree] = value
                for ind in pending[tree]:
                    ind.fitness = value

    def record(pop):
        best = min(pop, key=_fitness_key)
        finite = [i.fitness for i in pop if math.isfinite(i.fitness)]
        result.best = Individual(best.tree, best.fitness)
        result.best_history.append(best.fitness)
        result.mean_history.append(float(np.mean(finite)) if finite else WORST_FITNESS)

    pop = init_population(config, n_vars, rng)
    evaluate(pop)
    record(pop)
    if on_generation:
        on_generation(0, pop)

    for gen in range(1, config.max_generations + 1):
        if result.best.fitness < TERMINATION_MSE:
            break
        ranked = sorted(pop, key=_fitness_key)
        offspring = [Individual(e.tree, e.fitness) for e in ranked[: config.elitism_count]]
        while len(offspring) < config.population_size:
            p1 = tournament_select(pop, config.tournament_size, rng)
            p2 = tournament_select(pop, config.tournament_size, rng)
            if rng.random() < config.crossover_prob:
                c1, c2 = crossover(p1, p2, rng, config)
            else:
                c1, c2 = p1, p2
            for child in (c1, c2):
                if rng.random() < config.mutation_prob:
                    child = mutate(child, rng, config, n_vars)
                offspring.append(Individual(child.tree, child.fitness))
        pop = offspring[: config.population_size]
        evaluate(pop)
        record(pop)
        result.generations = gen
        if on_generation:
            on_generation(gen, pop)
    return result
