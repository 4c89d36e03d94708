"""Real-coded genetic algorithm with hybrid roulette/tournament parent selection.

Each child pair draws two uniform numbers; if the first is at least the
second both parents come from roulette-wheel selection, otherwise from a
tournament. Children are produced by uniform crossover and Gaussian mutation.
Fitness is minimized.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConfigError

log = logging.getLogger(__name__)

SELECTIONS = ("hybrid", "rws", "ts")
PENALTY = 1e6

# Search box for MPC weight tuning: 5 state weights then 2 increment weights.
Q_BOUNDS = (1e-4, 10.0)
R_BOUNDS = (1e-3, 1.0)
WEIGHT_BOUNDS = np.array([Q_BOUNDS] * 5 + [R_BOUNDS] * 2)


@dataclass
class GaConfig:
    generations: int = 15
    pop_size: int = 20
    offspring_fraction: float = 0.8
    beta: float = 0.75
    mutation_rate: float = 0.3
    mutation_sigma: float = 0.15
    tournament_size: int = 3
    elite_count: int = 1
    seed: int = 0
    selection: str = "hybrid"

    def __post_init__(self):
        if self.generations < 1:
            raise ConfigError("ga.generations must be >= 1")
        if self.pop_size < 4 or self.pop_size % 2:
            raise ConfigError("ga.pop_size must be even and >= 4")
        if not 0 < self.offspring_fraction <= 1:
            raise ConfigError("ga.offspring_fraction must be in (0, 1]")
        if not 0 <= self.mutation_rate <= 1 or self.mutation_sigma < 0:
            raise ConfigError("invalid mutation parameters")
        if not 2 <= self.tournament_size <= self.pop_size:
            raise ConfigError("ga.tournament_size must be in [2, pop_size]")
        if not 0 <= self.elite_count < self.pop_size:
            raise ConfigError("ga.elite_count must be in [0, pop_size)")
        if self.selection not in SELECTIONS:
            raise ConfigError(f"ga.selection must be one of {SELECTIONS}")

    @classmethod
    def from_dict(cls, data: dict) -> "GaConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown ga keys: {sorted(unknown)}")
        return cls(**data)

    @property
    def n_children(self) -> int:
        n = int(round(self.offspring_fraction * self.pop_size))
        return max(1, min(n, self.pop_size - self.elite_count))


@dataclass
class Chromosome:
    genes: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    fitness: float = math.inf

    def copy(self) -> "Chromosome":
        return Chromosome(self.genes.copy(), self.lo, self.hi, self.fitness)


def sphere_fitness(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.dot(x, x))


# ---------------------------------------------------------------- operators

def rws_probabilities(fitness, beta: float) -> np.ndarray:
    """Boltzmann weights ``exp(-beta * f / mean(f))`` normalized to one."""
    f = np.asarray(fitness, dtype=float)
    mean = np.mean(f)
    scaled = f / mean if mean > 0 else f - np.min(f)
    logits = -beta * scaled
    w = np.exp(logits - logits.max())
    return w / w.sum()


def roulette_select(pop: Sequence[Chromosome], rng, beta: float) -> Chromosome:
    probs = rws_probabilities([c.fitness for c in pop], beta)
    return pop[int(rng.choice(len(pop), p=probs))]


def tournament_select(pop: Sequence[Chromosome], rng, size: int) -> Chromosome:
    idx = rng.choice(len(pop), size=size, replace=False)
    return pop[min(idx, key=lambda i: (pop[i].fitness, i))]


def select_pair(pop, rng, cfg: GaConfig):
    """Two parents from the same randomly chosen selection scheme."""
    if cfg.selection == "hybrid":
        pct_r, pct_t = rng.random(), rng.random()
        use_rws = pct_r >= pct_t
    else:
        use_rws = cfg.selection == "rws"
    if use_rws:
        return roulette_select(pop, rng, cfg.beta), roulette_select(pop, rng, cfg.beta)
    return (tournament_select(pop, rng, cfg.tournament_size),
            tournament_select(pop, rng, cfg.tournament_size))


def select_parent(pop, rng, cfg: GaConfig) -> Chromosome:
    return select_pair(pop, rng, cfg)[0]


def uniform_crossover(p1: Chromosome, p2: Chromosome, rng):
    if p1.genes.shape != p2.genes.shape:
        raise ValueError("parents have different gene counts")
    swap = rng.random(p1.genes.shape) < 0.5
    g1 = np.where(swap, p2.genes, p1.genes)
    g2 = np.where(swap, p1.genes, p2.genes)
    return Chromosome(g1, p1.lo, p1.hi), Chromosome(g2, p1.lo, p1.hi)


def gaussian_mutation(c: Chromosome, rng, cfg: GaConfig) -> Chromosome:
    mask = rng.random(c.genes.shape) < cfg.mutation_rate
    noise = rng.standard_normal(c.genes.shape) * (cfg.mutation_sigma * (c.hi - c.lo))
    genes = np.clip(np.where(mask, c.genes + noise, c.genes), c.lo, c.hi)
    return Chromosome(genes, c.lo, c.hi)


# ---------------------------------------------------------------- main loop

@dataclass
class GaResult:
    best: Chromosome
    history: list            # best fitness of the population per generation
    mean_history: list
    evaluations: int = 0


def _evaluate(fitness: Callable, genes_list, n_jobs):
    if n_jobs is None or n_jobs == 1 or len(genes_list) < 2:
        return [float(fitness(g)) for g in genes_list]
    from joblib import Parallel, delayed
    return [float(v) for v in Parallel(n_jobs=n_jobs)(delayed(fitness)(g) for g in genes_list)]


def run_ga(fitness: Callable, cfg: GaConfig, bounds, n_jobs: Optional[int] = 1,
           callback: Optional[Callable] = None) -> GaResult:
    """Evolve ``cfg.generations`` generations; returns the best chromosome ever seen.

    The next population is ``n_children`` offspring plus the best survivors of
    the current one (at least ``elite_count``), so the best fitness never rises.
    Fitness evaluations inside a generation are independent and may run in
    parallel (``n_jobs``) without changing the result.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(lo > hi):
        raise ConfigError("gene lower bounds must not exceed upper bounds")
    rng = np.random.default_rng(cfg.seed)

    genes = lo + rng.random((cfg.pop_size, len(lo))) * (hi - lo)
    values = _evaluate(fitness, list(genes), n_jobs)
    pop = sorted((Chromosome(g, lo, hi, v) for g, v in zip(genes, values)),
                 key=lambda c: c.fitness)
    best = pop[0].copy()
    history = [pop[0].fitness]
    mean_history = [float(np.mean([c.fitness for c in pop]))]
    evaluations = len(pop)
    if callback:
        callback(0, pop)

    n_children = cfg.n_children
    for gen in range(1, cfg.generations + 1):
        children = []
        while len(children) < n_children:
            p1, p2 = select_pair(pop, rng, cfg)
            c1, c2 = uniform_crossover(p1, p2, rng)
            children.append(gaussian_mutation(c1, rng, cfg))
            children.append(gaussian_mutation(c2, rng, cfg))
        children = children[:n_children]
        for c, v in zip(children, _evaluate(fitness, [c.genes for c in children], n_jobs)):
            c.fitness = v
        evaluations += len(children)
        survivors = [c.copy() for c in pop[:cfg.pop_size - n_children]]
        pop = sorted(survivors + children, key=lambda c: c.fitness)
        if pop[0].fitness < best.fitness:
            best = pop[0].copy()
        history.append(pop[0].fitness)
        mean_history.append(float(np.mean([c.fitness for c in pop])))
        log.info("generation %d best %.6g mean %.6g", gen, history[-1], mean_history[-1])
        if callback:
            callback(gen, pop)
    return GaResult(best, history, mean_history, evaluations)


class GeneticAlgorithm(BaseEstimator):
    """Estimator-style front end for :func:`run_ga`.

    ``fit(objective, bounds)`` stores ``best_genes_``, ``best_fitness_`` and
    ``history_`` (per-generation best fitness).
    """

    def __init__(self, generations=15, pop_size=20, offspring_fraction=0.8, beta=0.75,
                 mutation_rate=0.3, mutation_sigma=0.15, tournament_size=3, elite_count=1,
                 selection="hybrid", random_state=0, n_jobs=1):
        self.generations = generations
        self.pop_size = pop_size
        self.offspring_fraction = offspring_fraction
        self.beta = beta
        self.mutation_rate = mutation_rate
        self.mutation_sigma = mutation_sigma
        self.tournament_size = tournament_size
        self.elite_count = elite_count
        self.selection = selection
        self.random_state = random_state
        self.n_jobs = n_jobs

    def config(self) -> GaConfig:
        params = self.get_params()
        params.pop("n_jobs")
        params["seed"] = params.pop("random_state")
        return GaConfig(**params)

    def fit(self, objective: Callable, bounds):
        result = run_ga(objective, self.config(), bounds, n_jobs=self.n_jobs)
        self.result_ = result
        self.best_genes_ = result.best.genes
        self.best_fitness_ = result.best.fitness
        self.history_ = np.array(result.history)
        self.mean_history_ = np.array(result.mean_history)
        return self


# ---------------------------------------------------------------- MPC tuning

def genes_to_weights(genes) -> tuple[tuple, tuple]:
    g = [float(v) for v in genes]
    if len(g) != 7:
        raise ValueError("weight chromosomes have 7 genes (5 Q, 2 R)")
    return tuple(g[:5]), tuple(g[5:])


def closed_loop_fitness(genes, scenario, model=None) -> float:
    """Sum of the ye, theta_e and vx tracking RMSEs of a full closed-loop run.

    Runs that abort (solver failure cascade, divergence, singular geometry)
    score ``PENALTY``.
    """
    from .harness import compute_metrics, run_closed_loop

    q, r = genes_to_weights(genes)
    cfg = replace(scenario, mpc=replace(scenario.mpc, q_diag=q, r_diag=r))
    try:
        run = run_closed_loop(cfg, model=model, timing=False)
    except Exception as exc:  # noqa: BLE001 - any failure is a bad candidate
        log.debug("fitness evaluation failed: %s", exc)
        return PENALTY
    if not run.completed:
        return PENALTY
    m = compute_metrics(run, cfg.mpc)
    return m.rmse_ye + m.rmse_theta_e + m.rmse_vx


class ClosedLoopObjective:
    """Picklable fitness callable for a fixed scenario (joblib friendly)."""

    def __init__(self, scenario, model=None):
        self.scenario = scenario
        self.model = model

    def __call__(self, genes) -> float:
        return closed_loop_fitness(genes, self.scenario, self.model)


def tune_weights(scenario, cfg: GaConfig, model=None, n_jobs=1, callback=None) -> GaResult:
    return run_ga(ClosedLoopObjective(scenario, model), cfg, WEIGHT_BOUNDS, n_jobs=n_jobs,
                  callback=callback)
