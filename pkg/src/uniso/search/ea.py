"""Generational elitist EA: SBX + polynomial mutation, or uniform crossover +
random replacement for categorical spaces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..textcodec import DesignSpace
from .common import BudgetedScorer, BudgetError, Scorer, SearchBudget, SearchResult, collect_result, from_unit, to_unit


@dataclass(frozen=True)
class EAConfig:
    population: int = 10
    eta_c: float = 15.0
    eta_m: float = 20.0
    crossover_prob: float = 0.9
    swap_prob: float = 0.5


def sbx_beta(u: np.ndarray, eta: float) -> np.ndarray:
    """Spread factor from uniform draws (unbounded SBX)."""
    return np.where(u <= 0.5, (2 * u) ** (1 / (eta + 1)), (1 / (2 * (1 - u))) ** (1 / (eta + 1)))


def sbx_children(p1: np.ndarray, p2: np.ndarray, beta: np.ndarray | float):
    c1 = 0.5 * ((1 + beta) * p1 + (1 - beta) * p2)
    c2 = 0.5 * ((1 - beta) * p1 + (1 + beta) * p2)
    return c1, c2


def sbx_crossover(p1, p2, eta: float, rng: np.random.Generator, cfg: EAConfig = EAConfig()):
    """SBX in [0,1] coordinates; each variable crosses with probability ``swap_prob``."""
    if rng.random() >= cfg.crossover_prob:
        return p1.copy(), p2.copy()
    beta = sbx_beta(rng.random(p1.shape), eta)
    beta = np.where(rng.random(p1.shape) < cfg.swap_prob, beta, 1.0)
    c1, c2 = sbx_children(p1, p2, beta)
    return np.clip(c1, 0.0, 1.0), np.clip(c2, 0.0, 1.0)


def polynomial_mutation(x: np.ndarray, eta: float, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Bounded polynomial mutation in [0,1] coordinates."""
    x = x.copy()
    for j in np.flatnonzero(rng.random(x.shape) < rate):
        u = rng.random()
        d1, d2 = x[j], 1.0 - x[j]
        power = 1.0 / (eta + 1)
        if u < 0.5:
            val = 2 * u + (1 - 2 * u) * (1 - d1) ** (eta + 1)
            dq = val**power - 1
        else:
            val = 2 * (1 - u) + 2 * (u - 0.5) * (1 - d2) ** (eta + 1)
            dq = 1 - val**power
        x[j] = x[j] + dq
    return np.clip(x, 0.0, 1.0)


def uniform_crossover(p1, p2, rng: np.random.Generator, cfg: EAConfig = EAConfig()):
    if rng.random() >= cfg.crossover_prob:
        return p1.copy(), p2.copy()
    swap = rng.random(p1.shape) < cfg.swap_prob
    return np.where(swap, p2, p1), np.where(swap, p1, p2)


def replacement_mutation(x: np.ndarray, k: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Each gene is replaced, with probability ``rate``, by a different category."""
    x = x.copy()
    for j in np.flatnonzero(rng.random(x.shape) < rate):
        x[j] = (x[j] + rng.integers(1, k[j])) % k[j]
    return x


def tournament(scores: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.integers(0, len(scores), size=n)
    b = rng.integers(0, len(scores), size=n)
    return np.where(scores[a] >= scores[b], a, b)


def make_offspring(pop: np.ndarray, scores: np.ndarray, space: DesignSpace, rng: np.random.Generator, cfg: EAConfig):
    """One generation of children (same count as ``pop``), in search coordinates."""
    n, d = pop.shape
    parents = tournament(scores, n + n % 2, rng)
    children = []
    for i in range(0, len(parents), 2):
        p1, p2 = pop[parents[i]], pop[parents[i + 1]]
        if space.is_continuous:
            c1, c2 = sbx_crossover(p1, p2, cfg.eta_c, rng, cfg)
            c1 = polynomial_mutation(c1, cfg.eta_m, 1.0 / d, rng)
            c2 = polynomial_mutation(c2, cfg.eta_m, 1.0 / d, rng)
        else:
            c1, c2 = uniform_crossover(p1, p2, rng, cfg)
            c1 = replacement_mutation(c1, space.n_categories, 1.0 / d, rng)
            c2 = replacement_mutation(c2, space.n_categories, 1.0 / d, rng)
        children.extend([c1, c2])
    return np.stack(children[:n])


def survivors(pop, scores, children, child_scores, n):
    """(mu + lambda) selection; ties keep the earlier individual."""
    allpop = np.concatenate([pop, children])
    allscores = np.concatenate([scores, child_scores])
    keep = np.argsort(-allscores, kind="stable")[:n]
    return allpop[keep], allscores[keep]


def ea_search(
    scorer: Scorer,
    space: DesignSpace,
    dataset,
    budget: SearchBudget = SearchBudget(),
    cfg: EAConfig = EAConfig(),
) -> SearchResult:
    """Model-inner EA seeded with the dataset's top designs."""
    n = cfg.population
    generations = budget.max_evals // n
    if generations < 1:
        raise BudgetError(f"budget {budget.max_evals} is below one generation of {n}")
    if len(dataset.designs) < n:
        raise ValueError(f"dataset needs at least {n} designs")
    rng = np.random.default_rng(budget.seed)
    counted = BudgetedScorer(scorer, budget.max_evals)
    cont = space.is_continuous

    def decode(p):
        return from_unit(space, p) if cont else p

    pop = dataset.top(n).astype(float)
    pop = to_unit(space, pop) if cont else pop
    scores = counted(decode(pop))
    for _ in range(generations - 1):
        if counted.remaining <= 0:
            break
        children = make_offspring(pop, scores, space, rng, cfg)
        child_scores = counted(decode(children))
        ok = ~np.isnan(child_scores)
        pop, scores = survivors(pop, scores, children[ok], child_scores[ok], n)
    return collect_result(counted, budget.final_count, {"optimizer": "ea", "generations": generations})
