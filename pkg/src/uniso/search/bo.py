"""Batch Bayesian optimization: MC-qEI for continuous spaces and overlap-kernel
UCB for categorical ones."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ..textcodec import DesignSpace
from .common import BudgetedScorer, Scorer, SearchBudget, SearchResult, collect_result, from_unit, to_unit
from .ea import EAConfig, make_offspring, survivors
from .gp import GPModel, batch_posterior, fit_gp_grid, gp_posterior

LENGTHSCALES = (0.05, 0.1, 0.2, 0.35, 0.5, 1.0, 2.0)
THETAS = (0.5, 1.0, 2.0, 4.0, 8.0)


@dataclass(frozen=True)
class BOConfig:
    initial: int = 500
    q: int = 10
    mc_samples: int = 128
    raw_samples: int = 128
    restarts: int = 10
    refine_steps: int = 200
    proposals: int = 6
    noise: float = 0.01


@dataclass(frozen=True)
class CategoricalBOConfig:
    initial: int = 500
    q: int = 10
    beta: float = 0.2
    population: int = 32
    generations: int = 200
    patience: int = 20
    noise: float = 0.01


def base_samples(mc_samples: int, q: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((mc_samples, q))


def _batch_chol(cov: np.ndarray) -> np.ndarray:
    q = cov.shape[-1]
    scale = max(float(np.abs(np.diagonal(cov, axis1=-2, axis2=-1)).max()), 1e-12)
    for jitter in (1e-10, 1e-8, 1e-6):
        try:
            return np.linalg.cholesky(cov + jitter * scale * np.eye(q))
        except np.linalg.LinAlgError:
            continue
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.maximum(vals, 0.0))[..., None, :]


def qei_values(gp: GPModel, batches: np.ndarray, best: float, base: np.ndarray) -> np.ndarray:
    """MC-qEI of each batch in ``batches`` (n, q, d) with shared base samples (m, q)."""
    mean, cov = batch_posterior(gp, batches)
    chol = _batch_chol(cov)
    f = mean[:, None, :] + np.einsum("nij,mj->nmi", chol, base)
    return np.maximum(f.max(-1) - best, 0.0).mean(-1)


def qei_acquisition(gp: GPModel, batch: np.ndarray, best_so_far: float, mc_samples: int = 128, seed: int = 0) -> float:
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if len(batch) < 1:
        raise ValueError("qEI needs a batch of at least one design")
    base = base_samples(mc_samples, len(batch), seed)
    return float(qei_values(gp, batch[None], best_so_far, base)[0])


def expected_improvement(mean: np.ndarray, var: np.ndarray, best: float) -> np.ndarray:
    """Closed-form single-point EI."""
    sd = np.sqrt(np.maximum(var, 0.0))
    gap = mean - best
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(sd > 0, gap / sd, 0.0)
    return np.where(sd > 0, gap * norm.cdf(u) + sd * norm.pdf(u), np.maximum(gap, 0.0))


def optimize_qei(gp: GPModel, best: float, dim: int, rng: np.random.Generator, cfg: BOConfig, seed: int) -> np.ndarray:
    """Multi-start coordinate refinement of a q-batch in [0,1]^d."""
    base = base_samples(cfg.mc_samples, cfg.q, seed)
    raw = rng.random((cfg.raw_samples, cfg.q, dim))
    vals = qei_values(gp, raw, best, base)
    top = np.argsort(-vals, kind="stable")[: cfg.restarts]
    cur, cur_vals = raw[top].copy(), vals[top].copy()
    r, p = len(cur), cfg.proposals
    for t in range(cfg.refine_steps):
        step = 0.2 * (0.005 / 0.2) ** (t / max(cfg.refine_steps - 1, 1))
        i = rng.integers(0, cfg.q, size=r)
        j = rng.integers(0, dim, size=r)
        props = np.repeat(cur[:, None], p, axis=1)
        rows = np.arange(r)[:, None]
        old = cur[np.arange(r), i, j][:, None]
        moves = old + step * rng.standard_normal((r, p))
        moves[:, -1] = rng.random(r)
        props[rows, np.arange(p)[None, :], i[:, None], j[:, None]] = np.clip(moves, 0.0, 1.0)
        pv = qei_values(gp, props.reshape(r * p, cfg.q, dim), best, base).reshape(r, p)
        k = pv.argmax(1)
        better = pv[np.arange(r), k] > cur_vals
        cur[better] = props[np.arange(r), k][better]
        cur_vals[better] = pv[np.arange(r), k][better]
    return cur[int(np.argmax(cur_vals))]


def _standardize(ys) -> tuple[np.ndarray, float, float]:
    ys = np.asarray(ys, dtype=float)
    mu, sd = ys.mean(), ys.std()
    sd = sd if sd > 1e-12 else 1.0
    return (ys - mu) / sd, mu, sd


def _warm_start(counted: BudgetedScorer, dataset, initial: int, rng: np.random.Generator) -> None:
    n = min(initial, len(dataset.designs), counted.remaining)
    idx = np.sort(rng.choice(len(dataset.designs), size=n, replace=False))
    counted(dataset.designs[idx])


def bo_qei_search(
    scorer: Scorer,
    space: DesignSpace,
    dataset,
    budget: SearchBudget = SearchBudget(),
    cfg: BOConfig = BOConfig(),
) -> SearchResult:
    if not space.is_continuous:
        raise ValueError("qEI search needs a continuous space")
    rng = np.random.default_rng(budget.seed)
    counted = BudgetedScorer(scorer, budget.max_evals)
    _warm_start(counted, dataset, cfg.initial, rng)
    incumbents, it = [counted.best], 0
    while counted.remaining > 0:
        x = to_unit(space, np.stack(counted.designs))
        y, _, _ = _standardize(counted.scores)
        gp = fit_gp_grid(x, y, "se", LENGTHSCALES, cfg.noise)
        batch = optimize_qei(gp, float(y.max()), space.dim, rng, cfg, seed=budget.seed * 100003 + it)
        before = counted.calls
        counted(from_unit(space, batch[: counted.remaining]))
        if counted.calls == before:  # every proposal was already evaluated
            counted(space.sample(min(cfg.q, counted.remaining), rng))
        incumbents.append(counted.best)
        it += 1
    return collect_result(counted, budget.final_count, {"optimizer": "bo", "iterations": it, "incumbents": incumbents})


def ucb(gp: GPModel, designs: np.ndarray, beta: float) -> np.ndarray:
    mean, var = gp_posterior(gp, designs)
    return mean + beta * np.sqrt(var)


def maximize_categorical(acq, space: DesignSpace, seeds: np.ndarray, rng: np.random.Generator, cfg: CategoricalBOConfig):
    """EA over categorical designs on a free acquisition; returns every visited design and its value."""
    n = cfg.population
    pop = seeds[:n]
    if len(pop) < n:
        pop = np.concatenate([pop, space.sample(n - len(pop), rng)])
    vals = acq(pop)
    archive = {p.tobytes(): (p, v) for p, v in zip(pop, vals)}
    best, stale = vals.max(), 0
    ea_cfg = EAConfig(population=n)
    for _ in range(cfg.generations):
        children = make_offspring(pop, vals, space, rng, ea_cfg)
        child_vals = acq(children)
        for c, v in zip(children, child_vals):
            archive.setdefault(c.tobytes(), (c, v))
        pop, vals = survivors(pop, vals, children, child_vals, n)
        if vals.max() > best + 1e-12:
            best, stale = vals.max(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return archive


def bo_categorical_search(
    scorer: Scorer,
    space: DesignSpace,
    dataset,
    budget: SearchBudget = SearchBudget(),
    cfg: CategoricalBOConfig = CategoricalBOConfig(),
) -> SearchResult:
    if not space.is_categorical:
        raise ValueError("overlap-kernel search needs a categorical space")
    rng = np.random.default_rng(budget.seed)
    counted = BudgetedScorer(scorer, budget.max_evals)
    _warm_start(counted, dataset, cfg.initial, rng)
    incumbents, it = [counted.best], 0
    while counted.remaining > 0:
        x = np.stack(counted.designs)
        y, _, _ = _standardize(counted.scores)
        gp = fit_gp_grid(x, y, "overlap", THETAS, cfg.noise)
        seeds = x[np.argsort(-y, kind="stable")[: cfg.population // 2]]
        archive = maximize_categorical(lambda d: ucb(gp, d, cfg.beta), space, seeds, rng, cfg)
        seen = {d.tobytes() for d in counted.designs}
        fresh = [(p, v) for key, (p, v) in archive.items() if key not in seen]
        fresh.sort(key=lambda pv: -pv[1])
        batch = [p for p, _ in fresh[: min(cfg.q, counted.remaining)]]
        while len(batch) < min(cfg.q, counted.remaining):
            batch.append(space.sample(1, rng)[0])
        before = counted.calls
        counted(np.stack(batch))
        if counted.calls == before:
            counted(space.sample(min(cfg.q, counted.remaining), rng))
        incumbents.append(counted.best)
        it += 1
    return collect_result(counted, budget.final_count, {"optimizer": "bo", "iterations": it, "incumbents": incumbents})
