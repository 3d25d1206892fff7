"""(mu/mu_w, lambda)-CMA-ES in normalized coordinates."""

from __future__ import annotations

import math

import numpy as np

from ..textcodec import DesignSpace
from .common import BudgetedScorer, Scorer, SearchBudget, SearchResult, collect_result, from_unit, to_unit


class CMAES:
    """Standard CMA-ES for maximization; ``ask``/``tell`` interface."""

    def __init__(self, mean: np.ndarray, sigma: float, rng: np.random.Generator, popsize: int | None = None):
        n = len(mean)
        self.n, self.rng = n, rng
        self.mean = np.asarray(mean, dtype=float).copy()
        self.sigma = float(sigma)
        self.lam = popsize or 4 + int(3 * math.log(n))
        self.mu = self.lam // 2
        w = math.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights**2)
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.generation = 0
        self.min_eigenvalues: list[float] = []

    def ask(self) -> np.ndarray:
        z = self.rng.standard_normal((self.lam, self.n))
        return self.mean + self.sigma * (z * self.D) @ self.B.T

    def tell(self, xs: np.ndarray, fitness: np.ndarray) -> None:
        """Update from samples and their scores (higher is better)."""
        n = self.n
        order = np.argsort(-fitness, kind="stable")[: self.mu]
        old = self.mean
        self.mean = self.weights @ xs[order]
        step = (self.mean - old) / self.sigma
        inv_sqrt = self.B @ np.diag(1 / self.D) @ self.B.T
        self.ps = (1 - self.cs) * self.ps + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * inv_sqrt @ step
        self.generation += 1
        norm_ps = np.linalg.norm(self.ps)
        hsig = norm_ps / math.sqrt(1 - (1 - self.cs) ** (2 * self.generation)) / self.chi_n < 1.4 + 2 / (n + 1)
        self.pc = (1 - self.cc) * self.pc + hsig * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * step
        artmp = (xs[order] - old) / self.sigma
        self.C = (
            (1 - self.c1 - self.cmu) * self.C
            + self.c1 * (np.outer(self.pc, self.pc) + (1 - hsig) * self.cc * (2 - self.cc) * self.C)
            + self.cmu * (artmp.T * self.weights) @ artmp
        )
        self.sigma *= math.exp((self.cs / self.damps) * (norm_ps / self.chi_n - 1))
        self.C = (self.C + self.C.T) / 2
        eig, self.B = np.linalg.eigh(self.C)
        self.min_eigenvalues.append(float(eig.min()))
        self.D = np.sqrt(np.maximum(eig, 1e-300))


def cmaes_search(
    scorer: Scorer,
    space: DesignSpace,
    dataset=None,
    budget: SearchBudget = SearchBudget(),
    sigma0: float = 0.5,
) -> SearchResult:
    """CMA-ES started at the dataset's best design (box centre without a dataset)."""
    if not space.is_continuous:
        raise ValueError("CMA-ES cannot operate on categorical spaces")
    rng = np.random.default_rng(budget.seed)
    counted = BudgetedScorer(scorer, budget.max_evals)
    start = to_unit(space, dataset.top(1)[0]) if dataset is not None else np.full(space.dim, 0.5)
    es = CMAES(start, sigma0, rng)
    # cached repeats are free, so also cap generations in case the search collapses
    while counted.remaining > 0 and es.generation < budget.max_evals:
        xs = np.clip(es.ask(), 0.0, 1.0)
        ys = counted(from_unit(space, xs))
        if np.isnan(ys).any():
            break
        es.tell(xs, ys)
    info = {"optimizer": "cmaes", "generations": es.generation, "min_eigenvalues": es.min_eigenvalues}
    return collect_result(counted, budget.final_count, info)
