"""Model-inner searchers over string-scored designs."""

from .bo import (
    BOConfig,
    CategoricalBOConfig,
    bo_categorical_search,
    bo_qei_search,
    expected_improvement,
    qei_acquisition,
    ucb,
)
from .cmaes import CMAES, cmaes_search
from .common import BudgetError, BudgetedScorer, SearchBudget, SearchResult, from_unit, to_unit
from .ea import EAConfig, ea_search, polynomial_mutation, sbx_children, uniform_crossover
from .gp import GPError, GPModel, fit_gp, gp_posterior, overlap_kernel, se_kernel


def run_search(optimizer: str, scorer, space, dataset, budget: SearchBudget):
    """Dispatch by name; ``bo`` picks qEI or overlap-UCB by space kind."""
    if optimizer == "ea":
        return ea_search(scorer, space, dataset, budget)
    if optimizer == "cmaes":
        return cmaes_search(scorer, space, dataset, budget)
    if optimizer == "bo":
        if space.is_categorical:
            return bo_categorical_search(scorer, space, dataset, budget)
        return bo_qei_search(scorer, space, dataset, budget)
    raise ValueError(f"unknown optimizer {optimizer!r}")
