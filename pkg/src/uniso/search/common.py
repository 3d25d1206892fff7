"""Budgets, results and the call-counting scorer shared by all searchers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..textcodec import DesignSpace

Scorer = Callable[[np.ndarray], np.ndarray]


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class SearchBudget:
    max_evals: int = 1000
    final_count: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.max_evals < 1 or self.final_count < 1:
            raise BudgetError("budget counts must be positive")
        if self.final_count > self.max_evals:
            raise BudgetError("final count cannot exceed the evaluation budget")


class BudgetedScorer:
    """Wraps a scorer, charging one evaluation per previously unseen design.

    Repeated designs are answered from the record without a charge.  Rows
    beyond the remaining budget are never passed to the wrapped scorer.
    """

    def __init__(self, scorer: Scorer, max_evals: int):
        self.scorer = scorer
        self.max_evals = max_evals
        self.calls = 0
        self.designs: list[np.ndarray] = []
        self.scores: list[float] = []
        self.trace: list[float] = []
        self._index: dict[bytes, int] = {}

    @property
    def remaining(self) -> int:
        return self.max_evals - self.calls

    @property
    def best(self) -> float:
        return max(self.scores) if self.scores else -np.inf

    def __call__(self, designs: np.ndarray) -> np.ndarray:
        """Scores for each row; rows that would overrun the budget get NaN."""
        designs = np.atleast_2d(np.asarray(designs, dtype=float))
        out = np.full(len(designs), np.nan)
        fresh, keys = [], []
        for i, x in enumerate(designs):
            key = x.tobytes()
            if key in self._index:
                out[i] = self.scores[self._index[key]]
            elif key in keys:
                continue
            elif len(fresh) < self.remaining:
                fresh.append(i)
                keys.append(key)
        if fresh:
            ys = np.asarray(self.scorer(designs[fresh]), dtype=float).reshape(-1)
            if ys.shape[0] != len(fresh):
                raise ValueError("scorer returned the wrong number of scores")
            if not np.all(np.isfinite(ys)):
                raise ValueError("scorer returned a non-finite score")
            self.calls += len(fresh)
            for i, key, y in zip(fresh, keys, ys):
                self._index[key] = len(self.scores)
                self.designs.append(designs[i].copy())
                self.scores.append(float(y))
                self.trace.append(self.best)
        for i, x in enumerate(designs):
            if np.isnan(out[i]) and x.tobytes() in self._index:
                out[i] = self.scores[self._index[x.tobytes()]]
        return out


@dataclass
class SearchResult:
    designs: np.ndarray
    scores: np.ndarray
    eval_index: np.ndarray
    n_evals: int
    trace: list[float] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def best(self) -> float:
        return float(self.scores.max())

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for i, (x, y, e) in enumerate(zip(self.designs, self.scores, self.eval_index)):
                rec = {"candidate": i, "design": [float(v) for v in x], "model_score": float(y), "eval_index": int(e)}
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "SearchResult":
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        designs = np.array([r["design"] for r in rows], dtype=float)
        scores = np.array([r["model_score"] for r in rows], dtype=float)
        index = np.array([r["eval_index"] for r in rows], dtype=int)
        return cls(designs, scores, index, n_evals=int(index.max()) + 1 if len(index) else 0)


def collect_result(scorer: BudgetedScorer, final_count: int, info: dict | None = None) -> SearchResult:
    """Top distinct evaluated designs by model score, ties to earlier evaluations."""
    if not scorer.scores:
        raise BudgetError("no design was evaluated")
    scores = np.asarray(scorer.scores)
    order = np.argsort(-scores, kind="stable")[:final_count]
    return SearchResult(
        designs=np.stack([scorer.designs[i] for i in order]),
        scores=scores[order],
        eval_index=order,
        n_evals=scorer.calls,
        trace=list(scorer.trace),
        info=dict(info or {}),
    )


def to_unit(space: DesignSpace, x: np.ndarray) -> np.ndarray:
    lo, hi = space.lower, space.upper
    return (np.asarray(x, dtype=float) - lo) / (hi - lo)


def from_unit(space: DesignSpace, u: np.ndarray) -> np.ndarray:
    lo, hi = space.lower, space.upper
    return lo + np.clip(u, 0.0, 1.0) * (hi - lo)
