"""Oracle evaluation, reports, ranks and embedding diagnostics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata, spearmanr
from sklearn.metrics import silhouette_score

from ..tasks import OfflineDataset, TaskSpec


@dataclass
class TaskEval:
    task_id: str
    d_best: float
    best: float
    median: float
    normalized_best: float
    normalized_median: float
    exceeds: bool
    n_candidates: int


def evaluate_candidates(
    task: TaskSpec, candidates: np.ndarray, y_min: float, y_max: float, d_best: float
) -> TaskEval:
    """Oracle-score candidates; the exceed flag compares raw oracle scores only."""
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.size == 0:
        raise ValueError(f"{task.id}: no candidates to evaluate")
    if not y_max > y_min:
        raise ValueError("y_max must exceed y_min")
    for x in candidates:
        task.space.validate(x)
    ys = task.evaluate(candidates)
    best, med = float(ys.max()), float(np.median(ys))
    span = y_max - y_min
    return TaskEval(
        task_id=task.id,
        d_best=float(d_best),
        best=best,
        median=med,
        normalized_best=(best - y_min) / span,
        normalized_median=(med - y_min) / span,
        exceeds=bool(best > d_best),
        n_candidates=len(candidates),
    )


@dataclass
class EvalReport:
    method: str
    rows: list[TaskEval] = field(default_factory=list)

    @property
    def task_ids(self) -> list[str]:
        return [r.task_id for r in self.rows]

    def row(self, task_id: str) -> TaskEval:
        for r in self.rows:
            if r.task_id == task_id:
                return r
        raise KeyError(task_id)

    def exceed_count(self) -> int:
        return sum(r.exceeds for r in self.rows)

    def to_records(self) -> list[dict]:
        return [{"method": self.method, **asdict(r)} for r in self.rows]

    def table(self) -> str:
        head = f"{'task':<16}{'D(best)':>12}{'best':>12}{'median':>12}{'norm best':>11}{'exceed':>8}"
        lines = [f"method: {self.method}", head]
        for r in self.rows:
            lines.append(
                f"{r.task_id:<16}{r.d_best:>12.4f}{r.best:>12.4f}{r.median:>12.4f}"
                f"{r.normalized_best:>11.4f}{'yes' if r.exceeds else 'no':>8}"
            )
        lines.append(f"exceeds D(best) on {self.exceed_count()}/{len(self.rows)} tasks")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(self.table())
        with open(out / "report.jsonl", "w") as fh:
            for rec in self.to_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "EvalReport":
        recs = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
        if not recs:
            raise ValueError(f"{path}: empty report")
        rows = [TaskEval(**{k: v for k, v in r.items() if k != "method"}) for r in recs]
        return cls(recs[0]["method"], rows)


def report_ranks(reports: Mapping[str, EvalReport]) -> dict[str, dict]:
    """Per-task ranks by best oracle score (1 = best, ties averaged), then mean and std."""
    if not reports:
        raise ValueError("no reports to rank")
    methods = list(reports)
    tasks = sorted(reports[methods[0]].task_ids)
    for m in methods:
        if sorted(reports[m].task_ids) != tasks:
            raise ValueError(f"report {m!r} covers a different task set")
    ranks = {m: [] for m in methods}
    for t in tasks:
        r = rankdata([-reports[m].row(t).best for m in methods], method="average")
        for m, v in zip(methods, r):
            ranks[m].append(float(v))
    return {
        m: {"ranks": dict(zip(tasks, ranks[m])), "mean": float(np.mean(ranks[m])), "std": float(np.std(ranks[m]))}
        for m in methods
    }


def rank_table(ranks: Mapping[str, dict]) -> str:
    lines = [f"{'method':<24}{'avg rank':>10}{'std':>8}"]
    for m, r in ranks.items():
        lines.append(f"{m:<24}{r['mean']:>10.3f}{r['std']:>8.3f}")
    return "\n".join(lines) + "\n"


def ood_region(task: TaskSpec, dataset: OfflineDataset, n: int = 200, seed: int = 0, max_draws: int = 1_000_000):
    """Fresh uniform designs whose oracle score exceeds the dataset's P75."""
    threshold = float(np.percentile(dataset.scores, 75))
    rng = np.random.default_rng(seed)
    kept, drawn = [], 0
    while sum(len(k) for k in kept) < n and drawn < max_draws:
        xs = task.space.sample(10 * n, rng)
        drawn += len(xs)
        kept.append(xs[task.evaluate(xs) > threshold])
    region = np.concatenate(kept)[:n]
    if len(region) < 20:
        raise ValueError(f"{task.id}: only {len(region)} designs above the dataset P75")
    return region


def spearman_ood(
    scorer: Callable[[np.ndarray], np.ndarray], task: TaskSpec, dataset: OfflineDataset, n: int = 200, seed: int = 0
) -> float:
    """Spearman rho between model and oracle scores on the above-P75 region."""
    region = ood_region(task, dataset, n, seed)
    rho = spearmanr(scorer(region), task.evaluate(region)).statistic
    return 0.0 if np.isnan(rho) else float(rho)


# --- embedding diagnostics ------------------------------------------------


def _cos_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    an = a / np.linalg.norm(a, axis=1, keepdims=True)
    bn = b / np.linalg.norm(b, axis=1, keepdims=True)
    return 1.0 - an @ bn.T


def embedding_structure(z: np.ndarray, labels: Sequence) -> dict[str, float]:
    """Mean inter-centroid and intra-task cosine distances plus the cosine silhouette."""
    z = np.asarray(z, dtype=float)
    labels = np.asarray(labels)
    groups = [z[labels == t] for t in dict.fromkeys(labels.tolist())]
    centroids = np.stack([g.mean(0) for g in groups])
    cd = _cos_dist(centroids, centroids)
    inter = float(cd[np.triu_indices(len(groups), 1)].mean())
    intra = []
    for g in groups:
        d = _cos_dist(g, g)
        intra.append(d[np.triu_indices(len(g), 1)].mean())
    return {
        "inter_centroid": inter,
        "intra_pairwise": float(np.mean(intra)),
        "silhouette": float(silhouette_score(z, labels, metric="cosine")),
    }


def ratio_exceedance(z: np.ndarray, y: np.ndarray, factor: float = 2.0) -> float:
    """Fraction of pairwise |dy|/||dz|| ratios above ``factor`` times their median."""
    z, y = np.asarray(z, dtype=float), np.asarray(y, dtype=float)
    i, j = np.triu_indices(len(y), 1)
    dist = np.linalg.norm(z[i] - z[j], axis=1)
    ok = dist > 0
    r = np.abs(y[i] - y[j])[ok] / dist[ok]
    return float(np.mean(r > factor * np.median(r)))
