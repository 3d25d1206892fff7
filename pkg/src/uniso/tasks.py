"""Synthetic multi-task suite, ground-truth oracles and offline datasets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .textcodec import CodecError, DesignSpace, Metadata
from .ynorm import DegenerateScores, TaskScoreStats, normalize_task

# --- base functions (maximization form), vectorized over rows -------------


def _sphere(x, center=0.0):
    return -np.sum((x - center) ** 2, axis=1)


def _rastrigin(x):
    return -(10.0 * x.shape[1] + np.sum(x**2 - 10.0 * np.cos(2 * np.pi * x), axis=1))


def _levy(x):
    w = 1.0 + (x - 1.0) / 4.0
    head = np.sin(np.pi * w[:, 0]) ** 2
    mid = np.sum((w[:, :-1] - 1) ** 2 * (1 + 10 * np.sin(np.pi * w[:, :-1] + 1) ** 2), axis=1)
    tail = (w[:, -1] - 1) ** 2 * (1 + np.sin(2 * np.pi * w[:, -1]) ** 2)
    return -(head + mid + tail)


def _ackley(x):
    d = x.shape[1]
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.sum(x**2, axis=1) / d))
    b = -np.exp(np.sum(np.cos(2 * np.pi * x), axis=1) / d)
    return -(a + b + 20.0 + np.e)


def _styblinski_tang(x):
    return -0.5 * np.sum(x**4 - 16 * x**2 + 5 * x, axis=1)


def _rosenbrock(x):
    return -np.sum(100.0 * (x[:, 1:] - x[:, :-1] ** 2) ** 2 + (1 - x[:, :-1]) ** 2, axis=1)


def _onemax(x):
    return np.sum(x == 1, axis=1).astype(float)


def _seqmatch(x, target=()):
    return np.sum(x == np.asarray(target)[None, :], axis=1).astype(float)


FUNCTIONS: dict[str, Callable] = {
    "sphere": _sphere,
    "rastrigin": _rastrigin,
    "levy": _levy,
    "ackley": _ackley,
    "styblinski_tang": _styblinski_tang,
    "rosenbrock": _rosenbrock,
    "onemax": _onemax,
    "seqmatch": _seqmatch,
}


@dataclass(frozen=True)
class Transform:
    """``y = scale * f(x - shift)``."""

    scale: float = 1.0
    shift: tuple[float, ...] = ()


@dataclass
class TaskSpec:
    id: str
    space: DesignSpace
    function: str
    metadata: Metadata
    params: dict = field(default_factory=dict)
    transform: Transform | None = None
    optimum: float | None = None  # analytic maximum, when known

    def __post_init__(self):
        if self.function not in FUNCTIONS:
            raise ValueError(f"unknown oracle function {self.function!r}")
        if self.transform is not None and self.transform.shift and len(self.transform.shift) != self.space.dim:
            raise ValueError("transform shift dimension does not match the design space")

    def evaluate(self, designs) -> np.ndarray:
        x = np.atleast_2d(np.asarray(designs, dtype=float))
        if self.space.is_categorical:
            x = np.rint(x).astype(int)
        if self.transform is not None:
            shift = np.asarray(self.transform.shift) if self.transform.shift else 0.0
            return self.transform.scale * FUNCTIONS[self.function](x - shift, **self.params)
        return FUNCTIONS[self.function](x, **self.params)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "function": self.function,
            "params": {k: list(v) if isinstance(v, (tuple, np.ndarray)) else v for k, v in self.params.items()},
            "space": self.space.to_dict(),
            "metadata": {"name": self.metadata.name, "description": self.metadata.description, "objective": self.metadata.objective},
            "transform": None
            if self.transform is None
            else {"scale": self.transform.scale, "shift": list(self.transform.shift)},
            "optimum": self.optimum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        params = dict(d.get("params", {}))
        if "target" in params:
            params["target"] = tuple(params["target"])
        tr = d.get("transform")
        return cls(
            id=d["id"],
            space=DesignSpace.from_dict(d["space"]),
            function=d["function"],
            metadata=Metadata(**d["metadata"]),
            params=params,
            transform=None if tr is None else Transform(tr["scale"], tuple(tr["shift"])),
            optimum=d.get("optimum"),
        )


def oracle_eval(task: TaskSpec, design: Sequence[float]) -> float:
    try:
        task.space.validate(design)
    except CodecError as err:
        raise ValueError(f"{task.id}: invalid design: {err}") from err
    return float(task.evaluate([design])[0])


SEQMATCH_TARGET = (2, 0, 3, 1, 1, 3, 0, 2)


def builtin_suite() -> list[TaskSpec]:
    """Six training tasks: four continuous, two categorical."""
    box = DesignSpace.continuous
    return [
        TaskSpec(
            "sphere8",
            box(8, -5.12, 5.12),
            "sphere",
            Metadata("Sphere 8", "smooth bowl, 8 reals", "min sq norm"),
            optimum=0.0,
        ),
        TaskSpec(
            "rastrigin5",
            box(5, -5.12, 5.12),
            "rastrigin",
            Metadata("Rastrigin 5", "rugged, 5 reals", "min Rastrigin"),
            optimum=0.0,
        ),
        TaskSpec(
            "levy10",
            box(10, -10.0, 10.0),
            "levy",
            Metadata("Levy 10", "valleys, 10 reals", "min Levy"),
            optimum=0.0,
        ),
        TaskSpec(
            "onemax12",
            DesignSpace.categorical(12, 2),
            "onemax",
            Metadata("OneMax 12", "12 bits", "max ones"),
            optimum=12.0,
        ),
        TaskSpec(
            "seqmatch8",
            DesignSpace.categorical(8, 4),
            "seqmatch",
            Metadata("SeqMatch 8", "8 letters of 4", "max motif matches"),
            params={"target": SEQMATCH_TARGET},
            optimum=8.0,
        ),
        TaskSpec(
            "sphereshift8",
            box(8, -5.12, 5.12),
            "sphere",
            Metadata("Sphere 8 Shifted", "shifted bowl, 8 reals", "min sq norm"),
            params={"center": 0.3},
            optimum=0.0,
        ),
    ]


def transform_task(base: TaskSpec, scale: float, shift: Sequence[float], seed: int) -> TaskSpec:
    if scale <= 0:
        raise ValueError("scale must be positive")
    if not base.space.is_continuous:
        raise ValueError("translation needs a continuous space")
    shift = tuple(float(s) for s in shift)
    half = (base.space.upper - base.space.lower) / 2
    if len(shift) != base.space.dim or np.any(np.abs(shift) > half):
        raise ValueError("shift must have one entry per variable within half the box width")
    m = base.metadata
    return TaskSpec(
        id=f"{base.id}_s{seed}",
        space=base.space,
        function=base.function,
        metadata=Metadata(f"{m.name} variant {seed}", m.description, m.objective),
        params=dict(base.params),
        transform=Transform(scale, shift),
        optimum=None if base.optimum is None else scale * base.optimum,
    )


def random_transform(base: TaskSpec, seed: int) -> TaskSpec:
    """Scale in [0.5, 2] and a shift within a quarter box width, drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    quarter = (base.space.upper - base.space.lower) / 4
    return transform_task(base, float(rng.uniform(0.5, 2.0)), rng.uniform(-quarter, quarter), seed)


def heldout_suite() -> list[TaskSpec]:
    """Three transformed variants of functions absent from the training suite."""
    box = DesignSpace.continuous
    bases = [
        (
            TaskSpec(
                "ackley6",
                box(6, -5.0, 5.0),
                "ackley",
                Metadata("Ackley 6", "narrow basin, 6 reals", "min Ackley"),
                optimum=0.0,
            ),
            100,
        ),
        (
            TaskSpec(
                "styblinski4",
                box(4, -5.0, 5.0),
                "styblinski_tang",
                Metadata("Styblinski-Tang 4", "quartic, 4 reals", "min Styblinski-Tang"),
                optimum=39.16617 * 4,
            ),
            100,
        ),
        (
            TaskSpec(
                "rosenbrock4",
                box(4, -2.048, 2.048),
                "rosenbrock",
                Metadata("Rosenbrock 4", "curved valley, 4 reals", "min Rosenbrock"),
                optimum=0.0,
            ),
            150,
        ),
    ]
    return [random_transform(b, seed) for b, seed in bases]


# --- offline datasets -----------------------------------------------------


@dataclass
class OfflineDataset:
    task_id: str
    designs: np.ndarray
    scores: np.ndarray
    stats: TaskScoreStats
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def best(self) -> float:
        """D(best): the largest raw score in the dataset."""
        return float(self.scores.max())

    @property
    def normalized(self) -> np.ndarray:
        return self.stats.apply(self.scores)

    def top(self, k: int) -> np.ndarray:
        order = np.argsort(-self.scores, kind="stable")
        return self.designs[order[:k]]

    def poorest(self, k: int) -> "OfflineDataset":
        order = np.argsort(self.scores, kind="stable")[:k]
        return make_dataset(self.task_id, self.designs[order], self.scores[order], {**self.provenance, "subset": f"poorest{k}"})


def make_dataset(task_id: str, designs, scores, provenance: dict | None = None) -> OfflineDataset:
    designs = np.asarray(designs, dtype=float)
    scores = np.asarray(scores, dtype=float)
    stats, _ = normalize_task(scores)
    return OfflineDataset(task_id, designs, scores, stats, dict(provenance or {}))


def middle50_indices(scores: np.ndarray) -> np.ndarray:
    """Indices whose stable score rank lies in the half-open band (P25, P75]."""
    m = len(scores)
    order = np.argsort(scores, kind="stable")
    lo, hi = int(np.floor(0.25 * m)), int(np.floor(0.75 * m))
    return order[lo:hi]


def gen_offline_dataset(task: TaskSpec, n: int = 2000, protocol: str = "middle50", seed: int = 1) -> OfflineDataset:
    if n < 100:
        raise ValueError("dataset size must be at least 100")
    rng = np.random.default_rng(seed)
    if protocol == "middle50":
        pool = task.space.sample(4 * n, rng)
        pool_scores = task.evaluate(pool)
        if np.ptp(pool_scores) == 0:
            raise DegenerateScores(f"{task.id}: oracle is constant on the sample")
        band = middle50_indices(pool_scores)
        keep = np.sort(rng.choice(band, size=n, replace=False))
        designs, scores = pool[keep], pool_scores[keep]
    elif protocol == "uniform":
        designs = task.space.sample(n, rng)
        scores = task.evaluate(designs)
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    if np.ptp(scores) == 0:
        raise DegenerateScores(f"{task.id}: constant scores")
    return make_dataset(task.id, designs, scores, {"seed": seed, "protocol": protocol, "n": n})


def probe_range(task: TaskSpec, n: int = 100_000, seed: int = 0) -> tuple[float, float]:
    """(min, max) oracle score over a uniform probe sample."""
    rng = np.random.default_rng(seed)
    ys = task.evaluate(task.space.sample(n, rng))
    return float(ys.min()), float(ys.max())


# --- files ----------------------------------------------------------------


def write_datasets(path: str | Path, datasets: Iterable[OfflineDataset]) -> None:
    """One JSON record per design, then one trailer record per task."""
    datasets = list(datasets)
    with open(path, "w") as fh:
        for ds in datasets:
            for x, y in zip(ds.designs, ds.scores):
                fh.write(json.dumps({"task_id": ds.task_id, "x": [float(v) for v in x], "y": float(y)}) + "\n")
        for ds in datasets:
            fh.write(json.dumps({"trailer": ds.task_id, "stats": ds.stats.to_dict(), "provenance": ds.provenance}) + "\n")


def read_datasets(path: str | Path) -> dict[str, OfflineDataset]:
    rows: dict[str, list] = {}
    trailers = {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if "trailer" in rec:
                trailers[rec["trailer"]] = rec
            else:
                rows.setdefault(rec["task_id"], []).append(rec)
    out = {}
    for task_id, recs in rows.items():
        tr = trailers[task_id]
        out[task_id] = OfflineDataset(
            task_id,
            np.array([r["x"] for r in recs], dtype=float),
            np.array([r["y"] for r in recs], dtype=float),
            TaskScoreStats.from_dict(tr["stats"]),
            tr["provenance"],
        )
    return out


@dataclass
class SuiteEntry:
    task: TaskSpec
    dataset_size: int = 2000
    protocol: str = "middle50"
    seed: int = 1
    y_range: tuple[float, float] | None = None
    heldout: bool = False

    def to_dict(self) -> dict:
        return {
            **self.task.to_dict(),
            "dataset_size": self.dataset_size,
            "protocol": self.protocol,
            "seed": self.seed,
            "y_range": None if self.y_range is None else list(self.y_range),
            "heldout": self.heldout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteEntry":
        return cls(
            TaskSpec.from_dict(d),
            d.get("dataset_size", 2000),
            d.get("protocol", "middle50"),
            d.get("seed", 1),
            None if d.get("y_range") is None else tuple(d["y_range"]),
            d.get("heldout", False),
        )


def default_suite_entries(dataset_size: int = 2000, seed: int = 1) -> list[SuiteEntry]:
    entries = [SuiteEntry(t, dataset_size, "middle50", seed) for t in builtin_suite()]
    entries += [SuiteEntry(t, dataset_size, "middle50", seed, heldout=True) for t in heldout_suite()]
    return entries


def write_suite(path: str | Path, entries: Sequence[SuiteEntry]) -> None:
    Path(path).write_text(json.dumps({"tasks": [e.to_dict() for e in entries]}, indent=2) + "\n")


def read_suite(path: str | Path) -> list[SuiteEntry]:
    return [SuiteEntry.from_dict(d) for d in json.loads(Path(path).read_text())["tasks"]]
