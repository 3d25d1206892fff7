"""Datasets, training, model-inner search and evaluation wired end to end."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..models import (
    ModelConfig,
    ModelState,
    TaskData,
    TrainConfig,
    build_corpus,
    finetune_few_shot,
    init_model,
    predict_n,
    predict_t,
    save_checkpoint,
    train_n,
    train_t,
)
from ..search import SearchBudget, SearchResult, run_search
from ..tasks import (
    OfflineDataset,
    SuiteEntry,
    TaskSpec,
    default_suite_entries,
    gen_offline_dataset,
    probe_range,
    read_suite,
)
from ..textcodec import compose_input, serialize_design, tokenize
from .config import RunConfig
from .metrics import EvalReport, evaluate_candidates

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def encode_inputs(task: TaskSpec, designs: np.ndarray) -> list[list[int]]:
    return [tokenize(compose_input(task.metadata, serialize_design(task.space, x))) for x in designs]


def task_data(task: TaskSpec, dataset: OfflineDataset) -> TaskData:
    return TaskData(task.id, task.metadata, encode_inputs(task, dataset.designs), dataset.scores, dataset.normalized)


# --- suite and data ---------------------------------------------------------


def load_entries(cfg: RunConfig) -> list[SuiteEntry]:
    """Suite entries with probed y ranges filled in where missing."""
    entries = read_suite(cfg.suite) if cfg.suite else default_suite_entries(cfg.dataset_size)
    for e in entries:
        if e.y_range is None:
            e.y_range = probe_range(e.task)
    return entries


def generate_datasets(entries: Sequence[SuiteEntry]) -> dict[str, OfflineDataset]:
    return {e.task.id: gen_offline_dataset(e.task, e.dataset_size, e.protocol, e.seed) for e in entries}


# --- training -----------------------------------------------------------------


def train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        improved=cfg.improved,
        regressor_epochs=cfg.regressor_epochs,
        seed=seed,
    )


def train_model(
    cfg: RunConfig, seed: int, tasks: Sequence[TaskSpec], datasets: dict[str, OfflineDataset]
) -> tuple[ModelState, list[dict]]:
    """Multi-task training over ``tasks`` (one model, one seed)."""
    torch.manual_seed(seed)
    corpus = build_corpus([task_data(t, datasets[t.id]) for t in tasks])
    longest = max(len(t) for t in corpus.tokens)
    mcfg = ModelConfig(variant=cfg.variant, **cfg.model)
    if longest > mcfg.max_len:
        raise ValueError(f"longest input has {longest} tokens, max_len is {mcfg.max_len}")
    state = init_model(mcfg, seed)
    tcfg = train_config(cfg, seed)
    history = train_t(state, corpus, tcfg) if cfg.variant == "T" else train_n(state, corpus, tcfg)
    return state, history


def few_shot(state: ModelState, task: TaskSpec, pairs: OfflineDataset, seed: int, epochs: int = 5, lr: float = 2e-5):
    corpus = build_corpus([task_data(task, pairs)])
    return finetune_few_shot(state, corpus, epochs=epochs, lr=lr, seed=seed)


# --- scoring and search ---------------------------------------------------------


class ModelScorer:
    """design -> model score through serialization and greedy prediction.

    Malformed decodes score the dataset minimum (in the model's output
    units) minus one.  Scores are cached per design.
    """

    def __init__(self, state: ModelState, task: TaskSpec, dataset: OfflineDataset, batch_size: int = 128):
        self.state, self.task, self.batch_size = state, task, batch_size
        if state.config.variant == "T":
            self.failure = float(dataset.scores.min()) - 1.0
        else:
            self.failure = float(dataset.normalized.min()) - 1.0
        self.cache: dict[bytes, float] = {}
        self.failures = 0

    def __call__(self, designs: np.ndarray) -> np.ndarray:
        designs = np.atleast_2d(np.asarray(designs, dtype=float))
        keys = [x.tobytes() for x in designs]
        first = {}
        for i, k in enumerate(keys):
            if k not in self.cache:
                first.setdefault(k, i)
        if first:
            tokens = encode_inputs(self.task, designs[list(first.values())])
            if self.state.config.variant == "T":
                ys = predict_t(self.state, tokens, mode="greedy", batch_size=self.batch_size)
            else:
                ys = predict_n(self.state, tokens, batch_size=self.batch_size)
            bad = ~np.isfinite(ys)
            self.failures += int(bad.sum())
            self.cache.update(zip(first, np.where(bad, self.failure, ys).tolist()))
        return np.array([self.cache[k] for k in keys])


def search_task(
    state: ModelState, task: TaskSpec, dataset: OfflineDataset, optimizer: str, budget: SearchBudget
) -> SearchResult:
    scorer = ModelScorer(state, task, dataset)
    result = run_search(optimizer, scorer, task.space, dataset, budget)
    result.info["decode_failures"] = scorer.failures
    return result


# --- full run -----------------------------------------------------------------


@dataclass
class RunArtifacts:
    seed: int
    out: Path
    checkpoint: Path
    searches: dict[str, Path] = field(default_factory=dict)
    report: EvalReport | None = None


def method_name(cfg: RunConfig) -> str:
    return f"uniso-{cfg.variant.lower()}-{cfg.mode}-{cfg.optimizer}"


def run_pipeline(cfg: RunConfig) -> list[RunArtifacts]:
    """Generate data, train, search each training task, oracle-evaluate and report, per seed."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    stage = "data"
    try:
        entries = [e for e in load_entries(cfg) if not e.heldout]
        datasets = generate_datasets(entries)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    results = []
    for seed in cfg.seeds:
        run_dir = out / f"seed{seed}"
        run_dir.mkdir(exist_ok=True)
        art = RunArtifacts(seed, run_dir, run_dir / "model.uniso")
        try:
            stage = "train"
            tasks = [e.task for e in entries]
            if cfg.single_task:
                states = {t.id: train_model(cfg, seed, [t], datasets)[0] for t in tasks}
                for tid, st in states.items():
                    save_checkpoint(st, run_dir / f"model_{tid}.uniso")
            else:
                state, history = train_model(cfg, seed, tasks, datasets)
                save_checkpoint(state, art.checkpoint)
                (run_dir / "history.json").write_text(json.dumps(history, indent=1) + "\n")
                states = {t.id: state for t in tasks}
            stage = "search"
            budget = SearchBudget(cfg.budget, cfg.final_count, seed)
            rows = []
            for e in entries:
                res = search_task(states[e.task.id], e.task, datasets[e.task.id], cfg.optimizer, budget)
                path = run_dir / f"search_{e.task.id}.jsonl"
                res.write_jsonl(path)
                art.searches[e.task.id] = path
                stage = "eval"
                lo, hi = e.y_range
                rows.append(evaluate_candidates(e.task, res.designs, lo, hi, datasets[e.task.id].best))
                stage = "search"
            art.report = EvalReport(method_name(cfg), rows)
            art.report.write(run_dir)
        except Exception as exc:
            raise StageError(stage, exc) from exc
        log.info("seed %d done: %d/%d tasks exceed D(best)", seed, art.report.exceed_count(), len(entries))
        results.append(art)
    return results
