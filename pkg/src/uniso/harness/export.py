"""Tab-separated exports of embeddings and attention shares for external plotting."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..models import ModelState, attention_profile, pooled_embeddings
from ..tasks import OfflineDataset, TaskSpec
from ..textcodec import CATEGORIES, compose_input, serialize_design, token_categories, tokenize


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def export_embeddings(
    state: ModelState, tasks: Sequence[TaskSpec], datasets: Mapping[str, OfflineDataset], out: str | Path
) -> int:
    """One row per dataset design: task id, normalized y, pooled then projected components.

    The first line is a ``#`` header.  Returns the number of data rows.
    """
    d, p = state.config.d_model, state.config.proj_dim
    header = ["task_id", "norm_y"] + [f"h{i}" for i in range(d)] + [f"z{i}" for i in range(p)]
    rows = 0
    with open(out, "w") as fh:
        fh.write("#" + "\t".join(header) + "\n")
        for task in tasks:
            ds = datasets[task.id]
            tokens = [tokenize(compose_input(task.metadata, serialize_design(task.space, x))) for x in ds.designs]
            pooled, projected = pooled_embeddings(state, tokens)
            for y, h, z in zip(ds.normalized, pooled, projected):
                fh.write("\t".join([task.id, _fmt(y)] + [_fmt(v) for v in h] + [_fmt(v) for v in z]) + "\n")
                rows += 1
    return rows


def task_attention(state: ModelState, task: TaskSpec, designs: np.ndarray) -> tuple[dict[str, float], dict[str, float]]:
    """Mean category shares and mean token counts per category over ``designs``."""
    shares = {c: 0.0 for c in CATEGORIES}
    counts = {c: 0.0 for c in CATEGORIES}
    for x in designs:
        text = compose_input(task.metadata, serialize_design(task.space, x))
        cats = token_categories(text)
        prof = attention_profile(state, tokenize(text), cats)
        for c in CATEGORIES:
            shares[c] += prof[c] / len(designs)
            counts[c] += cats.count(c) / len(designs)
    return shares, counts


def export_attention(
    state: ModelState,
    tasks: Sequence[TaskSpec],
    datasets: Mapping[str, OfflineDataset],
    out: str | Path,
    max_inputs: int = 200,
) -> dict[str, dict[str, float]]:
    """Per task: number of inputs, mean share and mean token count per category."""
    header = ["task_id", "n_inputs"] + [f"share_{c}" for c in CATEGORIES] + [f"count_{c}" for c in CATEGORIES]
    result = {}
    with open(out, "w") as fh:
        fh.write("#" + "\t".join(header) + "\n")
        for task in tasks:
            designs = datasets[task.id].designs[:max_inputs]
            shares, counts = task_attention(state, task, designs)
            result[task.id] = shares
            fields = [task.id, str(len(designs))]
            fields += [_fmt(shares[c]) for c in CATEGORIES] + [_fmt(counts[c]) for c in CATEGORIES]
            fh.write("\t".join(fields) + "\n")
    return result


def read_table(path: str | Path) -> list[list[str]]:
    return [line.rstrip("\n").split("\t") for line in open(path) if not line.startswith("#")]
