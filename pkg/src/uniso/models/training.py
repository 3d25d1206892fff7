"""Training loops for both regressors and few-shot fine-tuning."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .. import substrate as S
from ..regularizers import (
    BalanceConfig,
    ContrastiveConfig,
    balance_coefficients,
    contrastive_loss,
    lipschitz_loss,
    metadata_embed,
)
from ..textcodec import Metadata, p10_encode
from .state import ModelState, embed, pad_batch

log = logging.getLogger(__name__)


@dataclass
class TaskData:
    """One task's training rows: composed input token ids and targets."""

    task_id: str
    metadata: Metadata
    tokens: list[list[int]]
    raw_y: np.ndarray
    norm_y: np.ndarray


@dataclass
class Corpus:
    tokens: list[list[int]]
    targets: torch.Tensor  # (n, target_len) P10 ids
    norm_y: torch.Tensor
    task_index: torch.Tensor
    meta_vecs: torch.Tensor  # (n_tasks, d_meta)
    task_ids: list[str]
    sizes: dict[str, int]

    def __len__(self) -> int:
        return len(self.tokens)


def build_corpus(tasks: Sequence[TaskData], mantissa_len: int = 3, vocab=None) -> Corpus:
    """Concatenate tasks in order; rows stay grouped by task (the sequential stream)."""
    from ..textcodec import DEFAULT_VOCAB

    vocab = vocab or DEFAULT_VOCAB
    tokens, targets, norm_y, index = [], [], [], []
    for ti, task in enumerate(tasks):
        tokens.extend(task.tokens)
        targets.extend(p10_encode(float(y), mantissa_len, vocab) for y in task.raw_y)
        norm_y.extend(float(v) for v in task.norm_y)
        index.extend([ti] * len(task.tokens))
    return Corpus(
        tokens=tokens,
        targets=torch.tensor(targets, dtype=torch.long),
        norm_y=torch.tensor(norm_y, dtype=torch.float32),
        task_index=torch.tensor(index, dtype=torch.long),
        meta_vecs=torch.tensor(np.stack([metadata_embed(t.metadata) for t in tasks]), dtype=torch.float32),
        task_ids=[t.task_id for t in tasks],
        sizes={t.task_id: len(t.tokens) for t in tasks},
    )


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.99)
    weight_decay: float = 0.01
    warmup_frac: float = 0.05
    improved: bool = True
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    balance: BalanceConfig = field(default_factory=BalanceConfig)
    lip_batch_size: int | None = None
    # UniSO-N stage 2
    regressor_epochs: int = 100
    regressor_lr: float = 1e-3
    regressor_weight_decay: float = 1e-5
    seed: int = 0


@dataclass
class Batch:
    tokens: torch.Tensor
    mask: torch.Tensor
    rows: torch.Tensor


def make_batch(corpus: Corpus, rows, pad: int) -> Batch:
    rows = torch.as_tensor(rows, dtype=torch.long)
    tokens, mask = pad_batch([corpus.tokens[i] for i in rows.tolist()], pad)
    return Batch(tokens, mask, rows)


class SequentialStream:
    """Cycles through the corpus in task order, yielding contiguous row blocks."""

    def __init__(self, n: int, batch_size: int):
        self.n, self.batch_size, self.pos = n, batch_size, 0

    def next_rows(self) -> list[int]:
        rows = [(self.pos + i) % self.n for i in range(min(self.batch_size, self.n))]
        self.pos = (self.pos + len(rows)) % self.n
        return rows


def _z_by_task(z: torch.Tensor, corpus: Corpus, rows: torch.Tensor):
    groups = {}
    tasks = corpus.task_index[rows]
    y = corpus.norm_y[rows].to(z.dtype)
    for ti in torch.unique(tasks).tolist():
        sel = tasks == ti
        if int(sel.sum()) >= 2:
            groups[corpus.task_ids[ti]] = (z[sel], y[sel])
    return groups


def dedupe_rows(corpus: Corpus, rows: Sequence[int]) -> list[int]:
    """Drop repeated inputs so no two rows share an embedding."""
    seen, keep = set(), []
    for r in rows:
        key = tuple(corpus.tokens[r])
        if key not in seen:
            seen.add(key)
            keep.append(r)
    return keep


def aux_losses(state: ModelState, corpus: Corpus, batch: Batch, lip_batch: Batch | None, cfg: TrainConfig, pooled=None):
    """(L_con, L_lip) on projected embeddings; either may be None when undefined."""
    net = state.net
    l_con = l_lip = None
    if cfg.balance.use_contrastive:
        if pooled is None:
            hidden, _ = net.encode(batch.tokens, batch.mask)
            pooled = net.pool(hidden, batch.mask)
        zx = net.proj_x(pooled)
        zm = net.proj_m(corpus.meta_vecs[corpus.task_index[batch.rows]].to(zx.dtype))
        l_con = contrastive_loss(zx, zm, cfg.contrastive)
    if cfg.balance.use_lipschitz and lip_batch is not None:
        hidden, _ = net.encode(lip_batch.tokens, lip_batch.mask)
        z = net.proj_x(net.pool(hidden, lip_batch.mask))
        groups = _z_by_task(z, corpus, lip_batch.rows)
        if groups:
            l_lip = lipschitz_loss(groups, corpus.sizes)
    return l_con, l_lip


def main_loss_t(state: ModelState, corpus: Corpus, batch: Batch):
    """Decoder cross-entropy on P10 targets; returns (loss, pooled encoder states)."""
    net = state.net
    hidden, _ = net.encode(batch.tokens, batch.mask)
    targets = corpus.targets[batch.rows]
    bos = torch.full((targets.shape[0], 1), state.vocab.bos, dtype=torch.long)
    dec_in = torch.cat([bos, targets[:, :-1]], dim=1)
    logits = net.decode_logits(dec_in, hidden, batch.mask)
    return S.cross_entropy(logits, targets), net.pool(hidden, batch.mask)


def balanced_total(l_main, l_con, l_lip, cfg: BalanceConfig):
    """Scalar whose gradient equals the balanced combination of the three gradients.

    The coefficients are plain floats, so differentiating
    ``L_main + c_con * L_con + c_lip * L_lip`` yields exactly
    ``g_main + c_con * g_con + c_lip * g_lip``.
    """
    c_con, c_lip = balance_coefficients(
        l_main.item(), None if l_con is None else l_con.item(), None if l_lip is None else l_lip.item(), cfg
    )
    total = l_main
    if l_con is not None and c_con:
        total = total + c_con * l_con
    if l_lip is not None and c_lip:
        total = total + c_lip * l_lip
    return total


def train_step_t(
    state: ModelState,
    store: S.ParamStore,
    corpus: Corpus,
    batch: Batch,
    lip_batch: Batch | None,
    lr: float,
    cfg: TrainConfig,
) -> dict[str, float]:
    net = state.net
    net.train()

    def loss_fn():
        l_main, pooled = main_loss_t(state, corpus, batch)
        if not cfg.improved:
            return l_main, l_main, None, None
        l_con, l_lip = aux_losses(state, corpus, batch, lip_batch, cfg, pooled)
        return balanced_total(l_main, l_con, l_lip, cfg.balance), l_main, l_con, l_lip

    (total, l_main, l_con, l_lip), grads = S.evaluate_and_backward(loss_fn, store.entries, step=state.step)
    S.adamw_step(store, grads, lr, cfg.betas, cfg.weight_decay)
    state.step += 1
    return {
        "main": l_main.item(),
        "con": float("nan") if l_con is None else l_con.item(),
        "lip": float("nan") if l_lip is None else l_lip.item(),
    }


def _schedule(cfg: TrainConfig, total_steps: int) -> int:
    return max(1, min(int(cfg.warmup_frac * total_steps), total_steps - 1))


def train_t(state: ModelState, corpus: Corpus, cfg: TrainConfig) -> list[dict]:
    """Joint training of the token-target regressor; returns per-epoch mean losses."""
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    store = S.ParamStore.from_module(state.net)
    n = len(corpus)
    steps_per_epoch = max(1, n // cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    warmup = _schedule(cfg, total)
    stream = SequentialStream(n, cfg.lip_batch_size or cfg.batch_size)
    pad = state.vocab.pad
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = {"main": 0.0, "con": 0.0, "lip": 0.0}
        for b in range(steps_per_epoch):
            batch = make_batch(corpus, order[b * cfg.batch_size : (b + 1) * cfg.batch_size], pad)
            lip_batch = make_batch(corpus, dedupe_rows(corpus, stream.next_rows()), pad) if cfg.improved else None
            lr = S.cosine_lr(step + 1, warmup, total + 1, cfg.lr)
            losses = train_step_t(state, store, corpus, batch, lip_batch, lr, cfg)
            step += 1
            for k in sums:
                sums[k] += losses[k]
        record = {k: v / steps_per_epoch for k, v in sums.items()}
        record["epoch"] = epoch
        history.append(record)
        log.info("T epoch %d: %s", epoch, record)
    state.net.eval()
    return history


def _stage1_step(state, store, corpus, batch, lip_batch, lr, cfg: TrainConfig) -> dict[str, float]:
    """Embedder update: g_con + L_con / (L_lip + delta) * g_lip."""
    state.net.train()

    def loss_fn():
        l_con, l_lip = aux_losses(state, corpus, batch, lip_batch, cfg)
        if l_con is None:
            raise ValueError("stage 1 needs the contrastive loss enabled")
        lip_only = BalanceConfig(cfg.balance.delta, use_contrastive=False, use_lipschitz=cfg.balance.use_lipschitz)
        return balanced_total(l_con, None, l_lip, lip_only), l_con, l_lip

    (_, l_con, l_lip), grads = S.evaluate_and_backward(loss_fn, store.entries, step=state.step)
    S.adamw_step(store, grads, lr, cfg.betas, cfg.weight_decay)
    state.step += 1
    return {"con": l_con.item(), "lip": float("nan") if l_lip is None else l_lip.item()}


@torch.no_grad()
def _frozen_pooled(state: ModelState, tokens: Sequence[Sequence[int]], batch_size: int = 256) -> torch.Tensor:
    state.net.eval()
    out = []
    for start in range(0, len(tokens), batch_size):
        t, m = pad_batch(tokens[start : start + batch_size], state.vocab.pad)
        hidden, _ = state.net.encode(t, m)
        out.append(state.net.pool(hidden, m))
    return torch.cat(out)


def train_n(state: ModelState, corpus: Corpus, cfg: TrainConfig) -> list[dict]:
    """Two stages: regularized embedder (improved mode only), then regressor on frozen embeddings."""
    if state.config.variant != "N":
        raise ValueError("train_n needs a variant-N model")
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    net = state.net
    pad = state.vocab.pad
    n = len(corpus)
    history = []
    if cfg.improved and cfg.epochs > 0:
        store = S.ParamStore.from_module(net, net.encoder_parameter_names())
        steps_per_epoch = max(1, n // cfg.batch_size)
        total = steps_per_epoch * cfg.epochs
        warmup = _schedule(cfg, total)
        stream = SequentialStream(n, cfg.lip_batch_size or cfg.batch_size)
        step = 0
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            sums = {"con": 0.0, "lip": 0.0}
            for b in range(steps_per_epoch):
                batch = make_batch(corpus, order[b * cfg.batch_size : (b + 1) * cfg.batch_size], pad)
                lip_batch = make_batch(corpus, dedupe_rows(corpus, stream.next_rows()), pad)
                losses = _stage1_step(
                    state, store, corpus, batch, lip_batch, S.cosine_lr(step + 1, warmup, total + 1, cfg.lr), cfg
                )
                step += 1
                for k in sums:
                    sums[k] += losses[k]
            record = {k: v / steps_per_epoch for k, v in sums.items()}
            record.update(stage=1, epoch=epoch)
            history.append(record)
            log.info("N stage 1 epoch %d: %s", epoch, record)

    pooled = _frozen_pooled(state, corpus.tokens)
    targets = corpus.norm_y
    store = S.ParamStore.from_module(net, net.head_parameter_names())
    steps_per_epoch = max(1, n // cfg.batch_size)
    total = steps_per_epoch * cfg.regressor_epochs
    warmup = _schedule(cfg, total)
    step = 0
    for epoch in range(cfg.regressor_epochs):
        order = torch.from_numpy(rng.permutation(n))
        acc = 0.0
        for b in range(steps_per_epoch):
            rows = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            net.bn.train()

            def loss_fn():
                return S.squared_error(net.regressor(net.bn(pooled[rows])), targets[rows])

            (loss,), grads = S.evaluate_and_backward(loss_fn, store.entries, step=state.step)
            lr = S.cosine_lr(step + 1, warmup, total + 1, cfg.regressor_lr)
            S.adamw_step(store, grads, lr, cfg.betas, cfg.regressor_weight_decay)
            state.step += 1
            step += 1
            acc += loss.item()
        history.append({"stage": 2, "epoch": epoch, "mse": acc / steps_per_epoch})
    net.eval()
    return history


def main_loss(state: ModelState, corpus: Corpus, rows) -> torch.Tensor:
    """Cross-entropy (T) or squared error on inference-mode embeddings (N)."""
    batch = make_batch(corpus, rows, state.vocab.pad)
    if state.config.variant == "T":
        return main_loss_t(state, corpus, batch)[0]
    pred = state.net.regressor(embed(state, batch.tokens, batch.mask, training=False))
    return S.squared_error(pred, corpus.norm_y[batch.rows].to(pred.dtype))


def finetune_few_shot(
    state: ModelState, corpus: Corpus, epochs: int = 5, lr: float = 2e-5, batch_size: int = 32, seed: int = 0
) -> tuple[ModelState, list[float]]:
    """SGD on the main loss only; returns a new state and the per-epoch full-set loss.

    Variant T updates the whole network; variant N updates only the
    regressor head, with batch norm held at its running statistics.
    """
    if len(corpus) == 0:
        raise ValueError("few-shot set is empty")
    new = ModelState(state.config, copy.deepcopy(state.net), state.step)
    net = new.net
    names = [n for n, _ in net.named_parameters()]
    if new.config.variant == "N":
        names = [n for n in names if n.startswith("regressor.")]
    store = S.ParamStore.from_module(net, names)
    rng = np.random.default_rng(seed)
    n = len(corpus)
    curve = []

    def full_loss():
        net.eval()
        with torch.no_grad():
            return float(main_loss(new, corpus, list(range(n))))

    curve.append(full_loss())
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            rows = order[start : start + batch_size].tolist()
            net.eval()  # no batch-norm statistic updates during fine-tuning
            _, grads = S.evaluate_and_backward(lambda: main_loss(new, corpus, rows), store.entries)
            S.sgd_step(store, grads, lr)
            new.step += 1
        curve.append(full_loss())
    return new, curve
