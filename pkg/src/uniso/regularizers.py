"""Embedding-space regularizers: metadata alignment, Lipschitz smoothing, balancing."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np
import torch
from torch import nn

from .substrate import ShapeError, cosine_matrix
from .textcodec import Metadata

Tensor = torch.Tensor

N_BUCKETS = 2048
D_META = 64


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.1
    degenerate_threshold: float = 1e-12

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class BalanceConfig:
    delta: float = 1e-10
    use_contrastive: bool = True
    use_lipschitz: bool = True

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")


# --- metadata embedding ---------------------------------------------------


@lru_cache(maxsize=1)
def _trigram_projection() -> np.ndarray:
    rng = np.random.default_rng(0)
    return rng.standard_normal((N_BUCKETS, D_META)) / np.sqrt(D_META)


def trigram_counts(text: str) -> np.ndarray:
    counts = np.zeros(N_BUCKETS)
    padded = f"  {text} "
    for i in range(len(padded) - 2):
        counts[zlib.crc32(padded[i : i + 3].encode("utf-8")) % N_BUCKETS] += 1
    return counts


def metadata_embed(m: Metadata) -> np.ndarray:
    """Frozen unit-norm vector from hashed character trigrams of the metadata."""
    vec = trigram_counts(m.text()) @ _trigram_projection()
    return vec / np.linalg.norm(vec)


# --- projection heads -----------------------------------------------------


class ProjectionHead(nn.Module):
    """Linear -> ReLU -> Linear into the shared comparison space."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int = 128):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d_hidden)
        self.fc2 = nn.Linear(d_hidden, d_out)

    def forward(self, x: Tensor) -> Tensor:
        return project(self, x)


def project(head: ProjectionHead, pooled: Tensor) -> Tensor:
    if pooled.shape[-1] != head.fc1.in_features:
        raise ShapeError("project", f"input width {pooled.shape[-1]} != head width {head.fc1.in_features}")
    return head.fc2(torch.relu(head.fc1(pooled)))


# --- losses ---------------------------------------------------------------


def normalized_metadata_similarity(zm: Tensor, cfg: ContrastiveConfig = ContrastiveConfig()) -> Tensor | None:
    """Min-max normalized metadata cosine similarities over the i<j pairs.

    Returns None when the pair similarities are all equal (one task).
    """
    s_m = cosine_matrix(zm)
    n = zm.shape[0]
    iu = torch.triu_indices(n, n, offset=1)
    pairs = s_m[iu[0], iu[1]]
    lo, hi = pairs.min(), pairs.max()
    if (hi - lo).item() < cfg.degenerate_threshold:
        return None
    return (s_m - lo) / (hi - lo)


def contrastive_loss(zx: Tensor, zm: Tensor, cfg: ContrastiveConfig = ContrastiveConfig()) -> Tensor:
    """Metadata-weighted contrastive alignment of input embeddings.

    ``-1/(N(N-1)) * sum_{i<j} s_hat_ij * log softmax_{k != i}(s^x_ik / tau)[j]``.
    """
    if zx.shape != zm.shape or zx.dim() != 2:
        raise ShapeError("contrastive_loss", f"zx {tuple(zx.shape)} vs zm {tuple(zm.shape)}")
    n = zx.shape[0]
    if n < 2:
        raise ShapeError("contrastive_loss", "need at least 2 rows")
    s_hat = normalized_metadata_similarity(zm, cfg)
    if s_hat is None:
        return zx.sum() * 0.0
    s_x = cosine_matrix(zx) / cfg.temperature
    eye = torch.eye(n, dtype=torch.bool, device=zx.device)
    log_p = torch.log_softmax(s_x.masked_fill(eye, float("-inf")), dim=1)
    upper = torch.triu(torch.ones(n, n, dtype=torch.bool, device=zx.device), diagonal=1)
    terms = (s_hat * log_p.masked_fill(~upper, 0.0))[upper]
    return -terms.sum() / (n * (n - 1))


def pairwise_ratios(z: Tensor, y: Tensor) -> Tensor:
    """``|y_i - y_j| / ||z_i - z_j||`` over i<j, in row-major pair order."""
    n = z.shape[0]
    iu = torch.triu_indices(n, n, offset=1)
    dz = (z[iu[0]] - z[iu[1]]).norm(dim=-1)
    dy = (y[iu[0]] - y[iu[1]]).abs()
    bad = dz <= 1e-12
    if bad.any():
        k = int(torch.nonzero(bad)[0])
        raise ShapeError("lipschitz_loss", f"coincident embeddings at rows {int(iu[0, k])} and {int(iu[1, k])}")
    return dy / dz


def median_midpoint(x: Tensor) -> Tensor:
    s, _ = torch.sort(x)
    n = s.numel()
    mid = n // 2
    return s[mid] if n % 2 else 0.5 * (s[mid - 1] + s[mid])


def task_lipschitz_loss(z: Tensor, y: Tensor) -> Tensor:
    """Hinge on ratios above the batch median ratio."""
    r = pairwise_ratios(z, y)
    return torch.relu(r - median_midpoint(r)).sum()


def lipschitz_loss(z_by_task: Mapping[str, tuple[Tensor, Tensor]], sizes: Mapping[str, int]) -> Tensor:
    """Task-size-weighted sum of per-task hinge losses.

    Each task T is weighted by ``sum_j N_j / N_T`` with N taken from ``sizes``.
    """
    total_n = sum(sizes.values())
    total = None
    for task, (z, y) in z_by_task.items():
        if z.shape[0] < 2:
            raise ShapeError("lipschitz_loss", f"task {task!r} has fewer than 2 rows")
        term = (total_n / sizes[task]) * task_lipschitz_loss(z, y)
        total = term if total is None else total + term
    if total is None:
        raise ShapeError("lipschitz_loss", "no task batches")
    return total


def balance_coefficients(
    l_main: float, l_con: float | None, l_lip: float | None, cfg: BalanceConfig = BalanceConfig()
) -> tuple[float, float]:
    """Scalar weights of the auxiliary gradients: ``L_main / (L_aux + delta)``."""
    c_con = l_main / (l_con + cfg.delta) if cfg.use_contrastive and l_con is not None else 0.0
    c_lip = l_main / (l_lip + cfg.delta) if cfg.use_lipschitz and l_lip is not None else 0.0
    return c_con, c_lip


def balance_gradients(
    l_main: float,
    g_main: Mapping[str, Tensor],
    l_con: float | None,
    g_con: Mapping[str, Tensor] | None,
    l_lip: float | None,
    g_lip: Mapping[str, Tensor] | None,
    cfg: BalanceConfig = BalanceConfig(),
) -> dict[str, Tensor]:
    """``g_main + L_main/(L_con+d) * g_con + L_main/(L_lip+d) * g_lip``.

    For the two-stage embedder update pass the contrastive loss and gradient
    in the main slot and ``None`` for the contrastive slot.
    """
    c_con, c_lip = balance_coefficients(l_main, l_con, l_lip, cfg)
    out = {k: v.clone() for k, v in g_main.items()}
    for coef, grads in ((c_con, g_con), (c_lip, g_lip)):
        if not coef or grads is None:
            continue
        for name, g in grads.items():
            if name in out:
                if out[name].shape != g.shape:
                    raise ShapeError("balance_gradients", f"{name}: {tuple(g.shape)} vs {tuple(out[name].shape)}")
                out[name] = out[name] + coef * g
            else:
                out[name] = coef * g
    return out
