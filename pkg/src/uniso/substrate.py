"""Differentiable building blocks, optimizers and gradient checking.

Reverse-mode differentiation is delegated to ``torch.autograd``; this module
adds the op set the models use (with shape checks that name the failing
op), a parameter store carrying optimizer state, AdamW/SGD steps, the
warmup-cosine schedule and a central-difference gradient checker that is
independent of autograd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

Tensor = torch.Tensor


class ShapeError(ValueError):
    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str, step: int | None = None):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite value in {op}{where}")
        self.op = op
        self.step = step


def check_finite(x: Tensor, op: str, step: int | None = None) -> Tensor:
    if not torch.isfinite(x).all():
        raise NonFiniteError(op, step)
    return x


def _require(cond: bool, op: str, detail: str) -> None:
    if not cond:
        raise ShapeError(op, detail)


# --- ops ------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    _require(x.shape[-1] == weight.shape[1], "linear", f"input width {x.shape[-1]} != weight in {weight.shape[1]}")
    return F.linear(x, weight, bias)


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    _require(x.shape[-1] == gain.shape[0], "rms_norm", f"width {x.shape[-1]} != gain {gain.shape[0]}")
    return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + eps) * gain


def batch_norm(
    x: Tensor,
    gain: Tensor,
    bias: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over dim 0; updates running stats in training mode.

    The running variance tracks the same population variance used for the
    batch normalization, so inference on a full training batch reproduces
    training-mode outputs once the running stats have converged.
    """
    _require(x.dim() == 2 and x.shape[1] == gain.shape[0], "batch_norm", f"bad input shape {tuple(x.shape)}")
    if training:
        _require(x.shape[0] >= 2, "batch_norm", "training mode needs at least 2 rows")
        mean = x.mean(0)
        var = x.var(0, unbiased=False)
        with torch.no_grad():
            running_mean.mul_(1 - momentum).add_(momentum * mean.detach())
            running_var.mul_(1 - momentum).add_(momentum * var.detach())
    else:
        mean, var = running_mean, running_var
    return (x - mean) * torch.rsqrt(var + eps) * gain + bias


def masked_mean(x: Tensor, mask: Tensor) -> Tensor:
    """Mean over axis 1 of (batch, length, width) restricted to ``mask``."""
    _require(x.shape[:2] == mask.shape, "masked_mean", f"mask {tuple(mask.shape)} vs {tuple(x.shape[:2])}")
    counts = mask.sum(1, keepdim=True)
    if (counts == 0).any():
        raise ShapeError("masked_mean", "a row has no unmasked positions")
    m = mask.to(x.dtype).unsqueeze(-1)
    return (x * m).sum(1) / counts.to(x.dtype)


def softmax(logits: Tensor, dim: int = -1) -> Tensor:
    return torch.softmax(logits, dim=dim)


def cosine_matrix(a: Tensor, b: Tensor | None = None) -> Tensor:
    """Pairwise cosine similarities between rows; rejects zero rows."""
    b = a if b is None else b
    _require(a.shape[-1] == b.shape[-1], "cosine_matrix", "row widths differ")
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    if (na <= 0).any() or (nb <= 0).any():
        raise ShapeError("cosine_matrix", "zero-norm row")
    return (a / na.unsqueeze(-1)) @ (b / nb.unsqueeze(-1)).T


def cross_entropy(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean token-level cross-entropy; logits (..., V), integer targets (...)."""
    _require(logits.shape[:-1] == targets.shape, "cross_entropy", "logits/targets shapes disagree")
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1))


def squared_error(pred: Tensor, target: Tensor) -> Tensor:
    _require(pred.shape == target.shape, "squared_error", f"{tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).pow(2).mean()


# --- gradients ------------------------------------------------------------


def evaluate_and_backward(
    loss_fn: Callable[[], Tensor | tuple],
    params: Mapping[str, Tensor],
    step: int | None = None,
) -> tuple[tuple, dict[str, Tensor]]:
    """Run ``loss_fn`` and differentiate its first output w.r.t. ``params``.

    Returns ``(outputs, grads)``.  Parameters the loss does not reach get no
    entry.  Non-finite losses or gradients raise NonFiniteError.
    """
    outputs = loss_fn()
    if not isinstance(outputs, tuple):
        outputs = (outputs,)
    loss = outputs[0]
    if loss.dim() != 0:
        raise ShapeError("evaluate_and_backward", "loss must be a scalar")
    check_finite(loss, "loss", step)
    names = [n for n, p in params.items() if p.requires_grad]
    raw = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    grads = {}
    for name, g in zip(names, raw):
        if g is not None:
            grads[name] = check_finite(g, f"grad[{name}]", step)
    return outputs, grads


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Max over entries of |analytic - central difference| / max(1, |analytic|).

    Runs in the dtype of ``params`` (use float64).  With ``max_entries`` a
    random subset of entries per parameter is probed.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    _, grads = evaluate_and_backward(loss_fn, params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for name, p in params.items():
            if not p.requires_grad:
                continue
            analytic = grads.get(name, torch.zeros_like(p)).reshape(-1)
            flat = p.view(-1)
            idx = np.arange(flat.numel())
            if max_entries is not None and idx.size > max_entries:
                idx = rng.choice(idx, size=max_entries, replace=False)
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn()
                flat[i] = orig - eps
                down = loss_fn()
                flat[i] = orig
                up = up[0] if isinstance(up, tuple) else up
                down = down[0] if isinstance(down, tuple) else down
                numeric = (up.item() - down.item()) / (2 * eps)
                a = analytic[i].item()
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


# --- parameter store and optimizers ---------------------------------------


@dataclass
class ParamStore:
    """Named parameters plus AdamW moments and a step counter."""

    entries: dict[str, Tensor]
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def from_module(cls, module: torch.nn.Module, names=None) -> "ParamStore":
        params = dict(module.named_parameters())
        if names is not None:
            params = {n: params[n] for n in names}
        return cls(params)

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def _check_grads(store: ParamStore, grads: Mapping[str, Tensor], op: str) -> None:
    for name, g in grads.items():
        if name not in store.entries:
            raise ShapeError(op, f"gradient for unknown parameter {name!r}")
        if g.shape != store.entries[name].shape:
            raise ShapeError(op, f"{name}: grad {tuple(g.shape)} vs param {tuple(store.entries[name].shape)}")


@torch.no_grad()
def adamw_step(
    store: ParamStore,
    grads: Mapping[str, Tensor],
    lr: float,
    betas: tuple[float, float] = (0.9, 0.99),
    wd: float = 0.01,
    eps: float = 1e-8,
) -> ParamStore:
    """One decoupled-weight-decay Adam step, in place; returns ``store``.

    Parameters without a gradient entry are left untouched.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    _check_grads(store, grads, "adamw_step")
    store.step += 1
    b1, b2 = betas
    c1 = 1 - b1**store.step
    c2 = 1 - b2**store.step
    for name, p in store.entries.items():
        g = grads.get(name)
        if g is None:
            continue
        if wd:
            p.mul_(1 - lr * wd)
        m = store.m.setdefault(name, torch.zeros_like(p))
        v = store.v.setdefault(name, torch.zeros_like(p))
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        p.addcdiv_(m / c1, (v / c2).sqrt_().add_(eps), value=-lr)
    return store


@torch.no_grad()
def sgd_step(store: ParamStore, grads: Mapping[str, Tensor], lr: float) -> ParamStore:
    if lr <= 0:
        raise ValueError("lr must be positive")
    _check_grads(store, grads, "sgd_step")
    for name, g in grads.items():
        store.entries[name].sub_(g, alpha=lr)
    store.step += 1
    return store


def cosine_lr(step: int, warmup: int, total: int, base: float) -> float:
    """Linear warmup to ``base`` then cosine decay to exactly 0 at ``total``."""
    step = min(max(step, 0), total)
    if warmup > 0 and step < warmup:
        return base * step / warmup
    if total <= warmup:
        return base
    progress = (step - warmup) / (total - warmup)
    return 0.5 * base * (1.0 + math.cos(math.pi * progress))
