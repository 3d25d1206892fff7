"""Model state, inference, attention profiling and the checkpoint format."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .. import substrate as S
from ..textcodec import CATEGORIES, CodecError, Vocabulary, p10_decode
from .config import ModelConfig
from .network import UniSONet

MAGIC = b"UNISO1"


@dataclass
class ModelState:
    config: ModelConfig
    net: UniSONet
    step: int = 0

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.config.e_max)


def init_model(config: ModelConfig, seed: int = 0) -> ModelState:
    """Scaled-uniform matrices, zero biases, unit norm gains; deterministic in ``seed``."""
    net = UniSONet(config)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name.endswith("gain"):
                p.fill_(1.0)
            elif p.dim() == 1:
                p.zero_()
            else:
                bound = 1.0 / np.sqrt(p.shape[-1])
                p.copy_(torch.rand(p.shape, generator=gen) * 2 * bound - bound)
    return ModelState(config, net)


def pad_batch(seqs: Sequence[Sequence[int]], pad: int) -> tuple[torch.Tensor, torch.Tensor]:
    length = max(len(s) for s in seqs)
    tokens = torch.full((len(seqs), length), pad, dtype=torch.long)
    for i, s in enumerate(seqs):
        tokens[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return tokens, tokens != pad


def _check_tokens(state: ModelState, tokens: torch.Tensor, mask: torch.Tensor) -> None:
    if tokens.numel() and (tokens.min() < 0 or tokens.max() >= state.config.vocab):
        raise S.ShapeError("embed", "token id outside the vocabulary")
    if (mask.sum(1) == 0).any():
        raise S.ShapeError("embed", "sequence with no non-pad tokens")


def embed(state: ModelState, tokens: torch.Tensor, mask: torch.Tensor, training: bool = False) -> torch.Tensor:
    """Mean-pooled encoder states; variant N adds batch normalization."""
    _check_tokens(state, tokens, mask)
    net = state.net
    hidden, _ = net.encode(tokens, mask)
    pooled = net.pool(hidden, mask)
    if state.config.variant == "N":
        net.bn.train(training)
        pooled = net.bn(pooled)
    return pooled


def _sample_token(logits: torch.Tensor, temperature: float, top_k: int, top_p: float, gen: torch.Generator):
    if temperature <= 1e-8:
        return logits.argmax(-1)
    logits = logits / temperature
    if top_k and top_k < logits.shape[-1]:
        kth = torch.topk(logits, top_k, dim=-1).values[..., -1:]
        logits = logits.masked_fill(logits < kth, float("-inf"))
    probs = torch.softmax(logits, dim=-1)
    if top_p < 1.0:
        sorted_p, order = torch.sort(probs, descending=True, dim=-1)
        drop = sorted_p.cumsum(-1) - sorted_p > top_p
        sorted_p = sorted_p.masked_fill(drop, 0.0)
        probs = torch.zeros_like(probs).scatter(-1, order, sorted_p)
    return torch.multinomial(probs / probs.sum(-1, keepdim=True), 1, generator=gen).squeeze(-1)


@torch.no_grad()
def decode_tokens(
    state: ModelState,
    tokens: torch.Tensor,
    mask: torch.Tensor,
    temperature: float = 0.0,
    top_k: int = 0,
    top_p: float = 1.0,
    gen: torch.Generator | None = None,
) -> torch.Tensor:
    """Autoregressively produce exactly ``mantissa_len + 2`` tokens per input."""
    net = state.net
    net.eval()
    memory, _ = net.encode(tokens, mask)
    out = torch.full((tokens.shape[0], 1), state.vocab.bos, dtype=torch.long)
    for _ in range(state.config.target_len):
        logits = net.decode_logits(out, memory, mask)[:, -1]
        nxt = _sample_token(logits, temperature, top_k, top_p, gen)
        out = torch.cat([out, nxt[:, None]], dim=1)
    return out[:, 1:]


def _decode_values(state: ModelState, seqs: torch.Tensor) -> np.ndarray:
    values = np.empty(seqs.shape[0])
    for i, row in enumerate(seqs.tolist()):
        try:
            values[i] = p10_decode(row, state.vocab)
        except CodecError:
            values[i] = np.nan
    return values


def predict_t(
    state: ModelState,
    inputs: Sequence[Sequence[int]],
    mode: str = "greedy",
    temperature: float = 0.7,
    top_k: int = 20,
    top_p: float = 0.95,
    n_samples: int = 5,
    seed: int = 0,
    batch_size: int = 128,
) -> np.ndarray:
    """Decoded scores, NaN where the decoded sequence is malformed.

    ``mode="sample"`` returns the median over ``n_samples`` sampled decodes
    (NaN samples ignored).
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decoding mode {mode!r}")
    results = []
    gen = torch.Generator().manual_seed(seed)
    for start in range(0, len(inputs), batch_size):
        tokens, mask = pad_batch(inputs[start : start + batch_size], state.vocab.pad)
        if mode == "greedy":
            results.append(_decode_values(state, decode_tokens(state, tokens, mask)))
            continue
        draws = np.stack(
            [
                _decode_values(state, decode_tokens(state, tokens, mask, temperature, top_k, top_p, gen))
                for _ in range(n_samples)
            ]
        )
        with np.errstate(all="ignore"):
            med = np.full(draws.shape[1], np.nan)
            ok = ~np.isnan(draws).all(0)
            med[ok] = np.nanmedian(draws[:, ok], axis=0)
        results.append(med)
    return np.concatenate(results) if results else np.empty(0)


@torch.no_grad()
def predict_n(state: ModelState, inputs: Sequence[Sequence[int]], batch_size: int = 256) -> np.ndarray:
    """Regressor output on inference-mode (running-statistics) embeddings."""
    net = state.net
    net.eval()
    out = []
    for start in range(0, len(inputs), batch_size):
        tokens, mask = pad_batch(inputs[start : start + batch_size], state.vocab.pad)
        out.append(net.regressor(embed(state, tokens, mask, training=False)).double().numpy())
    return np.concatenate(out) if out else np.empty(0)


@torch.no_grad()
def pooled_embeddings(state: ModelState, inputs: Sequence[Sequence[int]], batch_size: int = 256):
    """(pooled encoder states, projected z) as float64 arrays, no batch norm."""
    net = state.net
    net.eval()
    pooled, projected = [], []
    for start in range(0, len(inputs), batch_size):
        tokens, mask = pad_batch(inputs[start : start + batch_size], state.vocab.pad)
        hidden, _ = net.encode(tokens, mask)
        p = net.pool(hidden, mask)
        pooled.append(p.double().numpy())
        projected.append(net.proj_x(p).double().numpy())
    return np.concatenate(pooled), np.concatenate(projected)


# --- attention profiling ----------------------------------------------------


def attention_shares(weights: Sequence[torch.Tensor], categories: Sequence[str]) -> dict[str, float]:
    """Category shares of attention received, for one unpadded input.

    ``weights`` holds one (heads, L, L) or (1, heads, L, L) array per layer.
    """
    n = len(categories)
    unknown = set(categories) - set(CATEGORIES)
    if unknown:
        raise ValueError(f"unknown token categories {sorted(unknown)}")
    received = np.zeros(n)
    for w in weights:
        w = w.detach().double().numpy()
        w = w.reshape(-1, w.shape[-2], w.shape[-1])
        if w.shape[-1] != n:
            raise ValueError(f"categories cover {n} positions, attention has {w.shape[-1]}")
        received += w.mean(axis=(0, 1))
    received /= len(weights)
    total = received.sum()
    shares = {c: 0.0 for c in CATEGORIES}
    for c, r in zip(categories, received):
        shares[c] += r / total
    return shares


@torch.no_grad()
def attention_profile(state: ModelState, tokens: Sequence[int], categories: Sequence[str]) -> dict[str, float]:
    if len(categories) != len(tokens):
        raise ValueError("categories must assign exactly one category per token")
    t, mask = pad_batch([tokens], state.vocab.pad)
    state.net.eval()
    _, weights = state.net.encode(t, mask, need_weights=True)
    return attention_shares(weights, categories)


# --- checkpoints ------------------------------------------------------------


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    """``UNISO1`` + u32 header length + JSON header + little-endian float32 blocks."""
    tensors = dict(state.net.state_dict())
    header = {
        "config": state.config.to_dict(),
        "vocab_hash": state.vocab.fingerprint(),
        "variant": state.config.variant,
        "step": state.step,
        "blocks": [{"name": n, "shape": list(t.shape)} for n, t in tensors.items()],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for t in tensors.values():
            fh.write(t.detach().to(torch.float32).numpy().astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> ModelState:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a UNISO1 checkpoint")
    off = len(MAGIC)
    (hlen,) = struct.unpack("<I", data[off : off + 4])
    off += 4
    header = json.loads(data[off : off + hlen])
    off += hlen
    config = ModelConfig.from_dict(header["config"])
    if Vocabulary(config.e_max).fingerprint() != header["vocab_hash"]:
        raise ValueError(f"{path}: vocabulary hash mismatch")
    state = ModelState(config, UniSONet(config), step=header["step"])
    tensors = {}
    for block in header["blocks"]:
        count = int(np.prod(block["shape"])) if block["shape"] else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(block["shape"])
        tensors[block["name"]] = torch.from_numpy(arr.astype(np.float32))
        off += 4 * count
    state.net.load_state_dict(tensors)
    return state
