"""Encoder(-decoder) transformer, projection heads and regressor head."""

from __future__ import annotations

import math

import torch
from torch import nn

from .. import substrate as S
from ..regularizers import ProjectionHead
from .config import ModelConfig

Tensor = torch.Tensor


class RMSNorm(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d))

    def forward(self, x: Tensor) -> Tensor:
        return S.rms_norm(x, self.gain)


class BatchNorm(nn.Module):
    def __init__(self, d: int, momentum: float = 0.1):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))
        self.register_buffer("running_mean", torch.zeros(d))
        self.register_buffer("running_var", torch.ones(d))
        self.momentum = momentum

    def forward(self, x: Tensor) -> Tensor:
        return S.batch_norm(
            x, self.gain, self.bias, self.running_mean, self.running_var, self.training, self.momentum
        )


class Attention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads, self.head_dim = cfg.n_heads, cfg.head_dim
        self.q = nn.Linear(d, d, bias=False)
        self.k = nn.Linear(d, d, bias=False)
        self.v = nn.Linear(d, d, bias=False)
        self.o = nn.Linear(d, d, bias=False)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, x: Tensor, kv: Tensor, key_mask: Tensor | None, causal: bool = False):
        q, k, v = self._split(self.q(x)), self._split(self.k(kv)), self._split(self.v(kv))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        if causal:
            lq, lk = scores.shape[-2:]
            future = torch.ones(lq, lk, dtype=torch.bool, device=x.device).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        weights = S.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(x.shape[0], x.shape[1], -1)
        return self.o(out), weights


class FeedForward(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.fc1 = nn.Linear(cfg.d_model, cfg.d_ff)
        self.fc2 = nn.Linear(cfg.d_ff, cfg.d_model)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(torch.relu(self.fc1(x)))


class EncoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = RMSNorm(cfg.d_model)
        self.attn = Attention(cfg)
        self.norm2 = RMSNorm(cfg.d_model)
        self.ff = FeedForward(cfg)

    def forward(self, x: Tensor, mask: Tensor):
        h = self.norm1(x)
        a, w = self.attn(h, h, mask)
        x = x + a
        return x + self.ff(self.norm2(x)), w


class DecoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = RMSNorm(cfg.d_model)
        self.self_attn = Attention(cfg)
        self.norm2 = RMSNorm(cfg.d_model)
        self.cross_attn = Attention(cfg)
        self.norm3 = RMSNorm(cfg.d_model)
        self.ff = FeedForward(cfg)

    def forward(self, x: Tensor, memory: Tensor, memory_mask: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.self_attn(h, h, None, causal=True)[0]
        x = x + self.cross_attn(self.norm2(x), memory, memory_mask)[0]
        return x + self.ff(self.norm3(x))


class Regressor(nn.Module):
    def __init__(self, d_in: int, hidden: int, layers: int):
        super().__init__()
        dims = [d_in] + [hidden] * layers
        self.hidden = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.out = nn.Linear(hidden, 1)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.hidden:
            x = torch.relu(layer(x))
        return self.out(x).squeeze(-1)


class UniSONet(nn.Module):
    """Shared encoder; a decoder + LM head (variant T) or batch norm + regressor (variant N)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.tok_emb = nn.Embedding(cfg.vocab, d)
        self.enc_pos = nn.Parameter(torch.zeros(cfg.max_len, d))
        self.encoder = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.n_layers))
        self.enc_norm = RMSNorm(d)
        if cfg.variant == "T":
            self.dec_pos = nn.Parameter(torch.zeros(cfg.target_len, d))
            self.decoder = nn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.n_layers))
            self.dec_norm = RMSNorm(d)
            self.lm_head = nn.Linear(d, cfg.vocab, bias=False)
        self.proj_x = ProjectionHead(d, cfg.proj_hidden, cfg.proj_dim)
        self.proj_m = ProjectionHead(cfg.d_meta, cfg.proj_hidden, cfg.proj_dim)
        if cfg.variant == "N":
            self.bn = BatchNorm(d)
            self.regressor = Regressor(d, cfg.regressor_hidden, cfg.regressor_layers)

    def encoder_parameter_names(self) -> list[str]:
        prefixes = ("tok_emb.", "enc_pos", "encoder.", "enc_norm.", "proj_x.", "proj_m.")
        return [n for n, _ in self.named_parameters() if n.startswith(prefixes)]

    def head_parameter_names(self) -> list[str]:
        return [n for n, _ in self.named_parameters() if n.startswith(("bn.", "regressor."))]

    def encode(self, tokens: Tensor, mask: Tensor, need_weights: bool = False):
        """Final encoder hidden states (B, L, d) and optionally per-layer attention."""
        length = tokens.shape[1]
        if length > self.cfg.max_len:
            raise S.ShapeError("encode", f"sequence length {length} exceeds max_len {self.cfg.max_len}")
        x = self.tok_emb(tokens) + self.enc_pos[:length]
        weights = []
        for block in self.encoder:
            x, w = block(x, mask)
            if need_weights:
                weights.append(w)
        return self.enc_norm(x), weights

    def pool(self, hidden: Tensor, mask: Tensor) -> Tensor:
        return S.masked_mean(hidden, mask)

    def decode_logits(self, dec_in: Tensor, memory: Tensor, memory_mask: Tensor) -> Tensor:
        x = self.tok_emb(dec_in) + self.dec_pos[: dec_in.shape[1]]
        for block in self.decoder:
            x = block(x, memory, memory_mask)
        return self.lm_head(self.dec_norm(x))


def parameter_count(cfg: ModelConfig) -> int:
    return sum(p.numel() for p in UniSONet(cfg).parameters())
