"""Transformer building blocks, losses, and optimization utilities.

Attention follows softmax(Q K^T / sqrt(d_k)) V with per-head projections;
blocks are pre-norm (LayerNorm before each sublayer) with GELU feed
forwards.  Losses are the relative squared error for data predictions
and token cross-entropy for symbol sequences.  Optimization is AdamW
with global gradient-norm clipping and an inverse-square-root schedule
with linear warmup.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

EPS = 1e-8


class ShapeMismatch(ValueError):
    pass


class NonFiniteGradient(RuntimeError):
    pass


def sinusoidal_pe(length: int, width: int,
                  dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Standard sin/cos positional encoding, shape (length, width)."""
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(0, width, 2, dtype=torch.float64)[None]
    angles = pos / torch.pow(10000.0, i / width)
    pe = torch.zeros(length, width, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angles)
    pe[:, 1::2] = torch.cos(angles[:, : (width + 1) // 2][:, : width // 2])
    return pe.to(dtype)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention; queries from x, keys/values from y."""

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads:
            raise ShapeMismatch("d_model must be divisible by n_heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.w_q = nn.Linear(d_model, d_model)
        self.w_k = nn.Linear(d_model, d_model)
        self.w_v = nn.Linear(d_model, d_model)
        self.w_o = nn.Linear(d_model, d_model)
        self.record_weights = False
        self.last_weights: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, y: torch.Tensor | None = None,
                key_mask: torch.Tensor | None = None,
                causal: bool = False) -> torch.Tensor:
        """x: (B, Lq, d); y: (B, Lk, d) or None for self-attention.

        key_mask: (B, Lk) bool, True = attendable.  Masked keys receive
        exactly zero attention weight.
        """
        if y is None:
            y = x
        if x.shape[-1] != self.d_model or y.shape[-1] != self.d_model:
            raise ShapeMismatch(
                f"expected width {self.d_model}, got {x.shape[-1]}")
        b, lq, _ = x.shape
        lk = y.shape[1]
        q = self.w_q(x).view(b, lq, self.n_heads, self.d_head).transpose(1, 2)
        k = self.w_k(y).view(b, lk, self.n_heads, self.d_head).transpose(1, 2)
        v = self.w_v(y).view(b, lk, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        if key_mask is not None:
            scores = scores.masked_fill(
                ~key_mask[:, None, None, :], float("-inf"))
        if causal:
            cmask = torch.ones(lq, lk, dtype=torch.bool,
                               device=x.device).tril()
            scores = scores.masked_fill(~cmask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        if self.record_weights:
            self.last_weights = weights.detach()
        ctx = weights @ v
        ctx = ctx.transpose(1, 2).reshape(b, lq, self.d_model)
        return self.w_o(ctx)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ffn: int):
        super().__init__()
        self.lin1 = nn.Linear(d_model, d_ffn)
        self.lin2 = nn.Linear(d_ffn, d_model)

    def forward(self, x):
        return self.lin2(F.gelu(self.lin1(x)))


class EncoderBlock(nn.Module):
    """Pre-norm self-attention + feed-forward with residuals."""

    def __init__(self, d_model: int, n_heads: int, d_ffn: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ffn)

    def forward(self, x, key_mask=None):
        x = x + self.attn(self.norm1(x), key_mask=key_mask)
        return x + self.ffn(self.norm2(x))


class CrossBlock(nn.Module):
    """Pre-norm cross-attention + feed-forward; no query self-attention,
    so each query position is computed independently of the others."""

    def __init__(self, d_model: int, n_heads: int, d_ffn: int):
        super().__init__()
        self.norm_q = nn.LayerNorm(d_model)
        self.norm_kv = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ffn)

    def forward(self, x, memory, key_mask=None):
        x = x + self.attn(self.norm_q(x), self.norm_kv(memory),
                          key_mask=key_mask)
        return x + self.ffn(self.norm2(x))


class DecoderBlock(nn.Module):
    """Pre-norm causal self-attention + encoder-decoder attention + FFN."""

    def __init__(self, d_model: int, n_heads: int, d_ffn: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, n_heads)
        self.norm_q = nn.LayerNorm(d_model)
        self.norm_kv = nn.LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, n_heads)
        self.norm3 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ffn)

    def forward(self, x, memory, memory_mask=None):
        x = x + self.self_attn(self.norm1(x), causal=True)
        x = x + self.cross_attn(self.norm_q(x), self.norm_kv(memory),
                                key_mask=memory_mask)
        return x + self.ffn(self.norm3(x))


def loss_relative_squared(pred: torch.Tensor, target: torch.Tensor,
                          mask: torch.Tensor | None = None,
                          eps: float = EPS) -> torch.Tensor:
    """Mean over batch of ||pred - target||^2 / (||target||^2 + eps).

    pred/target: (B, L, d); mask: (B, d) with 1.0 on true dimensions,
    padded dimensions are excluded from both norms.
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = pred - target
    if mask is not None:
        m = mask[:, None, :]
        diff = diff * m
        target = target * m
    num = diff.pow(2).flatten(1).sum(dim=1)
    den = target.pow(2).flatten(1).sum(dim=1) + eps
    return (num / den).mean()


def loss_cross_entropy(logits: torch.Tensor, targets: torch.Tensor,
                       pad_id: int) -> torch.Tensor:
    """Token-level cross entropy, averaged over non-pad positions."""
    if logits.shape[:-1] != targets.shape:
        raise ShapeMismatch(f"{tuple(logits.shape)} vs {tuple(targets.shape)}")
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]),
                           targets.reshape(-1).long(), ignore_index=pad_id)


def lr_at_step(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear ramp 0 -> base over the warmup, then base * sqrt(W/step)."""
    if step <= 0:
        return 0.0 if warmup_steps > 0 else base_lr
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    if warmup_steps == 0:
        return base_lr
    return base_lr * math.sqrt(warmup_steps / step)


class ClippedAdamW:
    """AdamW with decoupled weight decay, preceded by a global-norm clip."""

    def __init__(self, params, lr: float = 1e-4, weight_decay: float = 1e-4,
                 clip_norm: float = 1.0, betas=(0.9, 0.999), eps: float = EPS):
        self.params = [p for p in params if p.requires_grad]
        self.clip_norm = clip_norm
        self.opt = torch.optim.AdamW(self.params, lr=lr, betas=betas,
                                     eps=eps, weight_decay=weight_decay)

    def set_lr(self, lr: float) -> None:
        for group in self.opt.param_groups:
            group["lr"] = lr

    def step(self) -> float:
        """Clip, check finiteness, update.  Returns the pre-clip norm."""
        total = torch.nn.utils.clip_grad_norm_(self.params, self.clip_norm)
        if not torch.isfinite(total):
            raise NonFiniteGradient(f"gradient norm is {total}")
        self.opt.step()
        return float(total)

    def zero_grad(self) -> None:
        self.opt.zero_grad(set_to_none=True)
