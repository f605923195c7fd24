"""LLaMA-style decoder: pre-RMSNorm, rotary attention, SwiGLU feed-forward.

The forward pass can capture per-layer post-block residuals and attention
probabilities, and accepts interventions applied inside the computation:
head ablation at the attention output projection input, and additive or
replacing edits of the post-block residual stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from molmech.model.config import ContextOverflow, ModelConfig


class BadIntervention(ValueError):
    pass


@dataclass(frozen=True)
class AblateHead:
    """Zero (or replace with ``mean``) one head's output before the output projection."""

    layer: int
    head: int
    mean: torch.Tensor | None = None  # shape (d_head,) for mean ablation


@dataclass(frozen=True)
class AddResidual:
    """``x <- x + scale * vector`` on the post-block residual of ``layer``.

    ``positions`` is None (every position), a list of positions applied to
    every row, or a boolean mask of shape (batch, seq).
    """

    layer: int
    vector: torch.Tensor
    scale: float = 1.0
    positions: Sequence[int] | torch.Tensor | None = None


@dataclass(frozen=True)
class ReplaceResidual:
    """``x <- transform(x)`` on the post-block residual of ``layer`` at every position."""

    layer: int
    transform: Callable[[torch.Tensor], torch.Tensor]
    tag: str = "transform"


Intervention = AblateHead | AddResidual | ReplaceResidual


@dataclass
class ForwardTrace:
    logits: torch.Tensor  # (batch, seq, vocab)
    residuals: list[torch.Tensor] = field(default_factory=list)  # per layer, (batch, seq, d_model)
    attention: list[torch.Tensor] = field(default_factory=list)  # per layer, (batch, heads, seq, seq)


def rope_tables(seq_len: int, d_head: int, theta: float, offset: int = 0, dtype=torch.float32):
    inv = 1.0 / (theta ** (torch.arange(0, d_head, 2, dtype=torch.float64) / d_head))
    pos = torch.arange(offset, offset + seq_len, dtype=torch.float64)
    ang = torch.outer(pos, inv)
    ang = torch.cat([ang, ang], dim=-1)
    return ang.cos().to(dtype), ang.sin().to(dtype)


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    half = x.shape[-1] // 2
    rotated = torch.cat([-x[..., half:], x[..., :half]], dim=-1)
    return x * cos + rotated * sin


class Attention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads, self.d_head = cfg.n_heads, cfg.d_head
        self.wq = nn.Linear(cfg.d_model, cfg.d_model, bias=False)
        self.wk = nn.Linear(cfg.d_model, cfg.d_model, bias=False)
        self.wv = nn.Linear(cfg.d_model, cfg.d_model, bias=False)
        self.wo = nn.Linear(cfg.d_model, cfg.d_model, bias=False)

    def scores(self, x, cos, sin):
        b, t, _ = x.shape
        q = self.wq(x).view(b, t, self.n_heads, self.d_head).transpose(1, 2)
        k = self.wk(x).view(b, t, self.n_heads, self.d_head).transpose(1, 2)
        q, k = apply_rope(q, cos, sin), apply_rope(k, cos, sin)
        return q @ k.transpose(-1, -2) / self.d_head**0.5

    def forward(self, x, cos, sin, mask, ablations: Sequence[AblateHead]):
        b, t, _ = x.shape
        s = self.scores(x, cos, sin).masked_fill(~mask, float("-inf"))
        probs = torch.softmax(s, dim=-1)
        v = self.wv(x).view(b, t, self.n_heads, self.d_head).transpose(1, 2)
        heads = probs @ v  # (b, h, t, d_head)
        if ablations:
            heads = heads.clone()
            for ab in ablations:
                heads[:, ab.head] = 0.0 if ab.mean is None else ab.mean.to(heads.dtype)
        out = heads.transpose(1, 2).reshape(b, t, self.n_heads * self.d_head)
        return self.wo(out), probs


class SwiGLU(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.w_gate = nn.Linear(cfg.d_model, cfg.d_ff, bias=False)
        self.w_up = nn.Linear(cfg.d_model, cfg.d_ff, bias=False)
        self.w_down = nn.Linear(cfg.d_ff, cfg.d_model, bias=False)

    def forward(self, x):
        return self.w_down(F.silu(self.w_gate(x)) * self.w_up(x))


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm_attn = nn.RMSNorm(cfg.d_model, eps=cfg.rmsnorm_eps)
        self.attn = Attention(cfg)
        self.norm_ffn = nn.RMSNorm(cfg.d_model, eps=cfg.rmsnorm_eps)
        self.ffn = SwiGLU(cfg)

    def forward(self, x, cos, sin, mask, ablations):
        a, probs = self.attn(self.norm_attn(x), cos, sin, mask, ablations)
        x = x + a
        x = x + self.ffn(self.norm_ffn(x))
        return x, probs


class Transformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.norm_out = nn.RMSNorm(cfg.d_model, eps=cfg.rmsnorm_eps)
        self.unembed = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        self.reset_parameters(cfg.seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        std = 0.02
        out_std = std / (2 * self.cfg.n_layers) ** 0.5
        for name, p in self.named_parameters():
            if p.dim() == 1:
                nn.init.ones_(p)
            elif name.endswith("wo.weight") or name.endswith("w_down.weight"):
                p.data.normal_(0.0, out_std, generator=gen)
            else:
                p.data.normal_(0.0, std, generator=gen)

    def _check(self, interventions: Sequence[Intervention]) -> None:
        cfg = self.cfg
        for iv in interventions:
            if not 0 <= iv.layer < cfg.n_layers:
                raise BadIntervention(f"layer {iv.layer} outside 0..{cfg.n_layers - 1}")
            if isinstance(iv, AblateHead):
                if not 0 <= iv.head < cfg.n_heads:
                    raise BadIntervention(f"head {iv.head} outside 0..{cfg.n_heads - 1}")
                if iv.mean is not None and tuple(iv.mean.shape) != (cfg.d_head,):
                    raise BadIntervention("mean ablation vector must have length d_head")
            elif isinstance(iv, AddResidual):
                if tuple(iv.vector.shape) != (cfg.d_model,):
                    raise BadIntervention(f"steering vector must have length {cfg.d_model}")
            elif not isinstance(iv, ReplaceResidual):
                raise BadIntervention(f"unknown intervention {iv!r}")

    def forward(
        self,
        tokens: torch.Tensor,
        interventions: Sequence[Intervention] = (),
        capture_residuals: bool = False,
        capture_attention: bool = False,
        pad_id: int | None = 0,
        stop_at_layer: int | None = None,
    ) -> ForwardTrace:
        """Run the model on a (batch, seq) id tensor.

        PAD keys are masked out of attention.  With ``stop_at_layer`` the pass
        ends after that block and ``logits`` is empty (residual capture only).
        """
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        b, t = tokens.shape
        if t > self.cfg.context_len:
            raise ContextOverflow(f"sequence length {t} exceeds context {self.cfg.context_len}")
        self._check(interventions)
        x = self.embed(tokens)
        cos, sin = rope_tables(t, self.cfg.d_head, self.cfg.rope_theta, dtype=x.dtype)
        mask = torch.ones(t, t, dtype=torch.bool).tril()
        if pad_id is not None:
            keys_ok = tokens != pad_id
            mask = mask & keys_ok[:, None, None, :]
            # a fully masked row would be NaN; let padded queries see themselves
            mask = mask | torch.eye(t, dtype=torch.bool)
        trace = ForwardTrace(logits=torch.empty(0))
        for li, block in enumerate(self.blocks):
            abl = [iv for iv in interventions if isinstance(iv, AblateHead) and iv.layer == li]
            x, probs = block(x, cos, sin, mask, abl)
            for iv in interventions:
                if iv.layer != li:
                    continue
                if isinstance(iv, AddResidual):
                    x = x + _position_weights(iv.positions, b, t, x.dtype) * (iv.scale * iv.vector.to(x.dtype))
                elif isinstance(iv, ReplaceResidual):
                    x = iv.transform(x)
            if capture_residuals:
                trace.residuals.append(x)
            if capture_attention:
                trace.attention.append(probs)
            if stop_at_layer is not None and li == stop_at_layer:
                return trace
        trace.logits = self.unembed(self.norm_out(x))
        return trace


def _position_weights(positions, b: int, t: int, dtype) -> torch.Tensor:
    if positions is None:
        return torch.ones(b, t, 1, dtype=dtype)
    if isinstance(positions, torch.Tensor) and positions.dtype == torch.bool:
        return positions.to(dtype)[..., None]
    w = torch.zeros(b, t, 1, dtype=dtype)
    w[:, list(positions)] = 1.0
    return w


def next_token_loss(logits: torch.Tensor, tokens: torch.Tensor, pad_id: int = 0) -> torch.Tensor:
    """Mean cross-entropy of next-token prediction over non-PAD targets."""
    targets = tokens[:, 1:]
    pred = logits[:, :-1]
    keep = targets != pad_id
    return F.cross_entropy(pred[keep], targets[keep])


def per_token_log_probs(logits: torch.Tensor) -> torch.Tensor:
    return torch.log_softmax(logits.double(), dim=-1)
