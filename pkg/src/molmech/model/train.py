"""Causal-LM training loop: AdamW, linear warmup plus cosine decay, global-norm clipping."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from molmech.model.config import ModelConfig, Vocab
from molmech.model.state import ModelState, rng_from_json, rng_to_json
from molmech.model.transformer import next_token_loss


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 3e-3
    min_lr_ratio: float = 0.1
    warmup: int = 200
    steps: int = 4000
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    batch_size: int = 64
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 50

    def __post_init__(self) -> None:
        self.betas = tuple(self.betas)
        if self.steps < 0 or self.warmup < 0 or self.batch_size < 1:
            raise ValueError("steps, warmup must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Learning rate for optimizer step ``step`` (0-based)."""
    if cfg.warmup and step < cfg.warmup:
        return cfg.lr * (step + 1) / cfg.warmup
    span = max(1, cfg.steps - cfg.warmup)
    progress = min(1.0, (step - cfg.warmup) / span)
    floor = cfg.lr * cfg.min_lr_ratio
    return floor + 0.5 * (cfg.lr - floor) * (1 + math.cos(math.pi * progress))


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = 0, length: int | None = None) -> torch.Tensor:
    """Left-aligned id matrix padded on the right with ``pad_id``."""
    n = length or max(len(s) for s in seqs)
    out = torch.full((len(seqs), n), pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.as_tensor(s[:n], dtype=torch.long)
    return out


def encode_corpus(smiles: Sequence[str], vocab: Vocab, context_len: int) -> list[list[int]]:
    """Encode with BOS/EOS; molecules longer than the context are skipped."""
    out = []
    for s in smiles:
        ids = vocab.encode(s)
        if len(ids) <= context_len:
            out.append(ids)
    return out


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    decay = [p for n, p in model.named_parameters() if p.dim() >= 2]
    no_decay = [p for n, p in model.named_parameters() if p.dim() < 2]
    return torch.optim.AdamW(
        [{"params": decay, "weight_decay": cfg.weight_decay}, {"params": no_decay, "weight_decay": 0.0}],
        lr=cfg.lr, betas=cfg.betas, eps=cfg.eps,
    )


def train_lm(
    sequences: Sequence[Sequence[int]],
    model_cfg: ModelConfig,
    vocab: Vocab,
    cfg: TrainConfig,
    log_path: str | Path | None = None,
    state: ModelState | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> ModelState:
    """Train (or resume ``state``) until ``cfg.steps`` optimizer steps have been taken."""
    if not sequences:
        raise ValueError("empty training corpus")
    torch.manual_seed(cfg.seed)
    if state is None:
        state = ModelState.initialize(model_cfg, vocab)
    model = state.model
    model.train()
    opt = make_optimizer(model, cfg)
    if state.optimizer is not None:
        opt.load_state_dict(state.optimizer)
    rng = rng_from_json(state.rng_state) if state.rng_state else np.random.Generator(np.random.PCG64(cfg.seed))
    n = len(sequences)
    log = open(log_path, "a" if state.step else "w", encoding="utf-8") if log_path else None
    try:
        if log is not None and state.step == 0:
            log.write("step\tloss\tlr\tgrad_norm\n")
        while state.step < cfg.steps:
            idx = rng.integers(0, n, size=cfg.batch_size)
            batch = pad_batch([sequences[i] for i in idx], vocab.pad_id)
            lr = lr_at(state.step, cfg)
            for g in opt.param_groups:
                g["lr"] = lr
            loss = next_token_loss(model(batch).logits, batch, vocab.pad_id)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss.item()} at step {state.step} (lr {lr:.3g})")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            gnorm = torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm).item()
            opt.step()
            state.step += 1
            if log is not None and (state.step % cfg.log_every == 0 or state.step == 1 or state.step == cfg.steps):
                log.write(f"{state.step}\t{loss.item():.6f}\t{lr:.6g}\t{gnorm:.6f}\n")
            if progress is not None:
                progress(state.step, loss.item())
    finally:
        if log is not None:
            log.close()
    model.eval()
    state.optimizer = opt.state_dict()
    state.rng_state = rng_to_json(rng)
    return state


@torch.no_grad()
def evaluate_loss(state: ModelState, sequences: Sequence[Sequence[int]], batch_size: int = 256) -> float:
    """Token-weighted mean next-token cross-entropy."""
    model = state.model
    total, count = 0.0, 0
    for i in range(0, len(sequences), batch_size):
        batch = pad_batch(sequences[i:i + batch_size], state.vocab.pad_id)
        logits = model(batch).logits
        n_tok = int((batch[:, 1:] != state.vocab.pad_id).sum())
        total += next_token_loss(logits.double(), batch, state.vocab.pad_id).item() * n_tok
        count += n_tok
    return total / max(count, 1)
