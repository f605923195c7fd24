"""SAE training loop and the sparsity-weight sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from molmech.model.train import NonFiniteLoss, TrainConfig, lr_at
from molmech.sae.model import SAEConfig, SAEState, SparseAutoencoder, sae_losses


def train_sae(acts: torch.Tensor | np.ndarray, cfg: SAEConfig, log_path: str | Path | None = None,
              layer: int = -1) -> SAEState:
    """Train on rows of ``acts`` (n_rows, d_in), drawing batches with a seeded stream.

    The decoder bias starts at the data mean.  After every optimizer step the
    decoder columns are renormalized; before it the radial part of their
    gradient is removed.
    """
    x_all = torch.as_tensor(np.asarray(acts), dtype=torch.float32)
    if x_all.dim() != 2 or x_all.shape[1] != cfg.d_in:
        raise ValueError(f"activations must be (rows, {cfg.d_in}), got {tuple(x_all.shape)}")
    torch.manual_seed(cfg.seed)
    sae = SparseAutoencoder(cfg.d_in, cfg.m, seed=cfg.seed)
    with torch.no_grad():
        sae.b_d.copy_(x_all.mean(dim=0))
    opt = torch.optim.AdamW(sae.parameters(), lr=cfg.lr, betas=(0.9, 0.999), weight_decay=0.0)
    sched = TrainConfig(lr=cfg.lr, min_lr_ratio=cfg.min_lr_ratio, warmup=cfg.warmup, steps=cfg.steps)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    state = SAEState(cfg, sae, layer=layer, last_fired=np.zeros(cfg.m, dtype=np.int64))
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if log is not None:
            log.write("step\tloss\tmse\tl0\tdead\n")
        while state.step < cfg.steps:
            idx = rng.integers(0, x_all.shape[0], size=cfg.batch_size)
            x = x_all[idx]
            dead = torch.from_numpy(state.dead_mask())
            terms = sae_losses(sae, x, cfg.l1, cfg.ghost_coeff, dead)
            loss = terms["loss"]
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"SAE loss became {loss.item()} at step {state.step}")
            for g in opt.param_groups:
                g["lr"] = lr_at(state.step, sched)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            sae.remove_radial_grad()
            opt.step()
            sae.normalize_decoder()
            state.step += 1
            fired = (terms["z"] > 0).any(dim=0).numpy()
            state.last_fired[fired] = state.step
            if log is not None and (state.step % cfg.log_every == 0 or state.step == cfg.steps):
                l0 = (terms["z"] > 0).float().sum(dim=-1).mean().item()
                log.write(f"{state.step}\t{loss.item():.6g}\t{terms['mse'].item():.6g}\t{l0:.3f}"
                          f"\t{int(state.dead_mask().sum())}\n")
    finally:
        if log is not None:
            log.close()
    state.optimizer = opt.state_dict()
    return state


@torch.no_grad()
def mean_l0(sae: SparseAutoencoder, acts: torch.Tensor | np.ndarray, batch: int = 4096) -> float:
    x = torch.as_tensor(np.asarray(acts), dtype=torch.float32)
    total = 0.0
    for i in range(0, x.shape[0], batch):
        total += (sae.encode(x[i:i + batch]) > 0).sum().item()
    return total / max(1, x.shape[0])


def dead_fraction(state: SAEState, acts: torch.Tensor | np.ndarray, batch: int = 4096) -> float:
    """Fraction of latents that never fire on ``acts``."""
    x = torch.as_tensor(np.asarray(acts), dtype=torch.float32)
    fired = torch.zeros(state.sae.m, dtype=torch.bool)
    with torch.no_grad():
        for i in range(0, x.shape[0], batch):
            fired |= (state.sae.encode(x[i:i + batch]) > 0).any(dim=0)
    return 1.0 - fired.float().mean().item()


@dataclass
class SweepPoint:
    l1: float
    l0: float
    mse: float


def sweep_l1(acts, cfg: SAEConfig, eval_acts=None, target: tuple[float, float] = (10.0, 50.0),
             lo: float = 1e-5, hi: float = 1.0, max_evals: int = 10) -> tuple[SAEState | None, list[SweepPoint]]:
    """Bisect the sparsity weight on a log scale until mean L0 lands in ``target``.

    Returns the first state inside the target band (None if the budget runs
    out) and every evaluated point.
    """
    eval_acts = acts if eval_acts is None else eval_acts
    x_eval = torch.as_tensor(np.asarray(eval_acts), dtype=torch.float32)
    mid_target = math.sqrt(target[0] * target[1])
    points: list[SweepPoint] = []
    a, b = math.log(lo), math.log(hi)
    for _ in range(max_evals):
        lam = math.exp(0.5 * (a + b))
        st = train_sae(acts, replace(cfg, l1=lam))
        l0 = mean_l0(st.sae, x_eval)
        with torch.no_grad():
            mse = ((st.sae(x_eval) - x_eval) ** 2).mean().item()
        points.append(SweepPoint(lam, l0, mse))
        st.extra["sweep"] = [vars(p) for p in points]
        if target[0] <= l0 <= target[1]:
            return st, points
        if l0 > mid_target:
            a = math.log(lam)
        else:
            b = math.log(lam)
    return None, points
