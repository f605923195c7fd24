"""ReLU sparse autoencoder with decoder-bias recentering and unit-norm decoder columns."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from molmech.model.checkpoint import read_container, write_container


@dataclass
class SAEConfig:
    d_in: int = 64
    expansion: int = 8
    l1: float = 1e-3  # sparsity weight (lambda)
    lr: float = 1e-3
    min_lr_ratio: float = 0.1
    warmup: int = 100
    steps: int = 3000
    batch_size: int = 256
    ghost_coeff: float = 0.1
    dead_window: int = 1000
    seed: int = 0
    log_every: int = 50

    def __post_init__(self) -> None:
        if self.expansion < 2:
            raise ValueError("expansion must be >= 2 so the dictionary is overcomplete")
        if self.l1 < 0 or self.ghost_coeff < 0:
            raise ValueError("l1 and ghost_coeff must be non-negative")
        if self.dead_window < 1:
            raise ValueError("dead_window must be >= 1")

    @property
    def m(self) -> int:
        return self.expansion * self.d_in

    def to_dict(self) -> dict:
        return asdict(self)


class SparseAutoencoder(nn.Module):
    """``z = ReLU(W_e (x - b_d) + b_e)``, ``x_hat = W_d z + b_d``.

    ``W_e`` is (m, n) and ``W_d`` is (n, m); decoder columns ``W_d[:, k]`` are
    the dictionary directions.
    """

    def __init__(self, d_in: int, m: int, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        w_d = torch.randn(d_in, m, generator=gen)
        w_d /= w_d.norm(dim=0, keepdim=True)
        self.W_d = nn.Parameter(w_d)
        self.W_e = nn.Parameter(w_d.T.contiguous())
        self.b_e = nn.Parameter(torch.zeros(m))
        self.b_d = nn.Parameter(torch.zeros(d_in))

    @property
    def d_in(self) -> int:
        return self.W_d.shape[0]

    @property
    def m(self) -> int:
        return self.W_d.shape[1]

    def preactivation(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.b_d) @ self.W_e.T + self.b_e

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.preactivation(x))

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return z @ self.W_d.T + self.b_d

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))

    @torch.no_grad()
    def normalize_decoder(self) -> None:
        self.W_d /= self.W_d.norm(dim=0, keepdim=True).clamp_min(1e-12)

    @torch.no_grad()
    def remove_radial_grad(self) -> None:
        """Drop the gradient component parallel to each (unit) decoder column."""
        if self.W_d.grad is None:
            return
        g = self.W_d.grad
        g -= (g * self.W_d).sum(dim=0, keepdim=True) * self.W_d


def sae_losses(sae: SparseAutoencoder, x: torch.Tensor, l1: float, ghost_coeff: float = 0.0,
               dead: torch.Tensor | None = None) -> dict[str, torch.Tensor]:
    """Loss terms on a batch.

    ``mse`` is the elementwise mean squared error, ``l1`` the batch mean of
    ``||z||_1``.  With dead latents and ``ghost_coeff > 0`` a ghost term is
    added: dead latents pass their preactivations through ``exp``, decode
    through their own columns, are rescaled to half the residual norm and are
    regressed onto the detached residual ``x - x_hat``.
    """
    pre = sae.preactivation(x)
    z = torch.relu(pre)
    x_hat = sae.decode(z)
    mse = ((x_hat - x) ** 2).mean()
    sparsity = z.abs().sum(dim=-1).mean()
    total = mse + l1 * sparsity
    out = {"mse": mse, "l1": sparsity, "z": z}
    if dead is not None and ghost_coeff > 0 and bool(dead.any()):
        residual = (x - x_hat).detach()
        ghost = torch.exp(pre[:, dead]) @ sae.W_d[:, dead].T
        scale = residual.norm(dim=-1, keepdim=True) / (2 * ghost.norm(dim=-1, keepdim=True).detach().clamp_min(1e-12))
        ghost_mse = ((ghost * scale - residual) ** 2).mean()
        out["ghost"] = ghost_mse
        total = total + ghost_coeff * ghost_mse
    out["loss"] = total
    return out


@dataclass
class SAEState:
    config: SAEConfig
    sae: SparseAutoencoder
    optimizer: dict | None = None
    step: int = 0
    last_fired: np.ndarray | None = None  # step at which each latent last fired
    layer: int = -1
    extra: dict = field(default_factory=dict)

    def dead_mask(self) -> np.ndarray:
        if self.last_fired is None:
            return np.zeros(self.sae.m, dtype=bool)
        return (self.step - self.last_fired) >= self.config.dead_window


def save_sae(state: SAEState, path: str | Path) -> str:
    tensors = {f"param.{k}": v.detach().cpu().numpy() for k, v in state.sae.state_dict().items()}
    if state.last_fired is not None:
        tensors["last_fired"] = state.last_fired.astype(np.int64)
    meta = {"config": state.config.to_dict(), "step": state.step, "layer": state.layer, "extra": state.extra}
    return write_container(path, "sae", meta, tensors)


def load_sae(path: str | Path) -> SAEState:
    meta, tensors = read_container(path, kind="sae")
    cfg = SAEConfig(**meta["config"])
    sae = SparseAutoencoder(cfg.d_in, cfg.m)
    sae.load_state_dict({k[len("param."):]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("param.")})
    return SAEState(cfg, sae, None, meta["step"], tensors.get("last_fired"), meta["layer"], meta.get("extra", {}))
