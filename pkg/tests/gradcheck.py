"""Central finite-difference gradient oracle (float64)."""

from __future__ import annotations

import numpy as np
import torch


def fd_check(params: dict[str, torch.Tensor], loss_fn, n_entries: int = 6, h: float = 1e-6, seed: int = 0):
    """Worst relative error between autograd and central differences over sampled entries.

    ``loss_fn()`` must recompute the loss from the current parameter values.
    Error per tensor is ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||, 1e-12).
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            picks = rng.choice(flat.numel(), size=min(n_entries, flat.numel()), replace=False)
            auto = p.grad.view(-1)[picks].clone()
            numeric = torch.empty_like(auto)
            for j, k in enumerate(picks):
                orig = flat[k].item()
                flat[k] = orig + h
                up = loss_fn().item()
                flat[k] = orig - h
                down = loss_fn().item()
                flat[k] = orig
                numeric[j] = (up - down) / (2 * h)
            denom = max(auto.norm().item(), numeric.norm().item(), 1e-12)
            worst[name] = (auto - numeric).norm().item() / denom
    return worst
