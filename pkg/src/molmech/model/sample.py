"""Autoregressive sampling with per-sample seeded streams."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from molmech.hashing import derive_seed
from molmech.model.state import ModelState
from molmech.model.transformer import Intervention


@torch.no_grad()
def sample(
    state: ModelState,
    n: int,
    seed: int,
    temperature: float = 1.0,
    top_k: int | None = None,
    max_len: int | None = None,
    interventions: Sequence[Intervention] = (),
    prefix: Sequence[int] | None = None,
    batch_size: int = 256,
) -> list[list[int]]:
    """Draw ``n`` id sequences (BOS included, EOS excluded).

    Sample ``i`` uses its own uniform stream seeded by ``derive_seed(seed, i)``,
    so a sample does not depend on the random draws of the others.  Temperature 0
    is greedy.
    """
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    cfg, vocab = state.config, state.vocab
    max_len = min(max_len or cfg.context_len, cfg.context_len)
    start = list(prefix) if prefix else [vocab.bos_id]
    out: list[list[int]] = []
    for b0 in range(0, n, batch_size):
        ids = list(range(b0, min(n, b0 + batch_size)))
        streams = [np.random.Generator(np.random.Philox(derive_seed(seed, i))) for i in ids]
        seqs = torch.tensor([start] * len(ids), dtype=torch.long)
        done = np.zeros(len(ids), dtype=bool)
        while seqs.shape[1] < max_len and not done.all():
            logits = state.model(seqs, interventions, pad_id=None).logits[:, -1].double()
            logits[:, vocab.pad_id] = float("-inf")
            logits[:, vocab.bos_id] = float("-inf")
            nxt = _choose(logits, temperature, top_k, streams)
            nxt[done] = vocab.pad_id
            done |= nxt == vocab.eos_id
            seqs = torch.cat([seqs, torch.as_tensor(nxt)[:, None]], dim=1)
        for row in seqs.tolist():
            seq = []
            for t in row:
                if t in (vocab.eos_id, vocab.pad_id):
                    break
                seq.append(t)
            out.append(seq)
    return out


def _choose(logits: torch.Tensor, temperature: float, top_k: int | None, streams) -> np.ndarray:
    u = np.array([s.random() for s in streams])
    if temperature == 0:
        return logits.argmax(dim=-1).numpy()
    z = logits / temperature
    if top_k is not None and top_k < z.shape[1]:
        kth = torch.topk(z, top_k, dim=-1).values[:, -1:]
        z = z.masked_fill(z < kth, float("-inf"))
    probs = torch.softmax(z, dim=-1).numpy()
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = np.inf  # guard against rounding below u
    return (cdf > u[:, None]).argmax(axis=1)


def decode_samples(state: ModelState, seqs: Sequence[Sequence[int]]) -> list[str]:
    return [state.vocab.decode(s) for s in seqs]
