"""Reconstruction fidelity: loss and divergence under residual replacement, and sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from molmech.model.sample import decode_samples, sample
from molmech.model.state import ModelState
from molmech.model.train import pad_batch
from molmech.model.transformer import ReplaceResidual
from molmech.sae.model import SparseAutoencoder
from molmech.smiles.fingerprint import mean_pairwise_tanimoto, morgan_fingerprint
from molmech.smiles.graph import try_parse
from molmech.smiles.scaffold import murcko_scaffold
from molmech.smiles.canon import canonicalize


class DimensionMismatch(ValueError):
    pass


def reconstruct_transform(sae: SparseAutoencoder) -> Callable[[torch.Tensor], torch.Tensor]:
    return lambda x: sae.decode(sae.encode(x)).to(x.dtype)


def decoder_bias_transform(sae: SparseAutoencoder) -> Callable[[torch.Tensor], torch.Tensor]:
    """Replacement with every latent forced to zero, i.e. ``x_hat = b_d``."""
    return lambda x: sae.b_d.to(x.dtype).expand_as(x)


@torch.no_grad()
def eval_replacement(state: ModelState, layer: int, transform: Callable[[torch.Tensor], torch.Tensor],
                     sequences: Sequence[Sequence[int]], batch_size: int = 128) -> dict[str, float]:
    """Next-token CE clean vs replaced, and token-mean KL(clean || replaced), over non-PAD targets."""
    model, pad = state.model, state.vocab.pad_id
    ce_clean = ce_repl = kl = 0.0
    n = 0
    for i in range(0, len(sequences), batch_size):
        x = pad_batch(sequences[i:i + batch_size], pad)
        keep = x[:, 1:] != pad
        tgt = x[:, 1:][keep]
        lp_c = torch.log_softmax(model(x).logits[:, :-1][keep].double(), dim=-1)
        lp_r = torch.log_softmax(model(x, [ReplaceResidual(layer, transform)]).logits[:, :-1][keep].double(), dim=-1)
        ce_clean -= lp_c.gather(1, tgt[:, None]).sum().item()
        ce_repl -= lp_r.gather(1, tgt[:, None]).sum().item()
        kl += (lp_c.exp() * (lp_c - lp_r)).sum().item()
        n += int(keep.sum())
    n = max(n, 1)
    return {"ce_clean": ce_clean / n, "ce_replaced": ce_repl / n, "delta_ce": (ce_repl - ce_clean) / n, "kl": kl / n}


@torch.no_grad()
def eval_reconstruction(state: ModelState, sae: SparseAutoencoder, layer: int,
                        sequences: Sequence[Sequence[int]], batch_size: int = 128) -> dict[str, float]:
    """delta_ce, kl, mean L0 and fraction of variance unexplained at ``layer``."""
    if sae.d_in != state.config.d_model:
        raise DimensionMismatch(f"SAE width {sae.d_in} != model width {state.config.d_model}")
    out = eval_replacement(state, layer, reconstruct_transform(sae), sequences, batch_size)
    l0 = sq_err = count = 0.0
    xs = []
    for i in range(0, len(sequences), batch_size):
        chunk = sequences[i:i + batch_size]
        x = pad_batch(chunk, state.vocab.pad_id)
        resid = state.model(x, capture_residuals=True, stop_at_layer=layer).residuals[layer]
        rows = resid[x != state.vocab.pad_id]
        z = sae.encode(rows)
        l0 += (z > 0).sum().item()
        sq_err += ((sae.decode(z) - rows) ** 2).sum().item()
        count += rows.shape[0]
        xs.append(rows.double())
    allx = torch.cat(xs)
    total_var = ((allx - allx.mean(dim=0)) ** 2).sum().item()
    out["l0"] = l0 / max(count, 1)
    out["frac_variance_unexplained"] = sq_err / max(total_var, 1e-30)
    return out


@dataclass
class GenerationReport:
    n_samples: int
    validity: float | None
    unique_scaffolds: int
    mean_pairwise_tanimoto: float | None
    n_valid: int
    flag: str = ""


def generation_metrics(smiles: Sequence[str]) -> GenerationReport:
    if not smiles:
        return GenerationReport(0, None, 0, None, 0, "validity undefined: no samples")
    graphs = [g for g in (try_parse(s) if s else None for s in smiles) if g is not None]
    scaffolds = {canonicalize(murcko_scaffold(g)) for g in graphs}
    fps = [morgan_fingerprint(g) for g in graphs]
    return GenerationReport(len(smiles), len(graphs) / len(smiles), len(scaffolds), mean_pairwise_tanimoto(fps),
                            len(graphs))


def generation_with_reconstruction(state: ModelState, sae: SparseAutoencoder | None, layer: int, n_samples: int,
                                   seed: int, temperature: float = 1.0,
                                   transform: Callable | None = None) -> GenerationReport:
    """Sample with a persistent replacement at ``layer`` (SAE reconstruction unless ``transform`` is given)."""
    if n_samples == 0:
        return generation_metrics([])
    fn = transform if transform is not None else reconstruct_transform(sae)
    seqs = sample(state, n_samples, seed, temperature, interventions=[ReplaceResidual(layer, fn)])
    return generation_metrics(decode_samples(state, seqs))


def validity(smiles: Sequence[str]) -> float:
    return float(np.mean([bool(s) and try_parse(s) is not None for s in smiles])) if smiles else float("nan")
