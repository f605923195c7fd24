"""Top-k SAE latent steering of sampling.

At the hook layer every residual is encoded, shifted by ``alpha * z_ref``,
decoded, and the forward pass continues.  Deltas are taken against the same
encode/decode route without a shift, so that reconstruction error does not
count as a steering effect.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from molmech.circuits.stats import bootstrap_ci
from molmech.model.sample import decode_samples, sample
from molmech.model.state import ModelState
from molmech.model.transformer import ReplaceResidual
from molmech.sae.model import SparseAutoencoder
from molmech.smiles.fingerprint import Fingerprint, mean_pairwise_tanimoto, morgan_fingerprint, tanimoto
from molmech.smiles.graph import parse, try_parse

DEFAULT_K = 5
SWEEP_ALPHAS = (0.2, 0.4, 0.6, 0.8)
MIN_VALIDITY = 0.5


class AllZeroLatents(UserWarning):
    pass


@dataclass(frozen=True)
class SteeringSpec:
    target: str
    layer: int
    alpha: float
    k: int = DEFAULT_K
    n_samples: int = 100
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")

    def check(self, state: ModelState) -> None:
        if not 0 <= self.layer < state.config.n_layers:
            raise ValueError(f"layer {self.layer} outside 0..{state.config.n_layers - 1}")


@torch.no_grad()
def extract_steering_vector(sae: SparseAutoencoder, state: ModelState, spec: SteeringSpec) -> torch.Tensor:
    """Max-pool the target's latents over its SMILES tokens and keep the k largest."""
    spec.check(state)
    parse(spec.target)
    ids = state.vocab.encode(spec.target)
    if len(ids) > state.config.context_len:
        raise ValueError(f"target has {len(ids)} tokens, context is {state.config.context_len}")
    x = torch.tensor([ids])
    resid = state.model(x, capture_residuals=True, stop_at_layer=spec.layer).residuals[spec.layer][0]
    z = sae.encode(resid[1:-1]).max(dim=0).values
    if not torch.any(z > 0):
        warnings.warn(f"no latent fires on {spec.target!r}", AllZeroLatents, stacklevel=2)
        return torch.zeros_like(z)
    k = min(spec.k, z.numel())
    keep = torch.topk(z, k).indices
    out = torch.zeros_like(z)
    out[keep] = z[keep]
    return out


def steer_transform(sae: SparseAutoencoder, z_ref: torch.Tensor, alpha: float) -> Callable[[torch.Tensor], torch.Tensor]:
    shift = alpha * z_ref

    def fn(x: torch.Tensor) -> torch.Tensor:
        return sae.decode(sae.encode(x) + shift).to(x.dtype)
    return fn


def passthrough_transform(sae: SparseAutoencoder) -> Callable[[torch.Tensor], torch.Tensor]:
    return lambda x: sae.decode(sae.encode(x)).to(x.dtype)


def latent_pattern_hash(z_ref: torch.Tensor) -> str:
    """Content hash of the (index, value) pairs of the nonzero latents."""
    idx = torch.nonzero(z_ref).flatten()
    h = hashlib.sha256()
    h.update(idx.numpy().astype("<i8").tobytes())
    h.update(z_ref[idx].numpy().astype("<f4").tobytes())
    return h.hexdigest()


@dataclass
class SampleSet:
    smiles: list[str]
    valid: list[bool]
    fingerprints: list[Fingerprint | None]

    @classmethod
    def from_smiles(cls, smiles: Sequence[str]) -> "SampleSet":
        graphs = [try_parse(s) if s else None for s in smiles]
        return cls(list(smiles), [g is not None for g in graphs],
                   [morgan_fingerprint(g) if g is not None else None for g in graphs])

    @property
    def validity(self) -> float | None:
        return float(np.mean(self.valid)) if self.smiles else None

    @property
    def valid_fps(self) -> list[Fingerprint]:
        return [f for f in self.fingerprints if f is not None]


@dataclass
class SimilarityStats:
    n_samples: int
    n_valid: int
    validity: float | None
    mean_pairwise_tanimoto: float | None
    mean_target_tanimoto: float | None
    max_target_tanimoto: float | None


def similarity_stats(samples: SampleSet, target_fp: Fingerprint | None) -> SimilarityStats:
    fps = samples.valid_fps
    to_target = [tanimoto(f, target_fp) for f in fps] if target_fp is not None else []
    return SimilarityStats(len(samples.smiles), len(fps), samples.validity, mean_pairwise_tanimoto(fps),
                           float(np.mean(to_target)) if to_target else None,
                           float(np.max(to_target)) if to_target else None)


@dataclass
class SteeringReport:
    spec: SteeringSpec
    steered: SimilarityStats
    passthrough: SimilarityStats
    clean: SimilarityStats
    latent_hash: str
    records: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def deltas(self) -> dict[str, float | None]:
        def d(a, b):
            return None if a is None or b is None else a - b
        s, p = self.steered, self.passthrough
        return {"delta_validity": d(s.validity, p.validity),
                "delta_pairwise_tanimoto": d(s.mean_pairwise_tanimoto, p.mean_pairwise_tanimoto),
                "delta_target_tanimoto": d(s.mean_target_tanimoto, p.mean_target_tanimoto)}

    def row(self) -> dict:
        out = {"target": self.spec.target, "layer": self.spec.layer, "alpha": self.spec.alpha, "k": self.spec.k}
        for prefix, st in (("", self.steered), ("passthrough_", self.passthrough), ("clean_", self.clean)):
            for key, v in asdict(st).items():
                out[prefix + key] = v
        out.update(self.deltas())
        out["flags"] = ";".join(self.flags)
        out["latent_hash"] = self.latent_hash
        return out


def _draw(state: ModelState, n: int, seed: int, temperature: float, transform=None, layer: int = 0) -> list[str]:
    ivs = [ReplaceResidual(layer, transform, "steer")] if transform is not None else []
    return decode_samples(state, sample(state, n, seed, temperature, interventions=ivs))


def steered_smiles(state: ModelState, sae: SparseAutoencoder, spec: SteeringSpec, z_ref: torch.Tensor) -> list[str]:
    return _draw(state, spec.n_samples, spec.seed, spec.temperature, steer_transform(sae, z_ref, spec.alpha), spec.layer)


def passthrough_smiles(state: ModelState, sae: SparseAutoencoder, layer: int, n: int, seed: int,
                       temperature: float = 1.0) -> list[str]:
    return _draw(state, n, seed, temperature, passthrough_transform(sae), layer)


def steered_sample(state: ModelState, sae: SparseAutoencoder, spec: SteeringSpec, z_ref: torch.Tensor,
                   passthrough: SampleSet | None = None, clean: SampleSet | None = None) -> tuple[list[str], SteeringReport]:
    """Sample under steering and compare with unsteered batches drawn with the same seed protocol."""
    spec.check(state)
    if sae.d_in != state.config.d_model:
        raise ValueError(f"SAE width {sae.d_in} != model width {state.config.d_model}")
    smiles = steered_smiles(state, sae, spec, z_ref)
    steered = SampleSet.from_smiles(smiles)
    if passthrough is None:
        passthrough = SampleSet.from_smiles(passthrough_smiles(state, sae, spec.layer, spec.n_samples, spec.seed,
                                                               spec.temperature))
    if clean is None:
        clean = SampleSet.from_smiles(_draw(state, spec.n_samples, spec.seed, spec.temperature))
    target_fp = morgan_fingerprint(parse(spec.target))
    records = [{"index": i, "smiles": s, "valid": v,
                "target_tanimoto": tanimoto(f, target_fp) if f is not None else None}
               for i, (s, v, f) in enumerate(zip(steered.smiles, steered.valid, steered.fingerprints))]
    report = SteeringReport(spec, similarity_stats(steered, target_fp), similarity_stats(passthrough, target_fp),
                            similarity_stats(clean, target_fp), latent_pattern_hash(z_ref), records)
    if report.steered.validity is not None and report.steered.validity < MIN_VALIDITY:
        report.flags.append("validity<0.5")
    return smiles, report


def steering_sweep(state: ModelState, saes: dict[int, SparseAutoencoder], targets: Sequence[str],
                   layers: Sequence[int], alphas: Sequence[float] = SWEEP_ALPHAS, n: int = 100, seed: int = 0,
                   k: int = DEFAULT_K, n_baseline: int | None = None, temperature: float = 1.0) -> list[SteeringReport]:
    """Grid of reports over targets x layers x alphas.

    The unsteered batches (clean, and passthrough per layer) are drawn once,
    with ``n_baseline`` samples (default ``2 n``), and shared by every cell.
    """
    if not targets:
        return []
    n_baseline = n_baseline or 2 * n
    clean = SampleSet.from_smiles(_draw(state, n_baseline, seed, temperature))
    reports = []
    for layer in layers:
        sae = saes[layer]
        passthrough = SampleSet.from_smiles(passthrough_smiles(state, sae, layer, n_baseline, seed, temperature))
        for target in targets:
            z_ref = None
            for alpha in alphas:
                spec = SteeringSpec(target, layer, float(alpha), k, n, seed, temperature)
                if z_ref is None:
                    z_ref = extract_steering_vector(sae, state, spec)
                _, rep = steered_sample(state, sae, spec, z_ref, passthrough, clean)
                reports.append(rep)
    for flag in validity_trend_flags(reports):
        for rep in reports:
            if (rep.spec.target, rep.spec.layer) == flag:
                rep.flags.append("validity-rises-with-alpha")
    return reports


def validity_trend_flags(reports: Sequence[SteeringReport], n_boot: int = 1000, seed: int = 0) -> list[tuple[str, int]]:
    """(target, layer) cells where validity at the largest |alpha| is credibly above the smallest.

    Credibly means the 95% bootstrap intervals of the two validity rates do not overlap.
    """
    cells: dict[tuple[str, int], list[SteeringReport]] = {}
    for r in reports:
        cells.setdefault((r.spec.target, r.spec.layer), []).append(r)
    out = []
    for key, reps in cells.items():
        if len(reps) < 2:
            continue
        reps = sorted(reps, key=lambda r: abs(r.spec.alpha))
        lo = np.array([rec["valid"] for rec in reps[0].records], dtype=float)
        hi = np.array([rec["valid"] for rec in reps[-1].records], dtype=float)
        if lo.size == 0 or hi.size == 0:
            continue
        ci_lo = bootstrap_ci(lo, n_boot=n_boot, seed=seed)
        ci_hi = bootstrap_ci(hi, n_boot=n_boot, seed=seed + 1)
        if ci_hi[0] > ci_lo[1]:
            out.append(key)
    return out
