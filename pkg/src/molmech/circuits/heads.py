"""Per-head syntax metrics: pointer mass, event specificity and ablation validity.

Sequence position ``p`` of the model input holds SMILES token ``p - 1``
(position 0 is BOS).  A grammar event with closer token ``c`` and opener
token ``o`` is scored at query position ``c + 1`` for pointer mass, and at
position ``c`` (the position whose logits predict the closer) for margins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from molmech.model.sample import decode_samples, sample
from molmech.model.state import ModelState
from molmech.model.train import pad_batch
from molmech.model.transformer import AblateHead
from molmech.smiles.graph import GrammarEvent, parse, try_parse

KINDS = ("ring", "branch")


class NoEvents(ValueError):
    pass


@dataclass
class HeadMetricGrid:
    metric: str
    matrix: np.ndarray  # (n_layers, n_heads)
    event_kind: str
    n_events: int

    def rows(self) -> list[dict]:
        return [
            {"metric": self.metric, "event_kind": self.event_kind, "layer": l, "head": h,
             "value": float(self.matrix[l, h]), "n_events": self.n_events}
            for l in range(self.matrix.shape[0]) for h in range(self.matrix.shape[1])
        ]


@dataclass
class _Parsed:
    smiles: str
    ids: list[int]
    token_kinds: list[str]
    events: list[GrammarEvent]


def _prepare(state: ModelState, smiles: Sequence[str]) -> list[_Parsed]:
    out = []
    for s in smiles:
        g = parse(s)
        ids = state.vocab.encode(s)
        if len(ids) > state.config.context_len:
            continue
        out.append(_Parsed(s, ids, [t.kind for t in g.tokens], list(g.events)))
    return out


@torch.no_grad()
def pointer_mass(state: ModelState, smiles: Sequence[str], event_kind: str, batch_size: int = 64) -> HeadMetricGrid:
    """Mean attention from each closer to its opener, per head."""
    if event_kind not in KINDS:
        raise ValueError(f"event kind must be one of {KINDS}")
    cfg = state.config
    total = np.zeros((cfg.n_layers, cfg.n_heads))
    n = 0
    mols = _prepare(state, smiles)
    for i in range(0, len(mols), batch_size):
        chunk = mols[i:i + batch_size]
        x = pad_batch([m.ids for m in chunk], state.vocab.pad_id)
        att = torch.stack(state.model(x, capture_attention=True).attention, dim=1).double()  # (b, L, H, T, T)
        for j, m in enumerate(chunk):
            for e in m.events:
                if e.kind != event_kind:
                    continue
                total += att[j, :, :, e.close_pos + 1, e.open_pos + 1].numpy()
                n += 1
    if n == 0:
        raise NoEvents(f"no {event_kind} events in corpus")
    return HeadMetricGrid("pointer_mass", total / n, event_kind, n)


@dataclass
class SpecificityResult:
    layer: int
    head: int
    event_kind: str
    delta_margin: float  # pooled: mean event delta minus mean control delta
    delta_margin_per_molecule: float  # mean over molecules of the same contrast
    event_delta: float
    control_delta: float
    n_events: int
    n_controls: int
    event_deltas: list[float] = field(default_factory=list, repr=False)
    control_deltas: list[float] = field(default_factory=list, repr=False)
    control_sites: list[tuple[int, int]] = field(default_factory=list, repr=False)  # (molecule, position)


def competitor_ids(state: ModelState, event_kind: str) -> list[int]:
    """Candidate closer tokens: every ring label for rings, every non-special token for branches."""
    vocab = state.vocab
    specials = {vocab.pad_id, vocab.bos_id, vocab.eos_id}
    if event_kind == "ring":
        return [i for i, t in enumerate(vocab.tokens) if i not in specials and (t.isdigit() or t.startswith("%"))]
    return [i for i in range(len(vocab)) if i not in specials]


def _margins(logits: np.ndarray, target: int, competitors: np.ndarray) -> float:
    comp = competitors[competitors != target]
    return float(logits[target] - logits[comp].max())


def _sites(mols: list[_Parsed], event_kind: str, seed: int):
    """Event sites (molecule, predicting position, closer id) and matched control sites."""
    events, pool = [], []
    atom_like = {"atom", "bracket-atom"}
    for mi, m in enumerate(mols):
        closers = set()
        for e in m.events:
            if e.kind == event_kind:
                events.append((mi, e.close_pos, m.ids[e.close_pos + 1]))
            closers.add(e.close_pos)
        n_tok = len(m.token_kinds)
        for t in range(n_tok + 1):  # t == n_tok predicts EOS
            if t in closers:
                continue
            if t < n_tok and m.token_kinds[t] in atom_like:
                continue
            pool.append((mi, t, m.ids[t + 1]))
    rng = np.random.Generator(np.random.PCG64(seed))
    k = min(len(events), len(pool))
    pick = sorted(rng.choice(len(pool), size=k, replace=False).tolist()) if k else []
    return events, [pool[i] for i in pick]


@torch.no_grad()
def event_specificity(state: ModelState, layer: int, head: int, smiles: Sequence[str], event_kind: str,
                      seed: int = 0, batch_size: int = 64) -> SpecificityResult:
    """Margin drop under ablation of (layer, head) at events, relative to control positions.

    The margin is the correct next-token logit minus the best competitor
    logit.  Controls are positions whose next token is neither an event
    closer nor an atom, drawn without replacement to match the event count.
    """
    mols = _prepare(state, smiles)
    events, controls = _sites(mols, event_kind, seed)
    if not events:
        raise NoEvents(f"no {event_kind} events in corpus")
    comp = np.asarray(competitor_ids(state, event_kind))
    need: dict[int, list] = {}
    for tag, sites in (("e", events), ("c", controls)):
        for mi, pos, tgt in sites:
            need.setdefault(mi, []).append((tag, pos, tgt))
    deltas = {"e": [], "c": []}
    per_mol = []
    order = sorted(need)
    for i in range(0, len(order), batch_size):
        chunk = order[i:i + batch_size]
        x = pad_batch([mols[mi].ids for mi in chunk], state.vocab.pad_id)
        clean = state.model(x).logits.double().numpy()
        abl = state.model(x, [AblateHead(layer, head)]).logits.double().numpy()
        for j, mi in enumerate(chunk):
            mol_d = {"e": [], "c": []}
            for tag, pos, tgt in need[mi]:
                d = _margins(clean[j, pos], tgt, comp) - _margins(abl[j, pos], tgt, comp)
                deltas[tag].append(d)
                mol_d[tag].append(d)
            if mol_d["e"] and mol_d["c"]:
                per_mol.append(np.mean(mol_d["e"]) - np.mean(mol_d["c"]))
    ev = float(np.mean(deltas["e"]))
    ct = float(np.mean(deltas["c"])) if deltas["c"] else 0.0
    return SpecificityResult(
        layer, head, event_kind, ev - ct, float(np.mean(per_mol)) if per_mol else float("nan"), ev, ct,
        len(deltas["e"]), len(deltas["c"]), deltas["e"], deltas["c"], [(mi, pos) for mi, pos, _ in controls],
    )


def ablation_validity(state: ModelState, head: tuple[int, int] | None, n_samples: int, seed: int,
                      temperature: float = 1.0) -> float:
    """Fraction of sampled SMILES that parse, with ``head`` = (layer, head) ablated (or none)."""
    ivs = [] if head is None else [AblateHead(*head)]
    texts = decode_samples(state, sample(state, n_samples, seed, temperature, interventions=ivs))
    if not texts:
        return float("nan")
    return sum(bool(t) and try_parse(t) is not None for t in texts) / len(texts)
