from __future__ import annotations

import numpy as np
import pytest
import torch

from molmech.circuits.heads import (
    NoEvents,
    ablation_validity,
    competitor_ids,
    event_specificity,
    pointer_mass,
)
from molmech.circuits.stats import bootstrap_ci
from molmech.circuits.valence import (
    N_CLASSES,
    DegenerateLabels,
    SteeringDirection,
    ValenceProbe,
    decision_positions,
    evaluate_probe,
    extract_direction,
    fit_valence_probe,
    steer_valence,
    valence_dataset,
)
from molmech.model.config import ModelConfig, Vocab
from molmech.model.state import ModelState
from molmech.model.transformer import AblateHead
from molmech.smiles.graph import parse

RINGS = ["C1CCC1", "CC1CCC1", "C1CC1C", "C12CC1CC2", "CC1CC1"]


def _state(corpus, **kw):
    vocab = Vocab.from_corpus(corpus)
    cfg = ModelConfig(n_layers=2, n_heads=2, d_model=8, d_ff=16, context_len=24, vocab_size=len(vocab), **kw)
    return ModelState.initialize(cfg, vocab)


def copy_head_toy():
    """Layer-0 head 0 attends from atoms to ring label '1' and writes the logit of '1'."""
    st = _state(RINGS)
    v = st.vocab
    m = st.model
    with torch.no_grad():
        for p in m.parameters():
            p.zero_() if p.dim() > 1 else p.fill_(1.0)
        m.embed.weight[v.index["C"], 0] = 1.0
        m.embed.weight[v.index["1"], 1] = 1.0
        m.embed.weight[v.index["2"], 2] = 1.0
        m.embed.weight[v.bos_id, 3] = 1.0
        m.embed.weight[v.eos_id, 4] = 1.0
        attn = m.blocks[0].attn
        attn.wq.weight[1, 0] = 3.0  # slow rotary pair (1, 3) of head 0
        attn.wk.weight[1, 1] = 3.0
        attn.wv.weight[0, 1] = 1.0
        attn.wo.weight[5, 0] = 4.0
        m.unembed.weight[v.index["1"], 5] = 1.0
        m.unembed.weight[v.index["C"], 0] = 0.5
        m.unembed.weight[v.eos_id, 1] = 0.5
    return st


def test_pointer_mass_bounds_and_uniform_attention():
    st = _state(RINGS, seed=2)
    with torch.no_grad():
        for blk in st.model.blocks:
            blk.attn.wq.weight.zero_()
    grid = pointer_mass(st, RINGS, "ring")
    expected = np.mean([1.0 / (e.close_pos + 2) for s in RINGS for e in parse(s).events if e.kind == "ring"])
    assert grid.n_events == 6
    assert np.allclose(grid.matrix, expected, atol=1e-6)


def test_pointer_mass_equals_direct_attention_average():
    st = _state(RINGS + ["CC(C)C(C)C"], seed=4)
    grid = pointer_mass(st, RINGS + ["CC(C)C(C)C"], "branch")
    vals = []
    for s in RINGS + ["CC(C)C(C)C"]:
        ids = st.vocab.encode(s)
        att = st.model(torch.tensor([ids]), capture_attention=True).attention
        for e in parse(s).events:
            if e.kind == "branch":
                vals.append([[a[0, h, e.close_pos + 1, e.open_pos + 1].item() for h in range(2)] for a in att])
    assert grid.n_events == len(vals) == 2
    assert np.allclose(grid.matrix, np.mean(vals, axis=0), atol=1e-7)
    assert np.all((grid.matrix >= 0) & (grid.matrix <= 1))


def test_pointer_mass_arithmetic_and_no_events():
    st = _state(["CCO", "CC(C)C"])
    with pytest.raises(NoEvents):
        pointer_mass(st, ["CCO"], "ring")


class _ScriptedAttention:
    """Stands in for a model: head 0 of layer 0 puts ``mass[k]`` on the opener of event k."""

    def __init__(self, state, corpus, masses):
        self.state, self.masses = state, masses
        self.events = [(s, e) for s in corpus for e in parse(s).events if e.kind == "ring"]

    def __call__(self, x, capture_attention=False, **kw):
        b, t = x.shape
        att = torch.zeros(b, 2, 2, t, t)
        att[..., torch.arange(t), torch.arange(t)] = 1.0
        k = 0
        for j in range(b):
            for e in parse(self.state.vocab.decode(x[j, 1:].tolist())).events:
                q, o = e.close_pos + 1, e.open_pos + 1
                att[j, 0, 0, q, :] = 0.0
                att[j, 0, 0, q, o] = self.masses[k]
                att[j, 0, 0, q, q] = 1.0 - self.masses[k]
                k += 1
        return type("T", (), {"attention": [att[:, 0], att[:, 1]]})()


def _scripted(corpus, masses):
    st = _state(corpus)
    return ModelState(st.config, st.vocab, _ScriptedAttention(st, corpus, masses))


def test_pointer_mass_full_attention_and_arithmetic():
    assert pointer_mass(_scripted(["C1CCC1", "CC1CC1"], [1.0, 1.0]), ["C1CCC1", "CC1CC1"], "ring").matrix[0, 0] == 1.0
    grid = pointer_mass(_scripted(["C1CCC1", "CC1CC1"], [0.4, 0.2]), ["C1CCC1", "CC1CC1"], "ring")
    assert grid.matrix[0, 0] == pytest.approx(0.3)
    assert grid.matrix[1, 1] == 0.0


def test_event_specificity_matches_two_pass_oracle():
    st = copy_head_toy()
    corpus = ["CC1CCC1", "C1CCCC1", "CC1CC1C", "C1CC1CC"]
    res = event_specificity(st, 0, 0, corpus, "ring", seed=1)
    comp = competitor_ids(st, "ring")

    def margin(logits, target):
        return logits[target] - max(logits[c] for c in comp if c != target)

    ev, ct = [], []
    controls = set(res.control_sites)
    for mi, s in enumerate(corpus):
        ids = st.vocab.encode(s)
        x = torch.tensor([ids])
        clean = st.model(x).logits[0].double()
        abl = st.model(x, [AblateHead(0, 0)]).logits[0].double()
        closers = {e.close_pos for e in parse(s).events}
        for p in range(len(ids) - 1):
            d = (margin(clean[p], ids[p + 1]) - margin(abl[p], ids[p + 1])).item()
            if p in closers:
                ev.append(d)
            elif (mi, p) in controls:
                ct.append(d)
    assert len(ct) == res.n_controls
    assert res.delta_margin == pytest.approx(np.mean(ev) - np.mean(ct), abs=1e-9)
    assert res.delta_margin > 0


def test_zero_head_specificity_is_zero():
    st = _state(RINGS, seed=3)
    with torch.no_grad():
        st.model.blocks[1].attn.wo.weight[:, 4:8] = 0.0
    res = event_specificity(st, 1, 1, RINGS, "ring")
    assert res.delta_margin == 0.0 and res.event_delta == 0.0


def test_ablation_validity_zero_head_matches_none():
    st = _state(RINGS, seed=5)
    with torch.no_grad():
        st.model.blocks[0].attn.wo.weight[:, 0:4] = 0.0
    a = ablation_validity(st, None, 10, seed=2)
    assert a == ablation_validity(st, (0, 0), 10, seed=2)
    assert a == ablation_validity(st, None, 10, seed=2)
    assert 0.0 <= a <= 1.0


def test_bootstrap_ci_is_seeded_and_brackets_mean():
    v = np.random.default_rng(0).normal(size=500)
    lo, hi = bootstrap_ci(v, seed=3)
    assert (lo, hi) == bootstrap_ci(v, seed=3)
    assert lo < v.mean() < hi


# probes


def separable(n=2000, d=12, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, N_CLASSES, size=n)
    centers = rng.normal(size=(N_CLASSES, d)) * 5
    x = centers[y] + rng.normal(size=(n, d)) * 0.3
    mol = np.arange(n) // 4
    return x, y, mol


def test_probe_separable_data_is_perfect():
    x, y, mol = separable()
    probe, rep = evaluate_probe(x, y, mol, layer=0, seed=1, n_boot=200)
    assert rep.accuracy == 1.0
    assert not rep.flagged


def test_probe_shuffle_control_near_majority():
    x, y, mol = separable(n=4000, seed=2)
    y = np.where(np.random.default_rng(0).random(len(y)) < 0.5, 2, y)  # skewed classes
    _, rep = evaluate_probe(x, y, mol, layer=0, seed=1, n_boot=100)
    assert abs(rep.shuffle_accuracy - rep.majority_rate) <= 0.03


def test_probe_rejects_single_class():
    with pytest.raises(DegenerateLabels):
        fit_valence_probe(np.zeros((10, 3)), np.ones(10, dtype=int), 0)


def test_direction_from_class_scaled_weights():
    u = np.array([3.0, -1.0, 2.0, 0.5])
    probe = ValenceProbe(
        weights=np.arange(N_CLASSES)[:, None] * u, bias=np.zeros(N_CLASSES), layer=1, l2=0.0,
        mean=np.zeros(4), scale=np.ones(4), class_means=np.arange(N_CLASSES)[:, None] * u[None, :],
    )
    d = extract_direction(probe, "class-slope")
    assert np.allclose(d.vector, u / np.linalg.norm(u))
    assert np.linalg.norm(d.vector) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("method", ["mean-shift", "regression", "class-slope"])
def test_direction_sign_convention(method):
    x, y, _ = separable()
    probe = fit_valence_probe(x, y, 0)
    d = extract_direction(probe, method)
    assert abs(np.linalg.norm(d.vector) - 1) < 1e-6
    assert x[y == 4].mean(0) @ d.vector > x[y == 0].mean(0) @ d.vector


def test_mean_shift_recovers_planted_axis_despite_nuisance():
    # activations move along u with valence; a correlated nuisance axis v carries no valence signal
    rng = np.random.default_rng(4)
    n, d = 5000, 6
    u = np.eye(d)[0]
    v = (np.eye(d)[0] + np.eye(d)[1]) / np.sqrt(2)
    y = rng.integers(0, N_CLASSES, size=n)
    x = y[:, None] * u + 3 * rng.normal(size=(n, 1)) * v + 0.05 * rng.normal(size=(n, d))
    probe = fit_valence_probe(x, y, 0)
    d_vec = extract_direction(probe, "mean-shift").vector
    # oracle: covariance of activations with the class index, divided by its variance
    oracle = ((x - x.mean(0)) * (y - y.mean())[:, None]).mean(0) / y.var()
    assert np.allclose(d_vec, oracle / np.linalg.norm(oracle), atol=1e-9)
    assert d_vec @ u > 0.95


def test_valence_dataset_labels():
    st = _state(["C=CC#N", "CCO"])
    ds = valence_dataset(st, ["C=CC#N"], [0, 1])
    assert ds.labels.tolist() == [4, 2, 3, 0]
    assert ds.features[1].shape == (4, 8)


def test_decision_positions():
    st = _state(["CC(=O)N"])
    pos, code = decision_positions(st, "CC(=O)N")
    # tokens C C ( = O ) N -> bonds may follow C, C, ( , O, N
    assert pos == [1, 2, 3, 5, 7]
    assert code == [0, -1, 1, -1, -1]


def linear_readout_state():
    st = _state(["CC#N", "C=CC#N", "CC(=O)C-c1ccccc1"], seed=6)
    with torch.no_grad():
        st.model.norm_out.eps = 1e12
        st.model.norm_out.weight.fill_(1e6)  # makes the final norm the identity to ~1e-12
    return st


def test_steering_alpha_zero_and_linear_oracle():
    st = linear_readout_state()
    rng = np.random.default_rng(0)
    w = rng.normal(size=8)
    w /= np.linalg.norm(w)
    with torch.no_grad():
        st.model.unembed.weight[st.vocab.index["#"]] = torch.tensor(w, dtype=torch.float32)
    direction = SteeringDirection(w, layer=1, method="test")
    rows = steer_valence(st, direction, [0.0, 1.5], ["CC#N", "C=CC#N"], n_boot=50)
    zero = [r for r in rows if r.alpha == 0.0]
    assert all(r.mean_delta == 0.0 and r.flips == 0 for r in zero)
    trip = [r for r in rows if r.alpha == 1.5 and r.token == "#" and r.subset == "all"][0]
    assert trip.mean_delta == pytest.approx(1.5, abs=1e-4)
