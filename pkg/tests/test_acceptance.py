"""The twelve acceptance criteria, each printed as one PASS/FAIL line at the end of the run.

The desk pipeline runs once per session.  Set MOLMECH_ACCEPTANCE_DIR to keep
its artifacts; a directory that already holds a finished run is reused.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch
from gradcheck import fd_check
from oracles import naive_events
from scipy import integrate, special

from molmech.circuits.valence import evaluate_probe, extract_direction, steer_valence, valence_dataset
from molmech.cli.manifest import check_consistency, read_manifests
from molmech.cli.pipeline import TIMING_FILE, run_pipeline
from molmech.features.corpus import fragment_masks, token_corpus
from molmech.features.robustness import compare, cosine, jaccard
from molmech.features.universality import random_mcs_baseline
from molmech.features.screen import screen_fragments
from molmech.features.wsd import wsd_single
from molmech.model.activations import load_activations
from molmech.model.config import ModelConfig, Vocab
from molmech.model.sample import sample
from molmech.model.state import load_model
from molmech.model.train import encode_corpus, next_token_loss
from molmech.model.transformer import ReplaceResidual, Transformer
from molmech.sae.evaluate import decoder_bias_transform, eval_reconstruction, eval_replacement
from molmech.sae.model import SAEConfig, SparseAutoencoder, load_sae, sae_losses
from molmech.sae.train import dead_fraction, sweep_l1, train_sae
from molmech.smiles.canon import canonical_smiles, randomize
from molmech.smiles.fragments import compile_pattern
from molmech.smiles.generate import generate_corpus
from molmech.smiles.graph import grammar_events, parse
from molmech.smiles.io import read_splits
from molmech.steering.steer import SteeringSpec, extract_steering_vector, passthrough_transform, steer_transform

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def corpus10k():
    return generate_corpus(10_000, max_atoms=20, seed=123)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    env = os.environ.get("MOLMECH_ACCEPTANCE_DIR")
    out = Path(env) if env else tmp_path_factory.mktemp("desk_run")
    timing = out / TIMING_FILE
    if timing.exists() and "total_seconds" in json.loads(timing.read_text()):
        return out
    run_pipeline(out, seed=0)
    return out


def _test_split(run: Path, n: int, seed: int = 0) -> list[str]:
    rows = [s for s, sp in read_splits(run / "corpus" / "splits.tsv") if sp == "test"]
    rng = np.random.Generator(np.random.PCG64(seed))
    return [rows[i] for i in sorted(rng.choice(len(rows), size=min(n, len(rows)), replace=False))]


def test_c01_grammar_oracle(corpus10k, criterion):
    t0 = time.perf_counter()
    mismatches = 0
    for s in corpus10k:
        got = [(e.kind, e.open_pos, e.close_pos) for e in grammar_events(s)]
        mismatches += got != naive_events(s)
    dt = time.perf_counter() - t0
    ok = criterion(1, "grammar oracle equivalence", mismatches == 0 and dt < 10,
                   f"{len(corpus10k) - mismatches}/{len(corpus10k)} agree in {dt:.1f}s (limit 10s)")
    assert ok


def test_c02_canonical_round_trip(corpus10k, criterion):
    t0 = time.perf_counter()
    bad = 0
    for i, s in enumerate(corpus10k):
        g = parse(s)
        for seed in range(5):
            bad += canonical_smiles(randomize(g, seed * 100_003 + i)) != s
    dt = time.perf_counter() - t0
    n = 5 * len(corpus10k)
    ok = criterion(2, "canonical round-trip", bad == 0 and dt < 60,
                   f"{n - bad}/{n} renderings return to canonical text in {dt:.1f}s (limit 60s)")
    assert ok


def test_c03_gradient_checks(criterion):
    t0 = time.perf_counter()
    corpus = ["CC(=O)Oc1ccccc1C(=O)O", "c1ccc2[nH]ccc2c1", "N#CC1CC1", "OCC(F)(F)F", "C1CCOC1"]
    vocab = Vocab.from_corpus(corpus)
    cfg = ModelConfig(n_layers=2, n_heads=2, d_model=16, d_ff=32, context_len=32, vocab_size=len(vocab), seed=5)
    model = Transformer(cfg).double()
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn_like(p) * 0.3)
    x = torch.nn.utils.rnn.pad_sequence([torch.tensor(vocab.encode(s)) for s in corpus], batch_first=True)
    lm_err = fd_check(dict(model.named_parameters()), lambda: next_token_loss(model(x).logits, x), n_entries=6)
    torch.manual_seed(0)
    sae = SparseAutoencoder(16, 32, seed=2).double()
    with torch.no_grad():
        sae.b_e.add_(0.1 * torch.randn(32, dtype=torch.float64))
    xs = torch.randn(24, 16, dtype=torch.float64)
    sae_err = fd_check(dict(sae.named_parameters()), lambda: sae_losses(sae, xs, 1e-2)["loss"], n_entries=8)
    worst = max(max(lm_err.values()), max(sae_err.values()))
    dt = time.perf_counter() - t0
    ok = criterion(3, "gradient checks", worst < 1e-3 and dt < 60,
                   f"worst relative error {worst:.2e} (limit 1e-3; transformer d16, SAE m32, float64) in {dt:.1f}s")
    assert ok


def test_c04_desk_lm_quality(desk_run, criterion):
    metrics = json.loads((desk_run / "lm" / "metrics.json").read_text())
    gen = json.loads((desk_run / "corpus" / "gen-corpus.manifest.json").read_text())
    lm = json.loads((desk_run / "lm" / "train-lm.manifest.json").read_text())
    timing = json.loads((desk_run / TIMING_FILE).read_text())
    secs = next(s["seconds"] for s in timing["stages"] if s["command"] == "train-lm")
    cfg = lm["config"]
    shape_ok = (cfg["model"]["n_layers"] == 2 and cfg["model"]["d_model"] == 64 and gen["summary"]["n"] == 200_000
                and gen["config"]["max_atoms"] == 20 and metrics["steps"] <= 20_000
                and metrics["n_eval_samples"] == 1000 and cfg["temperature"] == 1.0)
    v = metrics["sample_validity"]
    ok = criterion(4, "desk LM quality", shape_ok and v >= 0.85 and secs <= 1800,
                   f"validity {v:.3f} on 1000 samples at T=1 after {metrics['steps']} steps; "
                   f"train-lm {secs / 60:.1f} min on {os.environ.get('MOLMECH_THREADS', '1')} thread(s) (limit 30)")
    assert ok


@pytest.fixture(scope="module")
def valence(desk_run):
    state = load_model(desk_run / "lm" / "lm.ckpt")
    t0 = time.perf_counter()
    smiles = _test_split(desk_run, 2000)
    layers = list(range(state.config.n_layers))
    ds = valence_dataset(state, smiles, layers)
    fits = {l: evaluate_probe(ds.features[l], ds.labels, ds.molecule, l, seed=0, n_boot=1000) for l in layers}
    return state, smiles, fits, time.perf_counter() - t0


def test_c05_valence_probe(valence, criterion):
    _, _, fits, dt = valence
    best = max((rep for _, rep in fits.values()), key=lambda r: r.accuracy)
    margin = best.accuracy - best.shuffle_accuracy
    ok = criterion(5, "valence probe", margin >= 0.20 and dt < 300,
                   f"layer {best.layer} accuracy {best.accuracy:.4f} [{best.ci[0]:.4f}, {best.ci[1]:.4f}] vs shuffle "
                   f"{best.shuffle_accuracy:.4f} (margin {100 * margin:.1f} pp, need 20) in {dt:.0f}s")
    assert ok


def test_c06_steering_monotonicity(valence, criterion):
    state, smiles, fits, _ = valence
    t0 = time.perf_counter()
    best = max(fits, key=lambda l: fits[l][1].accuracy)
    direction = extract_direction(fits[best][0])
    rows = steer_valence(state, direction, [-2.0, 2.0], smiles[:300], seed=0, n_boot=1000)
    trip = {r.alpha: r for r in rows if r.token == "#" and r.subset == "all"}
    lo, hi = trip[-2.0], trip[2.0]
    dt = time.perf_counter() - t0
    ok = criterion(6, "steering monotonicity", hi.ci[0] > lo.ci[1] and dt < 300,
                   f"layer {best} ({direction.method}) delta-triple {hi.mean_delta:+.4f} "
                   f"[{hi.ci[0]:+.4f}, {hi.ci[1]:+.4f}] at +2 vs {lo.mean_delta:+.4f} "
                   f"[{lo.ci[0]:+.4f}, {lo.ci[1]:+.4f}] at -2 over {hi.n_positions} positions in {dt:.0f}s")
    assert ok


def test_c07_sae_training(desk_run, criterion):
    t0 = time.perf_counter()
    state = load_model(desk_run / "lm" / "lm.ckpt")
    _, tensors = load_activations(desk_run / "acts" / "activations.bin")
    acts = tensors["layer1.resid_post"]
    order = np.random.Generator(np.random.PCG64(0)).permutation(acts.shape[0])
    ev, tr = acts[order[:20_000]], acts[order[20_000:]]
    found, points = sweep_l1(tr, SAEConfig(d_in=acts.shape[1]), ev)
    in_band = found is not None
    cfg = found.config if in_band else SAEConfig(d_in=acts.shape[1])
    dead = []
    for seed in range(3):
        pair = [dead_fraction(train_sae(tr, replace(cfg, seed=seed, ghost_coeff=g)), ev) for g in (0.1, 0.0)]
        dead.append(pair)
    ghost_ok = all(g <= n for g, n in dead)
    val = encode_corpus([s for s, sp in read_splits(desk_run / "corpus" / "splits.tsv") if sp == "val"][:500],
                        state.vocab, state.config.context_len)
    sae = found.sae if in_band else train_sae(tr, cfg).sae
    rec = eval_reconstruction(state, sae, 1, val)
    bd = eval_replacement(state, 1, decoder_bias_transform(sae), val)
    dt = time.perf_counter() - t0
    ok = criterion(7, "SAE training", in_band and ghost_ok and rec["delta_ce"] < bd["delta_ce"] and dt < 1200,
                   f"l1 {cfg.l1:.3g} gives L0 {points[-1].l0:.1f} (band 10-50) after {len(points)} evals; "
                   f"dead fraction ghost/no-ghost per seed {[(round(g, 4), round(n, 4)) for g, n in dead]}; "
                   f"delta_ce {rec['delta_ce']:.3f} vs b_d-only {bd['delta_ce']:.3f}; {dt / 60:.1f} min")
    assert ok


def test_c08_wsd_planted_feature(criterion):
    t0 = time.perf_counter()
    hand = wsd_single([1, 1, 0, 0], [True, True, False, False], 1e-9)
    pattern = compile_pattern("C=O", "carbonyl")
    pool = generate_corpus(1000, seed=31)
    vocab = Vocab.from_corpus(pool)
    state = type("S", (), {"vocab": vocab, "config": ModelConfig(vocab_size=len(vocab), context_len=64)})()
    masks = fragment_masks(token_corpus(state, pool), [pattern])["carbonyl"]
    molecules = [s for s, m in zip(pool, masks) if m is not None][:100]
    corpus = token_corpus(state, molecules)
    rng = np.random.default_rng(0)
    residuals = []
    # coordinate 41 is 1 on carbonyl tokens and 0 elsewhere; the rest is |noise|
    for n, m in zip(corpus.n_tokens, fragment_masks(corpus, [pattern])["carbonyl"]):
        a = np.abs(rng.normal(size=(n, 64)))
        a[:, 41] = m.astype(float)
        residuals.append(a)
    table = screen_fragments(state, lambda x: x, molecules, [pattern], layer=0, basis="planted",
                             corpus=corpus, residuals=residuals)
    top = table.top("carbonyl", 1)[0][0]
    dt = time.perf_counter() - t0
    ok = criterion(8, "WSD planted feature", len(molecules) == 100 and top == 41 and abs(hand - 1.0) <= 1e-6 and dt < 10,
                   f"planted latent ranks #{int(np.flatnonzero(table.fragments['carbonyl'].ranking() == 41)[0]) + 1} "
                   f"over {len(molecules)} molecules; hand WSD {hand:.9f}; {dt:.1f}s")
    assert ok


def _expected_max_cosine(d: int, m: int) -> float:
    a = (d - 1) / 2
    val, _ = integrate.quad(lambda c: 1 - special.betainc(a, a, (c + 1) / 2) ** m, -1, 1, limit=200,
                            points=[0.0, 0.1, 0.2, 0.3])
    return val - 1


def test_c09_mcs_random_baseline(criterion):
    t0 = time.perf_counter()
    mc = random_mcs_baseline(512, 4096, 4096, seed=0)
    exact = _expected_max_cosine(512, 4096)
    dt = time.perf_counter() - t0
    ok = criterion(9, "MCS random baseline", 0.14 <= mc <= 0.18 and abs(mc - exact) < 5e-3 and dt < 30,
                   f"Monte-Carlo {mc:.4f}, exact Beta-integral {exact:.4f} (band 0.14-0.18) in {dt:.1f}s")
    assert ok


def test_c10_robustness_sanity(criterion):
    sae = SparseAutoencoder(16, 32, seed=0)
    with torch.no_grad():
        z = sae.encode(torch.randn(7, 16, generator=torch.Generator().manual_seed(1))).numpy()
    j_same, c_same = compare(z, z)
    c_hand = cosine([1, 0, 2], [1, 0, 0])
    j_hand = jaccard({0, 2}, {0})
    ok = criterion(10, "robustness metric sanity",
                   j_same == 1.0 and c_same == 1.0 and abs(c_hand - 1 / math.sqrt(5)) <= 1e-9 and j_hand == 0.5,
                   f"identical: jaccard {j_same}, cosine {c_same}; hand pair cosine {c_hand:.12f} "
                   f"(1/sqrt5 = {1 / math.sqrt(5):.12f}), jaccard {j_hand}")
    assert ok


def test_c11_alpha_zero_equivalence(desk_run, criterion):
    state = load_model(desk_run / "lm" / "lm.ckpt")
    sae = load_sae(desk_run / "sae" / "sae_L1.ckpt").sae
    target = _test_split(desk_run, 1)[0]
    z = extract_steering_vector(sae, state, SteeringSpec(target, 1, 0.0))
    steered = sample(state, 100, 7, interventions=[ReplaceResidual(1, steer_transform(sae, z, 0.0))])
    plain = sample(state, 100, 7, interventions=[ReplaceResidual(1, passthrough_transform(sae))])
    same = sum(a == b for a, b in zip(steered, plain))
    ok = criterion(11, "steering alpha=0 equivalence", same == 100 and int((z != 0).sum()) > 0,
                   f"{same}/100 token sequences identical to the encode/decode passthrough "
                   f"(z_ref has {int((z != 0).sum())} active latents)")
    assert ok


def test_c12_end_to_end_pipeline(desk_run, criterion):
    timing = json.loads((desk_run / TIMING_FILE).read_text())
    manifests = read_manifests(desk_run)
    commands = {m["command"] for m in manifests}
    needed = {"gen-corpus", "train-lm", "dump-activations", "train-sae", "analyze-circuits", "probe-valence",
              "screen-features", "robustness", "universality", "steer", "report"}
    check_consistency(manifests)
    total = timing["total_seconds"]
    ok = criterion(12, "end-to-end pipeline", needed <= commands and total <= 5400,
                   f"{len(timing['stages'])} stages, {len(manifests)} consistent manifests, "
                   f"{total / 60:.1f} min total (limit 90)")
    assert ok
