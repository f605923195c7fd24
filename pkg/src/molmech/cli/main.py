"""``molmech <command> [--config FILE] [--set key=value ...]``.

Relative artifact paths in a config resolve against ``--out-dir``; user-supplied
input files (``prepare-corpus`` input, ``export-features`` labels) resolve
against the working directory.  Each command writes into its own
subdirectory together with a ``<command>.manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
import warnings
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import torch
from filelock import FileLock, Timeout

from molmech.cli import config as C
from molmech.cli.errors import CliError, ConfigError, DataError, NumericError
from molmech.cli.manifest import check_consistency, read_manifests, write_manifest
from molmech.cli.reference import FULL_SCALE_REFERENCE
from molmech.model.checkpoint import CorruptFile, VersionMismatch
from molmech.model.train import NonFiniteLoss

STAGE_DIRS = {
    "gen-corpus": "corpus", "prepare-corpus": "corpus", "train-lm": "lm", "dump-activations": "acts",
    "train-sae": "sae", "analyze-circuits": "circuits", "probe-valence": "probe",
    "screen-features": "features", "robustness": "robustness", "universality": "universality",
    "steer": "steer", "report": "report", "export-features": "export", "fit-simple-head": "head",
}


class Run:
    """Paths and bookkeeping for one command invocation."""

    def __init__(self, command: str, cfg: Any, out_dir: Path, tag: str = ""):
        self.command, self.cfg, self.out_dir = command, cfg, out_dir
        self.dir = out_dir / STAGE_DIRS[command]
        self.dir.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, Path] = {}
        self.outputs: dict[str, Path] = {}
        self.tag = tag

    def input(self, name: str, path: str, user_file: bool = False) -> Path:
        p = Path(path)
        if not p.is_absolute():
            p = (Path.cwd() if user_file else self.out_dir) / p
        if not p.is_file():
            raise DataError(f"{name}: file not found: {p}")
        self.inputs[name] = p.resolve()
        return p

    def output(self, name: str, filename: str) -> Path:
        p = (self.dir / filename).resolve()
        self.outputs[name] = p
        return p

    def finish(self, summary: dict) -> dict:
        write_manifest(self.dir, self.out_dir, self.command, self.tag, self.cfg, self.inputs, self.outputs, summary)
        return summary


def log(msg: str) -> None:
    print(f"[molmech] {msg}", file=sys.stderr, flush=True)


def write_tsv(path: Path, rows: list[dict], columns: list[str] | None = None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, columns, delimiter="\t", lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in columns})


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_default) + "\n")


def _default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _split(run: Run, corpus: str, split: str, limit: int | None = None, seed: int = 0) -> list[str]:
    from molmech.smiles.io import read_splits
    rows = read_splits(run.input("corpus", corpus))
    out = [s for s, sp in rows if sp == split]
    if not out:
        raise DataError(f"split {split!r} of {corpus} is empty")
    if limit is not None and len(out) > limit:
        rng = np.random.Generator(np.random.PCG64(seed))
        out = [out[i] for i in sorted(rng.choice(len(out), size=limit, replace=False))]
    return out


def _model(run: Run, path: str):
    from molmech.model.state import load_model
    return load_model(run.input("model", path))


def _sae(run: Run, path: str, name: str = "sae"):
    from molmech.sae.model import load_sae
    return load_sae(run.input(name, path))


# commands


def cmd_gen_corpus(run: Run) -> dict:
    from molmech.smiles.generate import generate_corpus
    from molmech.smiles.io import write_corpus, write_splits
    from molmech.smiles.scaffold import scaffold_split
    cfg = run.cfg
    if cfg.n < 1:
        raise ConfigError("n must be >= 1")
    smiles = generate_corpus(cfg.n, max_atoms=cfg.max_atoms, seed=cfg.seed)
    splits = scaffold_split(smiles, tuple(cfg.split_ratios), seed=cfg.seed)
    write_corpus(run.output("corpus", "corpus.smi"), smiles)
    write_splits(run.output("splits", "splits.tsv"), smiles, splits)
    counts = {k: splits.count(k) for k in ("train", "val", "test")}
    return run.finish({"n": len(smiles), "splits": counts})


def cmd_prepare_corpus(run: Run) -> dict:
    from molmech.smiles.canon import canonicalize
    from molmech.smiles.graph import try_parse
    from molmech.smiles.io import read_corpus, write_corpus, write_splits
    from molmech.smiles.props import CorpusFilter
    from molmech.smiles.scaffold import scaffold_split
    cfg = run.cfg
    if not cfg.input:
        raise ConfigError("prepare-corpus needs input=<path to newline-delimited SMILES>")
    lines = read_corpus(run.input("input", cfg.input, user_file=True))
    f = cfg.filter
    try:
        filt = CorpusFilter(tuple(f.mw_range), tuple(f.ring_range), f.max_rotatable, frozenset(f.allowed_elements))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    kept, rejected, seen = [], [], set()
    for s in lines:
        g = try_parse(s)
        if g is None:
            rejected.append({"smiles": s, "reason": "invalid"})
            continue
        why = filt.reason(g)
        if why is not None:
            rejected.append({"smiles": s, "reason": why})
            continue
        text = canonicalize(g) if cfg.canonicalize else s
        if text in seen:
            rejected.append({"smiles": s, "reason": "duplicate"})
            continue
        seen.add(text)
        kept.append(text)
    write_tsv(run.output("rejected", "rejected.tsv"), rejected, ["smiles", "reason"])
    if not kept:
        raise DataError("no molecule passed the filters")
    splits = scaffold_split(kept, tuple(cfg.split_ratios), seed=cfg.seed)
    write_corpus(run.output("corpus", "corpus.smi"), kept)
    write_splits(run.output("splits", "splits.tsv"), kept, splits)
    reasons: dict[str, int] = {}
    for r in rejected:
        reasons[r["reason"]] = reasons.get(r["reason"], 0) + 1
    return run.finish({"n_input": len(lines), "n_kept": len(kept), "rejected": reasons,
                       "splits": {k: splits.count(k) for k in ("train", "val", "test")}})


def cmd_train_lm(run: Run) -> dict:
    from molmech.model.config import ModelConfig, Vocab
    from molmech.model.sample import decode_samples, sample
    from molmech.model.state import load_model, save_model
    from molmech.model.train import TrainConfig, encode_corpus, evaluate_loss, train_lm
    from molmech.sae.evaluate import validity
    from molmech.smiles.io import read_splits
    cfg = run.cfg
    rows = read_splits(run.input("corpus", cfg.corpus))
    vocab = Vocab.from_corpus([s for s, _ in rows])
    try:
        mcfg = ModelConfig(vocab_size=len(vocab.tokens), **asdict(cfg.model))
        tcfg = TrainConfig(seed=cfg.seed, **asdict(cfg.train))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    train = encode_corpus([s for s, sp in rows if sp == "train"], vocab, mcfg.context_len)
    val = encode_corpus([s for s, sp in rows if sp == "val"][: cfg.eval_molecules], vocab, mcfg.context_len)
    state = None
    if cfg.resume:
        state = load_model(run.input("resume", cfg.resume))
        if state.vocab != vocab or state.config != mcfg:
            raise DataError("resume checkpoint does not match this corpus/model config")
    t0 = time.perf_counter()

    def progress(step: int, loss: float) -> None:
        if step % 500 == 0:
            log(f"train-lm step {step}/{tcfg.steps} loss {loss:.4f} ({time.perf_counter() - t0:.0f}s)")

    state = train_lm(train, mcfg, vocab, tcfg, log_path=run.output("log", "train_log.tsv"), state=state,
                     progress=progress)
    save_model(state, run.output("model", "lm.ckpt"))
    val_loss = evaluate_loss(state, val) if val else float("nan")
    texts = decode_samples(state, sample(state, cfg.eval_samples, cfg.seed, cfg.temperature))
    write_tsv(run.output("samples", "samples.tsv"), [{"smiles": t} for t in texts], ["smiles"])
    summary = {"steps": state.step, "n_train": len(train), "val_loss": val_loss,
               "sample_validity": validity(texts), "n_eval_samples": len(texts),
               "vocab": vocab.tokens, "n_params": sum(p.numel() for p in state.model.parameters())}
    write_json(run.output("metrics", "metrics.json"), summary)
    return run.finish(summary)


def cmd_dump_activations(run: Run) -> dict:
    from molmech.model.activations import dump_activations
    from molmech.model.train import encode_corpus
    cfg = run.cfg
    state = _model(run, cfg.model)
    for l in cfg.layers:
        if not 0 <= l < state.config.n_layers:
            raise ConfigError(f"layer {l} outside 0..{state.config.n_layers - 1}")
    smiles = _split(run, cfg.corpus, cfg.split, cfg.max_molecules, cfg.seed)
    seqs = encode_corpus(smiles, state.vocab, state.config.context_len)
    path = run.output("activations", "activations.bin")
    dump_activations(state, seqs, cfg.layers, path, {"split": cfg.split, "n_molecules": len(seqs)})
    run.outputs["rows"] = path.with_suffix(".rows.tsv")
    return run.finish({"n_molecules": len(seqs), "n_rows": int(sum(len(s) for s in seqs)), "layers": cfg.layers})


def cmd_train_sae(run: Run) -> dict:
    from molmech.model.activations import load_activations
    from molmech.model.train import encode_corpus
    from molmech.sae.evaluate import (decoder_bias_transform, eval_reconstruction, eval_replacement,
                                      generation_with_reconstruction)
    from molmech.sae.model import SAEConfig, save_sae
    from molmech.sae.train import dead_fraction, mean_l0, sweep_l1, train_sae
    cfg = run.cfg
    state = _model(run, cfg.model)
    meta, tensors = load_activations(run.input("activations", cfg.activations))
    key = f"layer{cfg.layer}.resid_post"
    if key not in tensors:
        raise DataError(f"activation dump has no {key}")
    acts = tensors[key]
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    order = rng.permutation(acts.shape[0])
    n_eval = min(max(1, acts.shape[0] // 10), 20_000)
    eval_acts, train_acts = acts[order[:n_eval]], acts[order[n_eval:]]
    try:
        scfg = SAEConfig(d_in=acts.shape[1], seed=cfg.seed, **asdict(cfg.sae))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    sweep_rows = []
    selected = "configured"
    if cfg.sweep:
        found, points = sweep_l1(train_acts, scfg, eval_acts, tuple(cfg.target_l0), max_evals=cfg.sweep_max_evals)
        sweep_rows = [asdict(p) for p in points]
        if found is not None:
            scfg, selected = found.config, "in-band"
        else:
            mid = math.sqrt(cfg.target_l0[0] * cfg.target_l0[1])
            best = min(points, key=lambda p: abs(math.log(max(p.l0, 1e-9) / mid)))
            log(f"train-sae: no sparsity weight reached L0 in {cfg.target_l0}; using closest l1={best.l1:.3g}")
            scfg, selected = replace(scfg, l1=best.l1), "closest"
    name = cfg.name or f"sae_L{cfg.layer}"
    # training is deterministic, so this reproduces the selected sweep point and records its log
    sae_state = train_sae(train_acts, scfg, log_path=run.output("log", f"{name}.log.tsv"), layer=cfg.layer)
    sae_state.layer = cfg.layer
    sae_state.extra["sweep"] = sweep_rows
    save_sae(sae_state, run.output("sae", f"{name}.ckpt"))
    if sweep_rows:
        write_tsv(run.output("sweep", f"{name}.sweep.tsv"), sweep_rows, ["l1", "l0", "mse"])
    val = encode_corpus(_split(run, cfg.corpus, "val", cfg.eval_molecules, cfg.seed), state.vocab,
                        state.config.context_len)
    rec = eval_reconstruction(state, sae_state.sae, cfg.layer, val)
    bd = eval_replacement(state, cfg.layer, decoder_bias_transform(sae_state.sae), val)
    gen = generation_with_reconstruction(state, sae_state.sae, cfg.layer, cfg.gen_samples, cfg.seed)
    summary = {"layer": cfg.layer, "m": sae_state.sae.m, "l1": scfg.l1, "selection": selected,
               "eval_l0": mean_l0(sae_state.sae, eval_acts), "dead_fraction": dead_fraction(sae_state, eval_acts),
               "reconstruction": rec, "decoder_bias_only": bd, "generation": asdict(gen)}
    write_json(run.output("metrics", f"{name}.metrics.json"), summary)
    return run.finish(summary)


def cmd_analyze_circuits(run: Run) -> dict:
    from molmech.circuits.heads import NoEvents, ablation_validity, event_specificity, pointer_mass
    cfg = run.cfg
    state = _model(run, cfg.model)
    smiles = _split(run, cfg.corpus, cfg.split, cfg.n_molecules, cfg.seed)
    nl, nh = state.config.n_layers, state.config.n_heads
    rows = []
    grids = {}
    for kind in ("ring", "branch"):
        try:
            grids[kind] = pointer_mass(state, smiles, kind)
        except NoEvents:
            grids[kind] = None
    control = ablation_validity(state, None, cfg.ablation_samples, cfg.seed, cfg.temperature)
    for l in range(nl):
        for h in range(nh):
            row = {"layer": l, "head": h, "name": f"L{l}H{h}"}
            for kind in ("ring", "branch"):
                g = grids[kind]
                row[f"pointer_mass_{kind}"] = float(g.matrix[l, h]) if g is not None else None
                try:
                    spec = event_specificity(state, l, h, smiles, kind, seed=cfg.seed)
                    row[f"delta_margin_{kind}"] = spec.delta_margin
                    row[f"event_delta_{kind}"] = spec.event_delta
                    row[f"control_delta_{kind}"] = spec.control_delta
                    row[f"n_events_{kind}"] = spec.n_events
                except NoEvents:
                    row[f"delta_margin_{kind}"] = None
            row["ablation_validity"] = ablation_validity(state, (l, h), cfg.ablation_samples, cfg.seed,
                                                         cfg.temperature)
            row["validity_drop"] = control - row["ablation_validity"]
            rows.append(row)
            log(f"analyze-circuits L{l}H{h} done")
    write_tsv(run.output("heads", "heads.tsv"), rows)
    best = {k: max(rows, key=lambda r: r[f"pointer_mass_{k}"] or -1)["name"] for k in ("ring", "branch")}
    summary = {"control_validity": control, "n_molecules": len(smiles), "top_pointer_head": best,
               "largest_validity_drop": max(rows, key=lambda r: r["validity_drop"])["name"],
               "full_scale_reference": FULL_SCALE_REFERENCE["heads"]}
    write_json(run.output("summary", "summary.json"), {**summary, "heads": rows})
    return run.finish(summary)


def cmd_probe_valence(run: Run) -> dict:
    from molmech.circuits.valence import evaluate_probe, extract_direction, steer_valence, valence_dataset
    from molmech.model.checkpoint import write_container
    cfg = run.cfg
    state = _model(run, cfg.model)
    smiles = _split(run, cfg.corpus, cfg.split, cfg.n_molecules, cfg.seed)
    ds = valence_dataset(state, smiles, cfg.layers)
    reports, probes = [], {}
    for l in cfg.layers:
        probe, rep = evaluate_probe(ds.features[l], ds.labels, ds.molecule, l, seed=cfg.seed, l2=cfg.l2,
                                    n_boot=cfg.n_boot)
        probes[l] = probe
        reports.append(rep)
    write_tsv(run.output("probe", "probe.tsv"), [asdict(r) for r in reports])
    best = max(reports, key=lambda r: (r.accuracy, -r.layer))
    layer = best.layer if cfg.steer_layer < 0 else cfg.steer_layer
    if layer not in probes:
        raise ConfigError(f"steer_layer {layer} was not probed")
    direction = extract_direction(probes[layer], cfg.direction_method)
    write_container(run.output("direction", "direction.bin"), "direction",
                    {"layer": layer, "method": direction.method}, {"vector": direction.vector.astype(np.float32)})
    steer_smiles = smiles[: cfg.steer_molecules]
    rows = steer_valence(state, direction, cfg.steer_alphas, steer_smiles, seed=cfg.seed, n_boot=cfg.n_boot)
    write_tsv(run.output("steering", "steering.tsv"), [asdict(r) for r in rows])
    summary = {"best_layer": best.layer, "best_accuracy": best.accuracy, "best_ci": best.ci,
               "best_shuffle_accuracy": best.shuffle_accuracy, "flagged": best.flagged,
               "steer_layer": layer, "direction_method": direction.method,
               "probes": [asdict(r) for r in reports],
               "triple_bond_all": [asdict(r) for r in rows if r.token == "#" and r.subset == "all"],
               "full_scale_reference": FULL_SCALE_REFERENCE["valence"]}
    return run.finish(summary)


def cmd_screen_features(run: Run) -> dict:
    from molmech.features.corpus import sae_projector
    from molmech.features.screen import screen_fragments, specificity_benchmark, specificity_rows
    from molmech.smiles.io import default_patterns_path, read_patterns
    cfg = run.cfg
    state = _model(run, cfg.model)
    sae_state = _sae(run, cfg.sae)
    layer = sae_state.layer
    patterns = read_patterns(run.input("patterns", cfg.patterns, user_file=True) if cfg.patterns
                             else default_patterns_path())
    smiles = _split(run, cfg.corpus, cfg.split, cfg.n_molecules, cfg.seed)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        if cfg.baselines:
            tables = specificity_benchmark(state, sae_state.sae, smiles, patterns, layer, seed=cfg.seed)
        else:
            tables = {"sae": screen_fragments(state, sae_projector(sae_state.sae), smiles, patterns, layer)}
    long_rows = []
    for basis, t in tables.items():
        for name, sc in t.fragments.items():
            for rank, k in enumerate(sc.ranking()[: cfg.top_k]):
                long_rows.append({"basis": basis, "fragment": name, "rank": rank + 1, "feature": int(k),
                                  "mean_wsd": float(sc.mean[k]), "median_wsd": float(sc.median[k]),
                                  "n_molecules": sc.n_molecules})
    write_tsv(run.output("wsd", "wsd_top.tsv"), long_rows)
    spec_rows = specificity_rows(tables)
    write_tsv(run.output("specificity", "specificity.tsv"), spec_rows)
    sae_t = tables["sae"]
    summary = {"layer": layer, "n_molecules": len(smiles), "aggregation": sae_t.aggregation,
               "no_matches": sae_t.no_matches,
               "max_wsd": {b: t.max_specificity() for b, t in tables.items()},
               "full_scale_reference": FULL_SCALE_REFERENCE["specificity"]}
    return run.finish(summary)


def cmd_robustness(run: Run) -> dict:
    from molmech.features.robustness import robustness_eval
    cfg = run.cfg
    state = _model(run, cfg.model)
    sae_state = _sae(run, cfg.sae)
    smiles = _split(run, cfg.corpus, cfg.split, cfg.n_molecules, cfg.seed)
    recs = robustness_eval(state, sae_state.sae, sae_state.layer, smiles, cfg.n_seeds, cfg.seed)
    write_tsv(run.output("records", "robustness.tsv"), [asdict(r) for r in recs])
    j = np.array([r.jaccard for r in recs])
    c = np.array([r.cosine for r in recs])
    summary = {"layer": sae_state.layer, "m": sae_state.sae.m, "n_pairs": len(recs),
               "mean_jaccard": float(j.mean()) if recs else None, "mean_cosine": float(c.mean()) if recs else None}
    return run.finish(summary)


def cmd_universality(run: Run) -> dict:
    from molmech.features.universality import mcs_universality
    from molmech.sae.evaluate import DimensionMismatch
    cfg = run.cfg
    small = _sae(run, cfg.sae_small, "sae_small")
    large = _sae(run, cfg.sae_large, "sae_large")
    try:
        res = mcs_universality(small.sae.W_d.detach().numpy(), large.sae.W_d.detach().numpy(), cfg.threshold,
                               cfg.seed)
    except DimensionMismatch as e:
        raise DataError(str(e)) from None
    write_tsv(run.output("per_column", "mcs.tsv"),
              [{"column": i, "mcs": float(v)} for i, v in enumerate(res.per_column)], ["column", "mcs"])
    summary = {"m_small": small.sae.m, "m_large": large.sae.m, "layer_small": small.layer,
               "layer_large": large.layer, "mean_mcs": res.mean_mcs, "recovery_rate": res.recovery_rate,
               "random_baseline": res.random_baseline, "threshold": res.threshold,
               "full_scale_reference": FULL_SCALE_REFERENCE["universality"]}
    return run.finish(summary)


def cmd_steer(run: Run) -> dict:
    from molmech.steering.steer import steering_sweep
    cfg = run.cfg
    state = _model(run, cfg.model)
    saes = {int(l): _sae(run, p, f"sae_L{l}").sae for l, p in sorted(cfg.saes.items())}
    targets = list(cfg.targets) or _split(run, cfg.corpus, cfg.split, cfg.n_targets, cfg.seed)
    reports = steering_sweep(state, saes, targets, sorted(saes), cfg.alphas, cfg.n_samples, cfg.seed, cfg.k,
                             cfg.n_baseline, cfg.temperature)
    write_tsv(run.output("report", "steer.tsv"), [r.row() for r in reports])
    recs = [{"target": r.spec.target, "layer": r.spec.layer, "alpha": r.spec.alpha, **rec}
            for r in reports for rec in r.records]
    write_tsv(run.output("records", "samples.tsv"), recs)
    from molmech.smiles.fingerprint import morgan_fingerprint
    from molmech.smiles.graph import try_parse
    fp_rows = []
    for rec in recs:
        g = try_parse(rec["smiles"]) if rec["valid"] else None
        if g is not None:
            fp_rows.append({"target": rec["target"], "layer": rec["layer"], "alpha": rec["alpha"],
                            "smiles": rec["smiles"], "on_bits": " ".join(map(str, morgan_fingerprint(g).on_bits()))})
    write_tsv(run.output("fingerprints", "fingerprints.tsv"), fp_rows)
    summary = {"targets": targets, "layers": sorted(saes), "alphas": cfg.alphas, "k": cfg.k,
               "n_cells": len(reports), "flagged": [r.row() for r in reports if r.flags],
               "latent_hashes": {f"{r.spec.target}|L{r.spec.layer}": r.latent_hash for r in reports}}
    return run.finish(summary)


def cmd_report(run: Run) -> dict:
    root = Path(run.cfg.run_dir)
    root = root if root.is_absolute() else run.out_dir / root
    manifests = [m for m in read_manifests(root) if m["command"] != "report"]
    if not manifests:
        raise DataError(f"no manifests under {root}")
    hashes = check_consistency(manifests)
    versions = sorted({m["code_version"] for m in manifests})
    collated = {m["command"] + (f".{m['tag']}" if m["tag"] else ""): m["summary"] for m in manifests}
    summary = {"commands": sorted(collated), "code_versions": versions, "n_artifacts": len(hashes),
               "results": collated}
    write_json(run.output("summary", "summary.json"), summary)
    (run.dir / "summary.md").write_text(_markdown(collated))
    run.outputs["markdown"] = (run.dir / "summary.md").resolve()
    return run.finish({"commands": sorted(collated), "code_versions": versions})


def _markdown(results: dict) -> str:
    lines = ["# molmech run summary", ""]
    for name in sorted(results):
        lines.append(f"## {name}")
        lines.append("")
        for k, v in sorted(results[name].items()):
            if isinstance(v, (dict, list)):
                v = json.dumps(v, default=_default)
                if len(v) > 300:
                    v = v[:297] + "..."
            lines.append(f"- {k}: {v}")
        lines.append("")
    return "\n".join(lines)


def cmd_export_features(run: Run) -> dict:
    from molmech.features.export import LabelMismatch, export_features, read_labels, save_features
    cfg = run.cfg
    if not cfg.labels:
        raise ConfigError("export-features needs labels=<smiles<TAB>value file>")
    state = _model(run, cfg.model)
    sae_state = _sae(run, cfg.sae)
    try:
        smiles, values = read_labels(run.input("labels", cfg.labels, user_file=True))
        fs = export_features(state, sae_state, smiles, values)
    except LabelMismatch as e:
        raise DataError(f"label mismatch: {e}") from None
    save_features(fs, run.output("features", "features.bin"))
    return run.finish({"n_molecules": len(smiles), "layer": fs.layer,
                       "dims": {k: int(fs.matrix(k).shape[1]) for k in ("sae", "dense", "fingerprint")}})


def cmd_fit_simple_head(run: Run) -> dict:
    from molmech.features.export import LabelMismatch, load_features
    from molmech.features.head import fit_simple_head
    cfg = run.cfg
    fs = load_features(run.input("features", cfg.features))
    try:
        res = fit_simple_head(fs.matrix(cfg.feature_set), fs.labels, fs.smiles, cfg.task, cfg.l2_grid, cfg.n_folds)
    except LabelMismatch as e:
        raise DataError(f"label mismatch: {e}") from None
    except ValueError as e:
        raise ConfigError(str(e)) from None
    out = asdict(res)
    out["per_l2"] = {str(k): v for k, v in res.per_l2.items()}
    write_json(run.output("metrics", f"head_{cfg.feature_set}.json"), out)
    return run.finish(out)


COMMANDS: dict[str, Callable[[Run], dict]] = {
    "gen-corpus": cmd_gen_corpus, "prepare-corpus": cmd_prepare_corpus, "train-lm": cmd_train_lm,
    "dump-activations": cmd_dump_activations, "train-sae": cmd_train_sae, "analyze-circuits": cmd_analyze_circuits,
    "probe-valence": cmd_probe_valence, "screen-features": cmd_screen_features, "robustness": cmd_robustness,
    "universality": cmd_universality, "steer": cmd_steer, "report": cmd_report,
    "export-features": cmd_export_features, "fit-simple-head": cmd_fit_simple_head,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="molmech", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON config file for the command")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value; dotted keys reach nested records; value parsed as JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out-dir", default="run", help="run directory (default: ./run)")
    p.add_argument("--threads", type=int, help="torch threads (default: $MOLMECH_THREADS or 1)")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = args.threads if args.threads is not None else int(os.environ.get("MOLMECH_THREADS", "1"))
        if threads < 1:
            raise ConfigError("threads must be >= 1")
        torch.set_num_threads(threads)
        cfg = C.load_config(args.command, args.config, args.overrides, args.seed)
        if args.print_config:
            print(json.dumps(C.to_dict(cfg), indent=2, sort_keys=True))
            return 0
        out_dir = Path(args.out_dir).resolve()
        out_dir.mkdir(parents=True, exist_ok=True)
        tag = getattr(cfg, "name", "") or (f"L{cfg.layer}" if args.command == "train-sae" else "")
        if args.command == "fit-simple-head":
            tag = cfg.feature_set
        try:
            with FileLock(str(out_dir / ".molmech.lock"), timeout=0):
                run = Run(args.command, cfg, out_dir, tag)
                t0 = time.perf_counter()
                summary = COMMANDS[args.command](run)
        except Timeout:
            raise DataError(f"{out_dir} is locked by another molmech process") from None
        log(f"{args.command} finished in {time.perf_counter() - t0:.1f}s")
        print(json.dumps(summary, indent=2, sort_keys=True, default=_default))
        return 0
    except CliError as e:
        log(f"error: {e}")
        return e.exit_code
    except (FileNotFoundError, CorruptFile, VersionMismatch) as e:
        log(f"data error: {e}")
        return DataError.exit_code
    except (NonFiniteLoss, FloatingPointError) as e:
        log(f"numeric failure: {e}")
        return NumericError.exit_code


if __name__ == "__main__":
    sys.exit(main())
