from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from filelock import FileLock

from molmech.cli import config as C
from molmech.cli.errors import ConfigError
from molmech.cli.main import main
from molmech.cli.manifest import file_sha256, read_manifests
from molmech.features.export import FeatureSet, LabelMismatch, load_features, read_labels, save_features
from molmech.features.head import fit_simple_head
from molmech.smiles.generate import generate_corpus

TINY_LM = ["--set", "model.n_layers=2", "--set", "model.n_heads=2", "--set", "model.d_model=16",
           "--set", "model.d_ff=32", "--set", "train.steps=30", "--set", "train.batch_size=16",
           "--set", "train.warmup=5", "--set", "eval_samples=20", "--set", "eval_molecules=50"]


def run_cli(tmp: Path, *args: str) -> int:
    return main([*args, "--out-dir", str(tmp)])


def test_unknown_key_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 10, "bogus": 1}))
    assert run_cli(tmp_path, "gen-corpus", "--config", str(cfg)) == 2
    with pytest.raises(ConfigError):
        C.load_config("train-lm", overrides=["model.wrong=3"])


def test_overrides_and_types():
    cfg = C.load_config("train-lm", overrides=["train.steps=12", "model.d_model=32", "train.lr=1"], seed=9)
    assert cfg.train.steps == 12 and cfg.model.d_model == 32 and cfg.train.lr == 1.0 and cfg.seed == 9
    with pytest.raises(ConfigError):
        C.load_config("train-lm", overrides=["train.steps=\"many\""])
    with pytest.raises(ConfigError):
        C.load_config("gen-corpus", overrides=["schema_version=7"])
    assert C.config_hash(C.load_config("gen-corpus")) == C.config_hash(C.GenCorpusConfig())


def test_missing_checkpoint_exit_3(tmp_path, capsys):
    assert run_cli(tmp_path, "dump-activations", "--set", "model=nope.ckpt") == 3
    assert "file not found" in capsys.readouterr().err


def test_invalid_model_config_exit_2(tmp_path):
    assert run_cli(tmp_path, "gen-corpus", "--set", "n=40") == 0
    assert run_cli(tmp_path, "train-lm", "--set", "model.d_model=15") == 2


def test_gen_corpus_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(a, "gen-corpus", "--set", "n=200", "--seed", "4") == 0
    assert run_cli(b, "gen-corpus", "--set", "n=200", "--seed", "4") == 0
    for f in ("corpus.smi", "splits.tsv"):
        assert file_sha256(a / "corpus" / f) == file_sha256(b / "corpus" / f)
    m = json.loads((a / "corpus" / "gen-corpus.manifest.json").read_text())
    assert m["config"]["seed"] == 4 and set(m["outputs"]) == {"corpus", "splits"}


def test_prepare_corpus_filters(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    Path("in.smi").write_text("CCO\nc1ccccc1CCN\nnot-smiles(\nCCCCCCCCCCCC\nc1ccc(cc1)C(=O)Nc1ccccc1\n")
    assert run_cli(tmp_path / "run", "prepare-corpus", "--set", "input=in.smi") == 0
    kept = (tmp_path / "run" / "corpus" / "corpus.smi").read_text().split()
    rejected = (tmp_path / "run" / "corpus" / "rejected.tsv").read_text()
    assert len(kept) == 1  # benzanilide; the rest are too light, acyclic or invalid
    assert "invalid" in rejected and "mw" in rejected
    Path("light.smi").write_text("CCO\n")
    assert run_cli(tmp_path / "run2", "prepare-corpus", "--set", "input=light.smi") == 3


def test_locked_run_dir_exit_3(tmp_path):
    tmp_path.mkdir(exist_ok=True)
    with FileLock(str(tmp_path / ".molmech.lock")):
        assert run_cli(tmp_path, "gen-corpus", "--set", "n=5") == 3


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert run_cli(d, "gen-corpus", "--set", "n=300", "--seed", "1") == 0
    assert run_cli(d, "train-lm", *TINY_LM) == 0
    assert run_cli(d, "dump-activations", "--set", "max_molecules=100") == 0
    for layer, extra in ((0, []), (1, []), (1, ["--set", "sae.expansion=4", "--set", "name=sae_L1_x4"])):
        assert run_cli(d, "train-sae", "--set", f"layer={layer}", "--set", "sae.steps=50", "--set", "sweep=false",
                       "--set", "eval_molecules=20", "--set", "gen_samples=10", *extra) == 0
    return d


def test_pipeline_commands_and_report(tiny_run):
    d = tiny_run
    common = ["--set", "split=train"]
    assert run_cli(d, "analyze-circuits", *common, "--set", "n_molecules=20", "--set", "ablation_samples=10") == 0
    assert run_cli(d, "probe-valence", *common, "--set", "n_molecules=60", "--set", "n_boot=50",
                   "--set", "steer_molecules=20") == 0
    assert run_cli(d, "screen-features", *common, "--set", "n_molecules=40") == 0
    assert run_cli(d, "robustness", *common, "--set", "n_molecules=10", "--set", "n_seeds=1") == 0
    assert run_cli(d, "universality", "--set", "sae_large=sae/sae_L1_x4.ckpt") == 0
    assert run_cli(d, "steer", *common, "--set", "n_targets=1", "--set", "alphas=[0.0, 0.8]",
                   "--set", "n_samples=6", "--set", "n_baseline=6") == 0
    assert run_cli(d, "report") == 0
    summary = json.loads((d / "report" / "summary.json").read_text())
    for cmd in ("gen-corpus", "train-lm", "train-sae", "steer", "universality", "probe-valence"):
        assert any(c.startswith(cmd) for c in summary["commands"])
    steer = (d / "steer" / "steer.tsv").read_text().splitlines()
    assert len(steer) == 1 + 2 * 2  # two layers x two alphas
    alpha0 = [l for l in steer[1:] if l.split("\t")[2] == "0"]
    assert alpha0 and all(l.split("\t")[steer[0].split("\t").index("delta_validity")] == "0" for l in alpha0)


def test_rerun_reproduces_hashes(tiny_run, tmp_path):
    d = tiny_run
    before = {k: v["sha256"] for m in read_manifests(d) if m["command"] == "dump-activations"
              for k, v in m["outputs"].items()}
    assert run_cli(d, "dump-activations", "--set", "max_molecules=100") == 0
    after = {k: v["sha256"] for m in read_manifests(d) if m["command"] == "dump-activations"
             for k, v in m["outputs"].items()}
    assert before == after


def test_report_refuses_mixed_hashes(tiny_run, tmp_path):
    import shutil
    d = tmp_path / "copy"
    shutil.copytree(tiny_run, d)
    # rewrite the activations under a different molecule budget; train-sae manifests still cite the old hash
    assert run_cli(d, "dump-activations", "--set", "max_molecules=50") == 0
    assert run_cli(d, "report") == 3


def test_export_and_head(tiny_run, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    smiles = generate_corpus(30, seed=8)
    Path("labels.tsv").write_text("smiles\tvalue\n" + "".join(f"{s}\t{len(s)}\n" for s in smiles))
    assert run_cli(tiny_run, "export-features", "--set", "labels=labels.tsv") == 0
    fs = load_features(tiny_run / "export" / "features.bin")
    assert fs.sae.shape[0] == 30 and fs.fingerprint.shape == (30, 2048)
    assert run_cli(tiny_run, "fit-simple-head", "--set", "feature_set=dense") == 0
    Path("bad.tsv").write_text("CCO\t1\nCCN\tabc\n")
    assert run_cli(tiny_run, "export-features", "--set", "labels=bad.tsv") == 3


def test_read_labels_rejects_bad_rows(tmp_path):
    p = tmp_path / "l.tsv"
    p.write_text("CCO\t1\nCCN 2\n")
    with pytest.raises(LabelMismatch):
        read_labels(p)


def _synthetic_features(n=600, d=12, seed=0):
    rng = np.random.default_rng(seed)
    smiles = generate_corpus(n, seed=seed)
    x = rng.normal(size=(n, d))
    return smiles, x, rng


def test_head_linear_labels_recovered():
    smiles, x, rng = _synthetic_features()
    y = x @ rng.normal(size=x.shape[1]) + 0.5
    res = fit_simple_head(x, y, smiles, "regression")
    assert res.metric == "rmse" and res.score < 1e-3


def test_head_shuffled_labels_chance_auc():
    smiles, x, rng = _synthetic_features(2000, seed=1)
    y = (x[:, 0] > 0).astype(float)
    y = rng.permutation(y)
    res = fit_simple_head(x, y, smiles, "classification")
    assert abs(res.score - 0.5) < 0.05


def test_head_duplicated_features_identical():
    smiles, x, rng = _synthetic_features(300, seed=2)
    y = x[:, 1] + 0.1 * rng.normal(size=300)
    a = fit_simple_head(x, y, smiles, "regression")
    b = fit_simple_head(x.copy(), y.copy(), list(smiles), "regression")
    assert a == b


def test_head_label_mismatch():
    smiles, x, _ = _synthetic_features(50)
    with pytest.raises(LabelMismatch):
        fit_simple_head(x, np.zeros(49), smiles)
    with pytest.raises(LabelMismatch):
        fit_simple_head(x, np.full(50, 0.5), smiles, "classification")


def test_feature_container_round_trip(tmp_path):
    fs = FeatureSet(["CCO", "CCN"], np.array([1.0, 2.0]), np.ones((2, 4)), np.zeros((2, 3)),
                    np.zeros((2, 2048), dtype=np.uint8), 1)
    save_features(fs, tmp_path / "f.bin")
    back = load_features(tmp_path / "f.bin")
    assert back.smiles == fs.smiles and np.array_equal(back.sae, fs.sae) and back.layer == 1
