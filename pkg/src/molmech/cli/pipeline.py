"""The scripted desk-scale run: every command in order, with per-stage wall times."""

from __future__ import annotations

import json
import time
from pathlib import Path

from molmech.cli.main import main

DESK_STAGES: list[tuple[str, list[str]]] = [
    ("gen-corpus", ["--set", "n=200000", "--set", "max_atoms=20"]),
    ("train-lm", []),
    ("dump-activations", ["--set", "max_molecules=10000"]),
    ("train-sae", ["--set", "layer=0"]),
    ("train-sae", ["--set", "layer=1"]),
    ("train-sae", ["--set", "layer=1", "--set", "sae.expansion=16", "--set", "name=sae_L1_x16"]),
    ("analyze-circuits", []),
    ("probe-valence", []),
    ("screen-features", []),
    ("robustness", []),
    ("universality", []),
    ("steer", []),
    ("report", []),
]

TIMING_FILE = "pipeline_timing.json"


class StageFailed(RuntimeError):
    pass


def run_pipeline(out_dir: str | Path, seed: int = 0, stages=DESK_STAGES, extra: dict[str, list[str]] | None = None,
                 threads: int | None = None) -> dict:
    """Run ``stages`` into ``out_dir``; returns {"stages": [...], "total_seconds": ...}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    extra = extra or {}
    timings = []
    t_start = time.perf_counter()
    for command, args in stages:
        argv = [command, *args, *extra.get(command, []), "--seed", str(seed), "--out-dir", str(out)]
        if threads is not None:
            argv += ["--threads", str(threads)]
        t0 = time.perf_counter()
        code = main(argv)
        timings.append({"command": command, "args": args, "seconds": time.perf_counter() - t0, "exit_code": code})
        (out / TIMING_FILE).write_text(json.dumps({"stages": timings}, indent=2) + "\n")
        if code != 0:
            raise StageFailed(f"{command} {' '.join(args)} exited with {code}")
    result = {"stages": timings, "total_seconds": time.perf_counter() - t_start}
    (out / TIMING_FILE).write_text(json.dumps(result, indent=2) + "\n")
    return result
