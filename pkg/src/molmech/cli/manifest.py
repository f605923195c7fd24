"""Per-run manifests: resolved config, hashes of inputs and outputs, code version."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import molmech
from molmech.cli.config import config_hash, to_dict
from molmech.cli.errors import DataError

MANIFEST_SUFFIX = ".manifest.json"


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def code_version() -> str:
    """Package version plus a digest of the package's Python sources."""
    root = Path(molmech.__file__).parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return f"{molmech.__version__}+{h.hexdigest()[:12]}"


def _relative(p: Path, root: Path) -> str:
    try:
        return p.resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return str(p.resolve())


def write_manifest(stage_dir: Path, run_dir: Path, command: str, tag: str, config: Any, inputs: dict[str, Path],
                   outputs: dict[str, Path], summary: dict | None = None) -> Path:
    """Write ``<command>[.<tag>].manifest.json`` into ``stage_dir``.

    Paths inside ``run_dir`` are stored relative to it so a run directory can be moved.
    """
    def entry(p: Path) -> dict:
        return {"path": _relative(Path(p), run_dir), "sha256": file_sha256(p)}

    manifest = {
        "command": command,
        "tag": tag,
        "config": to_dict(config),
        "config_hash": config_hash(config),
        "code_version": code_version(),
        "inputs": {k: entry(Path(v)) for k, v in sorted(inputs.items())},
        "outputs": {k: entry(Path(v)) for k, v in sorted(outputs.items())},
        "summary": summary or {},
    }
    path = stage_dir / ((f"{command}.{tag}" if tag else command) + MANIFEST_SUFFIX)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(x):
    if hasattr(x, "item"):
        return x.item()
    if hasattr(x, "tolist"):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def read_manifests(run_dir: Path) -> list[dict]:
    return [json.loads(p.read_text()) for p in sorted(run_dir.rglob(f"*{MANIFEST_SUFFIX}"))]


def check_consistency(manifests: list[dict]) -> dict[str, str]:
    """Every artifact referenced under one resolved path must carry one hash.

    An input recorded by a downstream command must also match the output hash
    recorded by the command that produced it.  Returns path -> sha256.
    """
    seen: dict[str, tuple[str, str]] = {}
    for m in manifests:
        for role in ("outputs", "inputs"):
            for entry in m[role].values():
                key = entry["path"]
                prev = seen.get(key)
                if prev is not None and prev[0] != entry["sha256"]:
                    raise DataError(f"mixed hashes for {entry['path']}: {prev[1]} and {m['command']} disagree")
                seen.setdefault(key, (entry["sha256"], m["command"]))
    return {k: v[0] for k, v in seen.items()}
