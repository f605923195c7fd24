"""Corpus, split, pattern and fingerprint-dump file formats."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Sequence

from molmech.smiles.fingerprint import Fingerprint
from molmech.smiles.fragments import FragmentPattern, compile_pattern

FP_MAGIC = b"MFPB"
FP_VERSION = 1
_FP_HEADER = struct.Struct("<4sIIQ")


def read_corpus(path: str | Path) -> list[str]:
    """Newline-delimited SMILES; blank lines and ``#`` comments skipped."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        s = line.strip()
        if s and not s.startswith("#"):
            out.append(s)
    return out


def write_corpus(path: str | Path, smiles: Iterable[str]) -> None:
    Path(path).write_text("".join(s + "\n" for s in smiles), encoding="utf-8")


def write_splits(path: str | Path, smiles: Sequence[str], splits: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s, sp in zip(smiles, splits):
            fh.write(f"{s}\t{sp}\n")


def read_splits(path: str | Path) -> list[tuple[str, str]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        smi, split = line.split("\t")
        if split not in ("train", "val", "test"):
            raise ValueError(f"bad split label {split!r}")
        rows.append((smi, split))
    return rows


def read_patterns(path: str | Path) -> list[FragmentPattern]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, text = line.split("\t")
        out.append(compile_pattern(text.strip(), name.strip()))
    return out


def default_patterns_path() -> Path:
    return Path(__file__).resolve().parent.parent / "data" / "fragments.tsv"


def write_fingerprints(path: str | Path, fps: Sequence[Fingerprint], nbits: int) -> None:
    with open(path, "wb") as fh:
        fh.write(_FP_HEADER.pack(FP_MAGIC, FP_VERSION, nbits, len(fps)))
        for fp in fps:
            if fp.nbits != nbits:
                raise ValueError("mixed fingerprint widths")
            fh.write(fp.to_bytes())


def read_fingerprints(path: str | Path) -> list[Fingerprint]:
    data = Path(path).read_bytes()
    if len(data) < _FP_HEADER.size:
        raise ValueError("truncated fingerprint dump")
    magic, version, nbits, count = _FP_HEADER.unpack_from(data)
    if magic != FP_MAGIC:
        raise ValueError("not a fingerprint dump")
    if version != FP_VERSION:
        raise ValueError(f"unsupported fingerprint dump version {version}")
    width = nbits // 8
    body = data[_FP_HEADER.size:]
    if len(body) != width * count:
        raise ValueError("fingerprint dump size does not match header")
    return [Fingerprint.from_bytes(body[i * width:(i + 1) * width]) for i in range(count)]
