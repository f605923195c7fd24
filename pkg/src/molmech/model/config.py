"""Model configuration and token vocabulary."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from molmech.smiles.tokens import tokenize

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
SPECIALS = (PAD, BOS, EOS)


class ContextOverflow(ValueError):
    pass


class UnknownToken(ValueError):
    pass


@dataclass
class ModelConfig:
    """Decoder-only transformer shape.  Defaults are the desk-scale model."""

    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    rope_theta: float = 100_000.0
    context_len: int = 64
    vocab_size: int = 48
    rmsnorm_eps: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if (self.d_model // self.n_heads) % 2:
            raise ValueError("head dimension must be even for rotary embeddings")
        if self.context_len < 2:
            raise ValueError("context_len must be >= 2")
        if self.vocab_size < len(SPECIALS) + 1:
            raise ValueError("vocab_size must cover the special tokens")
        if min(self.n_layers, self.n_heads, self.d_ff) < 1:
            raise ValueError("n_layers, n_heads and d_ff must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def full_scale(cls, vocab_size: int, seed: int = 0) -> "ModelConfig":
        return cls(n_layers=6, n_heads=8, d_model=512, d_ff=2048, context_len=256, vocab_size=vocab_size, seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)


class Vocab:
    """Token strings to ids; ids 0, 1, 2 are PAD, BOS and EOS."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:3]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate vocabulary entries")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    pad_id, bos_id, eos_id = 0, 1, 2

    @classmethod
    def from_corpus(cls, smiles: Iterable[str]) -> "Vocab":
        seen: set[str] = set()
        for s in smiles:
            seen.update(t.text for t in tokenize(s))
        return cls(list(SPECIALS) + sorted(seen))

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, smiles: str, add_eos: bool = True) -> list[int]:
        ids = [self.bos_id]
        for t in tokenize(smiles):
            i = self.index.get(t.text)
            if i is None:
                raise UnknownToken(f"token {t.text!r} not in vocabulary")
            ids.append(i)
        if add_eos:
            ids.append(self.eos_id)
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        """Text of the ids up to the first EOS, with specials dropped."""
        out = []
        for i in ids:
            if i == self.eos_id:
                break
            if i >= len(SPECIALS):
                out.append(self.tokens[i])
        return "".join(out)

    def ids_of(self, texts: Iterable[str]) -> list[int]:
        return [self.index[t] for t in texts if t in self.index]
