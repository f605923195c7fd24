"""Model state bundle (config, vocabulary, weights, optimizer, RNG) and its persistence."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from molmech.model.checkpoint import read_container, write_container
from molmech.model.config import ModelConfig, Vocab
from molmech.model.transformer import Transformer


@dataclass
class ModelState:
    config: ModelConfig
    vocab: Vocab
    model: Transformer
    optimizer: dict | None = None  # torch optimizer state_dict
    step: int = 0
    rng_state: dict | None = None  # numpy bit-generator state of the batch sampler
    extra: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, config: ModelConfig, vocab: Vocab) -> "ModelState":
        if config.vocab_size != len(vocab):
            raise ValueError(f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}")
        return cls(config, vocab, Transformer(config))


def _optimizer_tensors(opt: dict | None) -> tuple[dict, dict]:
    if opt is None:
        return {}, {}
    tensors, scalars = {}, {}
    for pid, st in opt["state"].items():
        for key, val in st.items():
            name = f"optim.{pid}.{key}"
            if torch.is_tensor(val) and val.dim() > 0:
                tensors[name] = val.detach().cpu().numpy()
            else:
                scalars[name] = float(val)
    return tensors, {"scalars": scalars, "param_groups": opt["param_groups"]}


def save_model(state: ModelState, path: str | Path) -> str:
    tensors = {f"param.{k}": v.detach().cpu().numpy() for k, v in state.model.state_dict().items()}
    opt_tensors, opt_meta = _optimizer_tensors(state.optimizer)
    tensors.update(opt_tensors)
    meta = {
        "config": state.config.to_dict(),
        "vocab": state.vocab.tokens,
        "step": state.step,
        "rng_state": state.rng_state,
        "optimizer": opt_meta,
        "extra": state.extra,
    }
    return write_container(path, "lm", meta, tensors)


def load_model(path: str | Path) -> ModelState:
    meta, tensors = read_container(path, kind="lm")
    cfg = ModelConfig(**meta["config"])
    vocab = Vocab(meta["vocab"])
    model = Transformer(cfg)
    params = {k[len("param."):]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("param.")}
    model.load_state_dict(params, strict=True)
    optimizer = None
    if meta["optimizer"]:
        state: dict = {}
        for name, arr in tensors.items():
            if name.startswith("optim."):
                _, pid, key = name.split(".", 2)
                state.setdefault(int(pid), {})[key] = torch.from_numpy(arr)
        for name, val in meta["optimizer"]["scalars"].items():
            _, pid, key = name.split(".", 2)
            state.setdefault(int(pid), {})[key] = torch.tensor(val, dtype=torch.float32)
        optimizer = {"state": state, "param_groups": meta["optimizer"]["param_groups"]}
    return ModelState(cfg, vocab, model, optimizer, meta["step"], meta["rng_state"], meta.get("extra", {}))


def rng_to_json(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def rng_from_json(state: dict) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)
