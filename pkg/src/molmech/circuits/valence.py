"""Valence probing: labels, softmax-regression probes, direction extraction and steering."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from scipy.optimize import minimize
from scipy.special import log_softmax

from molmech.circuits.stats import bootstrap_ci
from molmech.hashing import hash_ints
from molmech.model.activations import residuals_per_molecule
from molmech.model.state import ModelState
from molmech.model.train import pad_batch
from molmech.model.transformer import AddResidual
from molmech.smiles.graph import atom_token_valences, parse

N_CLASSES = 5
BOND_TOKENS = ("-", "=", "#")


class DegenerateLabels(ValueError):
    pass


@dataclass
class ValenceDataset:
    """Per atom token: residual features, remaining-valence label, molecule id."""

    features: dict[int, np.ndarray]  # layer -> (rows, d_model)
    labels: np.ndarray
    molecule: np.ndarray


def valence_dataset(state: ModelState, smiles: Sequence[str], layers: Sequence[int]) -> ValenceDataset:
    seqs, labels, rows = [], [], []
    for mi, s in enumerate(smiles):
        ids = state.vocab.encode(s)
        if len(ids) > state.config.context_len:
            continue
        k = len(seqs)
        seqs.append(ids)
        for tok, _, val in atom_token_valences(parse(s)):
            rows.append((k, tok + 1))
            labels.append(val)
    per = residuals_per_molecule(state, seqs, layers)
    feats = {l: np.stack([per[l][k][p] for k, p in rows]) for l in layers}
    return ValenceDataset(feats, np.asarray(labels, dtype=np.int64), np.asarray([k for k, _ in rows], dtype=np.int64))


def split_by_molecule(molecule: np.ndarray, test_fraction: float = 0.2, seed: int = 0) -> np.ndarray:
    """Boolean test mask; whole molecules go to one side, chosen by a seeded hash."""
    cut = int(test_fraction * 10_000)
    ids = np.unique(molecule)
    test_ids = {int(m) for m in ids if hash_ints([int(m)], seed) % 10_000 < cut}
    return np.isin(molecule, list(test_ids))


@dataclass
class ValenceProbe:
    weights: np.ndarray  # (5, d_model)
    bias: np.ndarray  # (5,)
    layer: int
    l2: float
    mean: np.ndarray  # feature centering applied before the linear map
    scale: np.ndarray
    class_means: np.ndarray  # (5, d_model) training-set activation means (nan for absent classes)
    regression_coef: np.ndarray | None = None  # least-squares slope of class index on activations
    class_counts: np.ndarray | None = None  # (5,) training rows per class
    metadata: dict = field(default_factory=dict)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.scale) @ self.weights.T + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.logits(x).argmax(axis=1)


def _softmax_objective(params, x, y_onehot, l2):
    n, d = x.shape
    w = params[: N_CLASSES * d].reshape(N_CLASSES, d)
    b = params[N_CLASSES * d:]
    z = x @ w.T + b
    logp = log_softmax(z, axis=1)
    loss = -(y_onehot * logp).sum() / n + 0.5 * l2 * (w * w).sum()
    g = (np.exp(logp) - y_onehot) / n
    gw = g.T @ x + l2 * w
    gb = g.sum(axis=0)
    return loss, np.concatenate([gw.ravel(), gb])


def fit_valence_probe(x: np.ndarray, y: np.ndarray, layer: int, l2: float = 1e-3, max_iter: int = 500) -> ValenceProbe:
    """L2-regularized multinomial logistic regression on standardized features (L-BFGS)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if np.unique(y).size < 2:
        raise DegenerateLabels("valence labels contain a single class")
    mean = x.mean(axis=0)
    scale = x.std(axis=0) + 1e-8
    xs = (x - mean) / scale
    d = x.shape[1]
    onehot = np.eye(N_CLASSES)[y]
    res = minimize(_softmax_objective, np.zeros(N_CLASSES * d + N_CLASSES), args=(xs, onehot, l2),
                   jac=True, method="L-BFGS-B", options={"maxiter": max_iter})
    w = res.x[: N_CLASSES * d].reshape(N_CLASSES, d)
    b = res.x[N_CLASSES * d:]
    class_means = np.full((N_CLASSES, d), np.nan)
    for c in range(N_CLASSES):
        if (y == c).any():
            class_means[c] = x[y == c].mean(axis=0)
    design = np.hstack([x, np.ones((x.shape[0], 1))])
    coef = np.linalg.lstsq(design, y.astype(np.float64), rcond=None)[0][:-1]
    counts = np.bincount(y, minlength=N_CLASSES)
    return ValenceProbe(w, b, layer, l2, mean, scale, class_means, coef, counts,
                        {"converged": bool(res.success), "iterations": int(res.nit), "n_train": int(len(y))})


@dataclass
class ProbeReport:
    layer: int
    accuracy: float
    ci: tuple[float, float]
    shuffle_accuracy: float
    majority_rate: float
    n_train: int
    n_test: int
    flagged: bool  # accuracy did not clear the shuffle control by 20 points


def evaluate_probe(x: np.ndarray, y: np.ndarray, molecule: np.ndarray, layer: int, seed: int = 0,
                   l2: float = 1e-3, n_boot: int = 1000) -> tuple[ValenceProbe, ProbeReport]:
    """Fit on training molecules, score held-out molecules, and run a label-shuffle control."""
    test = split_by_molecule(molecule, seed=seed)
    train = ~test
    probe = fit_valence_probe(x[train], y[train], layer, l2)
    correct = (probe.predict(x[test]) == y[test]).astype(np.float64)
    acc = float(correct.mean())
    ci = bootstrap_ci(correct, n_boot=n_boot, seed=seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    shuffled = rng.permutation(y[train])
    if np.unique(shuffled).size < 2:
        shuffle_acc = float("nan")
    else:
        ctrl = fit_valence_probe(x[train], shuffled, layer, l2)
        shuffle_acc = float((ctrl.predict(x[test]) == y[test]).mean())
    majority = float(np.bincount(y[test], minlength=N_CLASSES).max() / max(1, test.sum()))
    report = ProbeReport(layer, acc, ci, shuffle_acc, majority, int(train.sum()), int(test.sum()),
                         not acc >= shuffle_acc + 0.20)
    return probe, report


@dataclass
class SteeringDirection:
    vector: np.ndarray  # unit norm, length d_model
    layer: int
    method: str


def extract_direction(probe: ValenceProbe, method: str = "mean-shift") -> SteeringDirection:
    """Unit valence direction from a fitted probe.

    ``mean-shift``: least-squares slope of activations on the class index,
    i.e. the average change of the activation per unit of valence.
    ``regression``: least-squares slope of the class index on activations.
    ``class-slope``: least-squares slope of the class weight vectors against
    the class index, mapped back to activation units.  The sign is chosen so
    that class 4 projects above class 0 (or the highest above the lowest
    class present).
    """
    if method == "mean-shift":
        if probe.class_counts is None:
            raise ValueError("probe carries no class counts")
        present = probe.class_counts > 0
        k = np.arange(N_CLASSES, dtype=np.float64)[present]
        n = probe.class_counts[present].astype(np.float64)
        mu = probe.class_means[present]
        kc = k - (n * k).sum() / n.sum()
        w = (n * kc) @ mu / (n * kc * kc).sum()
    elif method == "regression":
        if probe.regression_coef is None:
            raise ValueError("probe carries no regression coefficients")
        w = np.asarray(probe.regression_coef, dtype=np.float64)
    elif method == "class-slope":
        c = np.arange(N_CLASSES) - (N_CLASSES - 1) / 2
        w = (c[:, None] * probe.weights).sum(axis=0) / probe.scale
    else:
        raise ValueError(f"unknown direction method {method!r}")
    norm = np.linalg.norm(w)
    if norm == 0:
        raise ValueError("zero direction")
    w = w / norm
    present = [k for k in range(N_CLASSES) if not np.isnan(probe.class_means[k]).any()]
    if len(present) >= 2:
        hi, lo = probe.class_means[max(present)], probe.class_means[min(present)]
        if hi @ w < lo @ w:
            w = -w
    return SteeringDirection(w, probe.layer, method)


@dataclass
class SteeringRow:
    alpha: float
    token: str
    subset: str  # all | explicit | implicit
    mean_delta: float
    ci: tuple[float, float]
    n_positions: int
    flips: int


def decision_positions(state: ModelState, smiles: str) -> tuple[list[int], list[int]]:
    """Sequence positions after which a bond symbol may be written, and their subset codes.

    A bond may follow an atom, a ring label or an opening parenthesis.  Code 1
    marks positions whose actual next token is a bond symbol (explicit), 0 an
    implicit single bond to a following atom, and -1 anything else.
    """
    toks = parse(smiles).tokens
    pos, code = [], []
    for t, tok in enumerate(toks):
        if tok.kind in ("atom", "bracket-atom", "ring-digit", "open-paren"):
            nxt = toks[t + 1] if t + 1 < len(toks) else None
            pos.append(t + 1)
            if nxt is not None and nxt.kind == "bond":
                code.append(1)
            elif nxt is not None and nxt.kind in ("atom", "bracket-atom"):
                code.append(0)
            else:
                code.append(-1)
    return pos, code


@torch.no_grad()
def steer_valence(state: ModelState, direction: SteeringDirection, alphas: Sequence[float], smiles: Sequence[str],
                  seed: int = 0, n_boot: int = 1000, batch_size: int = 64) -> list[SteeringRow]:
    """Logit change of each bond token at decision positions under ``x <- x + alpha * w``."""
    vocab = state.vocab
    tok_ids = {t: vocab.index.get(t) for t in BOND_TOKENS}
    vec = torch.as_tensor(direction.vector, dtype=torch.float32)
    prepared = []
    for s in smiles:
        ids = vocab.encode(s)
        if len(ids) > state.config.context_len:
            continue
        p, c = decision_positions(state, s)
        prepared.append((ids, p, c))
    rows: list[SteeringRow] = []
    collected = {a: {t: [] for t in BOND_TOKENS} for a in alphas}
    flips: dict[float, list[np.ndarray]] = {a: [] for a in alphas}
    codes_all: list[int] = []
    for i in range(0, len(prepared), batch_size):
        chunk = prepared[i:i + batch_size]
        x = pad_batch([c[0] for c in chunk], vocab.pad_id)
        mask = torch.zeros(x.shape, dtype=torch.bool)
        for j, (_, p, c) in enumerate(chunk):
            mask[j, p] = True
            codes_all.extend(c)
        clean = state.model(x).logits.double()
        sel = clean[mask]
        for a in alphas:
            steered = state.model(x, [AddResidual(direction.layer, vec, float(a), mask)]).logits.double()[mask]
            flips[a].append((steered.argmax(-1) != sel.argmax(-1)).numpy())
            for t, tid in tok_ids.items():
                if tid is not None:
                    collected[a][t].append((steered[:, tid] - sel[:, tid]).numpy())
    codes = np.asarray(codes_all)
    for a in alphas:
        flipped = np.concatenate(flips[a]) if flips[a] else np.zeros(0, dtype=bool)
        for t in BOND_TOKENS:
            if tok_ids[t] is None:
                continue
            d = np.concatenate(collected[a][t]) if collected[a][t] else np.zeros(0)
            for subset, m in (("all", np.ones_like(codes, dtype=bool)), ("explicit", codes == 1), ("implicit", codes == 0)):
                v = d[m] if d.size else d
                rows.append(SteeringRow(float(a), t, subset, float(v.mean()) if v.size else float("nan"),
                                        bootstrap_ci(v, n_boot, seed=seed), int(v.size), int(flipped[m].sum())))
    return rows
