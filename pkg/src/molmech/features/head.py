"""Linear heads on exported features with a fixed L2 grid and scaffold-grouped CV."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.linear_model import LogisticRegression, Ridge
from sklearn.metrics import mean_squared_error, roc_auc_score
from sklearn.model_selection import GroupKFold
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from molmech.features.export import LabelMismatch
from molmech.smiles.scaffold import scaffold_smiles

DEFAULT_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)


@dataclass
class HeadResult:
    task: str
    metric: str
    best_l2: float
    score: float  # CV metric at best_l2
    per_l2: dict[float, float] = field(default_factory=dict)
    n_folds: int = 0


def _model(task: str, l2: float):
    if task == "regression":
        return make_pipeline(StandardScaler(), Ridge(alpha=l2))
    return make_pipeline(StandardScaler(), LogisticRegression(C=1.0 / l2, max_iter=2000))


def fit_simple_head(x: np.ndarray, y: np.ndarray, smiles: Sequence[str], task: str = "regression",
                    l2_grid: Sequence[float] = DEFAULT_GRID, n_folds: int = 5) -> HeadResult:
    """Cross-validated RMSE (regression) or ROC-AUC (classification) with folds grouped by scaffold."""
    if task not in ("regression", "classification"):
        raise ValueError(f"unknown task {task!r}")
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0] or len(smiles) != y.shape[0]:
        raise LabelMismatch(f"{x.shape[0]} feature rows, {len(smiles)} molecules, {y.shape[0]} labels")
    if task == "classification":
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise LabelMismatch("classification labels must be 0/1")
        y = y.astype(int)
    scaffolds = [scaffold_smiles(s) for s in smiles]
    _, groups = np.unique(scaffolds, return_inverse=True)
    n_folds = min(n_folds, int(groups.max()) + 1)
    if n_folds < 2:
        raise LabelMismatch("need at least two scaffolds for grouped cross-validation")
    folds = list(GroupKFold(n_splits=n_folds).split(x, y, groups))
    per = {}
    for l2 in l2_grid:
        pred = np.empty(y.shape[0])
        for tr, te in folds:
            m = _model(task, l2).fit(x[tr], y[tr])
            pred[te] = m.predict(x[te]) if task == "regression" else m.predict_proba(x[te])[:, 1]
        if task == "regression":
            per[float(l2)] = float(np.sqrt(mean_squared_error(y, pred)))
        else:
            per[float(l2)] = float(roc_auc_score(y, pred))
    pick = min if task == "regression" else max
    best = pick(per, key=lambda k: (per[k], k))
    return HeadResult(task, "rmse" if task == "regression" else "roc_auc", best, per[best], per, n_folds)
