"""Evaluation metrics for ddG predictors, computed per interaction and averaged.

Stabilising means ddG < 0. Mutations of different complexes are never
pooled: every metric is evaluated inside one group and groups are averaged
with equal weight.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "DegenerateInput",
    "SingleClass",
    "PredictionSet",
    "MetricReport",
    "spearman",
    "pearson",
    "stabilizing_precision_recall",
    "roc_auc",
    "mae_rmse",
    "precision_at",
    "per_ppi_aggregate",
    "evaluate",
    "TABLE_COLUMNS",
    "format_table",
]


log = logging.getLogger(__name__)


class DegenerateInput(ValueError):
    pass


class SingleClass(ValueError):
    pass


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-d and of equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y)
    if len(x) < 2:
        raise DegenerateInput("need at least two items")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise DegenerateInput("constant input")
    r = np.dot(dx, dy) / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = _pair(x, y)
    return pearson(rankdata(x), rankdata(y))


def stabilizing_precision_recall(pred, truth) -> tuple[float | None, float | None]:
    """Precision and recall of calling ddG < 0; ``None`` where undefined."""
    p, t = _pair(pred, truth)
    if len(p) == 0:
        raise ValueError("empty input")
    pp, tp = p < 0, t < 0
    hits = int(np.count_nonzero(pp & tp))
    n_pred, n_true = int(pp.sum()), int(tp.sum())
    return (hits / n_pred if n_pred else None, hits / n_true if n_true else None)


def roc_auc(pred, truth) -> float:
    """AUC for separating stabilising mutations, scored by ``-pred``.

    Mann-Whitney formulation; tied scores count one half.
    """
    p, t = _pair(pred, truth)
    pos = t < 0
    n_pos = int(pos.sum())
    n_neg = len(t) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("both stabilising and non-stabilising labels are required")
    ranks = rankdata(-p)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def mae_rmse(pred, truth) -> tuple[float, float]:
    p, t = _pair(pred, truth)
    if len(p) == 0:
        raise ValueError("empty input")
    err = p - t
    return float(np.mean(np.abs(err))), float(math.sqrt(np.mean(err * err)))


def _top_count(k, n: int) -> int:
    return math.ceil(Fraction(str(k)) * n / 100)


def precision_at(pred, favorable, ks: Sequence[float] = (5, 10)) -> dict[str, float]:
    """P@1 and P@k% for a ranking by ascending predicted ddG.

    Ties keep input order. Values are fractions in [0, 1]; P@k% looks at the
    top ``ceil(k% * n)`` items.
    """
    p = np.asarray(pred, dtype=np.float64)
    fav = np.asarray(favorable, dtype=bool)
    if p.shape != fav.shape or p.ndim != 1 or len(p) == 0:
        raise ValueError("pred and favorable must be non-empty and of equal length")
    order = np.argsort(p, kind="stable")
    ranked = fav[order]
    out = {"P@1": float(ranked[0])}
    for k in ks:
        top = max(1, _top_count(k, len(p)))
        out[f"P@{k:g}%"] = float(ranked[:top].mean())
    return out


# --------------------------------------------------------------------------
# grouped evaluation

@dataclass
class PredictionSet:
    """Per-complex lists of ``(predicted, true)`` ddG pairs."""

    groups: dict[str, list[tuple[float, float]]] = field(default_factory=dict)

    def add(self, complex_id: str, pred: float, true: float) -> None:
        self.groups.setdefault(complex_id, []).append((float(pred), float(true)))

    def arrays(self, complex_id: str) -> tuple[np.ndarray, np.ndarray]:
        a = np.asarray(self.groups[complex_id], dtype=np.float64).reshape(-1, 2)
        return a[:, 0], a[:, 1]

    @classmethod
    def from_csv(cls, fh: IO[str], impute: float | None = None) -> "PredictionSet":
        """Read ``complex_id, mutation, pred_ddg, true_ddg`` rows.

        Blank predictions fail unless ``impute`` is given (e.g. ``ppidedup.ddg.IMPUTED_DDG``).
        """
        ps = cls()
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            raw = (row.get("pred_ddg") or "").strip()
            if not raw:
                if impute is None:
                    raise ValueError(f"line {lineno}: missing prediction")
                raw = str(impute)
            ps.add(row["complex_id"], float(raw), float(row["true_ddg"]))
        return ps


def _metric(name: str) -> Callable[[np.ndarray, np.ndarray], float | None]:
    table = {
        "spearman": spearman,
        "pearson": pearson,
        "precision": lambda p, t: stabilizing_precision_recall(p, t)[0],
        "recall": lambda p, t: stabilizing_precision_recall(p, t)[1],
        "roc_auc": roc_auc,
        "mae": lambda p, t: mae_rmse(p, t)[0],
        "rmse": lambda p, t: mae_rmse(p, t)[1],
    }
    return table[name]


TABLE_COLUMNS = ("spearman", "pearson", "precision", "recall", "roc_auc", "mae", "rmse")
_HEADERS = {
    "spearman": "Spearman", "pearson": "Pearson", "precision": "Precision",
    "recall": "Recall", "roc_auc": "ROC AUC", "mae": "MAE", "rmse": "RMSE",
}


def per_ppi_aggregate(prediction_set: PredictionSet, metric: str) -> dict:
    """Evaluate ``metric`` per complex and average over the groups where it is defined."""
    fn = _metric(metric)
    values: dict[str, float] = {}
    excluded: dict[str, str] = {}
    for cid in sorted(prediction_set.groups):
        p, t = prediction_set.arrays(cid)
        try:
            v = fn(p, t)
        except (DegenerateInput, SingleClass) as exc:
            excluded[cid] = str(exc)
        else:
            if v is not None:
                values[cid] = v
                continue
            excluded[cid] = "undefined"
        log.info("%s: group %s excluded (%s)", metric, cid, excluded[cid])
    mean = float(np.mean(list(values.values()))) if values else None
    return {"metric": metric, "mean": mean, "groups": values, "excluded": excluded}


@dataclass
class MetricReport:
    rows: dict[str, dict]

    @property
    def aggregate(self) -> dict[str, float | None]:
        return {m: r["mean"] for m, r in self.rows.items()}

    def to_dict(self) -> dict:
        return {"aggregate": self.aggregate, "metrics": self.rows}


def evaluate(prediction_set: PredictionSet, metrics: Sequence[str] = TABLE_COLUMNS) -> MetricReport:
    return MetricReport({m: per_ppi_aggregate(prediction_set, m) for m in metrics})


def format_table(reports: Mapping[str, MetricReport]) -> str:
    """Plain-text table, one row per method, columns in the usual order."""
    head = ["Method", *(_HEADERS[c] for c in TABLE_COLUMNS)]
    body = []
    for name, rep in reports.items():
        agg = rep.aggregate
        body.append([name, *("-" if agg.get(c) is None else f"{agg[c]:.3f}" for c in TABLE_COLUMNS)])
    widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
    lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(row, widths)))
             for row in [head, *body]]
    return "\n".join(lines) + "\n"
