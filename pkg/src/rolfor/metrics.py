"""Forecast error metrics (ADE, FDE) and top-k ordering accuracy."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor
from .errors import ShapeError, ValidationError
from .gamedata import N_PLAYERS

METRICS_CSV_COLUMNS = ("run_id", "variant", "ordering", "ade", "fde",
                       "topk1", "topk3", "topk5", "topk10", "seed")


@dataclass
class ForecastErrors:
    ade: float
    fde: float
    per_sequence: list = field(default_factory=list)  # (sequence_id, ade, fde)


def _as_pred_gt(pred, gt):
    p = pred.array if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    g = gt.array if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeError(f"prediction shape {p.shape} vs ground truth shape {g.shape}")
    if p.ndim != 3 or p.shape[-1] != 2:
        raise ShapeError(f"expected [frames, players, 2], got {p.shape}")
    return p, g


def ade(pred, gt) -> float:
    """Mean Euclidean distance over all future frames and players (meters)."""
    p, g = _as_pred_gt(pred, gt)
    return float(np.mean(np.linalg.norm(p - g, axis=-1)))


def fde(pred, gt) -> float:
    """Mean Euclidean distance at the final frame only (meters)."""
    p, g = _as_pred_gt(pred, gt)
    return float(np.mean(np.linalg.norm(p[-1] - g[-1], axis=-1)))


def _check_permutation(order, name):
    order = [int(i) for i in order]
    if sorted(order) != list(range(N_PLAYERS)):
        raise ValidationError(f"{name} is not a permutation of 0..{N_PLAYERS - 1}: {order}")
    return order


def topk_ordering_accuracy(pred_order, true_order, k: int) -> float:
    """Fraction of the first k slots holding exactly the right player."""
    pred_order = _check_permutation(pred_order, "pred_order")
    true_order = _check_permutation(true_order, "true_order")
    if not 1 <= k <= N_PLAYERS:
        raise ValidationError(f"k must be in 1..{N_PLAYERS}, got {k}")
    hits = sum(1 for i in range(k) if pred_order[i] == true_order[i])
    return hits / k


def write_metrics_csv(rows, path):
    """Write evaluation rows ({column: value} dicts) with the fixed schema."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in METRICS_CSV_COLUMNS])


def _format_cell(value):
    if isinstance(value, float):
        return repr(value)
    return value
