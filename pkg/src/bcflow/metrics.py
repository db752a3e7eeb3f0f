"""Flow accuracy metrics and precision/recall evaluation of uncertainty maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_flow, same_size


class MetricError(ValueError):
    pass


def _valid_mask(valid, shape):
    if valid is None:
        return np.ones(shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != shape:
        raise ValueError(f"valid mask shape {valid.shape} does not match {shape}")
    return valid


def epe_map(w, w_star) -> np.ndarray:
    w = as_flow(w)
    w_star = as_flow(w_star)
    same_size(w, w_star)
    d = w - w_star
    return np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)


def epe(w, w_star, valid=None) -> tuple[float, np.ndarray]:
    """Mean endpoint error over valid pixels and the per-pixel error map."""
    err = epe_map(w, w_star)
    valid = _valid_mask(valid, err.shape)
    if not valid.any():
        raise MetricError("no valid pixels: mean EPE is undefined")
    return float(np.mean(err[valid])), err


def fl_all(w, w_star, valid=None) -> float:
    """Percentage of valid pixels with EPE > 3 px and EPE > 5% of ``|w_star|``."""
    err = epe_map(w, w_star)
    valid = _valid_mask(valid, err.shape)
    if not valid.any():
        raise MetricError("no valid pixels: Fl-all is undefined")
    w_star = as_flow(w_star)
    mag = np.sqrt(w_star[..., 0] ** 2 + w_star[..., 1] ** 2)
    outlier = (err > 3.0) & (err > 0.05 * mag)
    return 100.0 * np.count_nonzero(outlier & valid) / np.count_nonzero(valid)


def weighted_epe(w_branch, w_star, weight) -> tuple[float, float]:
    """Endpoint error accumulated under per-pixel weights.

    Returns ``(sum, mean)`` with ``sum = sum_x weight(x) * |w - w*|`` and
    ``mean = sum / sum_x weight(x)``. Pass ``1 - alpha*`` to score the
    physical branch where brightness constancy holds, ``alpha*`` for the
    augmentation branch.
    """
    err = epe_map(w_branch, w_star)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.shape != err.shape:
        raise ValueError("weight map must match the flow size")
    if np.any(weight < 0) or np.any(weight > 1):
        raise ValueError("weights must lie in [0, 1]")
    total = float(np.sum(weight * err))
    wsum = float(np.sum(weight))
    if wsum == 0:
        raise MetricError("weights sum to zero: weighted mean EPE is undefined")
    return total, total / wsum


@dataclass
class PrCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    average_precision: float


def occlusion_pr(alpha, occ_gt) -> PrCurve:
    """Precision/recall of ``alpha >= t`` as a detector of ``occ_gt``.

    Thresholds are the distinct values of ``alpha`` in ascending order. The
    average precision is the area under the step function
    ``sum_i (R_i - R_{i+1}) P_i`` taken from the highest threshold down.
    """
    scores = np.asarray(alpha, dtype=np.float64).ravel()
    labels = np.asarray(occ_gt, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError("alpha and occlusion mask differ in size")
    npos = int(labels.sum())
    if npos == 0:
        raise MetricError("occlusion mask has no positives")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(labels[order])
    fp = np.cumsum(~labels[order])
    # Last index of each run of equal scores: everything up to it is detected.
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = tp[last].astype(np.float64)
    fp = fp[last].astype(np.float64)
    precision = tp / (tp + fp)
    recall = tp / npos
    prev = np.r_[0.0, recall[:-1]]
    ap = float(np.sum((recall - prev) * precision))
    # Report in ascending threshold order.
    return PrCurve(s[last][::-1].copy(), precision[::-1].copy(), recall[::-1].copy(), ap)


def bc_violation_mask(divergence, eps: float = 0.01) -> np.ndarray:
    """Pixels where brightness constancy fails: divergence above ``eps``."""
    return np.asarray(divergence) > eps
