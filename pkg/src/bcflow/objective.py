"""The decomposed-flow training objective, its gradients, and a direct refiner.

Squared norms are pixel means, so the default weights do not depend on
image resolution. The six terms, in reporting order, are::

    p      mean |w_p - w_p*|^2
    a      mean |w_a - w_a*|^2
    total  mean |w - w*|^2,  w = (1 - alpha) w_p + alpha w_a
    photo  mean (1 - alpha*) |I1 - I2(x + w_p)|     (channel-mean L1)
    w      mean |w_a|^2 + |w_p|^2
    alpha  mean (alpha - alpha*)^2
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .core import (BORDER_CLAMP, as_flow, as_image, bilinear_gradient, fuse_flows, same_size,
                   sample_coordinates, warp_image)
from .decompose import Decomposition
from .photometric import channel_mean_abs

TERMS = ("p", "a", "total", "photo", "w", "alpha")


@dataclass(frozen=True)
class LossWeights:
    total: float = 1.0
    p: float = 0.1
    a: float = 0.01
    photo: float = 0.01
    w: float = 0.1
    alpha: float = 1.0
    # Unlabeled training: alpha is frozen and the photometric weight comes
    # from the predicted alpha instead of alpha*.
    block_alpha: bool = False
    photo_predicted_alpha: bool = False

    def __post_init__(self):
        for name in TERMS:
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {value}")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


DEFAULT_WEIGHTS = LossWeights()


@dataclass
class Fields:
    """Predicted (or refined) physical flow, augmentation flow and uncertainty."""

    w_p: np.ndarray
    w_a: np.ndarray
    alpha: np.ndarray

    def fused(self) -> np.ndarray:
        return fuse_flows(self.w_p, self.w_a, self.alpha)

    def copy(self) -> "Fields":
        return Fields(self.w_p.copy(), self.w_a.copy(), self.alpha.copy())


@dataclass
class GroundTruth:
    w_star: np.ndarray
    w_p: np.ndarray
    w_a: np.ndarray
    alpha: np.ndarray

    @classmethod
    def from_decomposition(cls, dec: Decomposition, w_star) -> "GroundTruth":
        return cls(as_flow(w_star), dec.w_p_star, dec.w_a_star, dec.alpha_star)


@dataclass
class LossBreakdown:
    terms: dict
    weights: LossWeights
    total: float = field(init=False)

    def __post_init__(self):
        self.total = float(sum(getattr(self.weights, name) * self.terms[name] for name in TERMS))

    def weighted(self) -> dict:
        return {name: getattr(self.weights, name) * self.terms[name] for name in TERMS}

    def to_text(self) -> str:
        lines = [f"total={self.total!r}"]
        lines += [f"term_{name}={self.terms[name]!r}" for name in TERMS]
        lines += [f"weighted_{name}={value!r}" for name, value in self.weighted().items()]
        return "\n".join(lines)


def _check(pred: Fields, gt: GroundTruth | None, i1, i2, weights: LossWeights):
    i1 = as_image(i1)
    i2 = as_image(i2)
    grids = [i1, i2, pred.w_p, pred.w_a, pred.alpha]
    if gt is not None:
        grids += [gt.w_star, gt.w_p, gt.w_a, gt.alpha]
    same_size(*grids)
    if gt is None:
        needs_gt = [n for n in ("p", "a", "total", "alpha") if getattr(weights, n) > 0]
        if needs_gt:
            raise ValueError(f"terms {needs_gt} need ground truth")
    return i1, i2


def _photo_weight(pred: Fields, gt: GroundTruth | None, weights: LossWeights) -> np.ndarray:
    if weights.photo_predicted_alpha or gt is None:
        return 1.0 - pred.alpha
    return 1.0 - gt.alpha


def _sqnorm(f: np.ndarray) -> np.ndarray:
    return f[..., 0] ** 2 + f[..., 1] ** 2


def total_loss(pred: Fields, gt: GroundTruth | None, i1, i2, weights: LossWeights = DEFAULT_WEIGHTS) -> LossBreakdown:
    """Evaluate every term of the objective; ``gt`` may be None for photometric-only weights."""
    i1, i2 = _check(pred, gt, i1, i2, weights)
    n = pred.alpha.size
    warped, _ = warp_image(i2, pred.w_p, BORDER_CLAMP)
    div = channel_mean_abs(i1, warped)
    terms = dict.fromkeys(TERMS, 0.0)
    terms["photo"] = float(np.sum(_photo_weight(pred, gt, weights) * div)) / n
    terms["w"] = float(np.sum(_sqnorm(pred.w_a) + _sqnorm(pred.w_p))) / n
    if gt is not None:
        terms["p"] = float(np.sum(_sqnorm(pred.w_p - gt.w_p))) / n
        terms["a"] = float(np.sum(_sqnorm(pred.w_a - gt.w_a))) / n
        terms["total"] = float(np.sum(_sqnorm(pred.fused() - gt.w_star))) / n
        terms["alpha"] = float(np.sum((pred.alpha - gt.alpha) ** 2)) / n
    return LossBreakdown(terms, weights)


def loss_gradients(pred: Fields, gt: GroundTruth | None, i1, i2, weights: LossWeights = DEFAULT_WEIGHTS) -> Fields:
    """Analytic gradient of ``total_loss(...).total`` with respect to ``w_p``, ``w_a`` and ``alpha``.

    The photometric term is differentiated through bilinear sampling of I2;
    ``|r|`` has derivative ``sign(r)`` (0 at 0).
    """
    i1, i2 = _check(pred, gt, i1, i2, weights)
    n = pred.alpha.size
    lam = weights
    a = pred.alpha[..., None]
    g_p = 2.0 * lam.w * pred.w_p / n
    g_a = 2.0 * lam.w * pred.w_a / n
    g_alpha = np.zeros_like(pred.alpha)

    if gt is not None:
        resid = pred.fused() - gt.w_star
        g_p = g_p + 2.0 * lam.p * (pred.w_p - gt.w_p) / n + 2.0 * lam.total * (1.0 - a) * resid / n
        g_a = g_a + 2.0 * lam.a * (pred.w_a - gt.w_a) / n + 2.0 * lam.total * a * resid / n
        coupling = np.sum(resid * (pred.w_a - pred.w_p), axis=-1)
        g_alpha = g_alpha + 2.0 * lam.total * coupling / n + 2.0 * lam.alpha * (pred.alpha - gt.alpha) / n

    if lam.photo > 0:
        xs, ys = sample_coordinates(pred.w_p)
        warped, _ = warp_image(i2, pred.w_p, BORDER_CLAMP)
        gx, gy = bilinear_gradient(i2, xs, ys)
        s = np.sign(warped - i1)
        c = i1.shape[2]
        weight = _photo_weight(pred, gt, weights)
        d_u = np.sum(s * gx, axis=-1) / c
        d_v = np.sum(s * gy, axis=-1) / c
        scale = lam.photo * weight / n
        g_p = g_p + np.stack([scale * d_u, scale * d_v], axis=-1)
        if weights.photo_predicted_alpha or gt is None:
            g_alpha = g_alpha - lam.photo * channel_mean_abs(i1, warped) / n

    return Fields(g_p, g_a, g_alpha)


def scheduled_sampling_p(epoch: float) -> float:
    """Probability of feeding the ground-truth alpha at ``epoch``: ``max(0, 1 - epoch / 50)``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return max(0.0, 1.0 - epoch / 50.0)


def use_ground_truth_alpha(epoch: float, rng: np.random.Generator) -> bool:
    return bool(rng.random() < scheduled_sampling_p(epoch))


def weight_profile(labeled: bool, base: LossWeights = DEFAULT_WEIGHTS) -> LossWeights:
    """Loss weights for a labeled pair (``base``) or an unlabeled pair (photometric only, alpha frozen)."""
    if labeled:
        return base
    return LossWeights(total=0.0, p=0.0, a=0.0, photo=1.0, w=0.0, alpha=0.0,
                       block_alpha=True, photo_predicted_alpha=True)


class RefinementDiverged(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def refine_fields(i1, i2, init: Fields, gt: GroundTruth | None, weights: LossWeights = DEFAULT_WEIGHTS,
                  steps: int = 100, step_size: float = 0.1) -> tuple[Fields, list[LossBreakdown]]:
    """Plain gradient descent on the objective over the fields themselves.

    ``step_size`` is per pixel: the pixel-mean gradient is multiplied by the
    pixel count, so the step does not depend on resolution. ``alpha`` is
    clipped to ``[0, 1]`` after each step and left untouched when
    ``weights.block_alpha`` is set. The trace holds the breakdown before the
    first step and after every step.

    Raises :class:`RefinementDiverged` (carrying the trace) if the loss
    exceeds 1e6 times its initial value or stops being finite.
    """
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    cur = init.copy()
    n = cur.alpha.size
    trace = [total_loss(cur, gt, i1, i2, weights)]
    initial = trace[0].total
    for step in range(steps):
        g = loss_gradients(cur, gt, i1, i2, weights)
        w_p = cur.w_p - step_size * n * g.w_p
        w_a = cur.w_a - step_size * n * g.w_a
        alpha = cur.alpha if weights.block_alpha else np.clip(cur.alpha - step_size * n * g.alpha, 0.0, 1.0)
        cur = Fields(w_p, w_a, alpha)
        bd = total_loss(cur, gt, i1, i2, weights)
        trace.append(bd)
        if not np.isfinite(bd.total) or (initial > 0 and bd.total > 1e6 * initial):
            raise RefinementDiverged(f"loss diverged at step {step + 1}: {bd.total!r}", trace)
    return cur, trace


def zero_weights(**overrides) -> LossWeights:
    """All-zero weights with ``overrides`` applied; convenient for isolating terms."""
    return replace(LossWeights(0.0, 0.0, 0.0, 0.0, 0.0, 0.0), **overrides)
