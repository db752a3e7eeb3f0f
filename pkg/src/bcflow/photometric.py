"""Brightness-constancy divergence maps and the sigmoid uncertainty transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import BORDER_CLAMP, as_flow, as_image, same_size, to_gray, warp_image


@dataclass(frozen=True)
class PhotometricKind:
    """Penalty applied to the brightness residual.

    ``name`` is one of ``"l1"``, ``"charbonnier"``, ``"census"``, ``"ssim"``.
    ``eps`` is the Charbonnier smoothing constant, ``radius`` the census patch
    radius or the SSIM window radius.
    """

    name: str = "l1"
    eps: float = 1e-3
    radius: int = 3
    census_tolerance: float = 0.01

    def __post_init__(self):
        if self.name not in ("l1", "charbonnier", "census", "ssim"):
            raise ValueError(f"unknown photometric kind {self.name!r}")
        if not self.eps > 0:
            raise ValueError("Charbonnier eps must be positive")
        if self.radius < 1:
            raise ValueError("patch radius must be >= 1")

    @classmethod
    def l1(cls):
        return cls("l1")

    @classmethod
    def charbonnier(cls, eps=1e-3):
        return cls("charbonnier", eps=eps)

    @classmethod
    def census(cls, patch_radius=3, tolerance=0.01):
        return cls("census", radius=patch_radius, census_tolerance=tolerance)

    @classmethod
    def ssim(cls, window_radius=5):
        return cls("ssim", radius=window_radius)


@dataclass(frozen=True)
class SigmoidParams:
    center: float = 0.5
    k: float = 20.0

    def __post_init__(self):
        if not (np.isfinite(self.k) and self.k > 0):
            raise ValueError("sigmoid temperature k must be finite and positive")


def channel_mean_abs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel mean over channels of ``|a - b|``, accumulated channel by channel."""
    d = np.abs(a - b)
    acc = d[..., 0].copy()
    for c in range(1, d.shape[-1]):
        acc = acc + d[..., c]
    return acc / d.shape[-1]


def census_transform(gray: np.ndarray, radius: int = 3, tolerance: float = 0.01) -> np.ndarray:
    """Ternary census signature, shape (H, W, (2r+1)^2 - 1), values in {-1, 0, 1}.

    Each entry compares a patch neighbour to the centre pixel: +1 when brighter
    by more than ``tolerance``, -1 when darker by more than ``tolerance``.
    Edge pixels are padded by replication.
    """
    h, w = gray.shape
    padded = np.pad(gray, radius, mode="edge")
    codes = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dx == 0 and dy == 0:
                continue
            nb = padded[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            diff = nb - gray
            codes.append(np.where(diff > tolerance, 1, np.where(diff < -tolerance, -1, 0)))
    return np.stack(codes, axis=-1).astype(np.int8)


def census_distance(a: np.ndarray, b: np.ndarray, radius: int = 3, tolerance: float = 0.01) -> np.ndarray:
    """Normalized Hamming distance between the census signatures of two gray images."""
    ca = census_transform(a, radius, tolerance)
    cb = census_transform(b, radius, tolerance)
    return np.mean(ca != cb, axis=-1)


def ssim_map(a: np.ndarray, b: np.ndarray, radius: int = 5, sigma: float = 1.5) -> np.ndarray:
    """Per-pixel SSIM of two single-channel images with a Gaussian window."""
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2

    def blur(x):
        return gaussian_filter(x, sigma, mode="nearest", truncate=radius / sigma)

    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def divergence_from_warped(i1: np.ndarray, warped: np.ndarray, kind: PhotometricKind | None = None) -> np.ndarray:
    """Divergence map between ``i1`` and an already-warped second frame."""
    kind = kind or PhotometricKind()
    if kind.name == "l1":
        return channel_mean_abs(i1, warped)
    if kind.name == "charbonnier":
        d = i1 - warped
        rho = np.sqrt(d * d + kind.eps ** 2)
        return rho.mean(axis=-1)
    if kind.name == "census":
        return census_distance(to_gray(i1), to_gray(warped), kind.radius, kind.census_tolerance)
    s = np.zeros(i1.shape[:2])
    for c in range(i1.shape[2]):
        s += ssim_map(i1[:, :, c], warped[:, :, c], kind.radius)
    s /= i1.shape[2]
    return np.clip((1.0 - s) / 2.0, 0.0, 1.0)


def bc_divergence(i1, i2, flow, kind: PhotometricKind | None = None) -> np.ndarray:
    """Brightness-constancy divergence ``rho(I1(x) - I2(x + w(x)))`` per pixel.

    ``I2`` is sampled bilinearly with border clamping. For L1 the channel mean
    of absolute differences is returned, so the map is scalar for RGB input.
    """
    i1 = as_image(i1)
    i2 = as_image(i2)
    flow = as_flow(flow)
    same_size(i1, i2, flow)
    if i1.shape[2] != i2.shape[2]:
        raise ValueError("images have different channel counts")
    warped, _ = warp_image(i2, flow, BORDER_CLAMP)
    return divergence_from_warped(i1, warped, kind)


def uncertainty_from_divergence(div, sp: SigmoidParams | None = None) -> np.ndarray:
    """``alpha = 1 / (1 + exp(-k (div - center)))`` elementwise."""
    sp = sp or SigmoidParams()
    div = np.asarray(div, dtype=np.float64)
    if not np.all(np.isfinite(div)):
        raise ValueError("divergence must be finite")
    if np.any(div < 0):
        raise ValueError("divergence must be nonnegative")
    return 1.0 / (1.0 + np.exp(-sp.k * (div - sp.center)))


def weighted_photometric_loss(i1, i2, w_p, alpha_star) -> tuple[float, float]:
    """Certainty-weighted L1 photometric loss.

    Returns ``(sum, mean)`` over pixels of ``(1 - alpha*) * |I1 - warp(I2, w_p)|``
    where ``|.|`` is the channel mean of absolute differences.
    """
    alpha_star = np.asarray(alpha_star, dtype=np.float64)
    div = bc_divergence(i1, i2, w_p)
    same_size(div, alpha_star)
    weighted = (1.0 - alpha_star) * div
    total = float(np.sum(weighted))
    return total, total / weighted.size
