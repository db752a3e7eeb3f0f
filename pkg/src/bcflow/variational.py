"""Confidence-weighted Horn-Schunck flow estimation.

At each pyramid level and warp update the data term is linearized around the
current flow ``w0``::

    E(w) = sum_x c(x) (Ix (u - u0) + Iy (v - v0) + It)^2
         + lam * sum_{x~y} (|u(x) - u(y)|^2 + |v(x) - v(y)|^2)

with ``c = 1 - alpha`` and ``x~y`` ranging over 4-neighbour pairs inside the
image. Each Jacobi sweep solves the 2x2 system of every pixel with its
neighbours held at the previous iterate; because the signless graph
Laplacian is positive semidefinite, every sweep is non-increasing in ``E``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import BORDER_CLAMP, as_image, bilinear_sample, same_size, to_gray, warp_image


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class HornSchunckConfig:
    smoothness: float = 0.1
    iterations: int = 200
    pyramid_levels: int = 2
    pyramid_scale: float = 0.5
    warp_updates: int = 2
    confidence: np.ndarray | None = None

    def __post_init__(self):
        if not self.smoothness > 0:
            raise ValueError("smoothness must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if not 0 < self.pyramid_scale < 1:
            raise ValueError("pyramid_scale must lie in (0, 1)")
        if self.warp_updates < 1:
            raise ValueError("warp_updates must be >= 1")


def resize(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an (H, W) or (H, W, C) grid with pixel-center alignment."""
    squeeze = img.ndim == 2
    src = img[:, :, None] if squeeze else img
    h, w = src.shape[:2]
    th, tw = shape
    ys = np.clip((np.arange(th) + 0.5) * h / th - 0.5, 0, h - 1)
    xs = np.clip((np.arange(tw) + 0.5) * w / tw - 0.5, 0, w - 1)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    out = bilinear_sample(src, gx, gy)
    return out[:, :, 0] if squeeze else out


def _pyramid_shapes(h, w, levels, scale):
    shapes = [(h, w)]
    for _ in range(levels - 1):
        ph, pw = shapes[-1]
        nh, nw = max(1, int(round(ph * scale))), max(1, int(round(pw * scale)))
        if (nh, nw) == (ph, pw) or min(nh, nw) < 4:
            break
        shapes.append((nh, nw))
    return shapes


def neighbour_sums(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum of 4-neighbour values inside the image and the neighbour count per pixel."""
    s = np.zeros_like(f)
    n = np.zeros_like(f)
    s[1:, :] += f[:-1, :]
    n[1:, :] += 1
    s[:-1, :] += f[1:, :]
    n[:-1, :] += 1
    s[:, 1:] += f[:, :-1]
    n[:, 1:] += 1
    s[:, :-1] += f[:, 1:]
    n[:, :-1] += 1
    return s, n


def linearization(g1: np.ndarray, g2: np.ndarray, flow: np.ndarray):
    """``(Ix, Iy, It)`` at ``flow``: central differences averaged over I1 and warped I2."""
    warped = warp_image(g2, flow, BORDER_CLAMP)[0][:, :, 0]
    iy1, ix1 = np.gradient(g1) if min(g1.shape) > 1 else (np.zeros_like(g1), np.zeros_like(g1))
    iy2, ix2 = np.gradient(warped) if min(g1.shape) > 1 else (np.zeros_like(g1), np.zeros_like(g1))
    return 0.5 * (ix1 + ix2), 0.5 * (iy1 + iy2), warped - g1


def energy(u, v, ix, iy, it, conf, lam, u0, v0) -> float:
    """Linearized energy at a fixed level (see module docstring)."""
    r = ix * (u - u0) + iy * (v - v0) + it
    data = np.sum(conf * r * r)
    smooth = (np.sum(np.diff(u, axis=0) ** 2) + np.sum(np.diff(u, axis=1) ** 2)
              + np.sum(np.diff(v, axis=0) ** 2) + np.sum(np.diff(v, axis=1) ** 2))
    return float(data + lam * smooth)


def jacobi_sweep(u, v, ix, iy, it0, conf, lam):
    """One Jacobi update of the Euler-Lagrange equations.

    ``it0`` is the residual constant ``It - Ix u0 - Iy v0`` so the data term
    reads ``Ix u + Iy v + it0``.
    """
    su, n = neighbour_sums(u)
    sv, _ = neighbour_sums(v)
    n = np.maximum(n, 1)
    ub = su / n
    vb = sv / n
    t = conf * (ix * ub + iy * vb + it0) / (lam * n + conf * (ix * ix + iy * iy))
    return ub - ix * t, vb - iy * t


def estimate_flow_hs(i1, i2, cfg: HornSchunckConfig | None = None, *, energy_log: list | None = None) -> np.ndarray:
    """Coarse-to-fine confidence-weighted Horn-Schunck flow from ``i1`` to ``i2``.

    Images are converted to luma. ``cfg.confidence`` is an uncertainty map
    ``alpha``; the data term at each pixel is weighted by ``1 - alpha``.
    When ``energy_log`` is a list, one list of per-sweep energies is appended
    for every (level, warp update).
    """
    cfg = cfg or HornSchunckConfig()
    i1 = as_image(i1)
    i2 = as_image(i2)
    same_size(i1, i2)
    h, w = i1.shape[:2]
    g1 = to_gray(i1)
    g2 = to_gray(i2)
    if cfg.confidence is None:
        conf_full = np.ones((h, w))
    else:
        alpha = np.asarray(cfg.confidence, dtype=np.float64)
        if alpha.shape != (h, w):
            raise ValueError("confidence map must match the image size")
        conf_full = 1.0 - alpha

    shapes = _pyramid_shapes(h, w, cfg.pyramid_levels, cfg.pyramid_scale)
    flow = None
    for level in range(len(shapes) - 1, -1, -1):
        lh, lw = shapes[level]
        if level == 0:
            l1, l2, conf = g1, g2, conf_full
        else:
            sigma = 0.5 / (lh / h)
            l1 = resize(gaussian_filter(g1, sigma, mode="nearest"), (lh, lw))
            l2 = resize(gaussian_filter(g2, sigma, mode="nearest"), (lh, lw))
            conf = resize(conf_full, (lh, lw))
        if flow is None:
            flow = np.zeros((lh, lw, 2))
        else:
            ph, pw = flow.shape[:2]
            flow = resize(flow, (lh, lw))
            flow[:, :, 0] *= lw / pw
            flow[:, :, 1] *= lh / ph
        for _ in range(cfg.warp_updates):
            ix, iy, it = linearization(l1, l2[:, :, None], flow)
            u0 = flow[:, :, 0].copy()
            v0 = flow[:, :, 1].copy()
            it0 = it - ix * u0 - iy * v0
            u, v = u0.copy(), v0.copy()
            log = [energy(u, v, ix, iy, it, conf, cfg.smoothness, u0, v0)] if energy_log is not None else None
            for _ in range(cfg.iterations):
                u, v = jacobi_sweep(u, v, ix, iy, it0, conf, cfg.smoothness)
                if log is not None:
                    log.append(energy(u, v, ix, iy, it, conf, cfg.smoothness, u0, v0))
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise SolverError(f"non-finite flow at pyramid level {level} ({lw}x{lh})")
            flow = np.stack([u, v], axis=-1)
            if log is not None:
                energy_log.append(log)
    return flow
