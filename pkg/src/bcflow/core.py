"""Grid types, bilinear warping, flow fusion and flow colorization.

All grids are plain numpy arrays in row-major (y, x) order:

- image: ``(H, W, C)`` float64 in ``[0, 1]`` with ``C`` in {1, 3}
- flow: ``(H, W, 2)`` float64, ``[..., 0] = u`` (x displacement), ``[..., 1] = v``
- uncertainty / scalar maps: ``(H, W)`` float64
- masks: ``(H, W)`` bool
"""

from __future__ import annotations

import numpy as np

BORDER_CLAMP = "border-clamp"
MARK_INVALID = "mark-invalid"


class ShapeError(ValueError):
    """Raised when grids that must share a size do not."""


def as_image(img) -> np.ndarray:
    """Return ``img`` as a float64 ``(H, W, C)`` array, adding a channel axis to 2-D input."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ShapeError(f"image must be HxW, HxWx1 or HxWx3, got shape {img.shape}")
    return img


def as_flow(flow) -> np.ndarray:
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeError(f"flow must be HxWx2, got shape {flow.shape}")
    return flow


def check_image(img: np.ndarray) -> None:
    """Validate the Image invariants: finite values in ``[0, 1]``."""
    img = as_image(img)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")


def check_uncertainty(alpha: np.ndarray) -> None:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 2:
        raise ShapeError(f"uncertainty map must be HxW, got shape {alpha.shape}")
    if not np.all((alpha >= 0.0) & (alpha <= 1.0)):
        raise ValueError("uncertainty values must lie in [0, 1]")


def same_size(*grids: np.ndarray) -> tuple[int, int]:
    """Return the common ``(H, W)`` of ``grids`` or raise :class:`ShapeError`."""
    sizes = {tuple(np.shape(g)[:2]) for g in grids}
    if len(sizes) != 1:
        raise ShapeError(f"grid sizes differ: {sorted(sizes)}")
    return sizes.pop()


def to_gray(img: np.ndarray) -> np.ndarray:
    """Luma (0.299, 0.587, 0.114) of an RGB image; single-channel input is returned as HxW."""
    img = as_image(img)
    if img.shape[2] == 1:
        return img[:, :, 0].copy()
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


def _cell(coord: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Left index of the interpolation cell and the fractional offset inside it.
    # The last cell is closed on the right so that coord == size - 1 is exact.
    if size == 1:
        i0 = np.zeros(coord.shape, dtype=np.intp)
        return i0, i0, np.zeros(coord.shape)
    i0 = np.clip(np.floor(coord), 0, size - 2).astype(np.intp)
    return i0, i0 + 1, coord - i0


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` (H, W, C) at float coordinates; coordinates must already be in range.

    Returns an array of shape ``xs.shape + (C,)``.
    """
    h, w = img.shape[:2]
    x0, x1, fx = _cell(xs, w)
    y0, y1, fy = _cell(ys, h)
    fx = fx[..., None]
    fy = fy[..., None]
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bottom = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1.0 - fy) * top + fy * bottom


def sample_coordinates(flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Absolute sampling positions ``x + u``, ``y + v`` for every pixel."""
    h, w = flow.shape[:2]
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    return gx + flow[:, :, 0], gy + flow[:, :, 1]


def warp_image(target, flow, oob_policy: str = BORDER_CLAMP) -> tuple[np.ndarray, np.ndarray]:
    """Backward-warp ``target`` by ``flow``: ``out(x) = target(x + flow(x))``.

    Parameters
    ----------
    target : array (H, W) or (H, W, C)
    flow : array (H, W, 2)
    oob_policy : ``"border-clamp"`` or ``"mark-invalid"``
        Sampling positions outside the image are clamped to the border in both
        cases. Under ``"mark-invalid"`` the returned mask is False wherever the
        bilinear footprint left the image; under ``"border-clamp"`` it is all True.

    Returns
    -------
    warped : array (H, W, C)
    valid : bool array (H, W)
    """
    target = as_image(target)
    flow = as_flow(flow)
    same_size(target, flow)
    if oob_policy not in (BORDER_CLAMP, MARK_INVALID):
        raise ValueError(f"unknown out-of-bounds policy {oob_policy!r}")
    h, w = target.shape[:2]
    xs, ys = sample_coordinates(flow)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    warped = bilinear_sample(target, xs, ys)
    if oob_policy == BORDER_CLAMP:
        valid = np.ones((h, w), dtype=bool)
    else:
        valid = inside & np.all(np.isfinite(flow), axis=2)
    return warped, valid


def fuse_flows(w_p, w_a, alpha) -> np.ndarray:
    """Per-pixel convex combination ``(1 - alpha) * w_p + alpha * w_a``."""
    w_p = as_flow(w_p)
    w_a = as_flow(w_a)
    alpha = np.asarray(alpha, dtype=np.float64)
    same_size(w_p, w_a, alpha)
    a = alpha[:, :, None]
    return (1.0 - a) * w_p + a * w_a


# Middlebury color wheel segment lengths.
RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6


def make_color_wheel() -> np.ndarray:
    """The 55-entry Middlebury color wheel as floats in ``[0, 1]`` (rows are RGB)."""
    ncols = RY + YG + GC + CB + BM + MR
    wheel = np.zeros((ncols, 3))
    col = 0
    wheel[col:col + RY, 0] = 1.0
    wheel[col:col + RY, 1] = np.arange(RY) / RY
    col += RY
    wheel[col:col + YG, 0] = 1.0 - np.arange(YG) / YG
    wheel[col:col + YG, 1] = 1.0
    col += YG
    wheel[col:col + GC, 1] = 1.0
    wheel[col:col + GC, 2] = np.arange(GC) / GC
    col += GC
    wheel[col:col + CB, 1] = 1.0 - np.arange(CB) / CB
    wheel[col:col + CB, 2] = 1.0
    col += CB
    wheel[col:col + BM, 2] = 1.0
    wheel[col:col + BM, 0] = np.arange(BM) / BM
    col += BM
    wheel[col:col + MR, 2] = 1.0 - np.arange(MR) / MR
    wheel[col:col + MR, 0] = 1.0
    return wheel


def flow_to_color(flow, max_radius: float | None = None) -> np.ndarray:
    """Render a flow field with the Middlebury color wheel.

    Hue encodes direction, saturation encodes ``|w| / max_radius`` clipped to 1.
    Zero flow is white and non-finite pixels are black. ``max_radius=None``
    uses the largest finite magnitude in the field.
    """
    flow = as_flow(flow)
    u = flow[:, :, 0]
    v = flow[:, :, 1]
    bad = ~(np.isfinite(u) & np.isfinite(v))
    u = np.where(bad, 0.0, u)
    v = np.where(bad, 0.0, v)
    rad = np.sqrt(u * u + v * v)
    if max_radius is None:
        max_radius = float(rad.max()) if rad.size else 0.0
        if max_radius == 0.0:
            max_radius = 1.0
    elif not max_radius > 0:
        raise ValueError("max_radius must be positive")

    wheel = make_color_wheel()
    ncols = wheel.shape[0]
    # Direction in [0, 2pi) measured from +x; adding 0.0 folds -0.0 onto +0.0
    # so that (r, 0) always lands on wheel entry 0.
    theta = np.mod(np.arctan2(v + 0.0, u + 0.0), 2.0 * np.pi)
    fk = theta / (2.0 * np.pi) * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[:, :, None]
    col = (1.0 - f) * wheel[k0] + f * wheel[k1]
    sat = np.minimum(rad / max_radius, 1.0)[:, :, None]
    col = 1.0 - sat * (1.0 - col)
    col[bad] = 0.0
    return col


def bilinear_gradient(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of :func:`bilinear_sample` with respect to the x and y coordinates.

    Coordinates outside ``[0, size - 1]`` are treated as border-clamped, so
    the derivative along a clamped axis is zero. Shapes match
    :func:`bilinear_sample`.
    """
    h, w = img.shape[:2]
    cx = np.clip(xs, 0, w - 1)
    cy = np.clip(ys, 0, h - 1)
    x0, x1, fx = _cell(cx, w)
    y0, y1, fy = _cell(cy, h)
    fx = fx[..., None]
    fy = fy[..., None]
    a, b = img[y0, x0], img[y0, x1]
    c, d = img[y1, x0], img[y1, x1]
    gx = (1.0 - fy) * (b - a) + fy * (d - c)
    gy = ((1.0 - fx) * c + fx * d) - ((1.0 - fx) * a + fx * b)
    inside_x = ((xs >= 0) & (xs <= w - 1))[..., None] if w > 1 else np.zeros(xs.shape + (1,), bool)
    inside_y = ((ys >= 0) & (ys <= h - 1))[..., None] if h > 1 else np.zeros(ys.shape + (1,), bool)
    return np.where(inside_x, gx, 0.0), np.where(inside_y, gy, 0.0)
