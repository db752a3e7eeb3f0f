"""Ground-truth decomposition of a flow into physical and augmentation parts.

For every pixel the supervision ``(w_p*, w_a*, alpha*)`` is chosen so that

* ``alpha*`` is the sigmoid of the L1 brightness divergence at ``w*``,
* ``w_p*`` satisfies brightness constancy (it belongs to the candidate set
  of displacements whose divergence is at most ``bc_epsilon``),
* ``(1 - alpha*) w_p* + alpha* w_a* = w*``.

Uniqueness comes from a lexicographic rule: smallest ``|w_p|``, then smallest
``|w_a|``, then smallest direction angle of ``w_p`` measured from the +x axis
in ``[0, 2pi)``. Candidates are displacements on the integer grid of a square
search window, optionally refined by quarter-pixel neighbours of every hit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import as_flow, as_image, bilinear_sample, same_size
from .photometric import SigmoidParams, bc_divergence, channel_mean_abs, uncertainty_from_divergence

TIE_TOL = 1e-9
# Quarter-pixel neighbours tried around every integer hit, row-major by (dy, dx).
REFINE_OFFSETS = [(dy * 0.25, dx * 0.25) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)]
BRUTE_FORCE_MAX_AREA = 64 * 64


@dataclass(frozen=True)
class DecompositionConfig:
    search_radius: int = 8
    bc_epsilon: float = 2.0 / 255.0
    subpixel_refine: bool = True
    sigmoid: SigmoidParams = field(default_factory=SigmoidParams)
    alpha_min: float = 1e-3

    def __post_init__(self):
        if self.search_radius < 1:
            raise ValueError("search_radius must be >= 1")
        if not self.bc_epsilon >= 0:
            raise ValueError("bc_epsilon must be >= 0")
        if not self.alpha_min > 0:
            raise ValueError("alpha_min must be positive")


@dataclass
class Decomposition:
    w_p_star: np.ndarray
    w_a_star: np.ndarray
    alpha_star: np.ndarray
    feasible: np.ndarray

    def reconstruct(self) -> np.ndarray:
        a = self.alpha_star[:, :, None]
        return (1.0 - a) * self.w_p_star + a * self.w_a_star


def compute_alpha_star(i1, i2, w_star, sp: SigmoidParams | None = None) -> np.ndarray:
    """Uncertainty target: sigmoid of the channel-mean L1 divergence at ``w_star``."""
    return uncertainty_from_divergence(bc_divergence(i1, i2, w_star), sp)


def candidate_offsets(cfg: DecompositionConfig) -> tuple[np.ndarray, np.ndarray]:
    """All displacements examined by the search, in enumeration order.

    Returns ``(offsets, parent)``: ``offsets`` is (K, 2) as (dx, dy) and
    ``parent[k]`` is the index of the integer displacement a refinement hangs
    off (``parent[k] == k`` for integer displacements).
    """
    r = cfg.search_radius
    offsets = []
    parent = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            k = len(offsets)
            offsets.append((float(dx), float(dy)))
            parent.append(k)
            if cfg.subpixel_refine:
                for oy, ox in REFINE_OFFSETS:
                    offsets.append((dx + ox, dy + oy))
                    parent.append(k)
    return np.array(offsets), np.array(parent)


def _hits(i1, i2, px, py, offsets, parent, eps) -> np.ndarray:
    """Boolean (K, P): candidate k satisfies brightness constancy at pixel p."""
    h, w = i2.shape[:2]
    src = i1[py, px]
    gx = px.astype(np.float64)
    gy = py.astype(np.float64)
    hit = np.zeros((len(offsets), len(px)), dtype=bool)
    for k, (dx, dy) in enumerate(offsets):
        # Refinements are only examined where their integer parent hit.
        sel = slice(None) if parent[k] == k else np.flatnonzero(hit[parent[k]])
        xs = gx[sel] + dx
        ys = gy[sel] + dy
        inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
        if not inside.any():
            continue
        sampled = bilinear_sample(i2, np.clip(xs, 0, w - 1), np.clip(ys, 0, h - 1))
        hit[k, sel] = inside & (channel_mean_abs(src[sel], sampled) <= eps)
    return hit


def bc_candidate_set(i1, i2, x: tuple[int, int], cfg: DecompositionConfig | None = None) -> list[tuple[float, float]]:
    """Displacements ``(dx, dy)`` at pixel ``x = (col, row)`` whose divergence is within ``bc_epsilon``.

    Samples that leave the image are excluded. The list follows the row-major
    (dy, dx) enumeration order of the search window.
    """
    cfg = cfg or DecompositionConfig()
    i1 = as_image(i1)
    i2 = as_image(i2)
    same_size(i1, i2)
    h, w = i1.shape[:2]
    col, row = x
    if not (0 <= col < w and 0 <= row < h):
        raise IndexError(f"pixel {x} outside a {w}x{h} image")
    offsets, parent = candidate_offsets(cfg)
    hit = _hits(i1, i2, np.array([col]), np.array([row]), offsets, parent, cfg.bc_epsilon)[:, 0]
    return [(float(dx), float(dy)) for dx, dy in offsets[hit]]


def candidate_table(i1, i2, cfg: DecompositionConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Candidate sets of every pixel at once.

    Returns ``(offsets, hits)`` with ``offsets`` (K, 2) as (dx, dy) and
    ``hits`` a bool (H, W, K) array; ``offsets[hits[y, x]]`` equals
    ``bc_candidate_set(i1, i2, (x, y), cfg)``.
    """
    cfg = cfg or DecompositionConfig()
    i1 = as_image(i1)
    i2 = as_image(i2)
    h, w = same_size(i1, i2)
    offsets, parent = candidate_offsets(cfg)
    py, px = np.divmod(np.arange(h * w), w)
    hit = _hits(i1, i2, px, py, offsets, parent, cfg.bc_epsilon)
    return offsets, hit.T.reshape(h, w, len(offsets))


def _angle(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # Undefined (and never needed) for the zero vector, which is alone in its norm class.
    zero = (dx == 0) & (dy == 0)
    ang = np.mod(np.arctan2(np.where(zero, 0.0, dy), np.where(zero, 1.0, dx)), 2 * np.pi)
    return np.where(zero, 0.0, ang)


def _keep_min(pix, key, npix, tol):
    best = np.full(npix, np.inf)
    np.minimum.at(best, pix, key)
    return key <= best[pix] + tol


def augmentation_flow(w_star, alpha, w_p):
    """``w_a`` solving ``(1 - alpha) w_p + alpha w_a = w_star`` (``w_star`` itself where ``w_p == w_star``)."""
    a = alpha[..., None]
    w_a = (w_star - (1.0 - a) * w_p) / a
    same = np.all(w_p == w_star, axis=-1)
    return np.where(same[..., None], w_star, w_a)


def _decompose_pixels(i1, i2, w_star, alpha, px, py, cfg, offsets, parent):
    """Lexicographic selection for the pixels ``(py, px)``; returns (w_p, feasible)."""
    npix = len(px)
    hit = _hits(i1, i2, px, py, offsets, parent, cfg.bc_epsilon)
    k, p = np.nonzero(hit)
    cdx = offsets[k, 0]
    cdy = offsets[k, 1]
    ws = w_star[py[p], px[p]]
    a = alpha[py[p], px[p]]
    norm = np.sqrt(cdx * cdx + cdy * cdy)
    # |w_a| = |w_star - (1 - a) w_p| / a; below alpha_min the numerator alone
    # is ranked (same order, no blow-up of the tie tolerance).
    nx = ws[:, 0] - (1.0 - a) * cdx
    ny = ws[:, 1] - (1.0 - a) * cdy
    num = np.sqrt(nx * nx + ny * ny)
    first = norm
    second = np.where(a < cfg.alpha_min, num, num / np.maximum(a, cfg.alpha_min))

    keep = _keep_min(p, first, npix, TIE_TOL)
    k, p, second, cdx, cdy = k[keep], p[keep], second[keep], cdx[keep], cdy[keep]
    keep = _keep_min(p, second, npix, TIE_TOL)
    k, p, cdx, cdy = k[keep], p[keep], cdx[keep], cdy[keep]
    ang = _angle(cdx, cdy)
    best_ang = np.full(npix, np.inf)
    np.minimum.at(best_ang, p, ang)
    keep = ang == best_ang[p]
    k, p = k[keep], p[keep]
    chosen = np.full(npix, len(offsets))
    np.minimum.at(chosen, p, k)

    feasible = chosen < len(offsets)
    w_p = w_star[py, px].copy()
    w_p[feasible] = offsets[chosen[feasible]]
    return w_p, feasible


def _assemble(w_star, alpha, w_p, feasible) -> Decomposition:
    # alpha* == 0 (only reachable by injection) cannot absorb any w_p != w_star.
    feasible = feasible & ~((alpha == 0) & np.any(w_p != w_star, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        w_a = augmentation_flow(w_star, alpha, w_p)
    w_a = np.where(feasible[..., None], w_a, w_star)
    w_p = np.where(feasible[..., None], w_p, w_star)
    return Decomposition(w_p, w_a, alpha, feasible)


def _prepare(i1, i2, w_star, cfg, alpha_star):
    i1 = as_image(i1)
    i2 = as_image(i2)
    w_star = as_flow(w_star)
    same_size(i1, i2, w_star)
    if i1.shape[2] != i2.shape[2]:
        raise ValueError("images have different channel counts")
    if alpha_star is None:
        alpha_star = compute_alpha_star(i1, i2, w_star, cfg.sigmoid)
    else:
        alpha_star = np.asarray(alpha_star, dtype=np.float64)
        if alpha_star.shape != w_star.shape[:2]:
            raise ValueError("alpha_star must match the flow size")
    return i1, i2, w_star, alpha_star


def decompose_flow(i1, i2, w_star, cfg: DecompositionConfig | None = None, *,
                   alpha_star=None, threads: int = 1, chunk_pixels: int | None = None) -> Decomposition:
    """Compute the unique ``(w_p*, w_a*, alpha*)`` supervision for ``w_star``.

    ``alpha_star`` overrides the sigmoid target (used to inject a known
    uncertainty). Pixels with no brightness-constancy candidate get
    ``w_p* = w_a* = w_star`` and ``feasible = False``.

    When ``alpha* < cfg.alpha_min`` the ``|w_a|`` stage ranks the numerator
    ``|w_star - (1 - alpha*) w_p|`` instead, which orders candidates the same
    way without amplifying the tie tolerance. An injected ``alpha* == 0``
    with ``w_p* != w_star`` is reported infeasible.

    Pixels are processed in independent chunks, so ``threads`` does not
    change the result.
    """
    cfg = cfg or DecompositionConfig()
    i1, i2, w_star, alpha = _prepare(i1, i2, w_star, cfg, alpha_star)
    h, w = w_star.shape[:2]
    offsets, parent = candidate_offsets(cfg)
    py, px = np.divmod(np.arange(h * w), w)
    if chunk_pixels is None:
        chunk_pixels = min(4096, -(-h * w // max(1, threads)))
    bounds = list(range(0, h * w, max(1, chunk_pixels))) + [h * w]
    chunks = list(zip(bounds[:-1], bounds[1:]))

    def run(chunk):
        s, e = chunk
        return _decompose_pixels(i1, i2, w_star, alpha, px[s:e], py[s:e], cfg, offsets, parent)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    w_p = np.concatenate([r[0] for r in results]).reshape(h, w, 2)
    feasible = np.concatenate([r[1] for r in results]).reshape(h, w)
    return _assemble(w_star, alpha, w_p, feasible)


def _sample_pixel(img, xs, ys):
    # Corner-by-corner bilinear sampling for one pixel's list of positions.
    h, w = img.shape[:2]
    if w == 1:
        x0 = np.zeros(len(xs), dtype=np.intp)
        x1, fx = x0, np.zeros(len(xs))
    else:
        x0 = np.minimum(np.maximum(np.floor(xs), 0), w - 2).astype(np.intp)
        x1, fx = x0 + 1, xs - x0
    if h == 1:
        y0 = np.zeros(len(ys), dtype=np.intp)
        y1, fy = y0, np.zeros(len(ys))
    else:
        y0 = np.minimum(np.maximum(np.floor(ys), 0), h - 2).astype(np.intp)
        y1, fy = y0 + 1, ys - y0
    fx = fx[:, None]
    fy = fy[:, None]
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bottom = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1.0 - fy) * top + fy * bottom


def brute_force_decompose(i1, i2, w_star, cfg: DecompositionConfig | None = None, *, alpha_star=None) -> Decomposition:
    """Reference decomposition by exhaustive enumeration and sorting, pixel by pixel.

    Every window displacement and every quarter-pixel neighbour is evaluated
    at every pixel; the lexicographic choice is made by full sorts. Limited
    to images of at most 64x64 pixels.
    """
    cfg = cfg or DecompositionConfig()
    i1, i2, w_star, alpha = _prepare(i1, i2, w_star, cfg, alpha_star)
    h, w = w_star.shape[:2]
    if h * w > BRUTE_FORCE_MAX_AREA:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_AREA} pixels, got {w}x{h}")
    r = cfg.search_radius
    subs = REFINE_OFFSETS if cfg.subpixel_refine else []
    # Every examined position as (dx, dy, parent position index or -1).
    positions = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            home = len(positions)
            positions.append((float(dx), float(dy), -1))
            for oy, ox in subs:
                positions.append((dx + ox, dy + oy, home))
    pos_dx = np.array([q[0] for q in positions])
    pos_dy = np.array([q[1] for q in positions])
    pos_parent = np.array([q[2] for q in positions])
    is_int = pos_parent < 0

    w_p = w_star.copy()
    feasible = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            xs = x + pos_dx
            ys = y + pos_dy
            inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
            vals = _sample_pixel(i2, np.clip(xs, 0, w - 1), np.clip(ys, 0, h - 1))
            src = np.broadcast_to(i1[y, x], vals.shape)
            good = inside & (channel_mean_abs(src, vals) <= cfg.bc_epsilon)
            good = np.where(is_int, good, good & good[np.maximum(pos_parent, 0)])
            cands = [(int(j), pos_dx[j], pos_dy[j]) for j in np.flatnonzero(good)]
            if not cands:
                continue
            a = alpha[y, x]
            wsx, wsy = w_star[y, x]
            scored = []
            for j, dx, dy in cands:
                norm = math.sqrt(dx * dx + dy * dy)
                nx = wsx - (1.0 - a) * dx
                ny = wsy - (1.0 - a) * dy
                num = math.sqrt(nx * nx + ny * ny)
                first, second = norm, (num if a < cfg.alpha_min else num / a)
                ang = 0.0 if norm == 0 else math.atan2(dy, dx) % (2 * math.pi)
                scored.append((first, second, ang, j, dx, dy))
            scored.sort(key=lambda s: s[0])
            scored = [s for s in scored if s[0] <= scored[0][0] + TIE_TOL]
            scored.sort(key=lambda s: s[1])
            scored = [s for s in scored if s[1] <= scored[0][1] + TIE_TOL]
            scored.sort(key=lambda s: (s[2], s[3]))
            best = scored[0]
            w_p[y, x] = (best[4], best[5])
            feasible[y, x] = True
    return _assemble(w_star, alpha, w_p, feasible)
