"""Synthetic image pairs with exact ground-truth flow and occlusion masks.

Movers are textured shapes translated by integer displacements over a static
background, so the ground truth needs no resampling. Photometric corruption
(per-mover gain, global gain, fog) is applied to the second frame only.

Scene files (used by ``bcflow synth``) are JSON objects::

    {
      "size": [64, 64],                 # [height, width]
      "seed": 7,
      "channels": 3,
      "background": "noise",            # noise | gradient | perlin
      "movers": [
        {"shape": "square", "x": 10, "y": 12, "size": [8, 8],
         "displacement": [3, 0], "gain": 1.0}
      ],
      "global_illumination_gain": 1.0,
      "fog_strength": 0.0
    }

``x, y`` is the top-left corner of the mover's bounding box in the first
frame; ``shape`` is ``square``/``rect`` (the full box) or ``disk`` (the
inscribed ellipse).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import bilinear_sample

BACKGROUNDS = ("noise", "gradient", "perlin")
SHAPES = ("square", "rect", "disk")


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Mover:
    x: int
    y: int
    size: tuple[int, int] = (8, 8)
    displacement: tuple[int, int] = (0, 0)
    shape: str = "square"
    gain: float = 1.0

    def mask(self) -> np.ndarray:
        h, w = self.size
        if self.shape == "disk":
            yy, xx = np.mgrid[0:h, 0:w]
            cy, cx = (h - 1) / 2, (w - 1) / 2
            return ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0
        return np.ones((h, w), dtype=bool)


@dataclass(frozen=True)
class SceneSpec:
    size: tuple[int, int] = (64, 64)
    seed: int = 0
    background: str = "noise"
    movers: tuple[Mover, ...] = ()
    global_illumination_gain: float = 1.0
    fog_strength: float = 0.0
    channels: int = 3
    max_displacement: int = 8

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        movers = []
        for m in d.pop("movers", []):
            m = dict(m)
            m["size"] = tuple(m.get("size", (8, 8)))
            m["displacement"] = tuple(m.get("displacement", (0, 0)))
            movers.append(Mover(**m))
        if "size" in d:
            d["size"] = tuple(d["size"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SceneError(f"unknown scene keys: {sorted(unknown)}")
        return cls(movers=tuple(movers), **d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size"] = list(self.size)
        d["movers"] = [dict(asdict(m), size=list(m.size), displacement=list(m.displacement)) for m in self.movers]
        return d

    def with_(self, **changes) -> "SceneSpec":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return SceneSpec(**d)


@dataclass
class Scene:
    i1: np.ndarray
    i2: np.ndarray
    flow: np.ndarray
    occlusion: np.ndarray
    spec: SceneSpec = field(repr=False, default=None)


def _rng(seed: int, stream: int) -> np.random.Generator:
    # Philox is counter-based: (seed, stream) fully determines the sequence.
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), stream]))


def _background(spec: SceneSpec) -> np.ndarray:
    h, w = spec.size
    c = spec.channels
    rng = _rng(spec.seed, 0)
    if spec.background == "noise":
        return rng.random((h, w, c))
    if spec.background == "gradient":
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        base = rng.random(c) * 0.2 + 0.1
        gx = rng.random(c) * 0.6
        gy = rng.random(c) * 0.3
        img = base + gx * xx[..., None] / max(w - 1, 1) + gy * yy[..., None] / max(h - 1, 1)
        return np.clip(img, 0.0, 1.0)
    # Value noise: bilinear upsampling of random lattices at three octaves.
    img = np.zeros((h, w, c))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    total = 0.0
    for octave, cell in enumerate((16.0, 8.0, 4.0)):
        gh = int(np.ceil((h - 1) / cell)) + 1
        gw = int(np.ceil((w - 1) / cell)) + 1
        lattice = rng.random((gh, gw, c))
        amp = 0.5 ** octave
        img += amp * bilinear_sample(lattice, xx / cell, yy / cell)
        total += amp
    return img / total


def validate(spec: SceneSpec) -> None:
    h, w = spec.size
    if h < 1 or w < 1:
        raise SceneError("scene size must be positive")
    if spec.channels not in (1, 3):
        raise SceneError("channels must be 1 or 3")
    if spec.background not in BACKGROUNDS:
        raise SceneError(f"background must be one of {BACKGROUNDS}")
    if not spec.global_illumination_gain > 0:
        raise SceneError("global illumination gain must be positive")
    if not 0.0 <= spec.fog_strength < 1.0:
        raise SceneError("fog strength must lie in [0, 1)")
    occupied1 = np.zeros((h, w), dtype=bool)
    occupied2 = np.zeros((h, w), dtype=bool)
    for m in spec.movers:
        if m.shape not in SHAPES:
            raise SceneError(f"mover shape must be one of {SHAPES}")
        if not m.gain > 0:
            raise SceneError("mover gain must be positive")
        mh, mw = m.size
        dx, dy = m.displacement
        if int(dx) != dx or int(dy) != dy:
            raise SceneError("mover displacements must be integers")
        if max(abs(dx), abs(dy)) > spec.max_displacement:
            raise SceneError(f"displacement {m.displacement} exceeds +-{spec.max_displacement}")
        for ox, oy in ((m.x, m.y), (m.x + dx, m.y + dy)):
            if ox < 0 or oy < 0 or ox + mw > w or oy + mh > h:
                raise SceneError(f"mover at ({m.x}, {m.y}) does not fit in the frame")
        mask = m.mask()
        for occ, (ox, oy) in ((occupied1, (m.x, m.y)), (occupied2, (m.x + dx, m.y + dy))):
            region = occ[oy:oy + mh, ox:ox + mw]
            if np.any(region & mask):
                raise SceneError("movers overlap")
            region |= mask


def generate_scene(spec: SceneSpec) -> Scene:
    """Render ``(I1, I2, w*, occlusion)`` for ``spec``.

    ``occlusion`` marks first-frame pixels whose match in the second frame
    is hidden: background covered by a mover after it moves.
    """
    validate(spec)
    h, w = spec.size
    bg = _background(spec)
    i1 = bg.copy()
    i2 = bg.copy()
    flow = np.zeros((h, w, 2))
    covered2 = np.zeros((h, w), dtype=bool)
    is_mover1 = np.zeros((h, w), dtype=bool)
    for n, m in enumerate(spec.movers):
        mh, mw = m.size
        dx, dy = int(m.displacement[0]), int(m.displacement[1])
        texture = _rng(spec.seed, n + 1).random((mh, mw, spec.channels))
        mask = m.mask()
        ys, xs = np.nonzero(mask)
        i1[m.y + ys, m.x + xs] = texture[ys, xs]
        flow[m.y + ys, m.x + xs] = (dx, dy)
        is_mover1[m.y + ys, m.x + xs] = True
        i2[m.y + dy + ys, m.x + dx + xs] = np.clip(texture[ys, xs] * m.gain, 0.0, 1.0)
        covered2[m.y + dy + ys, m.x + dx + xs] = True

    i2 = np.clip(i2 * spec.global_illumination_gain, 0.0, 1.0)
    f = spec.fog_strength
    if f > 0:
        i2 = (1.0 - f) * i2 + f * 0.5
    # Movers fit in frame 2 and never overlap there, so only background can be hidden.
    occlusion = covered2 & ~is_mover1
    return Scene(i1, i2, flow, occlusion, spec)


def random_scene_spec(seed: int, size=(32, 32), n_movers: int = 2, background: str | None = None,
                      max_displacement: int = 6, channels: int = 3) -> SceneSpec:
    """A valid random scene with non-overlapping square/disk movers."""
    rng = _rng(seed, 2**32 - 1)
    h, w = size
    if background is None:
        background = BACKGROUNDS[int(rng.integers(len(BACKGROUNDS)))]
    movers = []
    for _ in range(200):
        if len(movers) == n_movers:
            break
        mh = int(rng.integers(4, max(5, min(h, w) // 3)))
        mw = mh if rng.random() < 0.5 else int(rng.integers(4, max(5, min(h, w) // 3)))
        shape = "disk" if rng.random() < 0.3 else ("square" if mh == mw else "rect")
        dx = int(rng.integers(-max_displacement, max_displacement + 1))
        dy = int(rng.integers(-max_displacement, max_displacement + 1))
        lo_x, hi_x = max(0, -dx), w - mw - max(0, dx)
        lo_y, hi_y = max(0, -dy), h - mh - max(0, dy)
        if hi_x < lo_x or hi_y < lo_y:
            continue
        cand = Mover(int(rng.integers(lo_x, hi_x + 1)), int(rng.integers(lo_y, hi_y + 1)),
                     (mh, mw), (dx, dy), shape)
        trial = SceneSpec(size, seed, background, tuple(movers) + (cand,), channels=channels,
                          max_displacement=max_displacement)
        try:
            validate(trial)
        except SceneError:
            continue
        movers.append(cand)
    return SceneSpec(size, seed, background, tuple(movers), channels=channels, max_displacement=max_displacement)
