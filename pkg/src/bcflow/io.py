"""Readers and writers for .flo, KITTI 16-bit PNG flow, and 8-bit images.

Layouts
-------
``.flo`` (Middlebury/Sintel): float32 tag 202021.25 (bytes ``PIEH``), int32
width, int32 height, then ``height * width * 2`` float32 values with u and v
interleaved, all little-endian.

KITTI flow PNG: 16-bit RGB, ``R = u * 64 + 2**15``, ``G = v * 64 + 2**15``,
``B = 1`` for valid pixels and 0 otherwise.

Images: 8-bit PNG, PPM (P6) or PGM (P5); values map to ``[0, 1]`` by
``v / 255`` and are written back with round-half-up.
"""

from __future__ import annotations

import io as _io
import struct
from pathlib import Path

import cv2
import numpy as np
from PIL import Image as PILImage

from .core import as_flow, as_image

FLO_TAG = 202021.25
FLO_TAG_BYTES = b"PIEH"
KITTI_SCALE = 64.0
KITTI_OFFSET = 2 ** 15


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def flo_bytes(flow) -> bytes:
    flow = as_flow(flow)
    if not np.all(np.isfinite(flow)):
        raise ValueError("cannot write non-finite flow to .flo")
    h, w = flow.shape[:2]
    header = struct.pack("<fii", FLO_TAG, w, h)
    return header + flow.astype("<f4").tobytes(order="C")


def parse_flo(data: bytes) -> np.ndarray:
    if len(data) < 12:
        raise FormatError(f".flo header truncated: {len(data)} bytes")
    tag = data[:4]
    if tag != FLO_TAG_BYTES:
        raise FormatError(f"bad .flo tag {tag!r} (value {struct.unpack('<f', tag)[0]!r}), expected {FLO_TAG_BYTES!r}")
    w, h = struct.unpack("<ii", data[4:12])
    if w <= 0 or h <= 0:
        raise FormatError(f"invalid .flo dimensions {w}x{h}")
    expected = 12 + 8 * w * h
    if len(data) < expected:
        raise FormatError(f".flo payload truncated: {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f4", count=2 * w * h, offset=12).reshape(h, w, 2).astype(np.float32)


def write_flo(path, flow) -> None:
    Path(path).write_bytes(flo_bytes(flow))


def read_flo(path) -> np.ndarray:
    """Read a .flo file as a float32 (H, W, 2) array."""
    return parse_flo(Path(path).read_bytes())


def kitti_encode(flow, valid=None) -> np.ndarray:
    """Encode to a uint16 (H, W, 3) array in RGB order."""
    flow = as_flow(flow)
    h, w = flow.shape[:2]
    valid = np.ones((h, w), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if valid.shape != (h, w):
        raise ValueError("validity mask must match the flow size")
    f = np.where(valid[..., None], flow, 0.0)
    if not np.all(np.isfinite(f)):
        raise ValueError("valid pixels must have finite flow")
    stored = np.floor(f * KITTI_SCALE + KITTI_OFFSET + 0.5)
    if stored.min(initial=KITTI_OFFSET) < 0 or stored.max(initial=KITTI_OFFSET) > 65535:
        raise ValueError("flow outside the KITTI encodable range (|u|, |v| < 512)")
    out = np.empty((h, w, 3), dtype=np.uint16)
    out[..., :2] = stored.astype(np.uint16)
    out[..., 2] = valid.astype(np.uint16)
    return out


def kitti_decode(stored: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    stored = np.asarray(stored)
    flow = (stored[..., :2].astype(np.float64) - KITTI_OFFSET) / KITTI_SCALE
    valid = stored[..., 2] > 0
    return flow, valid


def write_kitti_png(path, flow, valid=None) -> None:
    rgb = kitti_encode(flow, valid)
    ok, buf = cv2.imencode(".png", rgb[..., ::-1])
    if not ok:
        raise OSError(f"failed to encode {path}")
    Path(path).write_bytes(buf.tobytes())


def read_kitti_png(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a KITTI flow PNG; returns float64 flow and the validity mask."""
    data = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    try:
        img = cv2.imdecode(data, cv2.IMREAD_UNCHANGED)
    except cv2.error as exc:
        raise FormatError(f"{path}: cannot decode PNG ({exc})") from None
    if img is None:
        raise FormatError(f"{path}: not a decodable PNG")
    if img.dtype != np.uint16 or img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"{path}: KITTI flow must be 16-bit RGB, got {img.dtype} {img.shape}")
    return kitti_decode(img[..., ::-1])


def _open_image(data: bytes, name) -> PILImage.Image:
    try:
        img = PILImage.open(_io.BytesIO(data))
        img.load()
    except Exception as exc:  # Pillow raises many exception types on corrupt input
        raise FormatError(f"{name}: cannot decode image ({type(exc).__name__}: {exc})") from None
    return img


def read_image(path) -> np.ndarray:
    """Read an 8-bit gray or RGB PNG/PPM/PGM as float64 (H, W, C) in ``[0, 1]``."""
    img = _open_image(Path(path).read_bytes(), path)
    if img.format not in ("PNG", "PPM"):
        raise FormatError(f"{path}: unsupported image format {img.format}")
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.uint8)[:, :, None]
    elif img.mode == "RGB":
        arr = np.asarray(img, dtype=np.uint8)
    elif img.mode in ("LA", "RGBA", "P", "1"):
        arr = np.asarray(img.convert("RGB" if img.mode != "LA" else "L"), dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
    else:
        raise FormatError(f"{path}: unsupported bit depth / mode {img.mode}")
    return arr.astype(np.float64) / 255.0


def to_uint8(values) -> np.ndarray:
    """Quantize ``[0, 1]`` values to 8 bits with round-half-up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def write_image(path, img) -> None:
    """Write a ``[0, 1]`` image (H, W), (H, W, 1) or (H, W, 3) as 8-bit; format from the suffix."""
    arr = to_uint8(as_image(img))
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    suffix = Path(path).suffix.lower()
    fmt = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM", ".pnm": "PPM"}.get(suffix)
    if fmt is None:
        raise FormatError(f"unsupported image suffix {suffix!r}")
    if suffix == ".ppm" and arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if suffix == ".pgm" and arr.ndim == 3:
        raise FormatError("PGM output needs a single-channel image")
    PILImage.fromarray(arr).save(path, format=fmt)


def write_mask(path, mask) -> None:
    write_image(path, np.asarray(mask, dtype=np.float64))


def read_mask(path) -> np.ndarray:
    img = read_image(path)
    return img.mean(axis=2) >= 0.5


def read_flow(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``.flo`` or KITTI ``.png`` flow by suffix; returns (flow, valid)."""
    path = Path(path)
    if path.suffix.lower() == ".flo":
        flow = read_flo(path).astype(np.float64)
        return flow, np.all(np.isfinite(flow), axis=2)
    if path.suffix.lower() == ".png":
        return read_kitti_png(path)
    raise FormatError(f"unsupported flow file suffix {path.suffix!r}")


def write_flow(path, flow, valid=None) -> None:
    path = Path(path)
    if path.suffix.lower() == ".flo":
        write_flo(path, flow)
    elif path.suffix.lower() == ".png":
        write_kitti_png(path, flow, valid)
    else:
        raise FormatError(f"unsupported flow file suffix {path.suffix!r}")
