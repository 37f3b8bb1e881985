"""Stick-figure rendering of pose sequences to uncompressed BMP images.

Joint positions are orthographically projected onto a coordinate plane
(frontal XY by default), uniformly scaled to fit the image with a small
margin, and bones are drawn as fixed-width black strokes on white. BMP output
is written byte-for-byte deterministically so golden-file comparisons work.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
_MARGIN = 0.05


@dataclass(frozen=True)
class RenderConfig:
    image_size: int = 256
    plane: str = "xy"
    stroke_width: int = 2

    def __post_init__(self):
        if self.image_size < 64:
            raise ValueError(f"image_size must be >= 64, got {self.image_size}")
        if self.plane not in _PLANES:
            raise ValueError(f"plane must be one of {sorted(_PLANES)}, got {self.plane!r}")
        if self.stroke_width < 1:
            raise ValueError(f"stroke_width must be >= 1, got {self.stroke_width}")


def project_to_pixels(positions: np.ndarray, config: RenderConfig) -> np.ndarray:
    """(T, J, 3) positions -> (T, J, 2) pixel coordinates (col, row).

    One uniform scale for the whole sequence, so on-screen lengths stay
    proportional to world lengths across frames and axes.
    """
    positions = np.asarray(positions, dtype=np.float64)
    ax_u, ax_v = _PLANES[config.plane]
    u = positions[..., ax_u]
    v = positions[..., ax_v]
    span = max(u.max() - u.min(), v.max() - v.min(), 1e-12)
    usable = config.image_size * (1.0 - 2.0 * _MARGIN)
    scale = usable / span
    cu = (u.max() + u.min()) / 2.0
    cv = (v.max() + v.min()) / 2.0
    half = config.image_size / 2.0
    px = (u - cu) * scale + half
    py = half - (v - cv) * scale  # image rows grow downward
    return np.stack([px, py], axis=-1)


def _stamp(img: np.ndarray, x: int, y: int, r: int) -> None:
    h, w = img.shape[:2]
    x0, x1 = max(x - r, 0), min(x + r + 1, w)
    y0, y1 = max(y - r, 0), min(y + r + 1, h)
    if x0 < x1 and y0 < y1:
        img[y0:y1, x0:x1] = 0


def draw_segment(img: np.ndarray, p0, p1, stroke_width: int) -> None:
    """Rasterize a line segment by stamping squares along it (deterministic)."""
    x0, y0 = float(p0[0]), float(p0[1])
    x1, y1 = float(p1[0]), float(p1[1])
    steps = int(2 * max(abs(x1 - x0), abs(y1 - y0))) + 1
    r = stroke_width // 2
    for i in range(steps + 1):
        a = i / steps
        _stamp(img, int(round(x0 + a * (x1 - x0))), int(round(y0 + a * (y1 - y0))), r)


def render_frame(pixels: np.ndarray, parents: np.ndarray, config: RenderConfig) -> np.ndarray:
    """Draw one frame's skeleton: (J, 2) pixel coords -> (H, W, 3) uint8 image."""
    img = np.full((config.image_size, config.image_size, 3), 255, dtype=np.uint8)
    for j, p in enumerate(parents):
        if p >= 0:
            draw_segment(img, pixels[p], pixels[j], config.stroke_width)
    return img


def render_sequence(positions: np.ndarray, parents: np.ndarray, config: RenderConfig) -> list[np.ndarray]:
    """All frames of a position array -> list of images (shared projection scale)."""
    if positions.shape[0] == 0:
        return []
    pixels = project_to_pixels(positions, config)
    return [render_frame(pixels[f], parents, config) for f in range(pixels.shape[0])]


def write_bmp(img: np.ndarray, path) -> None:
    """Write an (H, W, 3) uint8 RGB array as an uncompressed 24-bit BMP."""
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    row_pad = (-3 * w) % 4
    data_size = (3 * w + row_pad) * h
    header = struct.pack("<2sIHHI", b"BM", 14 + 40 + data_size, 0, 0, 14 + 40)
    info = struct.pack("<IiiHHIIiiII", 40, w, h, 1, 24, 0, data_size, 2835, 2835, 0, 0)
    with open(path, "wb") as f:
        f.write(header)
        f.write(info)
        pad = b"\x00" * row_pad
        for row in img[::-1]:  # BMP rows are bottom-up, pixels BGR
            f.write(row[:, ::-1].tobytes())
            f.write(pad)


def read_bmp(path) -> np.ndarray:
    """Read an uncompressed 24-bit BMP back into an (H, W, 3) uint8 RGB array."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] != b"BM":
        raise ValueError(f"{path}: not a BMP file")
    offset = struct.unpack_from("<I", blob, 10)[0]
    w, h = struct.unpack_from("<ii", blob, 18)
    bpp = struct.unpack_from("<H", blob, 28)[0]
    if bpp != 24:
        raise ValueError(f"{path}: expected 24-bit BMP, got {bpp}-bit")
    row_pad = (-3 * w) % 4
    img = np.empty((h, w, 3), dtype=np.uint8)
    pos = offset
    for row in range(h - 1, -1, -1):
        line = np.frombuffer(blob, dtype=np.uint8, count=3 * w, offset=pos)
        img[row] = line.reshape(w, 3)[:, ::-1]
        pos += 3 * w + row_pad
    return img
