"""Image primitives shared by the detector, the data generator and the pipeline.

Images are plain numpy arrays:

* raster image: ``uint8`` array ``(height, width, 3)``, RGB
* Lab image: ``float64`` array ``(height, width, 3)`` holding L, a, b
* gray map: ``float64`` array ``(height, width)`` with values in [0, 1]
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

# D65 reference white, 2 degree observer
WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_EPS = 216 / 24389
_KAPPA = 24389 / 27


class InvalidComponentError(ValueError):
    """A box collapsed to zero width or height after clamping."""


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return max(self.w, 0) * max(self.h, 0)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2, self.y + self.h / 2)

    def clamp(self, width: int, height: int) -> "BoundingBox":
        x0, y0 = max(self.x, 0), max(self.y, 0)
        x1, y1 = min(self.x2, width), min(self.y2, height)
        return BoundingBox(x0, y0, max(x1 - x0, 0), max(y1 - y0, 0))

    def union(self, other: "BoundingBox") -> "BoundingBox":
        x0, y0 = min(self.x, other.x), min(self.y, other.y)
        x1, y1 = max(self.x2, other.x2), max(self.y2, other.y2)
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)

    def intersection_area(self, other: "BoundingBox") -> int:
        iw = min(self.x2, other.x2) - max(self.x, other.x)
        ih = min(self.y2, other.y2) - max(self.y, other.y)
        return max(iw, 0) * max(ih, 0)

    def iou(self, other: "BoundingBox") -> float:
        inter = self.intersection_area(other)
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)

    @classmethod
    def from_corners(cls, x0, y0, x1, y1) -> "BoundingBox":
        return cls(int(x0), int(y0), int(x1 - x0), int(y1 - y0))


def as_raster(img) -> np.ndarray:
    a = np.asarray(img)
    if a.dtype != np.uint8 or a.ndim != 3 or a.shape[2] != 3 or min(a.shape[:2]) < 1:
        raise ValueError(f"expected uint8 (H, W, 3) image, got {a.dtype} {a.shape}")
    return a


def load_image(path) -> np.ndarray:
    """Read a PNG or JPEG file as an RGB raster."""
    path = Path(path)
    if path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
        raise ValueError(f"{path}: only PNG and JPEG are supported")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_png(path, img) -> None:
    a = np.asarray(img)
    if a.dtype != np.uint8:
        a = np.clip(np.rint(a * 255 if a.max(initial=0) <= 1 else a), 0, 255).astype(np.uint8)
    Image.fromarray(a).save(path, format="PNG")


# ---------------------------------------------------------------------------
# colour


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.clip(c, 0, 1)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)


def to_lab(img) -> np.ndarray:
    """sRGB -> CIELAB (D65), per pixel. Accepts any ``(..., 3)`` uint8 array."""
    rgb = _srgb_to_linear(np.asarray(img, dtype=np.float64) / 255.0)
    xyz = rgb @ _RGB_TO_XYZ.T / WHITE_D65
    f = np.where(xyz > _EPS, np.cbrt(xyz), (_KAPPA * xyz + 16) / 116)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116 * f[..., 1] - 16
    lab[..., 1] = 500 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200 * (f[..., 1] - f[..., 2])
    return lab


def lab_to_rgb(lab) -> np.ndarray:
    """Inverse of :func:`to_lab`, rounded to uint8."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16) / 116
    fx = fy + lab[..., 1] / 500
    fz = fy - lab[..., 2] / 200
    f = np.stack([fx, fy, fz], axis=-1)
    xyz = np.where(f**3 > _EPS, f**3, (116 * f - 16) / _KAPPA) * WHITE_D65
    rgb = _linear_to_srgb(xyz @ _XYZ_TO_RGB.T)
    return np.clip(np.rint(rgb * 255), 0, 255).astype(np.uint8)


def to_gray(img) -> np.ndarray:
    """Luma ``(0.299 R + 0.587 G + 0.114 B) / 255``."""
    a = np.asarray(img, dtype=np.float64)
    return np.clip((a @ np.array([0.299, 0.587, 0.114])) / 255.0, 0.0, 1.0)


def quantize_gray(gray) -> np.ndarray:
    """Map a [0, 1] gray map to integer levels 0..255."""
    return np.clip(np.rint(np.asarray(gray) * 255), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# geometry


def _bilinear_axis(n_out: int, n_in: int):
    # half-pixel centres, source coordinate clamped into the box
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of an ``(H, W[, C])`` array to float64 ``(out_h, out_w[, C])``."""
    a = np.asarray(a, dtype=np.float64)
    y0, y1, fy = _bilinear_axis(out_h, a.shape[0])
    x0, x1, fx = _bilinear_axis(out_w, a.shape[1])
    if a.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bot = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def crop_resize(img, box: BoundingBox, side: int) -> np.ndarray:
    """Clamp ``box`` to the image, crop, and bilinearly resample to ``side x side``."""
    img = as_raster(img)
    if side < 1:
        raise ValueError("side must be >= 1")
    h, w = img.shape[:2]
    b = box.clamp(w, h)
    if b.w == 0 or b.h == 0:
        raise InvalidComponentError(f"box {box} is empty inside a {w}x{h} image")
    crop = img[b.y : b.y2, b.x : b.x2]
    if b.w == side and b.h == side:
        return crop.copy()
    out = resize_bilinear(crop, side, side)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def draw_overlay(img, boxes, scores=None, color=(255, 0, 0)) -> np.ndarray:
    """Copy of ``img`` with one-pixel box outlines, drawn in list order.

    When ``scores`` is given, each score is written just above its box.
    """
    out = as_raster(img).copy()
    h, w = out.shape[:2]
    for box in boxes:
        b = box.clamp(w, h)
        if b.w == 0 or b.h == 0:
            continue
        out[b.y, b.x : b.x2] = color
        out[b.y2 - 1, b.x : b.x2] = color
        out[b.y : b.y2, b.x] = color
        out[b.y : b.y2, b.x2 - 1] = color
    if scores is not None and len(boxes):
        pil = Image.fromarray(out)
        draw = ImageDraw.Draw(pil)
        for box, score in zip(boxes, scores):
            draw.text((box.x, max(box.y - 11, 0)), f"{score:.2f}", fill=color)
        out = np.asarray(pil).copy()
    return out
