"""Synthetic character patches with pixel masks, word scenes, and negative crops."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .imagecore import BoundingBox, crop_resize, load_image, save_png, to_gray
from .textcnn import CHARSET, N_CLASSES, PATCH, MultiTaskSample, SampleSet

log = logging.getLogger(__name__)

CELL = 48
BASELINE = 38  # atlas baseline row


@lru_cache(maxsize=1)
def glyph_atlas() -> np.ndarray:
    """``(62, 48, 48)`` bool bitmaps for 0-9, A-Z, a-z on a shared baseline."""
    with resources.files("scenetext").joinpath("data/glyph_atlas.png").open("rb") as fh:
        strip = np.asarray(Image.open(fh).convert("L")) > 127
    return strip.reshape(CELL, N_CLASSES, CELL).transpose(1, 0, 2).copy()


def _glyph_bbox(bitmap):
    ys, xs = np.nonzero(bitmap)
    return ys.min(), ys.max() + 1, xs.min(), xs.max() + 1


def seed_for(master: int, index: int) -> int:
    """Per-item seed, so serial and parallel generation agree."""
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


@dataclass
class SynthConfig:
    count: int = 6200
    seed: int = 0
    rotation_range: tuple = (-10.0, 10.0)  # degrees
    scale_range: tuple = (0.70, 0.95)  # glyph long side / patch side
    shift_range: float = 1.5  # pixels
    bold_prob: float = 0.3
    fg_range: tuple = (0, 255)
    bg_range: tuple = (0, 255)
    min_contrast: float = 60.0  # luma difference, 0..255
    noise_std: tuple = (0.0, 6.0)
    blur_range: tuple = (0.0, 0.8)  # Gaussian sigma
    background: str = "mixed"  # flat | gradient | image | mixed
    background_dir: str | None = None
    context_prob: float = 0.0  # chance of neighbouring glyphs beside the target

    def __post_init__(self):
        for name in ("rotation_range", "scale_range", "fg_range", "bg_range", "noise_std", "blur_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered (low, high)")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.background not in ("flat", "gradient", "image", "mixed"):
            raise ValueError(f"unknown background {self.background!r}")
        if self.background == "image" and not self.background_dir:
            raise ValueError("background='image' needs background_dir")

    @classmethod
    def clean(cls, **kw) -> "SynthConfig":
        """No rotation, shift, bolding, noise or blur; flat colours."""
        base = dict(
            rotation_range=(0.0, 0.0), shift_range=0.0, bold_prob=0.0, noise_std=(0.0, 0.0),
            blur_range=(0.0, 0.0), background="flat",
        )
        base.update(kw)
        return cls(**base)


# ---------------------------------------------------------------------------
# character patches


def glyph_sample_grid(bitmap, scale: float, angle_deg: float, shift=(0.0, 0.0), side: int = PATCH,
                      anchor=None) -> np.ndarray:
    """Nearest-neighbour resample of a glyph bitmap onto a ``side x side`` grid.

    The glyph's bbox centre (or ``anchor``) lands on the patch centre plus
    ``shift``; ``scale`` is patch pixels per atlas pixel.
    """
    y0, y1, x0, x1 = _glyph_bbox(bitmap)
    gy, gx = anchor if anchor is not None else ((y0 + y1) / 2, (x0 + x1) / 2)
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    py, px = np.mgrid[0:side, 0:side] + 0.5
    dy, dx = py - side / 2 - shift[0], px - side / 2 - shift[1]
    # inverse rotation, then inverse scale
    sy = (c * dy - s * dx) / scale + gy
    sx = (s * dy + c * dx) / scale + gx
    iy, ix = np.floor(sy).astype(int), np.floor(sx).astype(int)
    inside = (iy >= 0) & (iy < bitmap.shape[0]) & (ix >= 0) & (ix < bitmap.shape[1])
    out = np.zeros((side, side), bool)
    out[inside] = bitmap[iy[inside], ix[inside]]
    return out


def _luma(rgb) -> float:
    return float(np.dot(rgb, (0.299, 0.587, 0.114)))


def _pick_colors(rng, cfg: SynthConfig):
    lo_f, hi_f = cfg.fg_range
    lo_b, hi_b = cfg.bg_range
    for _ in range(100):
        bg = rng.uniform(lo_b, hi_b, 3)
        fg = rng.uniform(lo_f, hi_f, 3)
        if abs(_luma(fg) - _luma(bg)) >= cfg.min_contrast:
            return fg, bg
    # fall back to the extreme that satisfies the contrast bound
    fg = np.full(3, hi_f if _luma(bg) < 128 else lo_f, float)
    return fg, bg


def _list_backgrounds(directory):
    if not directory:
        return []
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))


def _background(rng, cfg: SynthConfig, bg, h: int, w: int) -> np.ndarray:
    kind = cfg.background
    if kind == "mixed":
        kind = "gradient" if rng.random() < 0.5 else "flat"
    if kind == "flat":
        return np.broadcast_to(bg, (h, w, 3)).astype(np.float64)
    if kind == "gradient":
        other = np.clip(bg + rng.uniform(-50, 50, 3), 0, 255)
        th = rng.uniform(0, 2 * math.pi)
        yy, xx = np.mgrid[0:h, 0:w]
        t = (math.cos(th) * xx / max(w - 1, 1) + math.sin(th) * yy / max(h - 1, 1))
        t = (t - t.min()) / max(np.ptp(t), 1e-9)
        return bg * (1 - t[..., None]) + other * t[..., None]
    files = _list_backgrounds(cfg.background_dir)
    if not files:
        raise FileNotFoundError(f"no PNG/JPEG backgrounds in {cfg.background_dir}")
    src = load_image(files[rng.integers(len(files))])
    side = min(src.shape[0], src.shape[1], max(h, w) * 4)
    y = rng.integers(0, src.shape[0] - side + 1)
    x = rng.integers(0, src.shape[1] - side + 1)
    return crop_resize(src, BoundingBox(int(x), int(y), side, side), max(h, w))[:h, :w].astype(np.float64)


def _finish(rng, cfg: SynthConfig, canvas: np.ndarray) -> np.ndarray:
    sigma = rng.uniform(*cfg.blur_range)
    if sigma > 0:
        canvas = ndimage.gaussian_filter(canvas, (sigma, sigma, 0))
    std = rng.uniform(*cfg.noise_std)
    if std > 0:
        canvas = canvas + rng.normal(0, std, canvas.shape)
    return np.clip(canvas, 0, 255)


def render_char(cls: int, cfg: SynthConfig, seed: int) -> MultiTaskSample:
    """One 32x32 character patch, its pre-noise binary mask, and its label."""
    if not 0 <= cls < N_CLASSES:
        raise ValueError(f"class {cls} outside [0, {N_CLASSES})")
    rng = np.random.default_rng(seed)
    bitmap = glyph_atlas()[cls]
    if rng.random() < cfg.bold_prob:
        bitmap = ndimage.binary_dilation(bitmap)
    y0, y1, x0, x1 = _glyph_bbox(bitmap)
    long_side = max(y1 - y0, x1 - x0)
    scale = rng.uniform(*cfg.scale_range) * PATCH / long_side
    angle = rng.uniform(*cfg.rotation_range)
    shift = tuple(rng.uniform(-cfg.shift_range, cfg.shift_range, 2)) if cfg.shift_range else (0.0, 0.0)
    mask = glyph_sample_grid(bitmap, scale, angle, shift)

    ink = mask.copy()
    if rng.random() < cfg.context_prob:
        # neighbours on the same baseline, as a square crop around a word character sees them
        cy = (y0 + y1) / 2
        for sign in (-1, 1):
            nb = glyph_atlas()[rng.integers(N_CLASSES)]
            ny0, ny1, nx0, nx1 = _glyph_bbox(nb)
            gap = rng.uniform(2, 6)
            offset = (x1 - x0) / 2 + gap + (nx1 - nx0) / 2
            anchor = (cy, (nx0 + nx1) / 2 - sign * offset)
            ink |= glyph_sample_grid(nb, scale, angle, shift, anchor=anchor)

    fg, bg = _pick_colors(rng, cfg)
    canvas = _background(rng, cfg, bg, PATCH, PATCH)
    canvas = np.where(ink[..., None], fg, canvas)
    patch = _finish(rng, cfg, canvas) / 255.0
    return MultiTaskSample(
        patch=patch.astype(np.float32), mask=mask.astype(np.uint8), char_label=int(cls)
    )


def synth_char_set(cfg: SynthConfig, binary_label: int | None = None) -> SampleSet:
    """``cfg.count`` class-balanced samples in memory (class = index mod 62)."""
    samples = []
    for i in range(cfg.count):
        s = render_char(i % N_CLASSES, cfg, seed_for(cfg.seed, i))
        s.binary_label = binary_label
        samples.append(s)
    return SampleSet.from_samples(samples)


def generate_dataset(cfg: SynthConfig, out_dir) -> Path:
    """Write patches and masks as PNG plus a tab-separated ``manifest.tsv``.

    Manifest columns: patch path, mask path or "-", class index or "-",
    binary label or "-". Paths are relative to ``out_dir``.
    """
    out = Path(out_dir)
    try:
        (out / "patches").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    lines = []
    for i in range(cfg.count):
        cls = i % N_CLASSES
        s = render_char(cls, cfg, seed_for(cfg.seed, i))
        pname = f"patches/{i:06d}.png"
        mname = f"masks/{i:06d}.png"
        save_png(out / pname, np.rint(s.patch * 255).astype(np.uint8))
        Image.fromarray(s.mask * 255).save(out / mname, format="PNG")
        lines.append(f"{pname}\t{mname}\t{cls}\t-")
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def write_samples(samples: SampleSet, out_dir, prefix: str = "s") -> Path:
    """Write an arbitrary sample set in the manifest format."""
    out = Path(out_dir)
    (out / "patches").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(len(samples)):
        pname = f"patches/{prefix}{i:06d}.png"
        save_png(out / pname, np.rint(samples.patches[i] * 255).astype(np.uint8))
        mname = "-"
        if samples.has_mask[i]:
            mname = f"masks/{prefix}{i:06d}.png"
            Image.fromarray(samples.masks[i].astype(np.uint8) * 255).save(out / mname, format="PNG")
        lab = str(samples.labels[i]) if samples.labels[i] >= 0 else "-"
        binary = str(samples.binary[i]) if samples.binary[i] >= 0 else "-"
        lines.append(f"{pname}\t{mname}\t{lab}\t{binary}")
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_manifest(path) -> SampleSet:
    path = Path(path)
    root = path.parent
    samples = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        pname, mname, lab, binary = line.split("\t")
        patch = load_image(root / pname).astype(np.float32) / 255.0
        mask = None
        if mname != "-":
            with Image.open(root / mname) as im:
                mask = (np.asarray(im.convert("L")) > 127).astype(np.uint8)
        samples.append(
            MultiTaskSample(
                patch=patch,
                mask=mask,
                char_label=None if lab == "-" else int(lab),
                binary_label=None if binary == "-" else int(binary),
            )
        )
    return SampleSet.from_samples(samples)


# ---------------------------------------------------------------------------
# scenes


@dataclass
class SceneConfig:
    width: int = 240
    height: int = 80
    words: tuple = (1, 2)  # words per scene (inclusive range)
    word_length: tuple = (3, 6)
    char_height: tuple = (16, 26)  # cap height in pixels
    style: str = "easy"  # easy | low_contrast | isoluminant | cluttered
    noise_std: float = 2.0
    blur: float = 0.5


@dataclass
class Scene:
    image: np.ndarray
    words: list  # BoundingBox per word
    chars: list  # BoundingBox per character
    text: list = field(default_factory=list)


def _scene_colors(rng, style: str):
    if style == "isoluminant":
        # text and background differ in chroma, not in luma
        bg = rng.uniform(60, 200, 3)
        for _ in range(200):
            fg = rng.uniform(0, 255, 3)
            if abs(_luma(fg) - _luma(bg)) < 3 and np.linalg.norm(fg - bg) > 90:
                return fg, bg
        fg = bg.copy()
        fg[[0, 1]] = bg[[1, 0]]
        return fg, bg
    if style == "low_contrast":
        bg = rng.uniform(90, 180, 3)
        fg = bg - rng.uniform(10, 18) * rng.choice([-1, 1])
        return np.clip(fg, 0, 255), bg
    bg = rng.uniform(170, 255, 3) if rng.random() < 0.5 else rng.uniform(0, 80, 3)
    fg = rng.uniform(0, 60, 3) if _luma(bg) > 128 else rng.uniform(190, 255, 3)
    return fg, bg


def _clutter(rng, canvas, n: int):
    h, w = canvas.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n):
        color = rng.uniform(0, 255, 3)
        kind = rng.integers(3)
        if kind == 0:
            x0, y0 = rng.integers(0, w), rng.integers(0, h)
            canvas[y0 : y0 + rng.integers(4, 30), x0 : x0 + rng.integers(4, 30)] = color
        elif kind == 1:
            cy, cx, r = rng.uniform(0, h), rng.uniform(0, w), rng.uniform(3, 15)
            canvas[(yy - cy) ** 2 + (xx - cx) ** 2 < r * r] = color
        else:
            th = rng.uniform(0, math.pi)
            d = (xx - rng.uniform(0, w)) * math.sin(th) - (yy - rng.uniform(0, h)) * math.cos(th)
            canvas[np.abs(d) < rng.uniform(0.5, 2.5)] = color
    return canvas


def _glyph_coverage(bitmap, scale: float) -> np.ndarray:
    """Anti-aliased coverage of a glyph cell scaled by ``scale``."""
    side = max(1, int(round(CELL * scale)))
    im = Image.fromarray(bitmap.astype(np.float32))
    return np.asarray(im.resize((side, side), Image.BOX), dtype=np.float64)


def render_scene(cfg: SceneConfig, seed: int) -> Scene:
    """Words on a background with exact word and character boxes.

    Word and character boxes are the tight boxes of pixels with coverage >= 0.5.
    """
    rng = np.random.default_rng(seed)
    atlas = glyph_atlas()
    fg, bg = _scene_colors(rng, cfg.style)
    h, w = cfg.height, cfg.width
    canvas = np.broadcast_to(bg, (h, w, 3)).astype(np.float64).copy()
    if cfg.style == "cluttered":
        canvas = _clutter(rng, canvas, int(rng.integers(3, 8)))
    cover = np.zeros((h, w))
    words, chars, texts = [], [], []
    n_words = int(rng.integers(cfg.words[0], cfg.words[1] + 1))
    rows = np.linspace(0, h, n_words + 1)
    for wi in range(n_words):
        cap = rng.uniform(*cfg.char_height)
        scale = cap / 26.0  # atlas cap height is about 26 px
        length = int(rng.integers(cfg.word_length[0], cfg.word_length[1] + 1))
        classes = rng.integers(0, N_CLASSES, length)
        cells = [_glyph_coverage(atlas[c], scale) for c in classes]
        spans = []
        for cell in cells:
            cols = np.flatnonzero(cell.max(axis=0) >= 0.5)
            spans.append((cols.min(), cols.max() + 1))
        gap = max(2, int(round(cap * rng.uniform(0.12, 0.22))))
        width = sum(b - a for a, b in spans) + gap * (length - 1)
        side = cells[0].shape[0]
        base = int(round(BASELINE * scale))
        if width + 4 > w:
            continue
        x = int(rng.integers(2, w - width - 1))
        lo, hi = int(rows[wi]), int(rows[wi + 1])
        top_min, top_max = lo + 1 - int(round(8 * scale)), hi - side - 1 + int(round(2 * scale))
        if top_max < top_min:
            continue
        top = int(rng.integers(top_min, top_max + 1))
        word_box = None
        text = ""
        for c, cell, (a, b) in zip(classes, cells, spans):
            ys, xs = np.nonzero(cell[:, a:b] >= 0.5)
            y0, y1 = top + ys.min(), top + ys.max() + 1
            # paste coverage, clipped to the canvas
            cy0, cx0 = max(top, 0), max(x, 0)
            cy1, cx1 = min(top + side, h), min(x + (b - a), w)
            if cy1 > cy0 and cx1 > cx0:
                patch = cell[cy0 - top : cy1 - top, a + cx0 - x : a + cx1 - x]
                cover[cy0:cy1, cx0:cx1] = np.maximum(cover[cy0:cy1, cx0:cx1], patch)
            box = BoundingBox(int(x), int(max(y0, 0)), int(b - a), int(min(y1, h) - max(y0, 0)))
            chars.append(box)
            word_box = box if word_box is None else word_box.union(box)
            text += CHARSET[c]
            x += (b - a) + gap
        words.append(word_box)
        texts.append(text)
    canvas = canvas * (1 - cover[..., None]) + fg * cover[..., None]
    if cfg.blur > 0:
        canvas = ndimage.gaussian_filter(canvas, (cfg.blur, cfg.blur, 0))
    if cfg.noise_std > 0:
        canvas = canvas + rng.normal(0, cfg.noise_std, canvas.shape)
    img = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    return Scene(img, words, chars, texts)


def scene_suite(n: int, seed: int, cfg: SceneConfig | None = None, styles=None) -> list:
    """``n`` scenes; ``styles`` cycles over scene styles when given."""
    out = []
    for i in range(n):
        c = cfg or SceneConfig()
        if styles:
            c = SceneConfig(**{**c.__dict__, "style": styles[i % len(styles)]})
        out.append(render_scene(c, seed_for(seed, i)))
    return out


# ---------------------------------------------------------------------------
# negatives


def harvest_negatives(images, count: int, seed: int, side_range=(10, 48)) -> list:
    """Random square crops with IoU < 0.1 against every truth box, as 32x32 patches.

    ``images`` is a list of ``(image, [BoundingBox])``. Crops are spread
    round-robin over the images; an image that rejects 1000 consecutive
    placements is dropped with a warning.
    """
    rng = np.random.default_rng(seed)
    live = list(range(len(images)))
    out = []
    k = 0
    while len(out) < count and live:
        i = live[k % len(live)]
        img, truth = images[i]
        h, w = img.shape[:2]
        placed = False
        for _ in range(1000):
            side = int(rng.integers(side_range[0], min(side_range[1], h, w) + 1))
            x = int(rng.integers(0, w - side + 1))
            y = int(rng.integers(0, h - side + 1))
            box = BoundingBox(x, y, side, side)
            if all(box.iou(t) < 0.1 for t in truth):
                patch = crop_resize(img, box, PATCH).astype(np.float32) / 255.0
                out.append(MultiTaskSample(patch=patch, binary_label=0))
                placed = True
                break
        if placed:
            k += 1
        else:
            log.warning("no valid negative crop in image %d after 1000 attempts; skipping it", i)
            live.remove(i)
    return out


def text_contrast(scene: Scene) -> float:
    """Mean over characters of the largest luma deviation inside the box from the surround median."""
    gray = to_gray(scene.image)
    diffs = []
    for b in scene.chars:
        inner = gray[b.y : b.y2, b.x : b.x2]
        ring = gray[max(b.y - 3, 0) : b.y2 + 3, max(b.x - 3, 0) : b.x2 + 3]
        med = np.median(ring)
        diffs.append(max(abs(inner.min() - med), abs(inner.max() - med)) * 255)
    return float(np.mean(diffs)) if diffs else 0.0


def background_scenes(n: int, seed: int) -> list:
    """Scenes to harvest negatives from, as ``(image, truth boxes)``; truth covers words and characters."""
    scenes = scene_suite(n, seed, styles=("cluttered", "easy", "cluttered", "low_contrast"))
    return [(s.image, s.words + s.chars) for s in scenes]


def binary_set(count: int, seed: int, positive_fraction: float = 0.5, char_cfg: SynthConfig | None = None) -> SampleSet:
    """Text/non-text training mix: rendered characters (binary 1) and harvested crops (binary 0)."""
    n_pos = int(round(count * positive_fraction))
    n_neg = count - n_pos
    parts = []
    if n_pos:
        cfg = char_cfg or SynthConfig(count=n_pos, seed=seed + 1, context_prob=0.5)
        cfg = SynthConfig(**{**cfg.__dict__, "count": n_pos})
        parts.append(synth_char_set(cfg, binary_label=1))
    if n_neg:
        sources = background_scenes(max(1, n_neg // 20), seed + 2)
        parts.append(SampleSet.from_samples(harvest_negatives(sources, n_neg, seed + 3)))
    return SampleSet.concat(*parts)
