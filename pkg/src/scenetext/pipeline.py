"""End-to-end word detection: candidates -> CNN filter -> pairs -> lines -> words."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cemser import CeMserConfig, ce_mser_detect
from .imagecore import BoundingBox, InvalidComponentError, as_raster, crop_resize
from .textcnn import PATCH, TextCnnModel, text_probability


@dataclass
class GroupingConfig:
    max_height_ratio: float = 1.7
    max_gap_factor: float = 2.0  # x the wider member's width
    max_center_offset: float = 0.5  # x the taller member's height
    max_orientation_diff: float = math.radians(10.0)
    score_threshold: float = 0.5
    word_gap_factor: float = 2.0  # x the median gap of the line
    word_nms_iou: float = 0.5
    max_member_overlap: float = 0.5  # x the smaller box's area

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if k == "score_threshold":
                if not 0 <= v <= 1:
                    raise ValueError("score_threshold must lie in [0, 1]")
            elif v <= 0:
                raise ValueError(f"{k} must be positive")


@dataclass
class CandidatePatch:
    component: object  # anything with a ``bbox``
    box: BoundingBox  # square, clamped
    patch: np.ndarray | None = None  # (32, 32, 3) float32 in [0, 1]
    score: float = float("nan")

    @property
    def bbox(self) -> BoundingBox:
        return self.component.bbox


@dataclass
class TextLine:
    members: list  # candidates, left to right
    bbox: BoundingBox
    orientation: float  # radians


@dataclass
class WordBox:
    bbox: BoundingBox
    score: float
    members: list = field(default_factory=list, repr=False)

    def to_record(self) -> dict:
        return {"box": list(self.bbox.as_tuple()), "score": round(float(self.score), 6)}


# ---------------------------------------------------------------------------
# candidates


def square_box(b: BoundingBox) -> BoundingBox:
    """Square of side max(w, h) sharing the centre of ``b`` (floor on odd slack)."""
    side = max(b.w, b.h)
    return BoundingBox(b.x + (b.w - side) // 2, b.y + (b.h - side) // 2, side, side)


def prepare_patch(img, component) -> CandidatePatch:
    img = as_raster(img)
    b = component.bbox
    if b.w <= 0 or b.h <= 0:
        raise InvalidComponentError(f"degenerate component box {b}")
    box = square_box(b).clamp(img.shape[1], img.shape[0])
    patch = crop_resize(img, box, PATCH).astype(np.float32) / 255.0
    return CandidatePatch(component, box, patch)


def prepare_patches(img, components) -> list:
    out = []
    for c in components:
        try:
            out.append(prepare_patch(img, c))
        except InvalidComponentError:
            continue
    return out


def filter_components(model: TextCnnModel, candidates, threshold: float) -> list:
    """Score every candidate and keep those with text probability >= threshold."""
    if not candidates:
        return []
    probs = text_probability(model, np.stack([c.patch for c in candidates]))
    for c, p in zip(candidates, probs):
        c.score = float(p)
    return [c for c in candidates if c.score >= threshold]


# ---------------------------------------------------------------------------
# grouping


def _boxes(items):
    return [getattr(it, "bbox", it) for it in items]


def can_pair(a: BoundingBox, b: BoundingBox, cfg: GroupingConfig) -> bool:
    if min(a.h, b.h) <= 0:
        return False
    if max(a.h, b.h) / min(a.h, b.h) > cfg.max_height_ratio:
        return False
    gap = max(a.x, b.x) - min(a.x2, b.x2)
    if gap > cfg.max_gap_factor * max(a.w, b.w):
        return False
    offset = abs(a.center[1] - b.center[1])
    return offset <= cfg.max_center_offset * max(a.h, b.h)


def suppress_nested(items, overlap: float) -> list:
    """Drop items whose box shares >= ``overlap`` of the smaller box's area with a larger kept item.

    A character shows up as several nested regions (outline, counter, the same
    glyph in another map); only the outermost one should enter a text line.
    """
    boxes = _boxes(items)
    order = sorted(range(len(items)), key=lambda i: (-boxes[i].area, -getattr(items[i], "score", 0.0), i))
    kept = []
    for i in order:
        b = boxes[i]
        if all(b.intersection_area(boxes[k]) < overlap * min(b.area, boxes[k].area) for k in kept):
            kept.append(i)
    return [items[i] for i in sorted(kept)]


def pair_components(items, cfg: GroupingConfig) -> list:
    """Index pairs ``(i, j)``, ``i < j``, of geometrically compatible items."""
    boxes = _boxes(items)
    return [
        (i, j)
        for i in range(len(boxes))
        for j in range(i + 1, len(boxes))
        if can_pair(boxes[i], boxes[j], cfg)
    ]


def fit_orientation(points) -> float:
    """Direction in [0, pi) of the least-squares (principal axis) line through ``points``."""
    p = np.asarray(points, dtype=np.float64)
    d = p - p.mean(axis=0)
    sxx, syy, sxy = (d[:, 0] ** 2).sum(), (d[:, 1] ** 2).sum(), (d[:, 0] * d[:, 1]).sum()
    return float(0.5 * math.atan2(2 * sxy, sxx - syy)) % math.pi


def angle_diff(a: float, b: float) -> float:
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


def merge_pairs(pairs, items, cfg: GroupingConfig) -> list:
    """Merge pairs sharing a member while their fitted orientations agree, to a fixpoint.

    Groups are kept in canonical (sorted) order and the first mergeable
    couple is merged each round, so the partition does not depend on the
    order pairs arrive in.
    """
    boxes = _boxes(items)
    centers = [b.center for b in boxes]

    def orient(g):
        return fit_orientation([centers[i] for i in g])

    groups = sorted({tuple(sorted(p)) for p in pairs})
    merged = True
    while merged:
        merged = False
        orients = [orient(g) for g in groups]
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                if set(groups[a]) & set(groups[b]) and angle_diff(orients[a], orients[b]) <= cfg.max_orientation_diff:
                    new = tuple(sorted(set(groups[a]) | set(groups[b])))
                    groups = sorted(set(g for k, g in enumerate(groups) if k not in (a, b)) | {new})
                    merged = True
                    break
            if merged:
                break
    lines = []
    for g in groups:
        members = sorted(g, key=lambda i: (boxes[i].x, boxes[i].y, i))
        bbox = boxes[members[0]]
        for i in members[1:]:
            bbox = bbox.union(boxes[i])
        lines.append(TextLine([items[i] for i in members], bbox, orient(g)))
    return lines


def split_words(line: TextLine, cfg: GroupingConfig) -> list:
    """Split a line where the gap to the next member exceeds ``word_gap_factor`` x median gap."""
    boxes = _boxes(line.members)
    if len(boxes) < 2:
        raise ValueError("a text line needs at least two members")
    gaps = np.array([boxes[k + 1].x - boxes[k].x2 for k in range(len(boxes) - 1)], dtype=np.float64)
    limit = cfg.word_gap_factor * max(float(np.median(gaps)), 1.0)
    words, start = [], 0
    for k in range(len(boxes)):
        if k == len(boxes) - 1 or gaps[k] > limit:
            members = line.members[start : k + 1]
            bbox = boxes[start]
            for b in boxes[start + 1 : k + 1]:
                bbox = bbox.union(b)
            scores = [getattr(m, "score", float("nan")) for m in members]
            words.append(WordBox(bbox, float(np.mean(scores)), members))
            start = k + 1
    return words


def suppress_words(words, iou: float) -> list:
    """Drop words overlapping a higher-scoring, then larger, kept word above ``iou``."""
    order = sorted(range(len(words)), key=lambda i: (-words[i].score, -words[i].bbox.area, i))
    kept = []
    for i in order:
        if all(words[i].bbox.iou(words[k].bbox) <= iou for k in kept):
            kept.append(i)
    return [words[i] for i in sorted(kept, key=lambda i: (words[i].bbox.y, words[i].bbox.x, i))]


# ---------------------------------------------------------------------------
# detection


@dataclass
class Detection:
    words: list
    components: list = field(default_factory=list, repr=False)
    survivors: list = field(default_factory=list, repr=False)


def detect_full(img, model: TextCnnModel, mser_cfg: CeMserConfig | None = None,
                group_cfg: GroupingConfig | None = None, sources=None) -> Detection:
    mser_cfg = mser_cfg or CeMserConfig()
    group_cfg = group_cfg or GroupingConfig()
    img = as_raster(img)
    kw = {} if sources is None else {"sources": sources}
    comps = ce_mser_detect(img, mser_cfg, **kw)
    survivors = filter_components(model, prepare_patches(img, comps), group_cfg.score_threshold)
    members = suppress_nested(survivors, group_cfg.max_member_overlap)
    lines = merge_pairs(pair_components(members, group_cfg), members, group_cfg)
    words = [w for line in lines for w in split_words(line, group_cfg)]
    return Detection(suppress_words(words, group_cfg.word_nms_iou), comps, survivors)


def detect(img, model: TextCnnModel, mser_cfg: CeMserConfig | None = None,
           group_cfg: GroupingConfig | None = None, sources=None) -> list:
    """Word boxes with scores (mean member text probability)."""
    return detect_full(img, model, mser_cfg, group_cfg, sources).words


def detection_record(image_id: str, words) -> str:
    return json.dumps({"image": image_id, "words": [w.to_record() for w in words]}, sort_keys=True)
