"""Detection metrics: greedy one-to-one IoU matching, component recall, report tables."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .imagecore import BoundingBox


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    fmeasure: float
    matches: int = 0
    n_pred: int = 0
    n_truth: int = 0

    @classmethod
    def from_counts(cls, matches: int, n_pred: int, n_truth: int) -> "Metrics":
        if n_pred == 0 and n_truth == 0:
            return cls(1.0, 1.0, 1.0, 0, 0, 0)
        p = matches / n_pred if n_pred else 0.0
        r = matches / n_truth if n_truth else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f, matches, n_pred, n_truth)


def greedy_matches(pred, truth, iou_min: float = 0.5) -> list:
    """One-to-one ``(pred_index, truth_index)`` matches, taken in descending IoU order.

    Ties break on (pred index, truth index).
    """
    cand = []
    for i, p in enumerate(pred):
        for j, t in enumerate(truth):
            v = p.iou(t)
            if v >= iou_min:
                cand.append((-v, i, j))
    cand.sort()
    used_p, used_t, out = set(), set(), []
    for _, i, j in cand:
        if i not in used_p and j not in used_t:
            used_p.add(i)
            used_t.add(j)
            out.append((i, j))
    return out


def match_boxes(pred, truth, iou_min: float = 0.5) -> Metrics:
    return Metrics.from_counts(len(greedy_matches(pred, truth, iou_min)), len(pred), len(truth))


def match_dataset(pred_by_image: dict, truth_by_image: dict, iou_min: float = 0.5) -> Metrics:
    """Pooled counts over images; both dicts must share the same image ids."""
    missing = sorted(set(pred_by_image) ^ set(truth_by_image))
    if missing:
        raise KeyError(f"unmatched image ids: {', '.join(map(str, missing))}")
    m = n_p = n_t = 0
    for k in sorted(truth_by_image):
        p, t = pred_by_image[k], truth_by_image[k]
        m += len(greedy_matches(p, t, iou_min))
        n_p += len(p)
        n_t += len(t)
    return Metrics.from_counts(m, n_p, n_t)


def component_recall(components, char_truth, iou_min: float = 0.5) -> float:
    """Fraction of truth characters hit (IoU >= iou_min) by at least one component."""
    if not char_truth:
        return 1.0
    boxes = [getattr(c, "bbox", c) for c in components]
    hit = sum(any(b.iou(t) >= iou_min for b in boxes) for t in char_truth)
    return hit / len(char_truth)


# reference row for the layout of the ablation table, on ICDAR 2011
REFERENCE_ROWS = {"MSERs": (0.89, 0.68, 0.78), "CE-MSERs": (0.91, 0.74, 0.82)}


def format_row(name: str, m, width: int) -> str:
    p, r, f = (m.precision, m.recall, m.fmeasure) if isinstance(m, Metrics) else m
    return f"{name:<{width}} {p:.2f} {r:.2f} {f:.2f}"


def report(runs) -> str:
    """Aligned ``name P R F`` table, rows sorted by F-measure (descending, stable)."""
    runs = list(runs.items()) if isinstance(runs, dict) else list(runs)
    if not runs:
        raise ValueError("report needs at least one run")

    def f_of(m):
        return m.fmeasure if isinstance(m, Metrics) else m[2]

    width = max(len("Method"), *(len(n) for n, _ in runs))
    rows = sorted(runs, key=lambda nm: -f_of(nm[1]))
    head = f"{'Method':<{width}} {'P':>4} {'R':>4} {'F':>4}"
    return "\n".join([head] + [format_row(n, m, width) for n, m in rows])


# ---------------------------------------------------------------------------
# files


def parse_box_line(line: str) -> BoundingBox | None:
    """ICDAR-style ``x1,y1,x2,y2[,text]`` (corners) or ``x1,y1,...,x4,y4[,text]`` (quad)."""
    line = line.strip().lstrip("﻿")
    if not line:
        return None
    parts = [p.strip() for p in line.replace(" ", ",").split(",") if p.strip()]
    nums = []
    for p in parts:
        try:
            nums.append(float(p))
        except ValueError:
            break
    if len(nums) >= 8:
        xs, ys = nums[0:8:2], nums[1:8:2]
        return BoundingBox.from_corners(min(xs), min(ys), max(xs) + 1, max(ys) + 1)
    if len(nums) >= 4:
        x1, y1, x2, y2 = nums[:4]
        return BoundingBox.from_corners(x1, y1, x2 + 1, y2 + 1)
    raise ValueError(f"cannot parse box line {line!r}")


def format_box_line(b: BoundingBox) -> str:
    return f"{b.x},{b.y},{b.x2 - 1},{b.y2 - 1}"


def read_truth_dir(directory) -> dict:
    """``gt_<id>.txt`` (or ``<id>.txt``) files -> {id: [BoundingBox]}."""
    out = {}
    for path in sorted(Path(directory).glob("*.txt")):
        key = path.stem[3:] if path.stem.startswith("gt_") else path.stem
        boxes = [parse_box_line(l) for l in path.read_text(encoding="utf-8-sig").splitlines()]
        out[key] = [b for b in boxes if b is not None]
    return out


def write_truth_dir(directory, truth: dict) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for key, boxes in truth.items():
        (d / f"gt_{key}.txt").write_text("".join(format_box_line(b) + "\n" for b in boxes))


def read_detections(path) -> dict:
    """JSON-lines detection records -> {image id: [BoundingBox]}."""
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            out[rec["image"]] = [BoundingBox(*w["box"]) for w in rec["words"]]
    return out
