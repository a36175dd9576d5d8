"""Contrast-enhanced MSER detection.

Plain MSERs are taken from a union-find component tree over a 256-level gray
map. Two extra "contrast region" maps are built from the colour image:

1. k-means over Lab pixels; each cluster scores its size-weighted colour
   contrast to the other clusters times a centre prior.
2. The pixels that map 1 leaves dark are quantised to 12 levels per RGB
   channel, reduced to their dominant colours, scored by histogram contrast
   and smoothed across the nearest colours.

MSERs from all three maps, in both polarities, are merged and deduplicated.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imagecore import BoundingBox, as_raster, quantize_gray, to_gray, to_lab

SOURCES = ("original", "contrast_map_1", "contrast_map_2")
POLARITIES = ("dark_on_light", "light_on_dark")


@dataclass
class CeMserConfig:
    delta: int = 5
    min_area: float = 0.00005
    max_area: float = 0.25
    max_variation: float = 0.5
    K: int = 6
    dominant_coverage: float = 0.95
    dedupe_iou: float = 0.7
    seed: int = 0
    remaining_threshold: float = 0.5
    quant_bins: int = 12
    presmooth_sigma: float = 1.0  # Gaussian blur applied before the contrast maps

    def __post_init__(self):
        if not 0 < self.min_area < self.max_area <= 1:
            raise ValueError("need 0 < min_area < max_area <= 1")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.dedupe_iou < 1:
            raise ValueError("dedupe_iou must lie in (0, 1)")


# ---------------------------------------------------------------------------
# component tree


@dataclass
class ComponentTree:
    """Nodes of the min-tree of a 256-level map, created in ascending level order.

    Node ``n`` is the connected component of ``{p : level(p) <= t}`` for every
    ``t`` from ``level[n]`` up to ``level[parent[n]] - 1`` (255 for the root).
    ``pixel_node[p]`` is the smallest node containing pixel ``p``.
    """

    shape: tuple
    level: np.ndarray
    parent: np.ndarray
    area: np.ndarray
    bbox: np.ndarray  # (n, 4) x0, y0, x1, y1 exclusive
    children: list
    pixel_node: np.ndarray

    def __len__(self):
        return len(self.level)

    @property
    def root(self) -> int:
        return len(self.level) - 1

    def top_level(self, n: int) -> int:
        """Last level at which node ``n`` is the component."""
        p = self.parent[n]
        return 255 if p < 0 else int(self.level[p]) - 1

    def subtree(self, n: int) -> list:
        out, stack = [], [n]
        while stack:
            m = stack.pop()
            out.append(m)
            stack.extend(self.children[m])
        return out

    def pixels(self, n: int) -> np.ndarray:
        """Flat indices of the pixels in node ``n``."""
        nodes = np.zeros(len(self.level), bool)
        nodes[self.subtree(n)] = True
        return np.flatnonzero(nodes[self.pixel_node])


def build_component_tree(gray) -> ComponentTree:
    """Min-tree by union-find over level-sorted pixels (4-connectivity).

    ``gray`` is either a float map in [0, 1] or an integer map in 0..255.
    """
    gray = np.asarray(gray)
    lv = gray.astype(np.int64) if gray.dtype.kind in "ui" else quantize_gray(gray).astype(np.int64)
    h, w = lv.shape
    n = h * w
    flat = lv.ravel().tolist()
    order = np.argsort(lv.ravel(), kind="stable").tolist()

    uf = list(range(n))
    size = [1] * n
    done = bytearray(n)
    comp_node = [-1] * n
    bx0, by0, bx1, by1 = [0] * n, [0] * n, [0] * n, [0] * n

    node_level, node_area, node_bbox, children = [], [], [], []
    pixel_node = [0] * n

    def find(a):
        root = a
        while uf[root] != root:
            root = uf[root]
        while uf[a] != root:
            uf[a], a = root, uf[a]
        return root

    i = 0
    while i < n:
        t = flat[order[i]]
        kids: dict = {}
        fresh: dict = {}
        while i < n and flat[order[i]] == t:
            p = order[i]
            i += 1
            y, x = divmod(p, w)
            done[p] = 1
            bx0[p], by0[p], bx1[p], by1[p] = x, y, x + 1, y + 1
            kids[p] = []
            fresh[p] = [p]
            rp = p
            for q in (p - w if y else -1, p + w if y < h - 1 else -1,
                      p - 1 if x else -1, p + 1 if x < w - 1 else -1):
                if q < 0 or not done[q]:
                    continue
                rq = find(q)
                if rq == rp:
                    continue
                if rq not in kids:
                    kids[rq] = [comp_node[rq]]
                    fresh[rq] = []
                if size[rq] > size[rp]:
                    rp, rq = rq, rp
                uf[rq] = rp
                size[rp] += size[rq]
                bx0[rp] = min(bx0[rp], bx0[rq])
                by0[rp] = min(by0[rp], by0[rq])
                bx1[rp] = max(bx1[rp], bx1[rq])
                by1[rp] = max(by1[rp], by1[rq])
                kids[rp].extend(kids.pop(rq))
                fresh[rp].extend(fresh.pop(rq))
        for r, ks in kids.items():
            node = len(node_level)
            node_level.append(t)
            node_area.append(size[r])
            node_bbox.append((bx0[r], by0[r], bx1[r], by1[r]))
            children.append(ks)
            for p in fresh[r]:
                pixel_node[p] = node
            comp_node[r] = node

    parent = np.full(len(node_level), -1, np.int64)
    for node, ks in enumerate(children):
        for k in ks:
            parent[k] = node
    return ComponentTree(
        shape=(h, w),
        level=np.array(node_level, np.int64),
        parent=parent,
        area=np.array(node_area, np.int64),
        bbox=np.array(node_bbox, np.int64).reshape(-1, 4),
        children=children,
        pixel_node=np.array(pixel_node, np.int64),
    )


# ---------------------------------------------------------------------------
# MSER selection


@dataclass
class ExtremalComponent:
    pixels: np.ndarray  # flat indices into the image
    level: int
    area: int
    variation: float
    bbox: BoundingBox
    source: str = "original"
    polarity: str = "dark_on_light"
    image_shape: tuple = field(default=(0, 0), repr=False)

    def coords(self) -> np.ndarray:
        """``(n, 2)`` array of (row, column)."""
        return np.stack(np.unravel_index(self.pixels, self.image_shape), axis=1)

    def to_record(self) -> dict:
        return {
            "source": self.source,
            "polarity": self.polarity,
            "level": int(self.level),
            "area": int(self.area),
            "variation": round(float(self.variation), 6),
            "bbox": list(self.bbox.as_tuple()),
        }


def node_variations(tree: ComponentTree, delta: int) -> np.ndarray:
    """Stability of each node: min over its levels i of (|R_{i+d}| - |R_{i-d}|) / |R_i|.

    ``R_{i+d}`` is the component containing the node at level i+d (the root
    beyond 255); ``R_{i-d}`` is the largest component at level i-d inside the
    node, or empty.
    """
    nn_ = len(tree)
    level, area, parent = tree.level, tree.area, tree.parent
    # below[n][k-1] = largest component area inside n at level level[n] - k
    below = np.zeros((nn_, delta), np.int64)
    for node in range(nn_):
        a = level[node]
        for c in tree.children[node]:
            ac = level[c]
            for k in range(1, delta + 1):
                t = a - k
                v = area[c] if t >= ac else (below[c][ac - t - 1] if ac - t <= delta else 0)
                if v > below[node][k - 1]:
                    below[node][k - 1] = v
    q = np.empty(nn_)
    for node in range(nn_):
        a = int(level[node])
        b = tree.top_level(node)
        if b - a >= 2 * delta:
            q[node] = 0.0
            continue
        best = math.inf
        for i in range(a, b + 1):
            t_up = i + delta
            up_node = node
            while t_up > tree.top_level(up_node) and parent[up_node] >= 0:
                up_node = parent[up_node]
            up = area[up_node]
            t_dn = i - delta
            down = area[node] if t_dn >= a else below[node][a - t_dn - 1]
            best = min(best, (up - down) / area[node])
        q[node] = best
    return q


def select_msers(
    tree: ComponentTree,
    cfg: CeMserConfig,
    source: str = "original",
    polarity: str = "dark_on_light",
) -> list:
    """Nodes whose variation is a local minimum (<= parent and children),
    below ``max_variation`` and within the area bounds."""
    if len(tree) == 0:
        return []
    q = node_variations(tree, cfg.delta)
    total = tree.shape[0] * tree.shape[1]
    lo, hi = cfg.min_area * total, cfg.max_area * total
    out = []
    for node in range(len(tree)):
        a = tree.area[node]
        if a < lo or a > hi or not q[node] < cfg.max_variation:
            continue
        p = tree.parent[node]
        if p >= 0 and q[node] > q[p]:
            continue
        if any(q[node] > q[c] for c in tree.children[node]):
            continue
        x0, y0, x1, y1 = (int(v) for v in tree.bbox[node])
        out.append(
            ExtremalComponent(
                pixels=tree.pixels(node),
                level=int(tree.level[node]),
                area=int(a),
                variation=float(q[node]),
                bbox=BoundingBox(x0, y0, x1 - x0, y1 - y0),
                source=source,
                polarity=polarity,
                image_shape=tree.shape,
            )
        )
    return out


def detect_msers(gray, cfg: CeMserConfig, source: str = "original", polarities=POLARITIES) -> list:
    """MSERs of a [0, 1] map in the requested polarities."""
    lv = quantize_gray(gray)
    out = []
    for pol in polarities:
        m = lv if pol == "dark_on_light" else 255 - lv
        out.extend(select_msers(build_component_tree(m), cfg, source, pol))
    return out


# ---------------------------------------------------------------------------
# colour clustering and contrast maps


@dataclass
class ClusterSet:
    centers: np.ndarray  # (k, 3) Lab
    assignment: np.ndarray  # (H, W) cluster index
    counts: np.ndarray  # (k,)

    @property
    def k(self) -> int:
        return len(self.centers)


def _weighted_kmeans(x, wts, k, rng, max_iter=100):
    """k-means++ seeding then Lloyd iterations on weighted points."""
    n = len(x)
    first = rng.choice(n, p=wts / wts.sum())
    centers = [x[first]]
    d2 = ((x - centers[0]) ** 2).sum(1)
    while len(centers) < k:
        mass = d2 * wts
        if mass.sum() <= 0:
            break  # fewer distinct colours than clusters
        idx = rng.choice(n, p=mass / mass.sum())
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(1))
    centers = np.array(centers)
    assign = None
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centers[None]) ** 2).sum(2)
        new = dist.argmin(1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(len(centers)):
            sel = assign == j
            if sel.any():
                centers[j] = (x[sel] * wts[sel, None]).sum(0) / wts[sel].sum()
    # drop empty clusters and collapse duplicate centres
    used = np.unique(assign)
    centers = centers[used]
    uniq, inv = np.unique(centers, axis=0, return_inverse=True)
    remap = np.full(used.max() + 1, -1)
    remap[used] = inv.ravel()
    return uniq, remap[assign]


def kmeans_lab(lab, K: int, seed: int = 0) -> ClusterSet:
    """Cluster Lab pixels into at most K groups; deterministic given ``seed``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    lab = np.asarray(lab, dtype=np.float64)
    h, w = lab.shape[:2]
    colors, inverse, counts = np.unique(
        lab.reshape(-1, 3), axis=0, return_inverse=True, return_counts=True
    )
    inverse = inverse.ravel()
    rng = np.random.default_rng(seed)
    centers, assign = _weighted_kmeans(colors, counts.astype(np.float64), K, rng)
    pix = assign[inverse]
    # exact centres: mean over member pixels
    n_k = np.bincount(pix, minlength=len(centers))
    centers = np.stack(
        [np.bincount(pix, weights=lab.reshape(-1, 3)[:, c], minlength=len(centers)) for c in range(3)],
        axis=1,
    ) / n_k[:, None]
    return ClusterSet(centers, pix.reshape(h, w), n_k)


def _unit_scale(v: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a constant positive vector maps to ones, zeros stay zero."""
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi - lo > 1e-12:
        return (v - lo) / (hi - lo)
    return np.ones_like(v) if hi > 0 else np.zeros_like(v)


def _weighted_contrast(centers, counts) -> np.ndarray:
    # C_k = sum_{j != k} (n_j / N) ||mu_k - mu_j||
    d = np.sqrt(((centers[:, None, :] - centers[None]) ** 2).sum(-1))
    return d @ (counts / counts.sum())


def contrast_cue(clusters: ClusterSet, normalize: bool = True) -> np.ndarray:
    """Size-weighted Lab distance of each cluster to all others, min-max scaled."""
    if clusters.k == 1:
        return np.zeros(1)
    raw = _weighted_contrast(clusters.centers, clusters.counts.astype(np.float64))
    return _unit_scale(raw) if normalize else raw


def spatial_cue(clusters: ClusterSet) -> np.ndarray:
    """1 - mean distance of member pixels to the image centre / half-diagonal."""
    h, w = clusters.assignment.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    half_diag = math.hypot(cy, cx)
    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.hypot(yy - cy, xx - cx)
    dist = dist / half_diag if half_diag > 0 else np.zeros_like(dist)
    sums = np.bincount(clusters.assignment.ravel(), weights=dist.ravel(), minlength=clusters.k)
    mean = sums / np.maximum(clusters.counts, 1)
    return np.clip(1 - mean, 0, 1)


def _rescale_max(v: np.ndarray) -> np.ndarray:
    m = v.max(initial=0)
    return v / m if m > 0 else np.zeros_like(v)


def contrast_map_stage1(lab, cfg: CeMserConfig, clusters: ClusterSet | None = None) -> np.ndarray:
    """Per-pixel contrast cue times spatial cue of the pixel's cluster, in [0, 1]."""
    clusters = clusters if clusters is not None else kmeans_lab(lab, cfg.K, cfg.seed)
    value = contrast_cue(clusters) * spatial_cue(clusters)
    return _rescale_max(value[clusters.assignment])


def quantize_rgb(img, bins: int = 12) -> np.ndarray:
    """Per-channel bin index ``floor(c * bins / 256)``, shape ``(..., 3)``."""
    return (np.asarray(img, dtype=np.int64) * bins) // 256


def smooth_bin_values(colors, values, m: int) -> np.ndarray:
    """Replace each value by a weighted mean over its ``m`` nearest colours.

    Weights are ``T - D_i`` with ``T`` the summed distance to those neighbours,
    normalised by ``(m - 1) T``.
    """
    n = len(values)
    m = min(m, n)
    if m <= 1:
        return np.asarray(values, dtype=np.float64).copy()
    d = np.sqrt(((colors[:, None, :] - colors[None]) ** 2).sum(-1))
    out = np.empty(n)
    for i in range(n):
        nb = np.argsort(d[i], kind="stable")[:m]
        di = d[i, nb]
        T = di.sum()
        if T <= 0:
            out[i] = values[nb].mean()
        else:
            out[i] = ((T - di) * values[nb]).sum() / ((m - 1) * T)
    return out


@dataclass
class ColorBins:
    """Dominant quantised colours of the remaining region (diagnostic output)."""

    keys: np.ndarray  # (k, 3) bin indices
    lab: np.ndarray  # (k, 3) mean Lab of member pixels
    counts: np.ndarray  # (k,)
    raw: np.ndarray  # (k,) histogram contrast
    smoothed: np.ndarray  # (k,)


def dominant_bins(img, lab, remaining, cfg: CeMserConfig, smoothing_m: int | None = None):
    """Quantise, keep dominant bins, relabel the rest, score and smooth.

    Returns ``(ColorBins, per-pixel kept-bin index)`` where the index is -1
    outside ``remaining``.
    """
    q = quantize_rgb(img, cfg.quant_bins)
    b = cfg.quant_bins
    code = (q[..., 0] * b + q[..., 1]) * b + q[..., 2]
    sel = np.flatnonzero(remaining.ravel())
    codes = code.ravel()[sel]
    uniq, inv, counts = np.unique(codes, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    lab_flat = lab.reshape(-1, 3)[sel]
    means = np.stack(
        [np.bincount(inv, weights=lab_flat[:, c], minlength=len(uniq)) for c in range(3)], axis=1
    ) / counts[:, None]
    order = np.lexsort((uniq, -counts))  # by frequency, ties by code
    cum = np.cumsum(counts[order]) / counts.sum()
    n_keep = int(np.searchsorted(cum, cfg.dominant_coverage - 1e-12) + 1)
    kept = order[:n_keep]
    is_kept = np.zeros(len(uniq), bool)
    is_kept[kept] = True
    slot = np.full(len(uniq), -1)
    slot[kept] = np.arange(n_keep)
    for j in np.flatnonzero(~is_kept):
        d = ((means[kept] - means[j]) ** 2).sum(1)
        slot[j] = int(d.argmin())
    pix_slot = slot[inv]
    kcounts = np.bincount(pix_slot, minlength=n_keep).astype(np.float64)
    klab = means[kept]
    raw = _weighted_contrast(klab, kcounts) if n_keep > 1 else np.zeros(1)
    m = smoothing_m if smoothing_m is not None else math.ceil(n_keep / 4)
    smoothed = smooth_bin_values(klab, raw, m)
    per_pixel = np.full(remaining.size, -1, np.int64)
    per_pixel[sel] = pix_slot
    keys = np.stack([uniq[kept] // (b * b), (uniq[kept] // b) % b, uniq[kept] % b], axis=1)
    return ColorBins(keys, klab, kcounts, raw, smoothed), per_pixel.reshape(remaining.shape)


def contrast_map_stage2(img, lab, stage1, cfg: CeMserConfig, smoothing_m: int | None = None) -> np.ndarray:
    """Histogram-contrast map over the pixels stage 1 left below the threshold."""
    remaining = np.asarray(stage1) < cfg.remaining_threshold
    if not remaining.any():
        return np.zeros(remaining.shape)
    bins, per_pixel = dominant_bins(img, lab, remaining, cfg, smoothing_m)
    value = np.where(per_pixel >= 0, bins.smoothed[np.maximum(per_pixel, 0)], 0.0)
    return _rescale_max(value)


# ---------------------------------------------------------------------------
# full detector


def contrast_maps(img, cfg: CeMserConfig) -> dict:
    """The three [0, 1] maps MSER runs on, keyed by source name."""
    img = as_raster(img)
    gray = to_gray(img)
    if cfg.presmooth_sigma > 0:
        img = np.clip(
            np.rint(ndimage.gaussian_filter(img.astype(np.float64), (cfg.presmooth_sigma,) * 2 + (0,))),
            0, 255,
        ).astype(np.uint8)
    lab = to_lab(img)
    s1 = contrast_map_stage1(lab, cfg)
    s2 = contrast_map_stage2(img, lab, s1, cfg)
    return {"original": gray, "contrast_map_1": s1, "contrast_map_2": s2}


def _box_array(comps) -> np.ndarray:
    return np.array([[c.bbox.x, c.bbox.y, c.bbox.x2, c.bbox.y2] for c in comps], np.float64).reshape(-1, 4)


def dedupe(components, iou_threshold: float) -> list:
    """Greedy: keep components in order of increasing variation, dropping any
    whose bbox IoU with a kept one exceeds ``iou_threshold``."""
    if not components:
        return []
    order = sorted(
        range(len(components)),
        key=lambda i: (components[i].variation, components[i].area, i),
    )
    boxes = _box_array(components)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    kept = []
    for i in order:
        if kept:
            k = np.array(kept)
            iw = np.clip(np.minimum(boxes[k, 2], boxes[i, 2]) - np.maximum(boxes[k, 0], boxes[i, 0]), 0, None)
            ih = np.clip(np.minimum(boxes[k, 3], boxes[i, 3]) - np.maximum(boxes[k, 1], boxes[i, 1]), 0, None)
            inter = iw * ih
            iou = inter / (areas[k] + areas[i] - inter)
            if (iou > iou_threshold).any():
                continue
        kept.append(i)
    return [components[i] for i in sorted(kept)]


def ce_mser_detect(img, cfg: CeMserConfig | None = None, sources=SOURCES) -> list:
    """MSERs of the gray image and both contrast maps, both polarities, deduplicated."""
    cfg = cfg or CeMserConfig()
    img = as_raster(img)
    if tuple(sources) == ("original",):
        maps = {"original": to_gray(img)}
    else:
        maps = contrast_maps(img, cfg)
    comps = []
    for name in sources:
        comps.extend(detect_msers(maps[name], cfg, name))
    return dedupe(comps, cfg.dedupe_iou)


def mser_detect(img, cfg: CeMserConfig | None = None) -> list:
    """Plain MSER baseline: gray image only, both polarities, same dedupe."""
    return ce_mser_detect(img, cfg, sources=("original",))


def dump_components(components, fh) -> None:
    """One JSON object per line per component."""
    for c in components:
        fh.write(json.dumps(c.to_record()) + "\n")
