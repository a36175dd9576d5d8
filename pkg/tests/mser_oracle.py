"""Brute-force reference: threshold at every level and label with scipy."""
import numpy as np
from scipy import ndimage

FOUR = ndimage.generate_binary_structure(2, 1)


def level_components(levels):
    """{pixel frozenset: [first level, last level]} over thresholds 0..255."""
    seen = {}
    for t in range(256):
        lab, n = ndimage.label(levels <= t, structure=FOUR)
        for k in range(1, n + 1):
            comp = frozenset(np.flatnonzero(lab.ravel() == k).tolist())
            if comp in seen:
                seen[comp][1] = t
            else:
                seen[comp] = [t, t]
    return seen


def variations(levels, delta):
    """Variation of every component, computed from the raw per-level labelings."""
    labs = [ndimage.label(levels <= t, structure=FOUR)[0].ravel() for t in range(256)]
    comps = level_components(levels)
    total = levels.size
    out = {}
    for comp, (a, b) in comps.items():
        p = next(iter(comp))
        idx = np.fromiter(comp, int)
        best = np.inf
        for i in range(a, b + 1):
            up = total if i + delta > 255 else int((labs[i + delta] == labs[i + delta][p]).sum())
            down = 0
            if i - delta >= 0:
                inside = labs[i - delta][idx]
                inside = inside[inside > 0]
                if inside.size:
                    down = int(np.bincount(inside).max())
            best = min(best, (up - down) / len(comp))
        out[comp] = (best, a, b)
    return out
