import itertools
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenetext import pipeline as pl
from scenetext.imagecore import BoundingBox
from scenetext.textcnn import TextCnnModel

CFG = pl.GroupingConfig()


def comp(x, y, w, h, score=0.9):
    return SimpleNamespace(bbox=BoundingBox(x, y, w, h), score=score)


def test_square_box_examples():
    assert pl.square_box(BoundingBox(10, 10, 20, 40)) == BoundingBox(0, 10, 40, 40)
    assert pl.square_box(BoundingBox(3, 4, 9, 9)) == BoundingBox(3, 4, 9, 9)


@given(st.integers(-20, 100), st.integers(-20, 100), st.integers(1, 60), st.integers(1, 60))
def test_square_side_is_long_side_and_centred(x, y, w, h):
    b = BoundingBox(x, y, w, h)
    s = pl.square_box(b)
    assert s.w == s.h == max(w, h)
    assert abs(s.center[0] - b.center[0]) <= 0.5 and abs(s.center[1] - b.center[1]) <= 0.5


def test_prepare_patch_corner_clamps():
    img = np.random.default_rng(0).integers(0, 256, (50, 50, 3), dtype=np.uint8)
    cand = pl.prepare_patch(img, comp(0, 0, 6, 20))
    assert cand.box == BoundingBox(0, 0, 13, 20)
    assert cand.patch.shape == (32, 32, 3) and cand.patch.dtype == np.float32
    assert pl.prepare_patches(img, [comp(0, 0, 0, 5), comp(5, 5, 4, 4)])[0].bbox == BoundingBox(5, 5, 4, 4)


def test_filter_thresholds():
    model = TextCnnModel.initialize(0)
    img = np.random.default_rng(1).integers(0, 256, (40, 60, 3), dtype=np.uint8)
    cands = pl.prepare_patches(img, [comp(i * 10, 5, 8, 12) for i in range(5)])
    assert len(pl.filter_components(model, cands, 0.0)) == 5
    assert pl.filter_components(model, cands, 1.0) == []
    assert pl.filter_components(model, [], 0.5) == []


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.floats(0, 1), st.floats(0, 1))
def test_filter_is_monotone_in_threshold(scores, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    keep = lambda t: sum(s >= t for s in scores)
    assert keep(lo) >= keep(hi)


def test_pairing_rules():
    a, b = BoundingBox(0, 0, 10, 20), BoundingBox(10, 0, 10, 20)
    assert pl.can_pair(a, b, CFG)
    assert not pl.can_pair(BoundingBox(0, 0, 10, 10), BoundingBox(12, 0, 10, 30), CFG)
    assert not pl.can_pair(a, BoundingBox(31, 0, 10, 20), CFG)  # gap 21 > 2 * 10
    assert pl.can_pair(a, BoundingBox(30, 0, 10, 20), CFG)
    assert not pl.can_pair(a, BoundingBox(10, 11, 10, 20), CFG)  # offset 11 > 10


def test_three_collinear_boxes_pair_neighbours_only():
    # widths 10, gaps 15: (1,2) and (2,3) gap 15 <= 20, (1,3) gap 40 > 20
    items = [comp(0, 0, 10, 20), comp(25, 0, 10, 20), comp(50, 0, 10, 20)]
    assert pl.pair_components(items, CFG) == [(0, 1), (1, 2)]


def test_merge_collinear_and_orientation_gate():
    items = [comp(0, 0, 10, 20), comp(15, 0, 10, 20), comp(30, 0, 10, 20)]
    lines = pl.merge_pairs([(0, 1), (1, 2)], items, CFG)
    assert len(lines) == 1 and [m.bbox.x for m in lines[0].members] == [0, 15, 30]
    assert lines[0].bbox == BoundingBox(0, 0, 40, 20)
    assert lines[0].orientation == pytest.approx(0.0)

    corner = [comp(0, 0, 10, 10), comp(15, 0, 10, 10), comp(15, 15, 10, 10)]
    lines = pl.merge_pairs([(0, 1), (1, 2)], corner, CFG)
    assert len(lines) == 2


def test_fit_orientation():
    assert pl.fit_orientation([(0, 0), (10, 0)]) == pytest.approx(0.0)
    assert pl.fit_orientation([(0, 0), (0, 10)]) == pytest.approx(math.pi / 2)
    assert pl.fit_orientation([(0, 0), (10, 10), (20, 20)]) == pytest.approx(math.pi / 4)
    assert pl.angle_diff(0.05, math.pi - 0.05) == pytest.approx(0.1)


def partition(lines):
    return sorted(tuple(sorted((m.bbox.x, m.bbox.y) for m in line.members)) for line in lines)


def test_merge_independent_of_pair_order_all_orderings():
    items = [comp(0, 0, 10, 20), comp(14, 1, 10, 20), comp(28, 8, 10, 20), comp(14, 24, 10, 20)]
    pairs = [(0, 1), (1, 2), (1, 3), (2, 3)]
    cfg = pl.GroupingConfig(max_center_offset=2.0)
    ref = partition(pl.merge_pairs(pairs, items, cfg))
    for perm in itertools.permutations(pairs):
        flipped = [(j, i) if k % 2 else (i, j) for k, (i, j) in enumerate(perm)]
        assert partition(pl.merge_pairs(flipped, items, cfg)) == ref


@given(st.lists(st.tuples(st.integers(0, 60), st.integers(0, 30), st.integers(4, 14), st.integers(8, 20)), min_size=2, max_size=5), st.randoms())
@settings(max_examples=60, deadline=None)
def test_merge_order_invariance_property(specs, rnd):
    items = [comp(*s) for s in specs]
    pairs = pl.pair_components(items, CFG)
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    assert partition(pl.merge_pairs(pairs, items, CFG)) == partition(pl.merge_pairs(shuffled, items, CFG))


def line_of(xs, width=10):
    return pl.TextLine([comp(x, 0, width, 20) for x in xs], BoundingBox(0, 0, 1, 1), 0.0)


def test_split_words_rules():
    uniform = pl.split_words(line_of([0, 12, 24, 36]), CFG)
    assert len(uniform) == 1 and uniform[0].bbox == BoundingBox(0, 0, 46, 20)
    # gaps 2, 2, 12, 2
    words = pl.split_words(line_of([0, 12, 24, 46, 58]), CFG)
    assert [w.bbox for w in words] == [BoundingBox(0, 0, 34, 20), BoundingBox(46, 0, 22, 20)]
    # single member after the split survives as its own word
    words = pl.split_words(line_of([0, 12, 24, 60]), CFG)
    assert len(words) == 2 and len(words[1].members) == 1
    with pytest.raises(ValueError):
        pl.split_words(line_of([0]), CFG)


def test_word_score_is_mean_and_word_covers_members():
    line = pl.TextLine([comp(0, 0, 10, 20, 0.6), comp(12, 2, 10, 20, 1.0)], BoundingBox(0, 0, 22, 22), 0.0)
    (w,) = pl.split_words(line, CFG)
    assert w.score == pytest.approx(0.8)
    union = w.members[0].bbox.union(w.members[1].bbox)
    assert w.bbox == union


def test_grouping_config_validation():
    with pytest.raises(ValueError):
        pl.GroupingConfig(max_height_ratio=0)
    with pytest.raises(ValueError):
        pl.GroupingConfig(score_threshold=1.5)


def test_blank_image_gives_no_words():
    model = TextCnnModel.initialize(0)
    img = np.full((60, 90, 3), 128, np.uint8)
    assert pl.detect(img, model) == []
    rec = pl.detection_record("blank", [])
    assert rec == '{"image": "blank", "words": []}'


def test_suppress_words_prefers_higher_score():
    a = pl.WordBox(BoundingBox(0, 0, 20, 10), 0.9)
    b = pl.WordBox(BoundingBox(1, 0, 20, 10), 0.7)
    c = pl.WordBox(BoundingBox(50, 0, 20, 10), 0.1)
    assert pl.suppress_words([b, c, a], 0.5) == [a, c]


def test_suppress_nested_keeps_outer_regions():
    letter, counter, neighbour = comp(0, 0, 10, 20, 0.6), comp(3, 5, 4, 8, 0.99), comp(12, 0, 10, 20, 0.7)
    # a slightly shifted duplicate of the letter, as found in a second contrast map
    duplicate = comp(1, 0, 10, 19, 0.9)
    kept = pl.suppress_nested([counter, letter, neighbour, duplicate], 0.5)
    assert kept == [letter, neighbour]
    # touching or lightly overlapping neighbours are both kept
    a, b = comp(0, 0, 10, 20), comp(8, 0, 10, 20)  # overlap 2/10 of either box
    assert pl.suppress_nested([a, b], 0.5) == [a, b]


@given(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 20), st.integers(1, 15), st.integers(1, 15)), max_size=8))
@settings(max_examples=100, deadline=None)
def test_suppress_nested_leaves_no_heavily_overlapping_pair(specs):
    items = [comp(*s) for s in specs]
    kept = pl.suppress_nested(items, 0.5)
    for i, a in enumerate(kept):
        for b in kept[i + 1 :]:
            assert a.bbox.intersection_area(b.bbox) < 0.5 * min(a.bbox.area, b.bbox.area)
    # every dropped item overlaps some kept item at least as large
    for it in items:
        if it not in kept:
            assert any(
                it.bbox.intersection_area(k.bbox) >= 0.5 * min(it.bbox.area, k.bbox.area) and k.bbox.area >= it.bbox.area
                for k in kept
            )
