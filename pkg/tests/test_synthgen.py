import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenetext import synthgen as sg
from scenetext.imagecore import BoundingBox


def test_atlas_has_62_nonempty_glyphs():
    atlas = sg.glyph_atlas()
    assert atlas.shape == (62, 48, 48) and atlas.dtype == bool
    assert all(atlas[i].any() for i in range(62))


def test_clean_mask_is_scaled_glyph_and_matches_ink():
    cfg = sg.SynthConfig.clean(count=1, scale_range=(0.8, 0.8))
    for cls in (0, 10, 36, 61):
        s = sg.render_char(cls, cfg, seed=4)
        bitmap = sg.glyph_atlas()[cls]
        y0, y1, x0, x1 = sg._glyph_bbox(bitmap)
        scale = 0.8 * 32 / max(y1 - y0, x1 - x0)
        np.testing.assert_array_equal(s.mask, sg.glyph_sample_grid(bitmap, scale, 0.0).astype(np.uint8))
        # noise-free flat colours: the mask is exactly the pixels with the ink colour
        bg = s.patch[0, 0]
        ink = np.any(np.abs(s.patch - bg) > 1e-6, axis=-1)
        np.testing.assert_array_equal(ink, s.mask.astype(bool))


def test_same_seed_same_sample():
    cfg = sg.SynthConfig(count=1, context_prob=0.5)
    a, b = sg.render_char(7, cfg, 99), sg.render_char(7, cfg, 99)
    np.testing.assert_array_equal(a.patch, b.patch)
    np.testing.assert_array_equal(a.mask, b.mask)
    assert a.char_label == 7


@given(st.integers(0, 61), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_mask_is_binary_nonempty_and_not_full(cls, seed):
    s = sg.render_char(cls, sg.SynthConfig(count=1, context_prob=0.5), seed)
    assert set(np.unique(s.mask)) <= {0, 1}
    assert 1 <= s.mask.sum() < 1024
    assert s.patch.min() >= 0 and s.patch.max() <= 1


def test_render_char_rejects_bad_class():
    with pytest.raises(ValueError):
        sg.render_char(62, sg.SynthConfig(count=1), 0)


def test_config_validation():
    with pytest.raises(ValueError):
        sg.SynthConfig(rotation_range=(5, -5))
    with pytest.raises(ValueError):
        sg.SynthConfig(count=0)
    with pytest.raises(ValueError):
        sg.SynthConfig(background="image")


@given(st.integers(1, 200))
@settings(max_examples=20, deadline=None)
def test_class_balance(count):
    counts = np.bincount([i % 62 for i in range(count)], minlength=62)
    s = sg.synth_char_set(sg.SynthConfig(count=count, seed=1))
    np.testing.assert_array_equal(np.bincount(s.labels, minlength=62), counts)
    assert counts.max() - counts.min() <= 1


def digest(directory):
    h = hashlib.sha256()
    for p in sorted(directory.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(directory)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_generate_dataset_manifest_and_determinism(tmp_path):
    cfg = sg.SynthConfig(count=62, seed=7)
    m1 = sg.generate_dataset(cfg, tmp_path / "a")
    sg.generate_dataset(cfg, tmp_path / "b")
    lines = m1.read_text().splitlines()
    assert len(lines) == 62
    assert sorted(int(l.split("\t")[2]) for l in lines) == list(range(62))
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    back = sg.load_manifest(m1)
    assert len(back) == 62 and back.has_mask.all() and np.all(back.binary == -1)


def test_generate_dataset_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        sg.generate_dataset(sg.SynthConfig(count=1), blocker / "out")


def test_write_samples_round_trip(tmp_path):
    data = sg.binary_set(20, 3)
    manifest = sg.write_samples(data, tmp_path)
    back = sg.load_manifest(manifest)
    np.testing.assert_array_equal(back.binary, data.binary)
    np.testing.assert_array_equal(back.labels, data.labels)
    assert np.abs(back.patches - data.patches).max() <= 0.5 / 255 + 1e-6


def test_harvest_negatives_no_truth_any_crop_valid():
    img = np.zeros((40, 40, 3), np.uint8)
    out = sg.harvest_negatives([(img, [])], 10, seed=0)
    assert len(out) == 10
    assert all(s.binary_label == 0 and s.patch.shape == (32, 32, 3) for s in out)


def test_harvest_negatives_avoid_truth(monkeypatch):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (60, 80, 3), dtype=np.uint8)
    truth = [BoundingBox(10, 10, 30, 30)]
    placed = []
    orig = sg.crop_resize

    def spy(im, box, side):
        placed.append(box)
        return orig(im, box, side)

    monkeypatch.setattr(sg, "crop_resize", spy)
    out = sg.harvest_negatives([(img, truth)], 25, seed=1)
    assert len(out) == 25
    assert all(b.iou(truth[0]) < 0.1 for b in placed)
    # a crop at IoU 0.5 with the truth box is exactly what the rule rejects
    assert BoundingBox(10, 10, 30, 15).iou(truth[0]) == 0.5


def test_harvest_skips_impossible_images(caplog):
    img = np.zeros((12, 12, 3), np.uint8)
    full = [BoundingBox(0, 0, 12, 12)]
    ok = np.zeros((30, 30, 3), np.uint8)
    out = sg.harvest_negatives([(img, full), (ok, [])], 5, seed=0, side_range=(12, 12))
    assert len(out) == 5
    assert "skipping" in caplog.text


def test_scene_char_boxes_lie_inside_words():
    for style in ("easy", "cluttered", "isoluminant", "low_contrast"):
        scene = sg.render_scene(sg.SceneConfig(style=style, noise_std=0, blur=0), 11)
        assert scene.words and len(scene.chars) >= 3
        for word in scene.words:
            assert all(isinstance(v, int) for v in word.as_tuple())
        for ch in scene.chars:
            assert any(ch.intersection_area(w) == ch.area for w in scene.words)


def test_low_contrast_styles_have_low_luma_contrast():
    easy = [sg.text_contrast(sg.render_scene(sg.SceneConfig(style="easy"), s)) for s in range(5)]
    iso = [sg.text_contrast(sg.render_scene(sg.SceneConfig(style="isoluminant"), s)) for s in range(5)]
    assert min(easy) > 100 > 20 > max(iso)


def test_binary_set_mix():
    data = sg.binary_set(40, seed=2)
    assert len(data) == 40
    assert (data.binary == 1).sum() == 20 and (data.binary == 0).sum() == 20
    assert np.all(data.labels[data.binary == 0] == -1)
