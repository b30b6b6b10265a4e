import math

import numpy as np
import pytest

from shrubmap import synth as S
from shrubmap.preprocess import PreprocessConfig, find_candidates, to_gray
from shrubmap.raster import BACKGROUND, TARGET, map_to_pixel, polygon_pixel_mask

SMALL = S.SynthConfig(scene_size=256, n_blobs=5, blob_radius_range=(10, 20), rng_seed=2)


@pytest.fixture(scope="module")
def small():
    return S.generate(SMALL)


def test_same_seed_is_byte_identical(small):
    again = S.generate(SMALL)
    assert again.scene.pixels.tobytes() == small.scene.pixels.tobytes()
    assert again.truth.to_geojson() == small.truth.to_geojson()
    assert np.array_equal(again.patches.patches, small.patches.patches)


def test_different_seed_differs(small):
    other = S.generate(S.SynthConfig(scene_size=256, n_blobs=5, blob_radius_range=(10, 20), rng_seed=3))
    assert other.scene.pixels.tobytes() != small.scene.pixels.tobytes()


def test_no_blobs():
    r = S.generate(S.SynthConfig(scene_size=128, n_blobs=0))
    assert r.truth.targets == [] and len(r.truth) == 0
    assert not r.blob_labels.any()
    assert to_gray(r.scene).min() >= 100
    assert len(r.patches) == 0


def test_ground_truth_structure(small):
    assert len(small.truth.of_class(TARGET)) == 5
    assert len(small.truth.of_class(BACKGROUND)) == 5


def test_classes_separable_by_gray(small):
    g = to_gray(small.scene)
    blob = small.blob_labels > 0
    assert g[blob].max() < 100 <= g[~blob].min()


def test_blob_areas_match_analytic_area():
    r = S.generate(S.SynthConfig(rng_seed=11))
    for i, b in enumerate(r.blobs, start=1):
        area = (r.blob_labels == i).sum()
        assert abs(area - b.analytic_area) <= 0.15 * b.analytic_area


def test_blobs_respect_min_separation(small):
    cfg = SMALL
    for i, a in enumerate(small.blobs):
        for b in small.blobs[i + 1:]:
            assert math.dist(a.center, b.center) >= a.extent + b.extent + cfg.min_separation


def test_patch_labels_match_center_pixel(small):
    for rect, label in zip(small.patch_rects, small.patches.labels):
        c0, r0, c1, r1 = rect
        center = small.blob_labels[(r0 + r1) // 2, (c0 + c1) // 2]
        assert (center > 0) == bool(label)
        assert (c1 - c0, r1 - r0) == (80, 80)


def test_background_polygons_are_off_the_blobs(small):
    shape = small.scene.shape
    for p in small.truth.of_class(BACKGROUND):
        m = polygon_pixel_mask(p, small.scene.geotransform, shape)
        assert m.any() and not (small.blob_labels[m] > 0).any()


def test_target_polygons_cover_their_blobs(small):
    gt = small.scene.geotransform
    for i, p in enumerate(small.truth.of_class(TARGET), start=1):
        m = polygon_pixel_mask(p, gt, small.scene.shape)
        blob = small.blob_labels == i
        assert (m & blob).sum() >= 0.95 * blob.sum()


def test_default_scene_yields_twenty_candidates(scene512):
    _, cands = find_candidates(scene512.scene, PreprocessConfig(gray_threshold=100, min_area=180))
    assert len(cands) == 20
    gt = scene512.scene.geotransform
    for c in cands:
        col, row = c.centroid
        assert scene512.blob_labels[int(row), int(col)] > 0


def test_patch_splits_are_stratified(scene512):
    ds = scene512.patches
    for label in (0, 1):
        splits = [s for s, lab in zip(ds.splits, ds.labels) if lab == label]
        assert splits.count("train") == 16 and splits.count("validation") == 4


@pytest.mark.parametrize("kwargs", [
    {"blob_darkness_range": (30, 140)},
    {"n_blobs": -1},
    {"blob_radius_range": (20, 10)},
    {"background_buffer": 20},
    {"scene_size": 0},
])
def test_invalid_configs(kwargs):
    with pytest.raises(S.SynthError):
        S.SynthConfig(**kwargs)


def test_unsatisfiable_placement():
    with pytest.raises(S.SynthError):
        S.generate(S.SynthConfig(scene_size=100, n_blobs=50, blob_radius_range=(10, 12)))
