import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from shrubmap.raster import (
    GeoTransform,
    GroundTruthPolygon,
    GroundTruthSet,
    RasterError,
    Scene,
    load_ground_truth,
    load_scene,
    map_to_pixel,
    pixel_center_to_map,
    pixel_to_map,
    point_in_polygon,
    polygon_pixel_mask,
    resize_bilinear,
    save_ground_truth,
    save_scene,
    shoelace_area,
)


def write_world(path, values):
    path.write_text("".join(f"{v}\n" for v in values))


def test_load_scene_pixel_center_mapping(tmp_path):
    Image.fromarray(np.full((4, 4, 3), 255, dtype=np.uint8)).save(tmp_path / "s.png")
    write_world(tmp_path / "s.pgw", (0.5, 0, 0, -0.5, 100, 200))
    scene = load_scene(tmp_path / "s.png")
    assert (scene.width, scene.height) == (4, 4)
    x, y = pixel_center_to_map(scene.geotransform, 0, 0)
    assert (x, y) == (100.25, 199.75)


def test_load_scene_large_dimensions(tmp_path):
    Image.fromarray(np.zeros((1900, 1900, 3), dtype=np.uint8)).save(tmp_path / "big.png")
    write_world(tmp_path / "big.pgw", (0.12, 0, 0, -0.12, 0, 0))
    scene = load_scene(tmp_path / "big.png")
    assert scene.width == scene.height == 1900


def test_world_file_with_five_lines_is_rejected(tmp_path):
    Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(tmp_path / "s.png")
    write_world(tmp_path / "s.pgw", (0.5, 0, 0, -0.5, 100))
    with pytest.raises(RasterError, match="malformed world file"):
        load_scene(tmp_path / "s.png")


def test_world_file_non_numeric_line(tmp_path):
    Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(tmp_path / "s.png")
    write_world(tmp_path / "s.pgw", (0.5, 0, 0, "minus", 100, 200))
    with pytest.raises(RasterError):
        load_scene(tmp_path / "s.png")


def test_non_rgb_image_is_rejected(tmp_path):
    Image.fromarray(np.zeros((2, 2), dtype=np.uint8)).save(tmp_path / "g.png")
    write_world(tmp_path / "g.pgw", (1, 0, 0, -1, 0, 0))
    with pytest.raises(RasterError, match="3-channel"):
        load_scene(tmp_path / "g.png")


def test_missing_image(tmp_path):
    with pytest.raises(RasterError):
        load_scene(tmp_path / "nope.png", tmp_path / "nope.pgw")


def test_world_file_line_order(tmp_path):
    # ESRI order: A (x size), D (y per column), B (x per row), E (y size), C, F
    write_world(tmp_path / "w.pgw", (2.0, 0.1, 0.2, -3.0, 10.0, 20.0))
    gt = GeoTransform.from_world_file(tmp_path / "w.pgw")
    assert (gt.pixel_size_x, gt.rot2, gt.rot1, gt.pixel_size_y, gt.origin_x, gt.origin_y) == (
        2.0, 0.1, 0.2, -3.0, 10.0, 20.0)
    gt.to_world_file(tmp_path / "w2.pgw")
    assert GeoTransform.from_world_file(tmp_path / "w2.pgw") == gt


@pytest.mark.parametrize("gt, pix, expected", [
    (GeoTransform(0, 0, 0.5, -0.5), (0, 0), (0, 0)),
    (GeoTransform(0, 0, 0.5, -0.5), (10, 10), (5, -5)),
    (GeoTransform(100, 200, 1, -1), (2.5, 3.5), (102.5, 196.5)),
])
def test_pixel_to_map_examples(gt, pix, expected):
    assert pixel_to_map(gt, *pix) == pytest.approx(expected, abs=1e-12)


def test_pixel_to_map_rotation_terms():
    gt = GeoTransform(1.0, 2.0, 0.5, -0.25, rot1=0.1, rot2=0.2)
    x, y = pixel_to_map(gt, 3.0, 4.0)
    assert x == pytest.approx(1.0 + 3 * 0.5 + 4 * 0.1)
    assert y == pytest.approx(2.0 + 3 * 0.2 + 4 * -0.25)


def test_zero_pixel_size_rejected():
    with pytest.raises(RasterError):
        GeoTransform(0, 0, 0.0, -1.0)


def test_geotransform_round_trip_10000_points():
    rng = np.random.default_rng(0)
    for _ in range(10):
        psx = rng.uniform(0.05, 5) * rng.choice([-1, 1])
        psy = rng.uniform(0.05, 5) * rng.choice([-1, 1])
        gt = GeoTransform(rng.uniform(-1e4, 1e4), rng.uniform(-1e4, 1e4), psx, psy,
                          rot1=rng.uniform(-0.02, 0.02), rot2=rng.uniform(-0.02, 0.02))
        cols, rows = rng.uniform(0, 5000, 1000), rng.uniform(0, 5000, 1000)
        c2, r2 = map_to_pixel(gt, *pixel_to_map(gt, cols, rows))
        assert np.abs(c2 - cols).max() < 1e-9 and np.abs(r2 - rows).max() < 1e-9


@settings(max_examples=200, deadline=None)
@given(
    psx=st.floats(0.01, 10), psy=st.floats(-10, -0.01),
    ox=st.floats(-1e5, 1e5), oy=st.floats(-1e5, 1e5),
    col=st.floats(0, 4000), row=st.floats(0, 4000),
)
def test_geotransform_round_trip_property(psx, psy, ox, oy, col, row):
    gt = GeoTransform(ox, oy, psx, psy)
    c2, r2 = map_to_pixel(gt, *pixel_to_map(gt, col, row))
    assert abs(c2 - col) < 1e-9 and abs(r2 - row) < 1e-9


def test_scene_round_trip_is_byte_exact(tmp_path):
    rng = np.random.default_rng(1)
    px = rng.integers(0, 256, (17, 23, 3), dtype=np.uint8)
    gt = GeoTransform(500000.0, 4075000.0, 0.12, -0.12)
    save_scene(Scene(px, gt), tmp_path / "r.png")
    back = load_scene(tmp_path / "r.png")
    assert np.array_equal(back.pixels, px)
    assert back.geotransform == gt


def test_scene_invariants():
    with pytest.raises(RasterError):
        Scene(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(RasterError):
        Scene(np.zeros((0, 4, 3), dtype=np.uint8))
    with pytest.raises(RasterError):
        Scene(np.full((2, 2, 3), 300))
    s = Scene(np.zeros((2, 3, 3), dtype=np.uint8))
    assert s.pixels.flags.writeable is False
    assert s.pixels.size == s.width * s.height * 3


def test_shoelace_unit_square_exact():
    assert shoelace_area([(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]) == 1.0


def test_point_in_polygon_even_odd():
    square = [(0, 0), (4, 0), (4, 4), (0, 4), (0, 0)]
    assert point_in_polygon(2, 2, square)
    assert not point_in_polygon(5, 2, square)
    # concave "U": the notch is outside
    u = [(0, 0), (3, 0), (3, 3), (2, 3), (2, 1), (1, 1), (1, 3), (0, 3), (0, 0)]
    assert not point_in_polygon(1.5, 2, u)
    assert point_in_polygon(0.5, 2, u)


def _fc(features):
    return {"type": "FeatureCollection", "features": features}


def _feature(ring, cls, fid):
    return {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": {"class": cls, "id": fid}}


def test_ground_truth_triangle_is_closed(tmp_path):
    p = tmp_path / "gt.geojson"
    p.write_text(json.dumps(_fc([_feature([[0, 0], [1, 0], [0, 1], [0, 0]], "target", "a")])))
    gts = load_ground_truth(p)
    assert len(gts.polygons) == 1
    assert len(gts.polygons[0].vertices) == 4
    assert gts.polygons[0].vertices[0] == gts.polygons[0].vertices[-1]


def test_ground_truth_51_targets(tmp_path):
    feats = [_feature([[i, 0], [i + 0.5, 0], [i, 0.5], [i, 0]], "target", str(i)) for i in range(51)]
    p = tmp_path / "gt.geojson"
    p.write_text(json.dumps(_fc(feats)))
    assert len(load_ground_truth(p).targets) == 51


@pytest.mark.parametrize("ring, cls", [
    ([[0, 0], [1, 0], [0, 0]], "target"),  # two distinct vertices
    ([[0, 0], [1, 0], [0, 1]], "target"),  # unclosed ring
    ([[0, 0], [1, 0], [0, 1], [0, 0]], "shrub"),  # unknown class
    ([[0, 0], [1, 1], [2, 2], [0, 0]], "target"),  # zero area
])
def test_ground_truth_errors(tmp_path, ring, cls):
    p = tmp_path / "gt.geojson"
    p.write_text(json.dumps(_fc([_feature(ring, cls, "x")])))
    with pytest.raises(RasterError):
        load_ground_truth(p)


def test_ground_truth_malformed_file(tmp_path):
    p = tmp_path / "gt.geojson"
    p.write_text("{not json")
    with pytest.raises(RasterError):
        load_ground_truth(p)


def test_ground_truth_round_trip(tmp_path):
    gts = GroundTruthSet((
        GroundTruthPolygon.from_ring([(0, 0), (2, 0), (2, 2)], "target", "t0"),
        GroundTruthPolygon.from_ring([(5, 5), (6, 5), (6, 6), (5, 6)], "background", "b0"),
    ))
    save_ground_truth(gts, tmp_path / "g.geojson")
    assert load_ground_truth(tmp_path / "g.geojson") == gts


def test_polygon_pixel_mask_matches_pointwise_test():
    gt = GeoTransform(10.0, 20.0, 0.5, -0.5)
    poly = GroundTruthPolygon.from_ring([(11, 19), (14, 18.2), (12.3, 15.1)], "target", "t")
    mask = polygon_pixel_mask(poly, gt, (14, 12))
    for r in range(14):
        for c in range(12):
            x, y = pixel_center_to_map(gt, c, r)
            assert mask[r, c] == point_in_polygon(x, y, poly.vertices)


def naive_bilinear(img, out_h, out_w):
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            y = min(max((i + 0.5) * h / out_h - 0.5, 0), h - 1)
            x = min(max((j + 0.5) * w / out_w - 0.5, 0), w - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            out[i, j] = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
                         + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return out


@pytest.mark.parametrize("shape, out", [((5, 7), (11, 3)), ((8, 8), (13, 13)), ((9, 4), (4, 9))])
def test_resize_bilinear_matches_naive(shape, out):
    img = np.random.default_rng(2).uniform(0, 255, shape)
    assert np.allclose(resize_bilinear(img, *out), naive_bilinear(img, *out), atol=1e-9)


def test_resize_same_size_is_identity():
    img = np.random.default_rng(3).uniform(0, 255, (6, 6, 3))
    assert np.array_equal(resize_bilinear(img, 6, 6), img)
