"""
Sliding-window and candidate-based detection.

The sliding path scores square windows at a fixed stride, spreads each
window's probability over the pixels it covers, averages overlapping windows
into a heatmap and thresholds it.  The candidate path only scores patches
centered on dark clusters found by :mod:`shrubmap.preprocess`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import PATCH_SIZE, Classifier, ClassifierError
from .preprocess import ComponentSet, PreprocessConfig, connected_components, crop, find_candidates
from .raster import GeoTransform, Scene, pixel_center_to_map, pixel_to_map, resize_uint8, save_gray_png, to_uint8

DEFAULT_WINDOW_SIZES = (385, 194, 129, 97, 77, 64, 55, 48, 42, 38)
FUSION_RULES = ("mean", "max")
SCAN_BATCH = 256


class DetectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class DetectionConfig:
    window_sizes: tuple[int, ...] = DEFAULT_WINDOW_SIZES
    stride_fraction: float = 0.70
    probability_threshold: float = 0.50
    scale_fusion: str = "mean"
    # also emit a heatmap fused across all window sizes
    fuse: bool = False

    def __post_init__(self):
        object.__setattr__(self, "window_sizes", tuple(int(w) for w in self.window_sizes))
        if not self.window_sizes or min(self.window_sizes) < 1:
            raise ValueError("window sizes must be >= 1")
        if not 0 < self.stride_fraction <= 1:
            raise ValueError("stride_fraction must be in (0, 1]")
        if not 0 < self.probability_threshold < 1:
            raise ValueError("probability_threshold must be in (0, 1)")
        if self.scale_fusion not in FUSION_RULES:
            raise ValueError(f"scale_fusion must be one of {FUSION_RULES}")


@dataclass(frozen=True)
class WindowGrid:
    window_size: int
    stride: int
    offsets: tuple[tuple[int, int], ...]  # (col, row), raster order
    scene_shape: tuple[int, int]  # (height, width)

    def __len__(self):
        return len(self.offsets)


@dataclass(frozen=True)
class ProbabilityHeatmap:
    values: np.ndarray  # (height, width) float in [0, 1]
    coverage: np.ndarray  # (height, width) int

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class Detection:
    rows: np.ndarray
    cols: np.ndarray
    bbox: tuple[int, int, int, int]  # col0, row0, col1, row1 (exclusive)
    centroid: tuple[float, float]  # pixel (col, row) of the pixel-index mean
    map_centroid: tuple[float, float]
    confidence: float
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def area(self) -> int:
        return len(self.rows)


def stride_for(window: int, stride_fraction: float) -> int:
    """Nearest integer to stride_fraction * window, ties rounded down, at least 1."""
    x = stride_fraction * window
    # tolerance absorbs binary noise such as 0.7 * 385 = 269.49999999999997
    return max(1, math.ceil(x - 0.5 - 1e-9))


def axis_offsets(dim: int, window: int, stride: int) -> list[int]:
    offs = list(range(0, dim - window + 1, stride))
    if offs[-1] != dim - window:
        offs.append(dim - window)
    return offs


def window_grid(scene_w: int, scene_h: int, window: int, stride_fraction: float = 0.70) -> WindowGrid:
    if window < 1 or window > min(scene_w, scene_h):
        raise DetectionError(f"window {window} does not fit a {scene_w}x{scene_h} scene")
    stride = stride_for(window, stride_fraction)
    cols = axis_offsets(scene_w, window, stride)
    rows = axis_offsets(scene_h, window, stride)
    return WindowGrid(window, stride, tuple((c, r) for r in rows for c in cols), (scene_h, scene_w))


def scan(scene: Scene, grid: WindowGrid, clf: Classifier, patch_size: int = PATCH_SIZE) -> np.ndarray:
    """Probability per window offset, in grid order."""
    if grid.scene_shape != scene.shape:
        raise DetectionError(f"grid built for {grid.scene_shape}, scene is {scene.shape}")
    w = grid.window_size
    probs = np.empty(len(grid), dtype=float)
    for start in range(0, len(grid), SCAN_BATCH):
        chunk = grid.offsets[start:start + SCAN_BATCH]
        patches = [resize_uint8(crop(scene.pixels, (c, r, c + w, r + w)), patch_size, patch_size) for c, r in chunk]
        try:
            probs[start:start + len(chunk)] = clf.predict_proba(patches)
        except ClassifierError as exc:
            raise ClassifierError(f"window batch starting at offset {chunk[0]}: {exc}") from exc
    return probs


def _accumulate(shape, grid: WindowGrid, scores: np.ndarray):
    """Per-pixel sum of covering-window scores and covering-window count."""
    s = np.zeros(shape)
    n = np.zeros(shape, dtype=np.int64)
    ws = grid.window_size
    for (c, r), p in zip(grid.offsets, scores):
        s[r:r + ws, c:c + ws] += p
        n[r:r + ws, c:c + ws] += 1
    return s, n


def assemble_heatmap(shape: tuple[int, int], scans: Sequence[tuple[WindowGrid, np.ndarray]],
                     fusion: str = "mean") -> ProbabilityHeatmap:
    """Average covering windows per scale, then fuse scales per pixel.

    Scales that do not cover a pixel are left out of its fusion; pixels no
    scale covers get probability 0.
    """
    if not scans:
        raise DetectionError("no scans to assemble")
    if fusion not in FUSION_RULES:
        raise ValueError(f"fusion must be one of {FUSION_RULES}")
    shape = tuple(shape)
    per_scale = []
    coverage = np.zeros(shape, dtype=np.int64)
    for grid, scores in scans:
        if grid.scene_shape != shape:
            raise DetectionError(f"grid built for {grid.scene_shape}, heatmap is {shape}")
        scores = np.asarray(scores, dtype=float)
        if len(scores) != len(grid):
            raise DetectionError(f"{len(scores)} scores for {len(grid)} windows")
        s, n = _accumulate(shape, grid, scores)
        mean = np.where(n > 0, s / np.maximum(n, 1), np.nan)
        per_scale.append(mean)
        coverage += n
    stack = np.stack(per_scale)
    covered = ~np.isnan(stack)
    with np.errstate(invalid="ignore"):
        if fusion == "mean":
            fused = np.nansum(stack, axis=0) / np.maximum(covered.sum(axis=0), 1)
        else:
            fused = np.where(covered.any(axis=0), np.nanmax(np.where(covered, stack, -np.inf), axis=0), 0.0)
    fused = np.clip(np.where(covered.any(axis=0), fused, 0.0), 0.0, 1.0)
    return ProbabilityHeatmap(fused, coverage)


def threshold_heatmap(hm: ProbabilityHeatmap, threshold: float = 0.5) -> np.ndarray:
    """Positive where the probability is strictly above the threshold."""
    return hm.values > threshold


def _region_detection(rows, cols, gt: GeoTransform, confidence: float, **extra) -> Detection:
    cc, rc = float(cols.mean()), float(rows.mean())
    mx, my = pixel_center_to_map(gt, cc, rc)
    bbox = (int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)
    return Detection(rows, cols, bbox, (cc, rc), (float(mx), float(my)), float(confidence), dict(extra))


def extract_detections(mask: np.ndarray, hm: ProbabilityHeatmap, gt: GeoTransform) -> list[Detection]:
    """One detection per 8-connected positive region."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != hm.shape:
        raise DetectionError(f"mask {mask.shape} and heatmap {hm.shape} differ")
    cs = connected_components(mask, 8)
    return component_detections(cs, gt, lambda cid, rows, cols: float(hm.values[rows, cols].mean()))


def component_detections(cs: ComponentSet, gt: GeoTransform, confidence) -> list[Detection]:
    if not cs.components:
        return []
    flat = cs.labels.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(cs.labels.max() + 2))
    w = cs.labels.shape[1]
    dets = []
    for c in cs.components:
        idx = order[bounds[c.id]:bounds[c.id + 1]]
        rows, cols = idx // w, idx % w
        dets.append(_region_detection(rows, cols, gt, confidence(c.id, rows, cols), component_id=c.id))
    return dets


@dataclass
class SlidingResult:
    window_size: int
    grid: WindowGrid
    scores: np.ndarray
    heatmap: ProbabilityHeatmap
    detections: list[Detection]
    classifier_calls: int
    seconds: float = 0.0


def detect_sliding(scene: Scene, window: int, clf: Classifier, stride_fraction: float = 0.70,
                   threshold: float = 0.5) -> SlidingResult:
    """Single-scale sliding-window detection."""
    grid = window_grid(scene.width, scene.height, window, stride_fraction)
    before = clf.calls
    scores = scan(scene, grid, clf)
    hm = assemble_heatmap(scene.shape, [(grid, scores)])
    dets = extract_detections(threshold_heatmap(hm, threshold), hm, scene.geotransform)
    return SlidingResult(window, grid, scores, hm, dets, clf.calls - before)


@dataclass
class CandidateResult:
    components: ComponentSet
    candidates: list
    probabilities: np.ndarray
    detections: list[Detection]
    classifier_calls: int
    seconds: float = 0.0


def detect_with_candidates(scene: Scene, pp: PreprocessConfig, clf: Classifier,
                           threshold: float = 0.5) -> CandidateResult:
    """Score one patch per surviving dark cluster; keep those above ``threshold``."""
    cs, cands = find_candidates(scene, pp)
    before = clf.calls
    if cands:
        patches = [resize_uint8(crop(scene.pixels, c.rect), PATCH_SIZE, PATCH_SIZE) for c in cands]
        probs = clf.predict_proba(patches)
    else:
        probs = np.zeros(0)
    keep = {c.component_id: p for c, p in zip(cands, probs) if p > threshold}
    kept = ComponentSet(cs.labels, tuple(c for c in cs.components if c.id in keep))
    dets = component_detections(kept, scene.geotransform, lambda cid, rows, cols: keep[cid])
    return CandidateResult(cs, cands, probs, dets, clf.calls - before)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def save_heatmap_png(hm: ProbabilityHeatmap, path: str | Path) -> None:
    save_gray_png(to_uint8(hm.values * 255), path)


def save_heatmap_raw(hm: ProbabilityHeatmap, path: str | Path) -> None:
    """Little-endian float32 raster preceded by a one-line text header."""
    path = Path(path)
    h, w = hm.shape
    with path.open("wb") as fh:
        fh.write(f"shrubmap-heatmap width={w} height={h} dtype=float32le\n".encode())
        fh.write(hm.values.astype("<f4").tobytes())


def load_heatmap_raw(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    header, _, body = data.partition(b"\n")
    fields = dict(kv.split("=") for kv in header.decode().split()[1:])
    w, h = int(fields["width"]), int(fields["height"])
    return np.frombuffer(body, dtype="<f4").reshape(h, w)


def detections_to_geojson(dets: Sequence[Detection], gt: GeoTransform) -> dict:
    """Detections as map-space bounding-box polygons with a confidence property."""
    feats = []
    for i, d in enumerate(dets):
        c0, r0, c1, r1 = d.bbox
        ring = [(c0, r0), (c1, r0), (c1, r1), (c0, r1), (c0, r0)]
        coords = []
        for c, r in ring:
            x, y = (float(v) for v in pixel_to_map(gt, c, r))
            coords.append([x, y])
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [coords]},
            "properties": {
                "id": i,
                "confidence": round(d.confidence, 6),
                "centroid_x": d.map_centroid[0],
                "centroid_y": d.map_centroid[1],
                "area_px": d.area,
                "bbox_px": list(d.bbox),
            },
        })
    return {"type": "FeatureCollection", "features": feats}


def detections_from_geojson(doc: dict) -> list[Detection]:
    """Rebuild detections from :func:`detections_to_geojson` output.

    The pixel region is reconstructed as the full bounding box.
    """
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise DetectionError("detections must be a GeoJSON FeatureCollection")
    dets = []
    for i, feat in enumerate(doc.get("features", [])):
        props = (feat or {}).get("properties") or {}
        try:
            conf = float(props["confidence"])
            cx, cy = float(props["centroid_x"]), float(props["centroid_y"])
            c0, r0, c1, r1 = (int(v) for v in props.get("bbox_px", (0, 0, 0, 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DetectionError(f"detection feature {i}: {exc}") from exc
        rr, cc = np.mgrid[r0:r1, c0:c1]
        dets.append(Detection(rr.ravel(), cc.ravel(), (c0, r0, c1, r1),
                              ((c0 + c1) / 2 - 0.5, (r0 + r1) / 2 - 0.5), (cx, cy), conf))
    return dets
