"""
Background elimination and candidate extraction.

The fast detection path converts a scene to gray, keeps pixels darker than a
threshold, drops small connected clusters, and centers one classifier patch
on every surviving cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .raster import Scene, round_half_up

BT601 = (0.299, 0.587, 0.114)

_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True)
class PreprocessConfig:
    gray_threshold: int = 100
    min_area: int = 180
    connectivity: int = 8
    patch_size: int = 80
    # keep area > min_area instead of area >= min_area
    strict_area: bool = False
    # optional perimeter filter, off by default
    min_perimeter: int | None = None

    def __post_init__(self):
        if not 0 <= self.gray_threshold <= 255:
            raise ValueError(f"gray_threshold must be in [0, 255], got {self.gray_threshold}")
        if self.min_area < 1:
            raise ValueError(f"min_area must be >= 1, got {self.min_area}")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")


@dataclass(frozen=True)
class Component:
    id: int
    area: int
    perimeter: int
    bbox: tuple[int, int, int, int]  # col0, row0, col1, row1 (exclusive)
    centroid: tuple[float, float]  # col, row


@dataclass(frozen=True)
class ComponentSet:
    labels: np.ndarray
    components: tuple[Component, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.components)

    def by_id(self, cid: int) -> Component:
        for c in self.components:
            if c.id == cid:
                return c
        raise KeyError(cid)


@dataclass(frozen=True)
class CandidatePatch:
    rect: tuple[int, int, int, int]  # col0, row0, col1, row1 (exclusive)
    component_id: int
    centroid: tuple[float, float]


def to_gray(scene_or_pixels) -> np.ndarray:
    """BT.601 luma, rounded half-up, as uint8 (height, width)."""
    px = scene_or_pixels.pixels if isinstance(scene_or_pixels, Scene) else scene_or_pixels
    px = np.asarray(px, dtype=float)
    g = px[..., 0] * BT601[0] + px[..., 1] * BT601[1] + px[..., 2] * BT601[2]
    return np.clip(round_half_up(g), 0, 255).astype(np.uint8)


def threshold_mask(gray: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Foreground where the pixel is strictly darker than the threshold."""
    return np.asarray(gray) < cfg.gray_threshold


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a 4-neighbour in the background (or off-image)."""
    padded = np.pad(mask, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return mask & ~interior


def _describe(labels: np.ndarray, mask: np.ndarray) -> tuple[Component, ...]:
    n = int(labels.max(initial=0))
    if n == 0:
        return ()
    flat = labels.ravel()
    area = np.bincount(flat, minlength=n + 1)
    rows, cols = np.indices(labels.shape)
    sum_r = np.bincount(flat, weights=rows.ravel(), minlength=n + 1)
    sum_c = np.bincount(flat, weights=cols.ravel(), minlength=n + 1)
    perim = np.bincount(flat, weights=boundary_pixels(mask).ravel(), minlength=n + 1)
    comps = []
    for cid, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        comps.append(Component(
            id=cid,
            area=int(area[cid]),
            perimeter=int(perim[cid]),
            bbox=(sl[1].start, sl[0].start, sl[1].stop, sl[0].stop),
            centroid=(sum_c[cid] / area[cid], sum_r[cid] / area[cid]),
        ))
    return tuple(comps)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> ComponentSet:
    """Label maximal connected foreground regions.

    Ids are 1..n in raster-scan order of each component's first pixel.
    """
    if connectivity not in _STRUCTURE:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask, dtype=bool)
    raw, n = ndimage.label(mask, structure=_STRUCTURE[connectivity])
    if n:
        # pin the scan-order numbering rather than rely on the labeler's
        flat = raw.ravel()
        _, first = np.unique(flat, return_index=True)
        ids = flat[np.sort(first)]
        ids = ids[ids != 0]
        remap = np.zeros(n + 1, dtype=np.int32)
        remap[ids] = np.arange(1, len(ids) + 1, dtype=np.int32)
        raw = remap[raw]
    labels = raw.astype(np.int32)
    return ComponentSet(labels, _describe(labels, mask))


def filter_components(cs: ComponentSet, min_area: int, strict: bool = False,
                      min_perimeter: int | None = None) -> ComponentSet:
    """Keep components with area >= min_area (> when ``strict``); ids are preserved."""
    def keep(c: Component) -> bool:
        ok = c.area > min_area if strict else c.area >= min_area
        if min_perimeter is not None:
            ok = ok and c.perimeter >= min_perimeter
        return ok

    kept = tuple(c for c in cs.components if keep(c))
    if len(kept) == len(cs.components):
        return cs
    lut = np.zeros(int(cs.labels.max(initial=0)) + 1, dtype=np.int32)
    for c in kept:
        lut[c.id] = c.id
    return ComponentSet(lut[cs.labels], kept)


def centered_rect(centroid: tuple[float, float], size: int, width: int, height: int) -> tuple[int, int, int, int]:
    """Square of side ``size`` centered on ``centroid`` and clamped inside the image."""
    def span(center, dim):
        side = min(size, dim)
        start = int(math.floor(center - side / 2 + 0.5))
        start = min(max(start, 0), dim - side)
        return start, start + side

    c0, c1 = span(centroid[0], width)
    r0, r1 = span(centroid[1], height)
    return c0, r0, c1, r1


def extract_candidates(scene: Scene, cs: ComponentSet, cfg: PreprocessConfig = PreprocessConfig()) -> list[CandidatePatch]:
    if cs.labels.shape != scene.shape:
        raise ValueError(f"component raster {cs.labels.shape} does not match scene {scene.shape}")
    return [
        CandidatePatch(centered_rect(c.centroid, cfg.patch_size, scene.width, scene.height), c.id, c.centroid)
        for c in sorted(cs.components, key=lambda c: c.id)
    ]


def find_candidates(scene: Scene, cfg: PreprocessConfig = PreprocessConfig()) -> tuple[ComponentSet, list[CandidatePatch]]:
    """Run the whole pre-processing chain on one scene."""
    mask = threshold_mask(to_gray(scene), cfg)
    cs = connected_components(mask, cfg.connectivity)
    cs = filter_components(cs, cfg.min_area, strict=cfg.strict_area, min_perimeter=cfg.min_perimeter)
    return cs, extract_candidates(scene, cs, cfg)


def crop(pixels: np.ndarray, rect: tuple[int, int, int, int]) -> np.ndarray:
    c0, r0, c1, r1 = rect
    return pixels[r0:r1, c0:c1]
