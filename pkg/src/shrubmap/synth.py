"""
Seeded synthetic scenes: dark, irregular shrub-like blobs on a light, noisy
soil background, with exact ground truth and a matching patch dataset.

Blob and background gray levels are separated by more than three noise
sigmas and the noise is truncated at three sigmas, so a gray threshold
between the two ranges splits the classes exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dataset import PatchDataset, assign_splits
from .preprocess import centered_rect, crop
from .raster import (
    BACKGROUND,
    TARGET,
    GeoTransform,
    GroundTruthPolygon,
    GroundTruthSet,
    Scene,
    pixel_to_map,
    resize_bilinear,
    to_uint8,
)

MAX_ATTEMPTS = 10_000
BLOB_TINT = np.array([-4.0, 6.0, -8.0])  # greenish shrub canopy
SOIL_TINT = np.array([8.0, 0.0, -12.0])  # warm bare soil
HARMONICS = (3, 4, 5)
MAX_HARMONIC_AMPLITUDE = 0.06
MIN_ASPECT = 0.75
BOUNDARY_VERTICES = 72


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    scene_size: int = 512
    n_blobs: int = 20
    blob_radius_range: tuple[float, float] = (10.0, 30.0)
    blob_darkness_range: tuple[float, float] = (30.0, 70.0)
    background_level_range: tuple[float, float] = (150.0, 200.0)
    noise_sigma: float = 6.0
    min_separation: float = 24.0
    background_clearance: float = 12.0
    background_buffer: float = 6.0
    rng_seed: int = 0
    patch_size: int = 80
    pixel_size: float = 0.12
    origin: tuple[float, float] = (500000.0, 4075000.0)

    def __post_init__(self):
        for name in ("blob_radius_range", "blob_darkness_range", "background_level_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise SynthError(f"{name}: lower bound exceeds upper bound")
            object.__setattr__(self, name, (float(lo), float(hi)))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        if self.scene_size < 1:
            raise SynthError("scene_size must be >= 1")
        if self.n_blobs < 0:
            raise SynthError("n_blobs must be >= 0")
        if self.blob_radius_range[0] <= 0:
            raise SynthError("blob radii must be positive")
        if self.noise_sigma < 0:
            raise SynthError("noise_sigma must be >= 0")
        if self.blob_darkness_range[1] >= self.background_level_range[0] - 3 * self.noise_sigma:
            raise SynthError("blob darkness must stay below background level minus 3 noise sigmas")
        if self.blob_darkness_range[0] < 0 or self.background_level_range[1] > 255:
            raise SynthError("gray levels must lie in [0, 255]")
        if self.min_separation < 0:
            raise SynthError("min_separation must be >= 0")
        if self.background_clearance < 1:
            raise SynthError("background_clearance must be >= 1")
        if not 0 < self.background_buffer < self.background_clearance / math.sqrt(2) - 1:
            raise SynthError("background_buffer must be positive and keep background polygons off the blobs")
        if self.pixel_size <= 0:
            raise SynthError("pixel_size must be > 0")

    @property
    def geotransform(self) -> GeoTransform:
        return GeoTransform(self.origin[0], self.origin[1], self.pixel_size, -self.pixel_size)


@dataclass(frozen=True)
class Blob:
    center: tuple[float, float]  # continuous pixel coords (col, row)
    semi_major: float
    semi_minor: float
    angle: float
    amplitudes: tuple[float, ...]
    phases: tuple[float, ...]
    level: float

    @property
    def extent(self) -> float:
        return self.semi_major * (1 + sum(self.amplitudes))

    @property
    def analytic_area(self) -> float:
        return math.pi * self.semi_major * self.semi_minor

    def radius(self, theta):
        """Boundary radius at blob-frame angle ``theta``."""
        a, b = self.semi_major, self.semi_minor
        rho = a * b / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)
        wobble = 1 + sum(amp * np.cos(k * theta + ph) for k, amp, ph in zip(HARMONICS, self.amplitudes, self.phases))
        return rho * wobble

    def contains(self, x, y):
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        ca, sa = math.cos(self.angle), math.sin(self.angle)
        u = ca * dx + sa * dy
        v = -sa * dx + ca * dy
        return np.hypot(u, v) <= self.radius(np.arctan2(v, u))

    def boundary(self, n: int = BOUNDARY_VERTICES) -> np.ndarray:
        theta = np.linspace(0, 2 * math.pi, n, endpoint=False)
        r = self.radius(theta)
        ca, sa = math.cos(self.angle), math.sin(self.angle)
        u, v = r * np.cos(theta), r * np.sin(theta)
        return np.column_stack([self.center[0] + ca * u - sa * v, self.center[1] + sa * u + ca * v])


@dataclass
class SynthResult:
    scene: Scene
    truth: GroundTruthSet
    patches: PatchDataset
    blobs: list[Blob]
    blob_labels: np.ndarray  # (h, w) int, 0 = soil, i = blob i (1-based)
    patch_rects: list[tuple[int, int, int, int]]


def _background_field(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = cfg.background_level_range
    coarse = rng.uniform(lo, hi, size=(5, 5))
    return resize_bilinear(coarse, cfg.scene_size, cfg.scene_size)


def _place_blobs(cfg: SynthConfig, rng: np.random.Generator) -> list[Blob]:
    blobs: list[Blob] = []
    attempts = 0
    size = cfg.scene_size
    while len(blobs) < cfg.n_blobs:
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise SynthError(f"could not place {cfg.n_blobs} blobs in {MAX_ATTEMPTS} attempts")
        r = rng.uniform(*cfg.blob_radius_range)
        amps = tuple(rng.uniform(0, MAX_HARMONIC_AMPLITUDE, len(HARMONICS)))
        extent = r * (1 + sum(amps))
        margin = max(cfg.patch_size / 2, extent + 2)
        if size - 2 * margin <= 0:
            continue
        cx, cy = rng.uniform(margin, size - margin, 2)
        blob = Blob(
            center=(float(cx), float(cy)),
            semi_major=float(r),
            semi_minor=float(r * rng.uniform(MIN_ASPECT, 1.0)),
            angle=float(rng.uniform(0, math.pi)),
            amplitudes=amps,
            phases=tuple(rng.uniform(0, 2 * math.pi, len(HARMONICS))),
            level=float(rng.uniform(*cfg.blob_darkness_range)),
        )
        if all(math.dist(blob.center, o.center) >= blob.extent + o.extent + cfg.min_separation for o in blobs):
            blobs.append(blob)
    return blobs


def _rasterize(blobs: list[Blob], size: int) -> np.ndarray:
    labels = np.zeros((size, size), dtype=np.int32)
    for i, b in enumerate(blobs, start=1):
        e = b.extent + 1
        c0, c1 = max(int(b.center[0] - e), 0), min(int(b.center[0] + e) + 1, size)
        r0, r1 = max(int(b.center[1] - e), 0), min(int(b.center[1] + e) + 1, size)
        rr, cc = np.mgrid[r0:r1, c0:c1]
        inside = b.contains(cc + 0.5, rr + 0.5)
        labels[r0:r1, c0:c1][inside] = i
    return labels


def _background_centers(cfg: SynthConfig, labels: np.ndarray, rng: np.random.Generator, n: int) -> list[tuple[int, int]]:
    """Uniform patch centers at least ``background_clearance`` pixels away from every blob.

    Crops may still show parts of nearby blobs at their borders, which is
    what teaches the classifier to look at the patch center.
    """
    size, ps = cfg.scene_size, cfg.patch_size
    lo, hi = int(math.ceil(ps / 2)), int(size - ps / 2)
    if hi < lo:
        lo, hi = 0, size - 1
    clearance = ndimage.distance_transform_edt(labels == 0) if labels.any() else np.full(labels.shape, np.inf)
    centers: list[tuple[int, int]] = []
    for _ in range(MAX_ATTEMPTS):
        if len(centers) >= n:
            return centers
        c, r = (int(v) for v in rng.integers(lo, hi + 1, 2))
        if clearance[r, c] >= cfg.background_clearance:
            centers.append((c, r))
    if len(centers) < n:
        raise SynthError("could not find enough blob-free background locations")
    return centers


def _square_ring(gt: GeoTransform, col: float, row: float, half: float) -> list[tuple[float, float]]:
    corners = [(col - half, row - half), (col + half, row - half), (col + half, row + half), (col - half, row + half)]
    return [tuple(float(v) for v in pixel_to_map(gt, c, r)) for c, r in corners]


def generate(cfg: SynthConfig = SynthConfig()) -> SynthResult:
    rng = np.random.default_rng(cfg.rng_seed)
    size = cfg.scene_size
    gray = _background_field(cfg, rng)
    blobs = _place_blobs(cfg, rng)
    labels = _rasterize(blobs, size)
    tint = np.broadcast_to(SOIL_TINT, (size, size, 3)).copy()
    for i, b in enumerate(blobs, start=1):
        m = labels == i
        gray[m] = b.level
        tint[m] = BLOB_TINT
    sigma = cfg.noise_sigma
    noise = np.clip(rng.normal(0, sigma, (size, size)), -3 * sigma, 3 * sigma) if sigma else 0.0
    rgb = to_uint8((gray + noise)[..., None] + tint)
    gt = cfg.geotransform
    scene = Scene(rgb, gt, id=f"synth-{cfg.rng_seed}")

    polys = []
    for i, b in enumerate(blobs):
        ring = [tuple(float(v) for v in pixel_to_map(gt, c, r)) for c, r in b.boundary()]
        polys.append(GroundTruthPolygon.from_ring(ring, TARGET, f"t{i}"))

    bg_centers = _background_centers(cfg, labels, rng, len(blobs))
    for i, (c, r) in enumerate(bg_centers):
        polys.append(GroundTruthPolygon.from_ring(_square_ring(gt, c + 0.5, r + 0.5, cfg.background_buffer), BACKGROUND, f"b{i}"))

    rects, plabels = [], []
    for b in blobs:
        center = (int(math.floor(b.center[0])), int(math.floor(b.center[1])))
        rects.append(centered_rect(center, cfg.patch_size, size, size))
        plabels.append(1)
    for c, r in bg_centers:
        rects.append(centered_rect((c, r), cfg.patch_size, size, size))
        plabels.append(0)
    if rects:
        patches = np.stack([crop(rgb, rect) for rect in rects])
    else:
        patches = np.zeros((0, cfg.patch_size, cfg.patch_size, 3), dtype=np.uint8)
    ds = PatchDataset(patches, np.array(plabels, dtype=np.int64), assign_splits(plabels))
    return SynthResult(scene, GroundTruthSet(tuple(polys)), ds, blobs, labels, rects)
