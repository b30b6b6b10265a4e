"""
Patch augmentation: random scale, random crop, horizontal flip and brightness.

Every transform keeps the patch size and returns the input unchanged at its
identity parameter.  ``expand_dataset`` materializes a fixed number of
variants per source patch from a seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import PatchDataset
from .raster import resize_bilinear, to_uint8


@dataclass(frozen=True)
class AugmentConfig:
    scale_range: tuple[float, float] = (1.0, 1.10)
    crop_range: tuple[float, float] = (0.0, 0.10)
    hflip_prob: float = 0.5
    brightness_range: tuple[float, float] = (0.90, 1.10)
    multiplier: int = 30
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("scale_range", "crop_range", "brightness_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.scale_range[0] < 1:
            raise ValueError("scale_range must lie in [1, inf)")
        if self.crop_range[0] < 0 or self.crop_range[1] >= 0.5:
            raise ValueError("crop_range must lie in [0, 0.5)")
        if self.brightness_range[0] <= 0:
            raise ValueError("brightness_range must lie in (0, inf)")
        if not 0 <= self.hflip_prob <= 1:
            raise ValueError("hflip_prob must lie in [0, 1]")
        if self.multiplier < 1:
            raise ValueError("multiplier must be >= 1")

    @classmethod
    def identity(cls, multiplier: int = 1, rng_seed: int = 0) -> "AugmentConfig":
        return cls((1.0, 1.0), (0.0, 0.0), 0.0, (1.0, 1.0), multiplier, rng_seed)


def random_scale(patch: np.ndarray, factor: float) -> np.ndarray:
    """Upsample by ``factor`` then center-crop back to the original size."""
    if factor < 1:
        raise ValueError(f"scale factor must be >= 1, got {factor}")
    h, w = patch.shape[:2]
    big_h, big_w = int(round(h * factor)), int(round(w * factor))
    if (big_h, big_w) == (h, w):
        return np.array(patch, dtype=np.uint8)
    big = resize_bilinear(patch, big_h, big_w)
    r0 = (big_h - h) // 2
    c0 = (big_w - w) // 2
    return to_uint8(big[r0:r0 + h, c0:c0 + w])


def random_crop(patch: np.ndarray, margin: float) -> np.ndarray:
    """Trim floor(margin * dim) pixels off every edge and resize back."""
    if not 0 <= margin < 0.5:
        raise ValueError(f"crop margin must be in [0, 0.5), got {margin}")
    h, w = patch.shape[:2]
    mr, mc = int(np.floor(margin * h)), int(np.floor(margin * w))
    if mr == 0 and mc == 0:
        return np.array(patch, dtype=np.uint8)
    inner = np.asarray(patch)[mr:h - mr, mc:w - mc]
    return to_uint8(resize_bilinear(inner, h, w))


def hflip(patch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(patch)[:, ::-1])


def random_brightness(patch: np.ndarray, factor: float) -> np.ndarray:
    if factor <= 0:
        raise ValueError(f"brightness factor must be > 0, got {factor}")
    if factor == 1:
        return np.array(patch, dtype=np.uint8)
    return to_uint8(np.asarray(patch, dtype=float) * factor)


def augment_patch(patch: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    # draw all four parameters up front so the stream layout is fixed
    scale = rng.uniform(*cfg.scale_range)
    margin = rng.uniform(*cfg.crop_range)
    flip = rng.random() < cfg.hflip_prob
    bright = rng.uniform(*cfg.brightness_range)
    out = random_scale(patch, scale)
    out = random_crop(out, margin)
    if flip:
        out = hflip(out)
    return random_brightness(out, bright)


def expand_dataset(ds: PatchDataset, cfg: AugmentConfig = AugmentConfig()) -> PatchDataset:
    """Replace each patch by ``cfg.multiplier`` augmented variants (labels and splits kept)."""
    if len(ds) == 0:
        raise ValueError("cannot augment an empty dataset")
    out = np.empty((len(ds) * cfg.multiplier,) + ds.patches.shape[1:], dtype=np.uint8)
    k = 0
    for i, patch in enumerate(ds.patches):
        # per-patch stream keeps results independent of processing order
        rng = np.random.default_rng(cfg.rng_seed ^ i)
        for _ in range(cfg.multiplier):
            out[k] = augment_patch(patch, rng, cfg)
            k += 1
    labels = np.repeat(ds.labels, cfg.multiplier)
    splits = tuple(s for s in ds.splits for _ in range(cfg.multiplier))
    return PatchDataset(out, labels, splits)
