"""
Core raster, georeferencing and ground-truth types.

Scenes are 8-bit RGB arrays of shape (height, width, 3) with an affine
``GeoTransform``.  Integer pixel coordinates refer to pixel corners, so the
center of pixel (col, row) is at (col + 0.5, row + 0.5).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

TARGET = "target"
BACKGROUND = "background"
CLASS_LABELS = (TARGET, BACKGROUND)

WORLD_FILE_SUFFIXES = {".png": ".pgw", ".tif": ".tfw", ".tiff": ".tfw"}


class RasterError(ValueError):
    """Raised for unreadable or malformed raster, world-file or ground-truth input."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel -> map transform.

    x = origin_x + col * pixel_size_x + row * rot1
    y = origin_y + col * rot2 + row * pixel_size_y
    """

    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size_x: float = 1.0
    pixel_size_y: float = -1.0
    rot1: float = 0.0
    rot2: float = 0.0
    crs: str = ""

    def __post_init__(self):
        if self.pixel_size_x == 0 or self.pixel_size_y == 0:
            raise RasterError("pixel size must be non-zero")
        if self.pixel_size_x * self.pixel_size_y - self.rot1 * self.rot2 == 0:
            raise RasterError("geotransform is singular")

    @classmethod
    def from_world_file(cls, path: str | Path, crs: str = "") -> "GeoTransform":
        """Read a 6-line ESRI world file.

        Lines are A (x size), D (y term per column), B (x term per row),
        E (y size), C, F.  C/F are used directly as the transform origin.
        """
        try:
            lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
        except OSError as exc:
            raise RasterError(f"cannot read world file {path}: {exc}") from exc
        if len(lines) != 6:
            raise RasterError(f"malformed world file {path}: expected 6 lines, got {len(lines)}")
        try:
            a, d, b, e, c, f = (float(v) for v in lines)
        except ValueError as exc:
            raise RasterError(f"malformed world file {path}: {exc}") from exc
        return cls(origin_x=c, origin_y=f, pixel_size_x=a, pixel_size_y=e, rot1=b, rot2=d, crs=crs)

    def to_world_file(self, path: str | Path) -> None:
        values = (self.pixel_size_x, self.rot2, self.rot1, self.pixel_size_y, self.origin_x, self.origin_y)
        Path(path).write_text("".join(f"{v!r}\n" for v in values))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.pixel_size_x, self.rot1], [self.rot2, self.pixel_size_y]])


def pixel_to_map(gt: GeoTransform, col, row):
    """Map continuous pixel coordinates to map coordinates (scalars or arrays)."""
    x = gt.origin_x + col * gt.pixel_size_x + row * gt.rot1
    y = gt.origin_y + col * gt.rot2 + row * gt.pixel_size_y
    return x, y


def map_to_pixel(gt: GeoTransform, x, y):
    """Inverse of :func:`pixel_to_map`."""
    det = gt.pixel_size_x * gt.pixel_size_y - gt.rot1 * gt.rot2
    dx = x - gt.origin_x
    dy = y - gt.origin_y
    col = (gt.pixel_size_y * dx - gt.rot1 * dy) / det
    row = (gt.pixel_size_x * dy - gt.rot2 * dx) / det
    return col, row


def pixel_center_to_map(gt: GeoTransform, col, row):
    return pixel_to_map(gt, np.add(col, 0.5), np.add(row, 0.5))


@dataclass(frozen=True)
class Scene:
    """An RGB raster plus its georeferencing."""

    pixels: np.ndarray
    geotransform: GeoTransform = field(default_factory=GeoTransform)
    id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise RasterError(f"scene must be (height, width, 3), got {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise RasterError("scene must be non-empty")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.integer) and px.min() >= 0 and px.max() <= 255:
                px = px.astype(np.uint8)
            else:
                raise RasterError(f"scene must be 8-bit, got {px.dtype}")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]


def world_file_path(image_path: str | Path) -> Path:
    p = Path(image_path)
    return p.with_suffix(WORLD_FILE_SUFFIXES.get(p.suffix.lower(), ".wld"))


def read_rgb(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise RasterError(f"{path}: expected 8-bit 3-channel image, got mode {im.mode}")
            return np.array(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise RasterError(f"cannot decode image {path}: {exc}") from exc


def load_scene(image_path: str | Path, worldfile_path: str | Path | None = None, crs: str = "") -> Scene:
    image_path = Path(image_path)
    if worldfile_path is None:
        worldfile_path = world_file_path(image_path)
    pixels = read_rgb(image_path)
    gt = GeoTransform.from_world_file(worldfile_path, crs=crs)
    return Scene(pixels, gt, id=image_path.stem)


def save_scene(scene: Scene, image_path: str | Path, worldfile_path: str | Path | None = None) -> Path:
    """Write the scene as PNG/TIFF plus world-file sidecar; returns the world-file path."""
    image_path = Path(image_path)
    if worldfile_path is None:
        worldfile_path = world_file_path(image_path)
    Image.fromarray(np.asarray(scene.pixels)).save(image_path)
    scene.geotransform.to_world_file(worldfile_path)
    return Path(worldfile_path)


# ---------------------------------------------------------------------------
# Polygons and ground truth
# ---------------------------------------------------------------------------


def shoelace_area(vertices: Sequence[Sequence[float]]) -> float:
    """Signed-free area of a ring (closed or open)."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))) / 2.0


def point_in_polygon(x: float, y: float, vertices: Sequence[Sequence[float]]) -> bool:
    """Even-odd ray casting test."""
    inside = False
    n = len(vertices)
    xj, yj = vertices[n - 1]
    for i in range(n):
        xi, yi = vertices[i]
        if (yi > y) != (yj > y):
            if x < (xj - xi) * (y - yi) / (yj - yi) + xi:
                inside = not inside
        xj, yj = xi, yi
    return inside


def points_in_polygon(xs: np.ndarray, ys: np.ndarray, vertices: Sequence[Sequence[float]]) -> np.ndarray:
    """Vectorised even-odd test for many points against one ring."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    inside = np.zeros(xs.shape, dtype=bool)
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    for i in range(n):
        xi, yi = v[i]
        xj, yj = v[i - 1]
        if yi == yj:
            continue
        crosses = (yi > ys) != (yj > ys)
        xcross = (xj - xi) * (ys - yi) / (yj - yi) + xi
        inside ^= crosses & (xs < xcross)
    return inside


@dataclass(frozen=True)
class GroundTruthPolygon:
    vertices: tuple[tuple[float, float], ...]
    class_label: str
    id: str

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 4 or len(set(verts)) < 3:
            raise RasterError(f"degenerate polygon {self.id!r}: needs at least 3 distinct vertices")
        if verts[0] != verts[-1]:
            raise RasterError(f"polygon {self.id!r} ring is not closed")
        if self.class_label not in CLASS_LABELS:
            raise RasterError(f"polygon {self.id!r}: unknown class {self.class_label!r}")
        if shoelace_area(verts) <= 0:
            raise RasterError(f"polygon {self.id!r} has zero area")
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def from_ring(cls, ring: Iterable[Sequence[float]], class_label: str, id: str) -> "GroundTruthPolygon":
        """Build from an open or closed ring, closing it if needed."""
        verts = [tuple(map(float, p)) for p in ring]
        if verts and verts[0] != verts[-1]:
            verts.append(verts[0])
        return cls(tuple(verts), class_label, id)

    @property
    def area(self) -> float:
        return shoelace_area(self.vertices)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        v = np.asarray(self.vertices)
        return float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 0].max()), float(v[:, 1].max())

    def contains(self, x: float, y: float) -> bool:
        return point_in_polygon(x, y, self.vertices)


@dataclass(frozen=True)
class GroundTruthSet:
    polygons: tuple[GroundTruthPolygon, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "polygons", tuple(self.polygons))

    def of_class(self, class_label: str) -> list[GroundTruthPolygon]:
        return [p for p in self.polygons if p.class_label == class_label]

    @property
    def targets(self) -> list[GroundTruthPolygon]:
        return self.of_class(TARGET)

    def __len__(self) -> int:
        return len(self.polygons)

    def to_geojson(self) -> dict:
        feats = []
        for p in self.polygons:
            feats.append({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [[list(v) for v in p.vertices]]},
                "properties": {"class": p.class_label, "id": p.id},
            })
        return {"type": "FeatureCollection", "features": feats}


def parse_ground_truth(doc: dict) -> GroundTruthSet:
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise RasterError("ground truth must be a GeoJSON FeatureCollection")
    polys = []
    for i, feat in enumerate(doc.get("features", [])):
        geom = (feat or {}).get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise RasterError(f"feature {i}: expected Polygon geometry, got {geom.get('type')!r}")
        rings = geom.get("coordinates") or []
        if not rings:
            raise RasterError(f"feature {i}: polygon has no rings")
        props = feat.get("properties") or {}
        label = props.get("class")
        fid = str(props.get("id", i))
        try:
            verts = tuple((float(p[0]), float(p[1])) for p in rings[0])
        except (TypeError, ValueError, IndexError) as exc:
            raise RasterError(f"feature {i}: bad coordinates: {exc}") from exc
        polys.append(GroundTruthPolygon(verts, label, fid))
    return GroundTruthSet(tuple(polys))


def load_ground_truth(path: str | Path) -> GroundTruthSet:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RasterError(f"cannot read ground truth {path}: {exc}") from exc
    return parse_ground_truth(doc)


def save_ground_truth(gts: GroundTruthSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(gts.to_geojson(), indent=1) + "\n")


def polygon_pixel_mask(poly: GroundTruthPolygon, gt: GeoTransform, shape: tuple[int, int]) -> np.ndarray:
    """Boolean (height, width) mask of pixels whose centers fall inside ``poly``."""
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    v = np.asarray(poly.vertices)
    cols, rows = map_to_pixel(gt, v[:, 0], v[:, 1])
    c0 = max(int(math.floor(cols.min())) - 1, 0)
    c1 = min(int(math.ceil(cols.max())) + 1, w)
    r0 = max(int(math.floor(rows.min())) - 1, 0)
    r1 = min(int(math.ceil(rows.max())) + 1, h)
    if c0 >= c1 or r0 >= r1:
        return mask
    rr, cc = np.mgrid[r0:r1, c0:c1]
    xs, ys = pixel_center_to_map(gt, cc, rr)
    mask[r0:r1, c0:c1] = points_in_polygon(xs, ys, poly.vertices)
    return mask


# ---------------------------------------------------------------------------
# Resampling and small image helpers
# ---------------------------------------------------------------------------


def round_half_up(a) -> np.ndarray:
    return np.floor(np.asarray(a, dtype=float) + 0.5)


def to_uint8(a) -> np.ndarray:
    return np.clip(round_half_up(a), 0, 255).astype(np.uint8)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping.

    Works on (h, w) or (h, w, c) arrays; returns float64.  A same-size
    resize is the identity.
    """
    img = np.asarray(img, dtype=float)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    r0, r1, fr = axis(h, out_h)
    c0, c1, fc = axis(w, out_w)
    if img.ndim == 3:
        fr = fr[:, None, None]
        fc = fc[None, :, None]
    else:
        fr = fr[:, None]
        fc = fc[None, :]
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def resize_uint8(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if img.shape[:2] == (out_h, out_w):
        return np.array(img, dtype=np.uint8)
    return to_uint8(resize_bilinear(img, out_h, out_w))


def save_gray_png(values: np.ndarray, path: str | Path) -> None:
    """Write an 8-bit or 16-bit single-band PNG depending on the value range."""
    a = np.asarray(values)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    if a.max(initial=0) > 255:
        if a.max() > 65535:
            raise RasterError("label raster exceeds 16-bit range")
        Image.fromarray(a.astype(np.uint16)).save(path)
    else:
        Image.fromarray(a.astype(np.uint8)).save(path)
