"""
Object-based image analysis baseline.

Segmentation is bottom-up region merging in the multiresolution style:
every pixel starts as a segment and adjacent pairs are fused cheapest-first
while the fusion cost stays below ``scale ** 2``.  The fusion cost mixes
color heterogeneity (area-weighted band standard deviations) with shape
heterogeneity (compactness ``l / sqrt(n)`` and smoothness ``l / b``, where
``l`` is the boundary length and ``b`` the bounding-box perimeter)::

    f = (1 - shape) * dh_color + shape * (cmpct * dh_cmpct + (1 - cmpct) * dh_smooth)

Always merging the globally cheapest pair (ties broken by the lowest label
pair) is a mutual-best-fit schedule, and its merge sequence does not depend
on the scale, only the stopping point does.  :func:`segment_multiscale`
exploits that to produce every scale of a grid from a single run.

Segments are then described by band statistics and a masked GLCM mean and
labeled with either a conjunctive threshold rule set or k-nearest neighbours.
"""

from __future__ import annotations

import csv
import heapq
import io
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from PIL import Image

from .classifier import GLCM_LEVELS, quantize
from .preprocess import to_gray
from .raster import BACKGROUND, TARGET, GroundTruthSet, Scene, polygon_pixel_mask

logger = logging.getLogger(__name__)

REFERENCE_BEST_PARAMS = (110.0, 0.3, 0.8)


class ObiaError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentationParams:
    scale: float
    shape_weight: float = 0.3
    compactness_weight: float = 0.8

    def __post_init__(self):
        if self.scale < 0:
            raise ObiaError(f"scale must be >= 0, got {self.scale}")
        for name in ("shape_weight", "compactness_weight"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ObiaError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class SegmentStats:
    """Accumulators describing one segment."""

    n: int
    sums: tuple[float, float, float]
    sumsq: tuple[float, float, float]
    perimeter: int
    bbox: tuple[int, int, int, int]  # row0, col0, row1, col1 (inclusive)


def _std_sum(n, sums, sumsq):
    total = 0.0
    for s, q in zip(sums, sumsq):
        m = s / n
        v = q / n - m * m
        if v > 0:
            total += math.sqrt(v)
    return total


def _cost(na, sa, qa, la, ba, nb, sb, qb, lb, bb, shared, shape_w, cmpct_w):
    n = na + nb
    sm = (sa[0] + sb[0], sa[1] + sb[1], sa[2] + sb[2])
    qm = (qa[0] + qb[0], qa[1] + qb[1], qa[2] + qb[2])
    dh_color = n * _std_sum(n, sm, qm) - (na * _std_sum(na, sa, qa) + nb * _std_sum(nb, sb, qb))
    if shape_w == 0:
        return (1 - shape_w) * dh_color
    lm = la + lb - 2 * shared
    bbox_m = (min(ba[0], bb[0]), min(ba[1], bb[1]), max(ba[2], bb[2]), max(ba[3], bb[3]))
    perim_a = 2 * (ba[2] - ba[0] + ba[3] - ba[1] + 2)
    perim_b = 2 * (bb[2] - bb[0] + bb[3] - bb[1] + 2)
    perim_m = 2 * (bbox_m[2] - bbox_m[0] + bbox_m[3] - bbox_m[1] + 2)
    dh_cmpct = lm * math.sqrt(n) - (la * math.sqrt(na) + lb * math.sqrt(nb))
    dh_smooth = n * lm / perim_m - (na * la / perim_a + nb * lb / perim_b)
    dh_shape = cmpct_w * dh_cmpct + (1 - cmpct_w) * dh_smooth
    return (1 - shape_w) * dh_color + shape_w * dh_shape


def fusion_cost(a: SegmentStats, b: SegmentStats, shared_edges: int, params: SegmentationParams) -> float:
    """Heterogeneity increase caused by fusing two adjacent segments."""
    return _cost(a.n, a.sums, a.sumsq, a.perimeter, a.bbox,
                 b.n, b.sums, b.sumsq, b.perimeter, b.bbox,
                 shared_edges, params.shape_weight, params.compactness_weight)


@dataclass
class SegmentGraph:
    labels: np.ndarray  # (h, w) int32, 0..k-1 in raster order of first pixel
    n: np.ndarray  # (k,)
    sums: np.ndarray  # (k, 3)
    sumsq: np.ndarray  # (k, 3)
    perimeter: np.ndarray  # (k,)
    bbox: np.ndarray  # (k, 4) row0, col0, row1, col1 inclusive
    adjacency: list[dict[int, int]]  # neighbour -> shared boundary length

    def __len__(self):
        return len(self.n)

    def stats(self, i: int) -> SegmentStats:
        return SegmentStats(int(self.n[i]), tuple(self.sums[i]), tuple(self.sumsq[i]),
                            int(self.perimeter[i]), tuple(int(v) for v in self.bbox[i]))


class _Merger:
    """Mutable merge state; segment ids are the raster index of their first pixel."""

    def __init__(self, pixels: np.ndarray, shape_w: float, cmpct_w: float):
        h, w = pixels.shape[:2]
        self.h, self.w = h, w
        self.shape_w, self.cmpct_w = shape_w, cmpct_w
        px = pixels.reshape(-1, 3).astype(float)
        npx = h * w
        self.n = [1] * npx
        self.s = [tuple(v) for v in px.tolist()]
        self.q = [tuple(v) for v in (px * px).tolist()]
        self.l = [4] * npx
        self.bb = [(i // w, i % w, i // w, i % w) for i in range(npx)]
        self.nbrs: list[dict[int, int] | None] = [dict() for _ in range(npx)]
        for i in range(npx):
            r, c = divmod(i, w)
            if c + 1 < w:
                self.nbrs[i][i + 1] = 1
                self.nbrs[i + 1][i] = 1
            if r + 1 < h:
                self.nbrs[i][i + w] = 1
                self.nbrs[i + w][i] = 1
        self.parent = np.arange(npx)
        self.version = [0] * npx
        self.alive = npx
        self.merges = 0
        self.heap: list[tuple[float, int, int, int, int]] = []
        for a in range(npx):
            for b in self.nbrs[a]:
                if a < b:
                    self.heap.append((self.cost(a, b), a, b, 0, 0))
        heapq.heapify(self.heap)

    def cost(self, a: int, b: int) -> float:
        return _cost(self.n[a], self.s[a], self.q[a], self.l[a], self.bb[a],
                     self.n[b], self.s[b], self.q[b], self.l[b], self.bb[b],
                     self.nbrs[a][b], self.shape_w, self.cmpct_w)

    def next_valid(self):
        """Cheapest live pair, or None; stale heap entries are discarded."""
        heap, ver, nbrs = self.heap, self.version, self.nbrs
        while heap:
            f, a, b, va, vb = heap[0]
            if nbrs[a] is not None and nbrs[b] is not None and ver[a] == va and ver[b] == vb:
                return f, a, b
            heapq.heappop(heap)
        return None

    def merge(self, a: int, b: int) -> None:
        heapq.heappop(self.heap)
        na, nb = self.n[a], self.n[b]
        sa, sb, qa, qb = self.s[a], self.s[b], self.q[a], self.q[b]
        shared = self.nbrs[a][b]
        self.n[a] = na + nb
        self.s[a] = (sa[0] + sb[0], sa[1] + sb[1], sa[2] + sb[2])
        self.q[a] = (qa[0] + qb[0], qa[1] + qb[1], qa[2] + qb[2])
        self.l[a] = self.l[a] + self.l[b] - 2 * shared
        ba, bbx = self.bb[a], self.bb[b]
        self.bb[a] = (min(ba[0], bbx[0]), min(ba[1], bbx[1]), max(ba[2], bbx[2]), max(ba[3], bbx[3]))
        na_map = self.nbrs[a]
        del na_map[b]
        for c, e in self.nbrs[b].items():
            if c == a:
                continue
            cm = self.nbrs[c]
            del cm[b]
            cm[a] = na_map[c] = na_map.get(c, 0) + e
        self.nbrs[b] = None
        self.parent[b] = a
        self.version[a] += 1
        self.alive -= 1
        self.merges += 1
        va = self.version[a]
        ver = self.version
        for c in na_map:
            lo, hi = (a, c) if a < c else (c, a)
            heapq.heappush(self.heap, (self.cost(a, c), lo, hi, ver[lo], ver[hi]))

    def label_image(self) -> np.ndarray:
        root = self.parent.copy()
        while True:
            nxt = root[root]
            if np.array_equal(nxt, root):
                break
            root = nxt
        return root.reshape(self.h, self.w)

    def snapshot(self) -> SegmentGraph:
        roots = [i for i, nb in enumerate(self.nbrs) if nb is not None]
        index = {r: k for k, r in enumerate(roots)}
        lut = np.zeros(self.h * self.w, dtype=np.int32)
        lut[roots] = np.arange(len(roots), dtype=np.int32)
        labels = lut[self.label_image()]
        return SegmentGraph(
            labels=labels,
            n=np.array([self.n[r] for r in roots], dtype=np.int64),
            sums=np.array([self.s[r] for r in roots], dtype=float).reshape(-1, 3),
            sumsq=np.array([self.q[r] for r in roots], dtype=float).reshape(-1, 3),
            perimeter=np.array([self.l[r] for r in roots], dtype=np.int64),
            bbox=np.array([self.bb[r] for r in roots], dtype=np.int64).reshape(-1, 4),
            adjacency=[{index[c]: e for c, e in self.nbrs[r].items()} for r in roots],
        )


def segment_multiscale(scene: Scene, scales: Iterable[float], shape_weight: float = 0.3,
                       compactness_weight: float = 0.8,
                       on_merge: Callable[[_Merger], None] | None = None) -> dict[float, SegmentGraph]:
    """Segment once, snapshotting the result for every scale in ``scales``.

    Identical to calling :func:`segment` per scale.
    """
    pending = sorted(set(float(s) for s in scales))
    for s in pending:
        SegmentationParams(s, shape_weight, compactness_weight)
    m = _Merger(np.asarray(scene.pixels), shape_weight, compactness_weight)
    out: dict[float, SegmentGraph] = {}
    while pending:
        top = m.next_valid()
        while pending and (top is None or top[0] >= pending[0] ** 2):
            out[pending.pop(0)] = m.snapshot()
        if not pending:
            break
        m.merge(top[1], top[2])
        if on_merge is not None:
            on_merge(m)
    return out


def segment(scene: Scene, params: SegmentationParams,
            on_merge: Callable[[_Merger], None] | None = None) -> SegmentGraph:
    """Multiresolution-style region merging of one scene."""
    return segment_multiscale(scene, [params.scale], params.shape_weight, params.compactness_weight,
                              on_merge)[float(params.scale)]


# ---------------------------------------------------------------------------
# Segment features
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SegmentFeatures:
    brightness: float
    mean_r: float
    mean_g: float
    mean_b: float
    std_r: float
    std_g: float
    std_b: float
    glcm_mean: float
    area: int

    def get(self, name: str) -> float:
        if name not in FEATURE_FIELDS:
            raise ObiaError(f"unknown segment feature {name!r}")
        return getattr(self, name)

    def vector(self, names: Sequence[str]) -> np.ndarray:
        return np.array([self.get(n) for n in names], dtype=float)


FEATURE_FIELDS = tuple(f.name for f in fields(SegmentFeatures))
KNN_FEATURES = FEATURE_FIELDS


def segment_glcm_means(gray: np.ndarray, labels: np.ndarray, k: int, levels: int = GLCM_LEVELS) -> np.ndarray:
    """Per-segment GLCM mean over horizontal pixel pairs that both lie in the segment.

    With symmetric accumulation the GLCM mean equals the average quantized
    level over pair endpoints.  Segments without any pair fall back to their
    mean quantized level.
    """
    q = quantize(gray, levels).astype(float)
    left, right = labels[:, :-1], labels[:, 1:]
    same = left == right
    seg = left[same]
    pair_sum = np.bincount(seg, weights=q[:, :-1][same] + q[:, 1:][same], minlength=k)
    pairs = np.bincount(seg, minlength=k)
    flat = labels.ravel()
    fallback = np.bincount(flat, weights=q.ravel(), minlength=k) / np.maximum(np.bincount(flat, minlength=k), 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(pairs > 0, pair_sum / (2 * np.maximum(pairs, 1)), fallback)


def segment_features(scene: Scene, sg: SegmentGraph) -> dict[int, SegmentFeatures]:
    if sg.labels.shape != scene.shape:
        raise ObiaError("segment graph does not match scene dimensions")
    n = sg.n.astype(float)
    means = sg.sums / n[:, None]
    var = np.maximum(sg.sumsq / n[:, None] - means ** 2, 0.0)
    stds = np.sqrt(var)
    glcm = segment_glcm_means(to_gray(scene), sg.labels, len(sg))
    out = {}
    for i in range(len(sg)):
        mr, mg, mb = (float(v) for v in means[i])
        out[i] = SegmentFeatures(
            brightness=(mr + mg + mb) / 3,
            mean_r=mr, mean_g=mg, mean_b=mb,
            std_r=float(stds[i, 0]), std_g=float(stds[i, 1]), std_b=float(stds[i, 2]),
            glcm_mean=float(glcm[i]),
            area=int(sg.n[i]),
        )
    return out


def feature_table(feats: dict[int, SegmentFeatures], names: Sequence[str] = KNN_FEATURES) -> np.ndarray:
    return np.array([feats[i].vector(names) for i in sorted(feats)], dtype=float).reshape(-1, len(names))


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    feature: str
    op: str
    threshold: float

    def __post_init__(self):
        if self.feature not in FEATURE_FIELDS:
            raise ObiaError(f"unknown segment feature {self.feature!r}")
        if self.op not in ("<", ">"):
            raise ObiaError(f"comparator must be '<' or '>', got {self.op!r}")

    def holds(self, value) -> bool | np.ndarray:
        return value < self.threshold if self.op == "<" else value > self.threshold

    def __str__(self):
        return f"{self.feature} {self.op} {self.threshold:g}"


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]

    def __post_init__(self):
        rules = tuple(r if isinstance(r, Rule) else Rule(*r) for r in self.rules)
        if not rules:
            raise ObiaError("a rule set needs at least one rule")
        object.__setattr__(self, "rules", rules)

    def to_dict(self) -> list[dict]:
        return [asdict(r) for r in self.rules]

    @classmethod
    def from_dict(cls, items: Sequence[dict]) -> "RuleSet":
        return cls(tuple(Rule(d["feature"], d["op"], float(d["threshold"])) for d in items))


REFERENCE_RULESET = RuleSet((
    Rule("brightness", "<", 80.87),
    Rule("mean_r", ">", 97.35),
    Rule("mean_g", "<", 81.18),
    Rule("mean_b", "<", 64.96),
    Rule("glcm_mean", "<", 80.54),
))


def rule_classify(features: SegmentFeatures, rules: RuleSet) -> str:
    """Target iff every rule holds (strict comparisons)."""
    return TARGET if all(r.holds(features.get(r.feature)) for r in rules.rules) else BACKGROUND


def rule_predict(X: np.ndarray, names: Sequence[str], rules: RuleSet) -> np.ndarray:
    """Vectorised rule_classify over a feature table; True = target."""
    out = np.ones(len(X), dtype=bool)
    for r in rules.rules:
        out &= r.holds(X[:, list(names).index(r.feature)])
    return out


def _standardize(train_X: np.ndarray, *others: np.ndarray):
    mu = train_X.mean(axis=0)
    sd = train_X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return [(a - mu) / sd for a in (train_X,) + others]


def knn_predict(train_X: np.ndarray, train_y: np.ndarray, query_X: np.ndarray, k: int = 1,
                exclude_self: bool = False) -> np.ndarray:
    """Majority vote of the k nearest standardized neighbours; ties go to target.

    Equal distances are ordered by training index.  ``exclude_self`` gives
    leave-one-out predictions when ``query_X`` is ``train_X``.
    """
    train_X = np.atleast_2d(np.asarray(train_X, dtype=float))
    train_y = np.asarray(train_y).astype(bool)
    n = len(train_X) - (1 if exclude_self else 0)
    if n < 1:
        raise ObiaError("empty training set")
    if not 1 <= k <= n:
        raise ObiaError(f"k must be in [1, {n}], got {k}")
    tz, qz = _standardize(train_X, np.atleast_2d(np.asarray(query_X, dtype=float)))
    d = ((qz[:, None, :] - tz[None, :, :]) ** 2).sum(axis=2)
    if exclude_self:
        np.fill_diagonal(d, np.inf)
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    votes = train_y[nearest].sum(axis=1)
    return 2 * votes >= k


def knn_classify(train: Sequence[tuple[SegmentFeatures, str]], query: SegmentFeatures, k: int = 1,
                 names: Sequence[str] = KNN_FEATURES) -> str:
    if not train:
        raise ObiaError("empty training set")
    X = np.array([f.vector(names) for f, _ in train])
    y = np.array([c == TARGET for _, c in train])
    return TARGET if knn_predict(X, y, query.vector(names)[None, :], k)[0] else BACKGROUND


def _f1(pred: np.ndarray, y: np.ndarray) -> float:
    tp = int((pred & y).sum())
    fp = int((pred & ~y).sum())
    fn = int((~pred & y).sum())
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0


def fit_rules(X: np.ndarray, y: np.ndarray, names: Sequence[str] = KNN_FEATURES) -> RuleSet:
    """Greedy conjunction of decision stumps maximizing training F1.

    Each round adds the single (feature, comparator, threshold) that most
    improves F1 of the conjunction; thresholds are midpoints between
    consecutive distinct values.  Stops when nothing improves.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(bool)
    P = int(y.sum())
    sel = np.ones(len(y), dtype=bool)
    best_f1 = _f1(sel, y)
    chosen: list[Rule] = []
    used: set[tuple[str, str]] = set()
    while True:
        cand = None
        for j, name in enumerate(names):
            v = X[:, j]
            uniq = np.unique(v[sel])
            if len(uniq) < 2:
                continue
            thr = (uniq[:-1] + uniq[1:]) / 2
            vs, ys = v[sel], y[sel]
            for op in ("<", ">"):
                if (name, op) in used:
                    continue
                keep = vs[None, :] < thr[:, None] if op == "<" else vs[None, :] > thr[:, None]
                tp = (keep & ys[None, :]).sum(axis=1)
                fp = (keep & ~ys[None, :]).sum(axis=1)
                f = np.where(tp > 0, 2 * tp / (2 * tp + fp + (P - tp)), 0.0)
                i = int(np.argmax(f))
                if cand is None or f[i] > cand[0]:
                    cand = (float(f[i]), name, op, float(thr[i]), j)
        if cand is None or (chosen and cand[0] <= best_f1):
            break
        if not chosen and cand[0] <= best_f1 and best_f1 > 0:
            # keep the trivially-true baseline rather than a worse first rule
            break
        f, name, op, t, j = cand
        rule = Rule(name, op, t)
        chosen.append(rule)
        used.add((name, op))
        sel &= rule.holds(X[:, j])
        best_f1 = f
    if not chosen:
        chosen.append(Rule("area", ">", 0.0))
    return RuleSet(tuple(chosen))


# ---------------------------------------------------------------------------
# Training samples and grid search
# ---------------------------------------------------------------------------


def class_masks(scene: Scene, polys: GroundTruthSet) -> tuple[np.ndarray, np.ndarray]:
    masks = {TARGET: np.zeros(scene.shape, dtype=bool), BACKGROUND: np.zeros(scene.shape, dtype=bool)}
    for p in polys.polygons:
        masks[p.class_label] |= polygon_pixel_mask(p, scene.geotransform, scene.shape)
    return masks[TARGET], masks[BACKGROUND]


def training_samples(sg: SegmentGraph, target_mask: np.ndarray, background_mask: np.ndarray):
    """Segment ids and labels (True = target) for segments >50% inside one class."""
    k = len(sg)
    flat = sg.labels.ravel()
    frac_t = np.bincount(flat, weights=target_mask.ravel(), minlength=k) / sg.n
    frac_b = np.bincount(flat, weights=background_mask.ravel(), minlength=k) / sg.n
    is_t = frac_t > 0.5
    is_b = frac_b > 0.5
    ids = np.flatnonzero(is_t | is_b)
    return ids, is_t[ids]


@dataclass(frozen=True)
class GridSpec:
    scales: tuple[float, ...]
    shapes: tuple[float, ...]
    compactnesses: tuple[float, ...]

    @staticmethod
    def _range(lo, hi, step, ndigits=6):
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return tuple(round(lo + i * step, ndigits) for i in range(n))

    @classmethod
    def from_ranges(cls, scale=(80, 160, 5), shape=(0.1, 0.9, 0.1), compactness=(0.1, 0.9, 0.1)) -> "GridSpec":
        return cls(cls._range(*scale), cls._range(*shape), cls._range(*compactness))

    @classmethod
    def reference(cls) -> "GridSpec":
        """Scale 80..160 step 5; shape and compactness 0.1..0.9 step 0.1."""
        return cls.from_ranges()

    def combinations(self) -> list[tuple[float, float, float]]:
        """Cartesian grid in enumeration order: scale outermost, compactness innermost."""
        return list(itertools.product(self.scales, self.shapes, self.compactnesses))

    def __len__(self):
        return len(self.scales) * len(self.shapes) * len(self.compactnesses)


@dataclass
class ComboScore:
    scale: float
    shape: float
    compactness: float
    f1: float  # nan when the samples do not contain both classes
    seconds: float
    n_segments: int
    n_target_samples: int
    n_background_samples: int


@dataclass
class GridSearchResult:
    best: SegmentationParams
    best_index: int
    method: str
    rules: RuleSet | None
    k: int
    log: list[ComboScore] = field(default_factory=list)


def score_segmentation(scene: Scene, sg: SegmentGraph, target_mask, background_mask,
                       method: str = "rules", k: int = 1):
    """Fit the chosen classifier on the segmentation's training samples and return (F1, rules, counts)."""
    ids, y = training_samples(sg, target_mask, background_mask)
    n_t, n_b = int(y.sum()), int((~y).sum())
    if n_t == 0 or n_b == 0:
        return float("nan"), None, n_t, n_b
    feats = segment_features(scene, sg)
    X = np.array([feats[int(i)].vector(KNN_FEATURES) for i in ids])
    if method == "rules":
        rules = fit_rules(X, y)
        return _f1(rule_predict(X, KNN_FEATURES, rules), y), rules, n_t, n_b
    if method == "knn":
        kk = min(k, len(y) - 1)
        if kk < 1:
            return float("nan"), None, n_t, n_b
        return _f1(knn_predict(X, y, X, kk, exclude_self=True), y), None, n_t, n_b
    raise ObiaError(f"unknown classification method {method!r}")


def _search_pair(args):
    scene, scales, shape, cmpct, tmask, bmask, method, k = args
    t0 = time.perf_counter()
    graphs = segment_multiscale(scene, scales, shape, cmpct)
    seg_seconds = (time.perf_counter() - t0) / max(len(graphs), 1)
    out = {}
    for s, sg in graphs.items():
        t1 = time.perf_counter()
        f, rules, n_t, n_b = score_segmentation(scene, sg, tmask, bmask, method, k)
        out[s] = (f, rules, n_t, n_b, len(sg), seg_seconds + time.perf_counter() - t1)
    return out


def grid_search(scene: Scene, train_polys: GroundTruthSet, grid: GridSpec | None = None,
                method: str = "rules", k: int = 1, threads: int = 1) -> GridSearchResult:
    """Exhaustive search over segmentation parameters, maximizing training F1.

    Ties go to the first combination in enumeration order.  Recorded seconds
    per combination are amortized over the scales sharing one merge run.
    """
    grid = grid or GridSpec.reference()
    if method not in ("rules", "knn"):
        raise ObiaError(f"unknown classification method {method!r}")
    tmask, bmask = class_masks(scene, train_polys)
    if not tmask.any() or not bmask.any():
        raise ObiaError("training polygons of both classes must fall inside the scene")
    pairs = list(itertools.product(grid.shapes, grid.compactnesses))
    jobs = [(scene, grid.scales, sh, cp, tmask, bmask, method, k) for sh, cp in pairs]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_search_pair, jobs))
    else:
        results = [_search_pair(j) for j in jobs]
    by_combo = {}
    for (sh, cp), res in zip(pairs, results):
        for s, v in res.items():
            by_combo[(float(s), sh, cp)] = v

    log: list[ComboScore] = []
    best_i, best_f, best_rules = -1, -1.0, None
    for i, (s, sh, cp) in enumerate(grid.combinations()):
        f, rules, n_t, n_b, nseg, secs = by_combo[(float(s), sh, cp)]
        log.append(ComboScore(s, sh, cp, f, secs, nseg, n_t, n_b))
        if not math.isnan(f) and f > best_f:
            best_i, best_f, best_rules = i, f, rules
    if best_i < 0:
        raise ObiaError("no segment overlaps the training polygons of both classes in any combination")
    b = log[best_i]
    return GridSearchResult(SegmentationParams(b.scale, b.shape, b.compactness), best_i, method, best_rules, k, log)


def classify_segments(scene: Scene, sg: SegmentGraph, rules: RuleSet | None = None,
                      knn_train: tuple[np.ndarray, np.ndarray] | None = None, k: int = 1) -> np.ndarray:
    """Boolean target flag per segment using a rule set or a (X, y) KNN training table."""
    feats = segment_features(scene, sg)
    X = feature_table(feats)
    if rules is not None:
        return rule_predict(X, KNN_FEATURES, rules)
    if knn_train is not None:
        return knn_predict(knn_train[0], knn_train[1], X, k)
    raise ObiaError("need a rule set or KNN training data")


def knn_training_table(scene: Scene, sg: SegmentGraph, train_polys: GroundTruthSet):
    tmask, bmask = class_masks(scene, train_polys)
    ids, y = training_samples(sg, tmask, bmask)
    if len(ids) == 0:
        raise ObiaError("no segment overlaps any training polygon")
    feats = segment_features(scene, sg)
    return np.array([feats[int(i)].vector(KNN_FEATURES) for i in ids]), y


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

FEATURE_TABLE_COLUMNS = ("id", "n", "meanR", "meanG", "meanB", "stdR", "stdG", "stdB",
                         "brightness", "glcm_mean", "area", "class")
GRID_LOG_COLUMNS = ("scale", "shape", "compactness", "F1", "seconds")


def save_label_png(sg: SegmentGraph, path: str | Path) -> None:
    """Segment labels as a 16-bit single-band PNG."""
    if len(sg) > 65536:
        raise ObiaError("more segments than a 16-bit raster can label")
    Image.fromarray(sg.labels.astype(np.uint16)).save(path)


def load_label_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im).astype(np.int32)


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def feature_table_csv(feats: dict[int, SegmentFeatures], classes: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEATURE_TABLE_COLUMNS)
    for i in sorted(feats):
        f = feats[i]
        w.writerow([i, f.area] + [_fmt(v) for v in (f.mean_r, f.mean_g, f.mean_b, f.std_r, f.std_g, f.std_b,
                                                     f.brightness, f.glcm_mean)]
                   + [f.area, "" if classes is None else classes[i]])
    return buf.getvalue()


def grid_log_csv(log: Sequence[ComboScore], include_timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_LOG_COLUMNS if include_timing else GRID_LOG_COLUMNS[:-1])
    for c in log:
        row = [f"{c.scale:g}", f"{c.shape:g}", f"{c.compactness:g}", "nan" if math.isnan(c.f1) else _fmt(c.f1)]
        if include_timing:
            row.append(f"{c.seconds:.3f}")
        w.writerow(row)
    return buf.getvalue()
