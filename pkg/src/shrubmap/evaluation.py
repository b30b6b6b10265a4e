"""
Accuracy assessment: one-to-one matching of detections to ground-truth
individuals, precision/recall/F1, and tabular reports.

Undefined ratios (zero denominators) are returned as ``None`` and written as
``n/a``; they are never coerced to 0 or 1.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Sequence

import numpy as np

from .raster import GeoTransform, GroundTruthSet, map_to_pixel, polygon_pixel_mask

CENTROID = "centroid-in-polygon"
IOU = "iou"
NA = "n/a"

REPORT_COLUMNS = ("label", "method", "total", "tp", "fp", "fn",
                  "precision_pct", "recall_pct", "f1_pct", "seconds")
TIMING_COLUMNS = ("seconds",)


@dataclass(frozen=True)
class MatchConfig:
    criterion: str = CENTROID
    iou_threshold: float = 0.5

    def __post_init__(self):
        if self.criterion not in (CENTROID, IOU):
            raise ValueError(f"criterion must be {CENTROID!r} or {IOU!r}")
        if not 0 < self.iou_threshold <= 1:
            raise ValueError("iou_threshold must be in (0, 1]")


def precision(tp: int, fp: int) -> float | None:
    return tp / (tp + fp) if tp + fp > 0 else None


def recall(tp: int, fn: int) -> float | None:
    return tp / (tp + fn) if tp + fn > 0 else None


def f1(p: float | None, r: float | None) -> float | None:
    if p is None or r is None:
        return None
    if p + r == 0:
        return None
    return 2 * p * r / (p + r)


@dataclass
class EvaluationResult:
    tp: int
    fp: int
    fn: int
    # (detection index, matched polygon id or None), in detection order
    matches: list[tuple[int, str | None]] = field(default_factory=list)
    seconds: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "EvaluationResult":
        return cls(int(tp), int(fp), int(fn))

    @property
    def precision(self):
        return precision(self.tp, self.fp)

    @property
    def recall(self):
        return recall(self.tp, self.fn)

    @property
    def f1(self):
        return f1(self.precision, self.recall)

    def exact(self) -> dict[str, Fraction | None]:
        """Metrics as exact fractions of the counts."""
        p = Fraction(self.tp, self.tp + self.fp) if self.tp + self.fp else None
        r = Fraction(self.tp, self.tp + self.fn) if self.tp + self.fn else None
        if p is None or r is None or p + r == 0:
            f = None
        else:
            f = Fraction(2 * self.tp, 2 * self.tp + self.fp + self.fn)
        return {"precision": p, "recall": r, "f1": f}


def _iou(det, poly_mask_rows, poly_mask_cols) -> float:
    a = set(zip(det.rows.tolist(), det.cols.tolist()))
    b = set(zip(poly_mask_rows.tolist(), poly_mask_cols.tolist()))
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def match(dets: Sequence, gts: GroundTruthSet, cfg: MatchConfig = MatchConfig(),
          geotransform: GeoTransform | None = None) -> EvaluationResult:
    """Greedy one-to-one matching in descending confidence (ties by index).

    Only target-class polygons are matched.  A detection claims the first
    unmatched polygon (in file order) that contains its map centroid, or,
    under the IoU criterion, the unmatched polygon of highest pixel IoU
    provided it reaches ``cfg.iou_threshold``.
    """
    targets = gts.targets
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    taken = [False] * len(targets)
    assigned: dict[int, str | None] = {}

    poly_pixels = None
    if cfg.criterion == IOU:
        if geotransform is None:
            raise ValueError("IoU matching needs the scene geotransform")
        poly_pixels = []
        for p in targets:
            x0, y0, x1, y1 = p.bounds
            cs, rs = map_to_pixel(geotransform, np.array([x0, x1, x0, x1]), np.array([y0, y0, y1, y1]))
            h = int(math.ceil(rs.max())) + 2
            w = int(math.ceil(cs.max())) + 2
            m = polygon_pixel_mask(p, geotransform, (max(h, 1), max(w, 1)))
            poly_pixels.append(np.nonzero(m))

    for i in order:
        d = dets[i]
        hit = None
        if cfg.criterion == CENTROID:
            x, y = d.map_centroid
            for j, p in enumerate(targets):
                if not taken[j] and p.contains(x, y):
                    hit = j
                    break
        else:
            best = -1.0
            for j, (rr, cc) in enumerate(poly_pixels):
                if taken[j]:
                    continue
                v = _iou(d, rr, cc)
                if v >= cfg.iou_threshold and v > best:
                    best, hit = v, j
        if hit is not None:
            taken[hit] = True
            assigned[i] = targets[hit].id
        else:
            assigned[i] = None

    tp = sum(taken)
    return EvaluationResult(
        tp=tp,
        fp=len(dets) - tp,
        fn=len(targets) - tp,
        matches=[(i, assigned[i]) for i in range(len(dets))],
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def percent(value: Fraction | float | None) -> str:
    """Percentage rounded half-up to two decimals, or ``n/a``."""
    if value is None:
        return NA
    if isinstance(value, float):
        value = Fraction(value)
    d = Decimal(value.numerator) * 100 / Decimal(value.denominator)
    return str(d.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class ReportRow:
    label: str
    result: EvaluationResult
    method: str = ""
    total: int | None = None  # windows or candidates scored
    seconds: float | None = None

    def as_dict(self) -> dict:
        ex = self.result.exact()
        return {
            "label": self.label,
            "method": self.method,
            "total": "" if self.total is None else self.total,
            "tp": self.result.tp,
            "fp": self.result.fp,
            "fn": self.result.fn,
            "precision_pct": percent(ex["precision"]),
            "recall_pct": percent(ex["recall"]),
            "f1_pct": percent(ex["f1"]),
            "seconds": "" if self.seconds is None else f"{self.seconds:.3f}",
        }


def report_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.as_dict())
    return buf.getvalue()


def report_json(rows: Sequence[ReportRow]) -> str:
    doc = {}
    for r in rows:
        d = r.as_dict()
        label = d.pop("label")
        for k in ("precision_pct", "recall_pct", "f1_pct"):
            d[k] = None if d[k] == NA else float(d[k])
        d["total"] = None if d["total"] == "" else d["total"]
        d["seconds"] = None if d["seconds"] == "" else float(d["seconds"])
        doc[label] = d
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def report(rows: Sequence[ReportRow], fmt: str = "csv") -> str:
    if fmt == "csv":
        return report_csv(rows)
    if fmt == "json":
        return report_json(rows)
    raise ValueError(f"unknown report format {fmt!r}")


def read_report_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def strip_timing(text: str) -> str:
    """Drop timing columns from a CSV report so outputs can be diffed."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return text
    keep = [i for i, name in enumerate(rows[0]) if name not in TIMING_COLUMNS]
    return "\n".join(",".join(r[i] for i in keep) for r in rows) + "\n"
