"""Published detection counts bundled with the package, for metric cross-checks."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources

from .evaluation import EvaluationResult, ReportRow


@dataclass(frozen=True)
class PublishedRow:
    table: int
    row: str
    tp: int
    fp: int
    fn: int
    precision_pct: str
    recall_pct: str
    f1_pct: str
    # non-empty when a printed value disagrees with its own counts
    flag: str = ""

    @property
    def result(self) -> EvaluationResult:
        return EvaluationResult.from_counts(self.tp, self.fp, self.fn)


def published_rows() -> list[PublishedRow]:
    text = resources.files("shrubmap").joinpath("data/published_tables.csv").read_text()
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        out.append(PublishedRow(int(rec["table"]), rec["row"], int(rec["tp"]), int(rec["fp"]), int(rec["fn"]),
                                rec["precision_pct"], rec["recall_pct"], rec["f1_pct"], rec["flag"] or ""))
    return out


def published_report_rows() -> list[ReportRow]:
    """Report rows recomputed from the bundled counts."""
    return [ReportRow(f"table{r.table}:{r.row}", r.result, "published counts", None, None) for r in published_rows()]
