"""Report containers and deterministic JSON / CSV / markdown rendering."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Sequence

from .core import ClassMode
from .errors import ProtocolError
from .metrics import MetricId, MetricResult
from .otdd import OtddResult

REPORT_SCHEMA_VERSION = 1
EVAL_CSV_HEADER = ("model_id", "metric", "class_mode", "method_id", "value", "n_evaluated", "n_skipped")
OTDD_CSV_HEADER = ("reference", "dataset", "otdd", "epsilon", "max_iter", "tol", "converged")


def format_fixed2(value: float) -> str:
    """Two decimals, round half up — table precision like 71.235 -> '71.24'."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class MetricReport:
    dataset_name: str
    model_id: str
    class_count: int
    config: dict[str, Any]
    results: list[MetricResult] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        rows = []
        for r in self.results:
            row: dict[str, Any] = {
                "model_id": self.model_id,
                "metric": r.metric_id.value,
                "class_mode": r.class_mode.value,
                "method_id": r.method_id,
                "value": r.value,
                "n_evaluated": r.n_evaluated,
                "n_skipped": r.n_skipped,
            }
            if r.per_threshold is not None:
                row["per_threshold"] = {repr(float(t)): v for t, v in sorted(r.per_threshold.items())}
            if r.per_level is not None:
                row["per_level"] = [[level, acc] for level, acc in r.per_level]
            rows.append(row)
        return {
            "report_schema_version": REPORT_SCHEMA_VERSION,
            "dataset_name": self.dataset_name,
            "model_id": self.model_id,
            "class_count": self.class_count,
            "config": self.config,
            "results": rows,
        }


def render_eval_json(report: MetricReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def _rows_from_dict(obj: dict[str, Any]) -> list[dict[str, Any]]:
    rows = obj.get("results")
    if not isinstance(rows, list):
        raise ProtocolError("report JSON lacks a 'results' list")
    return rows


def render_eval_csv_from_dict(obj: dict[str, Any]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(EVAL_CSV_HEADER)
    for row in _rows_from_dict(obj):
        writer.writerow(
            [
                row["model_id"],
                row["metric"],
                row["class_mode"],
                row["method_id"],
                format_fixed2(row["value"]),
                row["n_evaluated"],
                row["n_skipped"],
            ]
        )
    return out.getvalue()


def render_eval_csv(report: MetricReport) -> str:
    return render_eval_csv_from_dict(report.to_dict())


def render_eval_markdown_from_dict(obj: dict[str, Any]) -> str:
    lines = [
        "| " + " | ".join(EVAL_CSV_HEADER) + " |",
        "|" + "|".join(["---"] * len(EVAL_CSV_HEADER)) + "|",
    ]
    for row in _rows_from_dict(obj):
        lines.append(
            "| "
            + " | ".join(
                str(x)
                for x in (
                    row["model_id"],
                    row["metric"],
                    row["class_mode"],
                    row["method_id"],
                    format_fixed2(row["value"]),
                    row["n_evaluated"],
                    row["n_skipped"],
                )
            )
            + " |"
        )
    return "\n".join(lines) + "\n"


@dataclass
class OtddReport:
    reference_name: str
    rows: list[OtddResult] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        entries = []
        for r in self.rows:
            compared = r.target if r.source == self.reference_name else r.source
            entries.append(
                {
                    "reference": self.reference_name,
                    "dataset": compared,
                    "otdd": r.value,
                    "epsilon": r.epsilon,
                    "max_iter": r.max_iter,
                    "tol": r.tol,
                    "converged": r.converged,
                }
            )
        return {"report_schema_version": REPORT_SCHEMA_VERSION, "distances": entries}


def render_otdd_json(report: OtddReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def render_otdd_csv(report: OtddReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(OTDD_CSV_HEADER)
    for entry in report.to_dict()["distances"]:
        writer.writerow(
            [
                entry["reference"],
                entry["dataset"],
                format_fixed2(entry["otdd"]),
                repr(entry["epsilon"]),
                entry["max_iter"],
                repr(entry["tol"]),
                str(entry["converged"]).lower(),
            ]
        )
    return out.getvalue()


def metric_results_from_dict(obj: dict[str, Any]) -> list[MetricResult]:
    """Rebuild typed results from a report JSON object (used by re-rendering)."""
    results = []
    for row in _rows_from_dict(obj):
        per_threshold = row.get("per_threshold")
        per_level = row.get("per_level")
        results.append(
            MetricResult(
                metric_id=MetricId(row["metric"]),
                method_id=row["method_id"],
                class_mode=ClassMode(row["class_mode"]),
                value=float(row["value"]),
                n_evaluated=int(row["n_evaluated"]),
                n_skipped=int(row["n_skipped"]),
                per_threshold={float(k): float(v) for k, v in per_threshold.items()} if per_threshold else None,
                per_level=tuple((float(l), float(a)) for l, a in per_level) if per_level else None,
            )
        )
    return results
