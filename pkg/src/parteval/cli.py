"""Command-line entry points: plan, eval, otdd, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .core import ClassMode, CoveragePolicy, EvaluationConfig
from .errors import EngineError, ManifestError, PlanError, ProtocolError
from .evaluate import evaluate_dataset, resolve_accuracy_reference
from .otdd import otdd_divergence
from .planner import DEFAULT_BUDGET, enumerate_plan
from .protocol import load_dataset, read_cloud, read_manifest, write_manifest
from .report import (
    MetricReport,
    OtddReport,
    render_eval_csv_from_dict,
    render_eval_json,
    render_eval_markdown_from_dict,
    render_otdd_csv,
    render_otdd_json,
)

_CONFIG_KEYS = {
    "thresholds", "aggregation", "class_mode", "score_fn",
    "accuracy_reference", "coverage", "model_id",
}


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"cannot read config file: {exc}", path=path) from exc
    if not isinstance(obj, dict):
        raise ProtocolError("config file must hold a JSON object", path=path)
    unknown = set(obj) - _CONFIG_KEYS
    if unknown:
        raise ProtocolError(f"unknown config keys {sorted(unknown)}", path=path)
    return obj


def _parse_thresholds(raw) -> tuple[float, ...]:
    if isinstance(raw, str):
        try:
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
        except ValueError:
            raise ProtocolError(f"malformed thresholds {raw!r}") from None
    return tuple(float(t) for t in raw)


def cmd_plan(args) -> int:
    manifest = read_manifest(args.manifest)
    budget = args.budget
    over = [img.image_id for img in manifest.images if len(img.part_ids) > budget]
    if over:
        raise PlanError(
            f"budget {budget} below part count for {len(over)} image(s): {', '.join(over)}"
        )
    for img in manifest.images:
        plan = enumerate_plan(img.part_ids, budget, image_id=img.image_id)
        img.plan = plan.subsets
    manifest.plan_budget = budget
    write_manifest(args.manifest, manifest)
    print(f"planned {len(manifest.images)} image(s) at budget {budget}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config_file(args.config)

    def setting(name, flag_value, default):
        if flag_value is not None:
            return flag_value
        return cfg.get(name, default)

    thresholds = _parse_thresholds(setting("thresholds", args.thresholds, EvaluationConfig().thresholds))
    aggregation = setting("aggregation", args.aggregation, "sum")
    class_mode = setting("class_mode", args.class_mode, "predicted")
    score_fn = setting("score_fn", args.score_fn, "softmax")
    accuracy_reference = setting("accuracy_reference", args.accuracy_reference, "auto")
    coverage = setting("coverage", args.coverage, "skip-missing")

    dataset = load_dataset(args.manifest)
    provenance = dataset.manifest.provenance or {}
    model_id = setting("model_id", args.model_id, None)
    if model_id is None:
        model_id = provenance.get("model_id") if isinstance(provenance.get("model_id"), str) else None
    if model_id is None:
        model_id = dataset.dataset_name

    modes = [ClassMode.PREDICTED, ClassMode.TARGET] if class_mode == "both" else [ClassMode(class_mode)]
    results = []
    for mode in modes:
        config = EvaluationConfig(
            thresholds=thresholds,
            aggregation=aggregation,
            class_mode=mode,
            score_fn=score_fn,
            accuracy_reference=resolve_accuracy_reference(accuracy_reference, mode),
            coverage_policy=coverage,
        )
        results.extend(evaluate_dataset(dataset, config, workers=args.workers))

    resolved = {
        "thresholds": list(thresholds),
        "aggregation": str(EvaluationConfig(aggregation=aggregation).aggregation.value),
        "class_modes": [m.value for m in modes],
        "score_fn": str(EvaluationConfig(score_fn=score_fn).score_fn.value),
        "accuracy_reference": accuracy_reference,
        "coverage": str(CoveragePolicy(coverage).value),
    }
    report = MetricReport(
        dataset_name=dataset.dataset_name,
        model_id=model_id,
        class_count=dataset.class_count,
        config=resolved,
        results=results,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    obj = report.to_dict()
    (out / "report.json").write_text(render_eval_json(report))
    (out / "report.csv").write_text(render_eval_csv_from_dict(obj))
    print(f"wrote {out / 'report.json'} and {out / 'report.csv'} ({len(results)} result rows)")
    return 0


def cmd_otdd(args) -> int:
    reference = read_cloud(args.reference)
    rows = []
    for path in args.compared:
        compared = read_cloud(path)
        rows.append(
            otdd_divergence(
                reference,
                compared,
                epsilon=args.epsilon,
                max_iter=args.max_iter,
                tol=args.tol,
            )
        )
    report = OtddReport(reference_name=reference.name, rows=rows)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "otdd.json").write_text(render_otdd_json(report))
        (out / "otdd.csv").write_text(render_otdd_csv(report))
        print(f"wrote {out / 'otdd.json'} and {out / 'otdd.csv'}")
    else:
        sys.stdout.write(render_otdd_csv(report))
    return 0


def cmd_report(args) -> int:
    try:
        obj = json.loads(Path(args.json).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"cannot read report JSON: {exc}", path=args.json) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wrote = []
    if args.format in ("csv", "both"):
        (out / "report.csv").write_text(render_eval_csv_from_dict(obj))
        wrote.append(str(out / "report.csv"))
    if args.format in ("md", "both"):
        (out / "report.md").write_text(render_eval_markdown_from_dict(obj))
        wrote.append(str(out / "report.md"))
    print("wrote " + ", ".join(wrote))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parteval",
        description="Part-level faithfulness evaluation for vision-model explanations",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="write perturbation plans into a manifest")
    p_plan.add_argument("--manifest", required=True)
    p_plan.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p_plan.set_defaults(fn=cmd_plan)

    p_eval = sub.add_parser("eval", help="compute metrics from a fully populated manifest")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--out", required=True, help="directory for report.json / report.csv")
    p_eval.add_argument("--config", help="JSON config file; flags override its entries")
    p_eval.add_argument("--model-id")
    p_eval.add_argument("--thresholds", help="comma-separated fractions in (0,1)")
    p_eval.add_argument("--aggregation", choices=["sum", "mean"])
    p_eval.add_argument("--class-mode", choices=["predicted", "target", "both"])
    p_eval.add_argument("--score-fn", choices=["softmax", "logit"])
    p_eval.add_argument(
        "--accuracy-reference", choices=["auto", "original-prediction", "ground-truth"]
    )
    p_eval.add_argument("--coverage", choices=["skip-missing", "fail-missing"])
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.set_defaults(fn=cmd_eval)

    p_otdd = sub.add_parser("otdd", help="dataset distances between embedding clouds")
    p_otdd.add_argument("--reference", required=True, help="reference embeddings JSON")
    p_otdd.add_argument("--compared", nargs="+", required=True, help="compared embeddings JSON")
    p_otdd.add_argument("--epsilon", type=float, default=None, help="default: 0.05 x mean cost")
    p_otdd.add_argument("--max-iter", type=int, default=2000)
    p_otdd.add_argument("--tol", type=float, default=1e-7)
    p_otdd.add_argument("--out", help="directory for otdd.json / otdd.csv (default: stdout)")
    p_otdd.set_defaults(fn=cmd_otdd)

    p_report = sub.add_parser("report", help="re-render a report JSON as CSV / markdown")
    p_report.add_argument("--json", required=True)
    p_report.add_argument("--out", required=True)
    p_report.add_argument("--format", choices=["csv", "md", "both"], default="both")
    p_report.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ManifestError as exc:
        print("manifest validation failed:", file=sys.stderr)
        for item in exc.violations:
            print(f"  - {item}", file=sys.stderr)
        return 1
    except (EngineError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
