"""
Command-line entry point.

    shrubmap [--config FILE] [--seed N] [--threads N] COMMAND ...

Commands: ``synth``, ``train``, ``detect``, ``obia {segment,gridsearch,classify}``,
``eval`` and ``report``.  Parameters come from a TOML file whose sections
mirror the module configuration objects; command-line flags override them.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import augment, classifier, detect, evaluation, obia, preprocess, synth
from .dataset import TRAIN, VALIDATION, load_dataset, save_dataset
from .raster import (
    GroundTruthSet,
    RasterError,
    load_ground_truth,
    load_scene,
    save_ground_truth,
    save_scene,
)

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

logger = logging.getLogger("shrubmap")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

SCENE_FILE = "scene.png"
TRUTH_FILE = "ground_truth.geojson"
PATCH_DIR = "patches"
MODEL_FILE = "model.txt"
CURVE_FILE = "training_curve.csv"


class UsageError(Exception):
    """Bad command line or configuration (exit code 1)."""


class DataError(Exception):
    """Missing or malformed input data (exit code 2)."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class GridConfig:
    scale: tuple[float, float, float] = (80, 160, 5)
    shape: tuple[float, float, float] = (0.1, 0.9, 0.1)
    compactness: tuple[float, float, float] = (0.1, 0.9, 0.1)
    method: str = "rules"
    k: int = 1

    def __post_init__(self):
        for name in ("scale", "shape", "compactness"):
            lo, hi, step = getattr(self, name)
            if step <= 0 or hi < lo:
                raise ValueError(f"{name} must be [low, high, step] with step > 0 and high >= low")
        if self.method not in ("rules", "knn"):
            raise ValueError("method must be 'rules' or 'knn'")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def spec(self) -> obia.GridSpec:
        return obia.GridSpec.from_ranges(self.scale, self.shape, self.compactness)


@dataclasses.dataclass(frozen=True)
class PathsConfig:
    out: str = "."
    scene: str = ""
    ground_truth: str = ""
    dataset: str = ""
    model: str = ""
    classifier_command: str = ""


SECTIONS: dict[str, type] = {
    "preprocess": preprocess.PreprocessConfig,
    "augment": augment.AugmentConfig,
    "train": classifier.TrainConfig,
    "detect": detect.DetectionConfig,
    "segmentation": obia.SegmentationParams,
    "grid": GridConfig,
    "match": evaluation.MatchConfig,
    "synth": synth.SynthConfig,
    "paths": PathsConfig,
}
KEY_ALIASES = {"train": {"lambda": "lam"}}
SECTION_DEFAULTS = {"segmentation": {"scale": obia.REFERENCE_BEST_PARAMS[0]}}


def _build_section(name: str, table: dict) -> Any:
    cls = SECTIONS[name]
    if not isinstance(table, dict):
        raise UsageError(f"[{name}] must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    values = dict(SECTION_DEFAULTS.get(name, {}))
    for key, value in table.items():
        key = KEY_ALIASES.get(name, {}).get(key, key)
        if key not in known:
            raise UsageError(f"[{name}] unknown key {key!r}")
        values[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"[{name}] {exc}") from exc


@dataclasses.dataclass
class PipelineConfig:
    preprocess: preprocess.PreprocessConfig
    augment: augment.AugmentConfig
    train: classifier.TrainConfig
    detect: detect.DetectionConfig
    segmentation: obia.SegmentationParams
    grid: GridConfig
    match: evaluation.MatchConfig
    synth: synth.SynthConfig
    paths: PathsConfig

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        unknown = sorted(set(doc) - set(SECTIONS))
        if unknown:
            raise UsageError(f"unknown config section(s): {', '.join(unknown)}")
        return cls(**{name: _build_section(name, doc.get(name, {})) for name in SECTIONS})

    @classmethod
    def load(cls, path: str | None) -> "PipelineConfig":
        if not path:
            return cls.from_dict({})
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"config {path} is not valid TOML: {exc}") from exc
        return cls.from_dict(doc)

    def override(self, section: str, **changes) -> None:
        changes = {k: v for k, v in changes.items() if v is not None}
        if not changes:
            return
        try:
            setattr(self, section, dataclasses.replace(getattr(self, section), **changes))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"[{section}] {exc}") from exc


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _path(flag: str | None, configured: str, what: str) -> Path:
    value = flag or configured
    if not value:
        raise UsageError(f"no {what} given (flag or [paths] entry)")
    return Path(value)


def _out_dir(args, cfg: PipelineConfig) -> Path:
    out = Path(args.out or cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_geojson(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc


def _load_truth(path: Path) -> GroundTruthSet:
    return load_ground_truth(path)


def _classifier(args, cfg: PipelineConfig) -> classifier.Classifier:
    command = args.classifier_command or cfg.paths.classifier_command
    if command:
        return classifier.ExternalClassifier(command)
    model = _path(args.model, cfg.paths.model, "model file")
    if not model.exists():
        raise DataError(f"model file not found: {model}")
    return classifier.BuiltinClassifier.from_file(model)


def _write_report(path: Path, rows: Sequence[evaluation.ReportRow], fmt: str) -> None:
    path.write_text(evaluation.report(rows, fmt))


def _report_name(fmt: str) -> str:
    return f"report.{fmt}"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg: PipelineConfig) -> int:
    out = _out_dir(args, cfg)
    result = synth.generate(cfg.synth)
    save_scene(result.scene, out / SCENE_FILE)
    save_ground_truth(result.truth, out / TRUTH_FILE)
    save_dataset(result.patches, out / PATCH_DIR)
    logger.info("wrote %d blobs, %d ground-truth polygons, %d patches to %s",
                len(result.blobs), len(result.truth.polygons), len(result.patches), out)
    return EXIT_OK


def training_set(ds, aug_cfg: augment.AugmentConfig | None):
    """Augmented training split plus the untouched validation split."""
    tr, va = ds.subset(TRAIN), ds.subset(VALIDATION)
    if aug_cfg is not None and len(tr):
        tr = augment.expand_dataset(tr, aug_cfg)
    return tr.concat(va)


def cmd_train(args, cfg: PipelineConfig) -> int:
    out = _out_dir(args, cfg)
    ds = load_dataset(_path(args.dataset, cfg.paths.dataset, "patch dataset"))
    counts = ds.class_counts(TRAIN)
    missing = [c for c, n in counts.items() if n == 0]
    if missing:
        raise DataError(f"training split has no {' or '.join(missing)} patches")
    data = training_set(ds, None if args.no_augment else cfg.augment)
    if cfg.train.max_iterations == 0:
        logger.warning("max_iterations is 0: writing the untrained initial model")
    model = classifier.train(data, cfg.train)
    model_path = Path(args.model_out) if args.model_out else out / MODEL_FILE
    classifier.save_model(model.state, model.scaler, model_path)
    model.history.to_csv(out / CURVE_FILE)
    h = model.history
    logger.info("trained %d iterations on %d patches: train accuracy %.4f, validation accuracy %.4f",
                model.state.t, len(data), h.train_accuracy[-1], h.validation_accuracy[-1])
    return EXIT_OK


def _eval_row(label, dets, truth, cfg, scene, method, total, seconds):
    result = evaluation.match(dets, truth, cfg.match, scene.geotransform)
    return evaluation.ReportRow(label, result, method, total, seconds)


def cmd_detect(args, cfg: PipelineConfig) -> int:
    out = _out_dir(args, cfg)
    scene = load_scene(_path(args.scene, cfg.paths.scene, "scene image"))
    truth_path = args.truth or cfg.paths.ground_truth
    truth = _load_truth(Path(truth_path)) if truth_path else None
    clf = _classifier(args, cfg)
    dc = cfg.detect
    rows: list[evaluation.ReportRow] = []
    try:
        if args.mode == "candidates":
            t0 = time.perf_counter()
            res = detect.detect_with_candidates(scene, cfg.preprocess, clf, dc.probability_threshold)
            seconds = time.perf_counter() - t0
            _write_json(out / "detections.geojson", detect.detections_to_geojson(res.detections, scene.geotransform))
            logger.info("candidates: %d clusters, %d classifier calls, %d detections",
                        len(res.candidates), res.classifier_calls, len(res.detections))
            if truth is not None:
                rows.append(_eval_row("candidates", res.detections, truth, cfg, scene, "candidates",
                                      res.classifier_calls, seconds))
        else:
            scans = []
            for w in dc.window_sizes:
                if w > min(scene.width, scene.height):
                    raise DataError(f"window size {w} exceeds the scene ({scene.width}x{scene.height})")
                t0 = time.perf_counter()
                res = detect.detect_sliding(scene, w, clf, dc.stride_fraction, dc.probability_threshold)
                seconds = time.perf_counter() - t0
                scans.append((res.grid, res.scores))
                detect.save_heatmap_png(res.heatmap, out / f"heatmap_{w}.png")
                detect.save_heatmap_raw(res.heatmap, out / f"heatmap_{w}.raw")
                _write_json(out / f"detections_{w}.geojson",
                            detect.detections_to_geojson(res.detections, scene.geotransform))
                logger.info("window %d: %d windows, %d detections", w, res.classifier_calls, len(res.detections))
                if truth is not None:
                    rows.append(_eval_row(f"{w}x{w}", res.detections, truth, cfg, scene, "sliding",
                                          res.classifier_calls, seconds))
            if dc.fuse:
                hm = detect.assemble_heatmap(scene.shape, scans, dc.scale_fusion)
                dets = detect.extract_detections(detect.threshold_heatmap(hm, dc.probability_threshold), hm,
                                                 scene.geotransform)
                detect.save_heatmap_png(hm, out / "heatmap_fused.png")
                detect.save_heatmap_raw(hm, out / "heatmap_fused.raw")
                _write_json(out / "detections.geojson", detect.detections_to_geojson(dets, scene.geotransform))
                if truth is not None:
                    rows.append(_eval_row(f"fused-{dc.scale_fusion}", dets, truth, cfg, scene, "sliding",
                                          sum(len(g) for g, _ in scans), None))
    finally:
        if isinstance(clf, classifier.ExternalClassifier):
            clf.close()
    if rows:
        _write_report(out / _report_name(args.format), rows, args.format)
    return EXIT_OK


def _segment_outputs(out: Path, scene, sg, classes=None, prefix="segments") -> dict:
    feats = obia.segment_features(scene, sg)
    obia.save_label_png(sg, out / f"{prefix}.png")
    (out / f"{prefix}.csv").write_text(obia.feature_table_csv(feats, classes))
    return feats


def _load_rules(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{path}: expected a JSON object")
    return doc


def cmd_obia(args, cfg: PipelineConfig) -> int:
    out = _out_dir(args, cfg)
    scene = load_scene(_path(args.scene, cfg.paths.scene, "scene image"))
    if args.obia_command == "segment":
        sg = obia.segment(scene, cfg.segmentation)
        _segment_outputs(out, scene, sg)
        logger.info("%d segments", len(sg))
        return EXIT_OK

    if args.obia_command == "gridsearch":
        train_polys = _load_truth(_path(args.train_truth, cfg.paths.ground_truth, "training polygons"))
        g = cfg.grid
        grid = g.spec()
        logger.info("grid search over %d combinations (%d scales x %d shapes x %d compactness)",
                    len(grid), len(grid.scales), len(grid.shapes), len(grid.compactnesses))
        res = obia.grid_search(scene, train_polys, grid, g.method, g.k, args.threads)
        (out / "gridsearch_log.csv").write_text(obia.grid_log_csv(res.log))
        best = res.log[res.best_index]
        _write_json(out / "best_params.json", {
            "scale": best.scale, "shape_weight": best.shape, "compactness_weight": best.compactness,
            "f1": best.f1, "combinations": len(res.log), "method": res.method, "k": res.k,
            "rules": res.rules.to_dict() if res.rules else None,
        })
        logger.info("best: scale %g, shape %g, compactness %g (training F1 %.4f)",
                    best.scale, best.shape, best.compactness, best.f1)
        return EXIT_OK

    # classify
    params, rules, method, k = cfg.segmentation, obia.REFERENCE_RULESET, "rules", cfg.grid.k
    if args.params:
        doc = _load_rules(Path(args.params))
        try:
            params = obia.SegmentationParams(float(doc["scale"]), float(doc["shape_weight"]),
                                             float(doc["compactness_weight"]))
            method = doc.get("method", "rules")
            k = int(doc.get("k", k))
            if method == "rules":
                rules = obia.RuleSet.from_dict(doc["rules"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{args.params}: malformed parameter file: {exc}") from exc
    sg = obia.segment(scene, params)
    if method == "knn":
        train_polys = _load_truth(_path(args.train_truth, cfg.paths.ground_truth, "training polygons"))
        flags = obia.classify_segments(scene, sg, knn_train=obia.knn_training_table(scene, sg, train_polys), k=k)
    else:
        flags = obia.classify_segments(scene, sg, rules=rules)
    classes = ["target" if f else "background" for f in flags]
    _segment_outputs(out, scene, sg, classes)
    mask = flags[sg.labels]
    cs = preprocess.connected_components(mask, 8)
    dets = detect.component_detections(cs, scene.geotransform, lambda cid, rows, cols: 1.0)
    _write_json(out / "detections.geojson", detect.detections_to_geojson(dets, scene.geotransform))
    logger.info("%d of %d segments classified as target, %d detections", int(flags.sum()), len(sg), len(dets))
    truth_path = args.truth
    if truth_path:
        truth = _load_truth(Path(truth_path))
        row = _eval_row("obia", dets, truth, cfg, scene, f"obia-{method}", len(sg), None)
        _write_report(out / _report_name(args.format), [row], args.format)
    return EXIT_OK


def _bbox_disjoint(dets, truth: GroundTruthSet) -> bool:
    if not dets or not truth.targets:
        return False
    xs = [d.map_centroid[0] for d in dets]
    ys = [d.map_centroid[1] for d in dets]
    b = np.array([p.bounds for p in truth.targets])
    gx0, gy0, gx1, gy1 = b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max()
    return max(xs) < gx0 or min(xs) > gx1 or max(ys) < gy0 or min(ys) > gy1


def cmd_eval(args, cfg: PipelineConfig) -> int:
    doc = _load_geojson(Path(args.detections))
    try:
        dets = detect.detections_from_geojson(doc)
    except detect.DetectionError as exc:
        raise DataError(str(exc)) from exc
    truth = _load_truth(_path(args.truth, cfg.paths.ground_truth, "ground truth"))
    if _bbox_disjoint(dets, truth):
        logger.warning("detections and ground truth do not overlap: check that they share a coordinate frame")
    gt = None
    if cfg.match.criterion == evaluation.IOU:
        gt = load_scene(_path(args.scene, cfg.paths.scene, "scene image (IoU matching)")).geotransform
    result = evaluation.match(dets, truth, cfg.match, gt)
    row = evaluation.ReportRow(args.label, result, cfg.match.criterion, len(dets))
    text = evaluation.report([row], args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args, cfg: PipelineConfig) -> int:
    rows: list[evaluation.ReportRow] = []
    if args.published_tables:
        from .tables import published_report_rows
        rows += published_report_rows()
    for path in args.inputs:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        for rec in evaluation.read_report_csv(text):
            try:
                res = evaluation.EvaluationResult.from_counts(int(rec["tp"]), int(rec["fp"]), int(rec["fn"]))
                total = int(rec["total"]) if rec.get("total") else None
                seconds = float(rec["seconds"]) if rec.get("seconds") else None
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: malformed report row: {exc}") from exc
            rows.append(evaluation.ReportRow(rec["label"], res, rec.get("method", ""), total, seconds))
    if not rows:
        raise UsageError("nothing to report: give report CSV files or --published-tables")
    text = evaluation.report(rows, args.format)
    if args.strip_timing and args.format == "csv":
        text = evaluation.strip_timing(text)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty window size list")
    return values


GLOBAL_DEFAULTS = {"config": None, "seed": None, "threads": lambda: os.cpu_count() or 1,
                   "format": "csv", "verbose": False}


def _common_options() -> argparse.ArgumentParser:
    """Global options, accepted before or after the command name."""
    c = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    c.add_argument("--config", help="TOML configuration file")
    c.add_argument("--seed", type=int, help="override every rng_seed in the configuration")
    c.add_argument("--threads", type=int, help="worker processes for parallel stages (default: all cores)")
    c.add_argument("--format", choices=("csv", "json"), help="report format (default csv)")
    c.add_argument("-v", "--verbose", action="store_true")
    return c


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    p = _Parser(prog="shrubmap", description="Shrub detection in aerial RGB scenes.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    s = sub.add_parser("synth", help="generate a synthetic scene, ground truth and patch dataset")
    s.add_argument("--out")

    t = sub.add_parser("train", help="train the built-in patch classifier")
    t.add_argument("--dataset")
    t.add_argument("--out")
    t.add_argument("--model-out", help="model path (default OUT/model.txt)")
    t.add_argument("--no-augment", action="store_true", help="train on the raw split only")

    d = sub.add_parser("detect", help="run sliding-window or candidate detection")
    d.add_argument("--mode", choices=("sliding", "candidates"), default="sliding")
    d.add_argument("--scene")
    d.add_argument("--model")
    d.add_argument("--classifier-command", help="external classifier process instead of a model file")
    d.add_argument("--truth", help="ground truth GeoJSON; enables the report")
    d.add_argument("--out")
    d.add_argument("--stride-fraction", type=float)
    d.add_argument("--window-sizes", type=_int_list, help="comma-separated window sides in pixels")
    d.add_argument("--fusion", choices=detect.FUSION_RULES, help="fuse all window sizes with this rule")
    d.add_argument("--threshold", type=float)

    o = sub.add_parser("obia", help="object-based baseline")
    osub = o.add_subparsers(dest="obia_command", required=True, parser_class=_Parser)
    _oadd = osub.add_parser
    osub.add_parser = lambda name, **kw: _oadd(name, parents=[common], **kw)
    for name, help_ in (("segment", "segment a scene"),
                        ("gridsearch", "search segmentation parameters"),
                        ("classify", "segment and classify a scene")):
        q = osub.add_parser(name, help=help_)
        q.add_argument("--scene")
        q.add_argument("--out")
        if name in ("gridsearch", "classify"):
            q.add_argument("--train-truth", help="training polygons GeoJSON")
        if name == "classify":
            q.add_argument("--params", help="best_params.json from gridsearch (default: reference rule set)")
            q.add_argument("--truth", help="ground truth GeoJSON; enables the report")

    e = sub.add_parser("eval", help="score detections against ground truth")
    e.add_argument("--detections", required=True)
    e.add_argument("--truth")
    e.add_argument("--scene", help="scene image, needed for IoU matching")
    e.add_argument("--label", default="detections")
    e.add_argument("--out", help="output file (default: stdout)")

    r = sub.add_parser("report", help="merge report CSVs into one table")
    r.add_argument("inputs", nargs="*")
    r.add_argument("--published-tables", action="store_true", help="include the bundled reference counts")
    r.add_argument("--strip-timing", action="store_true")
    r.add_argument("--out")
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "detect": cmd_detect,
            "obia": cmd_obia, "eval": cmd_eval, "report": cmd_report}


def _apply_flags(args, cfg: PipelineConfig) -> None:
    if args.seed is not None:
        for section in ("synth", "augment", "train"):
            cfg.override(section, rng_seed=args.seed)
    if args.threads is not None and args.threads < 1:
        raise UsageError("--threads must be >= 1")
    if args.command == "detect":
        cfg.override("detect", stride_fraction=args.stride_fraction, window_sizes=args.window_sizes,
                     probability_threshold=args.threshold)
        if args.fusion:
            cfg.override("detect", scale_fusion=args.fusion, fuse=True)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    for name, default in GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default() if callable(default) else default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config)
        _apply_flags(args, cfg)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, RasterError, synth.SynthError, obia.ObiaError, classifier.ClassifierError,
            detect.DetectionError, OSError, ValueError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - stable exit code for anything unexpected
        logger.exception("internal error")
        print(f"internal error: {args.command}: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
