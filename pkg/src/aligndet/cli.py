"""Command-line driver for the adaptation pipeline.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dataio, evaluation, pipeline
from .dataio import RunConfig, canonical_json, config_echo, load_config
from .datasets import Dataset
from .detection import score_proposals
from .errors import DataError, NumericalError

log = logging.getLogger("aligndet")

AP_CONVENTION = "all-points interpolation"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> _Parser:
    parser = _Parser(
        prog="aligndet",
        description=(
            "Subspace-alignment domain adaptation for object detectors "
            "operating on precomputed proposal features."
        ),
    )
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument(
        "--log-level",
        default="info",
        choices=["debug", "info", "warning", "error"],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic datasets")
    p = sub.add_parser("train", parents=[common], help="train initial detectors")
    p.add_argument("--source", required=True, help="source manifest path")
    p = sub.add_parser("detect", parents=[common], help="run detectors on a dataset")
    p.add_argument("--dataset", required=True, help="manifest path")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--detectors", help="raw detector bundle")
    group.add_argument("--states", help="adaptation state bundle")
    p = sub.add_parser("adapt", parents=[common], help="run subspace adaptation")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p = sub.add_parser("evaluate", parents=[common], help="AP/mAP report")
    p.add_argument("--detections", required=True, help="detections CSV")
    p.add_argument("--dataset", required=True, help="labeled manifest path")
    p = sub.add_parser("analyze", parents=[common], help="similarity + histograms")
    p.add_argument("--states", required=True)
    p.add_argument("--detections", help="optional detections CSV for a histogram")
    sub.add_parser("pipeline", parents=[common], help="full end-to-end run")
    return parser


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _initial_score_histogram(dataset: Dataset, detectors, cfg: RunConfig):
    scores = []
    for det in detectors.values():
        for img in dataset.images:
            scores.append(score_proposals(det, img.features, frame="raw"))
    flat = np.concatenate(scores) if scores else np.zeros(0)
    return evaluation.score_histogram(flat, cfg.hist_bins, (cfg.hist_lo, cfg.hist_hi))


def _write_histogram(out: Path, name: str, hist, title: str) -> None:
    (out / f"{name}.json").write_text(canonical_json(hist.to_dict()))
    (out / f"{name}.svg").write_text(evaluation.render_histogram_svg(hist, title))


def _evaluate_detections(dets, dataset: Dataset) -> tuple[dict, float | None]:
    gts = dataset.ground_truths()
    per_class = {
        c: evaluation.average_precision(dets, gts, c) for c in dataset.classes
    }
    defined = [v for v in per_class.values() if v is not None]
    mean = float(np.mean(defined)) if defined else None
    return per_class, mean


def _weak_classes(diag: dict[str, float], ratio: float) -> list[str]:
    if not diag:
        return []
    mean = float(np.mean(list(diag.values())))
    return sorted(c for c, v in diag.items() if v < ratio * mean)


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args)
    source, target, oracle = dataio.generate_synthetic(cfg.synth)
    dataio.save_dataset(source, out / "source")
    dataio.save_dataset(target, out / "target")
    dataio.save_oracle(out / "oracle.json", oracle)
    log.info("wrote %s and %s", out / "source", out / "target")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args)
    source = dataio.load_dataset(args.source)
    warnings: list[str] = []
    detectors = pipeline.train_initial_detectors(source, cfg.adaptation, warnings)
    dataio.save_detectors(out / "detectors.json", detectors, warnings)
    log.info("trained %d detectors", len(detectors))
    return 0


def cmd_detect(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args)
    dataset = dataio.load_dataset(args.dataset)
    if args.detectors:
        states = pipeline.passthrough_states(dataio.load_detectors(args.detectors))
    else:
        states = dataio.load_states(args.states)
    dets = pipeline.detect(dataset, states, cfg.adaptation)
    dataio.write_detections_csv(out / "detections.csv", dets)
    log.info("wrote %d detections", len(dets))
    return 0


def cmd_adapt(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args)
    source = dataio.load_dataset(args.source)
    target = dataio.load_dataset(args.target)
    warnings: list[str] = []
    states = pipeline.adapt(source, target, cfg.adaptation, warnings=warnings)
    dataio.save_states(out / "states.json", states, warnings)
    log.info("adapted %d classes (%s mode)", len(states), cfg.adaptation.mode)
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args)
    dataset = dataio.load_dataset(args.dataset)
    if not dataset.labeled:
        raise DataError(f"dataset '{dataset.name}' has no ground truth to score")
    dets = dataio.read_detections_csv(args.detections)
    per_class, mean = _evaluate_detections(dets, dataset)
    report = {
        "ap_convention": AP_CONVENTION,
        "per_class": {c: {"ap": ap} for c, ap in per_class.items()},
        "mean_ap": mean,
        "config": config_echo(cfg),
    }
    (out / "report.json").write_text(canonical_json(report))
    return 0


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args)
    states = dataio.load_states(args.states)
    have_subspaces = any(
        s.source_subspace is not None and s.target_subspace is not None
        for s in states.values()
    )
    if have_subspaces:
        sim = evaluation.similarity_matrix(states)
        (out / "similarity.json").write_text(canonical_json(sim.to_dict()))
        (out / "similarity.svg").write_text(
            evaluation.render_similarity_svg(sim, "source vs target subspaces")
        )
    if args.detections:
        dets = dataio.read_detections_csv(args.detections)
        hist = evaluation.score_histogram(
            [d.score for d in dets], cfg.hist_bins, (cfg.hist_lo, cfg.hist_hi)
        )
        _write_histogram(out, "histogram_detections", hist, "detection scores")
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(args)
    timing: dict[str, float] = {}

    t0 = time.perf_counter()
    if cfg.source_manifest and cfg.target_manifest:
        source = dataio.load_dataset(cfg.source_manifest)
        target = dataio.load_dataset(cfg.target_manifest)
    elif cfg.source_manifest or cfg.target_manifest:
        raise DataError("source_manifest and target_manifest must be set together")
    else:
        gen_source, gen_target, oracle = dataio.generate_synthetic(cfg.synth)
        dataio.save_dataset(gen_source, out / "source")
        dataio.save_dataset(gen_target, out / "target")
        dataio.save_oracle(out / "oracle.json", oracle)
        # Reload from disk so the saved artifacts are exactly what ran.
        source = dataio.load_dataset(out / "source" / "manifest.json")
        target = dataio.load_dataset(out / "target" / "manifest.json")
    timing["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    warnings: list[str] = []
    detectors = pipeline.train_initial_detectors(source, cfg.adaptation, warnings)
    dataio.save_detectors(out / "detectors.json", detectors, warnings)
    timing["train_initial"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    _write_histogram(
        out,
        "histogram_source",
        _initial_score_histogram(source, detectors, cfg),
        "initial detector scores on source",
    )
    _write_histogram(
        out,
        "histogram_target",
        _initial_score_histogram(target, detectors, cfg),
        "initial detector scores on target",
    )
    timing["histograms"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    states = pipeline.adapt(
        source, target, cfg.adaptation, init_detectors=detectors, warnings=warnings
    )
    dataio.save_states(out / "states.json", states, warnings)
    timing["adapt"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    dets = pipeline.detect(target, states, cfg.adaptation)
    dataio.write_detections_csv(out / "detections.csv", dets)
    timing["detect"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    per_class_ap: dict[str, float | None] = {c: None for c in target.classes}
    mean = None
    if target.labeled:
        per_class_ap, mean = _evaluate_detections(dets, target)

    diag: dict[str, float] = {}
    have_subspaces = any(
        s.source_subspace is not None and s.target_subspace is not None
        for s in states.values()
    )
    if have_subspaces:
        sim = evaluation.similarity_matrix(states)
        (out / "similarity.json").write_text(canonical_json(sim.to_dict()))
        (out / "similarity.svg").write_text(
            evaluation.render_similarity_svg(sim, "source vs target subspaces")
        )
        diag = sim.diagonal()
    weak = _weak_classes(diag, cfg.weak_ratio)

    report = {
        "ap_convention": AP_CONVENTION,
        "mode": cfg.adaptation.mode,
        "mean_ap": mean,
        "per_class": {
            c: {
                "ap": per_class_ap.get(c),
                "n_pos_src": states[c].n_pos_src if c in states else None,
                "n_pos_tgt": states[c].n_pos_tgt if c in states else None,
                "similarity_diag": diag.get(c),
                "downgraded": states[c].downgraded if c in states else None,
                "weak": c in weak,
            }
            for c in target.classes
        },
        "weak_classes": weak,
        "downgraded_classes": sorted(
            c for c, s in states.items() if s.downgraded
        ),
        "pass_through_classes": sorted(
            c for c, s in states.items() if s.mode == "none"
        ),
        "warnings": warnings,
        "config": config_echo(cfg),
    }
    (out / "report.json").write_text(canonical_json(report))
    timing["evaluate"] = time.perf_counter() - t0
    # Timing lives outside report.json so reports stay byte-reproducible.
    (out / "timing.json").write_text(canonical_json(timing))
    if mean is not None:
        log.info("mode=%s mean AP = %.4f", cfg.adaptation.mode, mean)
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "detect": cmd_detect,
    "adapt": cmd_adapt,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"aligndet: data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"aligndet: numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
