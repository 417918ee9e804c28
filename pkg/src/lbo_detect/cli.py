"""Command-line entry point: generate, train, calibrate, evaluate, bench.

Exit codes: 0 success, 2 configuration error, 3 filesystem error,
4 training failure, 5 data or label error.

Every verb also writes a ``run.json`` echoing the resolved configuration:
``<out>/run.json`` for ``generate`` and ``<out stem>.run.json`` next to the
output file for the other verbs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .bench import bench_suite, environment, write_bench_csv
from .datagen import SynthConfig, protocol_configs, synth_protocol
from .detection import MetricCurve, TransitionThreshold, calibrate, evaluate
from .detectors import (
    DETECTOR_KINDS,
    FitSettings,
    TransErrorDetector,
    detector_from_dict,
    fit_detector,
    protocol_curve,
    reference_curve,
)
from .errors import (
    ConfigInvalid,
    DegenerateFit,
    LabelMissing,
    RatioNotFound,
    TrainingDiverged,
)
from .io import dump_json, load_json, read_protocol, write_csv, write_protocol
from .series import RATIO_ATOL

log = logging.getLogger("lbo_detect")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FS = 3
EXIT_TRAIN = 4
EXIT_DATA = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- helpers ------------------------------------------------------------------


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        doc = load_json(path)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise CliError(EXIT_FS, f"{path}: {exc.strerror or exc}") from None
    if not isinstance(doc, dict):
        raise CliError(EXIT_CONFIG, f"{path}: top level must be an object")
    unknown = set(doc) - {"seed", "synth", "fit"}
    if unknown:
        raise CliError(EXIT_CONFIG, f"{path}: unknown sections {sorted(unknown)}")
    return doc


def _check_out_file(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise CliError(EXIT_FS, f"{path} exists; pass --force to overwrite")
    if not path.parent.is_dir():
        raise CliError(EXIT_FS, f"output directory {path.parent} does not exist")


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _read_protocol(path: str):
    try:
        return read_protocol(path)
    except OSError as exc:
        raise CliError(EXIT_FS, f"{path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: invalid JSON ({exc})") from None
    except LabelMissing as exc:
        raise CliError(EXIT_DATA, f"{path}: {exc}") from None
    except ConfigInvalid as exc:
        raise CliError(EXIT_CONFIG, f"{path}: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise CliError(EXIT_DATA, f"{path}: {exc}") from None


def _load_json_file(path: str, what: str) -> dict:
    try:
        return load_json(path)
    except OSError as exc:
        raise CliError(EXIT_FS, f"{what} {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{what} {path}: invalid JSON ({exc})") from None


def _load_detector(path: str):
    doc = _load_json_file(path, "model")
    if "detector" in doc and "kind" not in doc:
        doc = doc["detector"]
    return detector_from_dict(doc)


def _fit_settings(args, cfg: dict) -> FitSettings:
    settings = FitSettings.from_dict(cfg.get("fit", {}))
    seed = args.seed if args.seed is not None else cfg.get("seed", settings.seed)
    train = settings.train
    overrides = {
        "epochs": getattr(args, "epochs", None),
        "m": getattr(args, "hidden", None),
        "n": getattr(args, "hidden", None),
        "p": getattr(args, "dense", None),
        "learning_rate": getattr(args, "lr", None),
        "batch_size": getattr(args, "batch_size", None),
    }
    train = replace(train, **{k: v for k, v in overrides.items() if v is not None})
    hmm = settings.hmm
    if getattr(args, "n_min", None) is not None:
        hmm = replace(hmm, n_min=args.n_min)
    if getattr(args, "n_max", None) is not None:
        hmm = replace(hmm, n_max=args.n_max)
    return replace(settings, seed=int(seed), train=replace(train, seed=int(seed)), hmm=hmm)


def _run_record(path: Path, verb: str, args, resolved: dict) -> None:
    argv = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    dump_json({"verb": verb, "version": __version__, "args": argv, "resolved": resolved}, path)


def _curve_rows(curve: MetricCurve):
    return zip(curve.phi_ratios, curve.values)


# -- verbs --------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    synth = dict(cfg.get("synth", {}))
    if args.seed is not None:
        synth["seed"] = args.seed
    elif "seed" in cfg:
        synth.setdefault("seed", cfg["seed"])
    if args.samples is not None:
        synth["samples_per_record"] = args.samples
    try:
        base = SynthConfig.from_dict(synth)
    except TypeError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(EXIT_FS, f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    configs = protocol_configs(base)
    manifests = []
    for name, config in configs.items():
        log.info("generating %s", name)
        manifests.append(write_protocol(synth_protocol(config), out).name)
    _run_record(out / "run.json", "generate", args,
                {"base": base.to_dict(), "protocols": {k: c.to_dict() for k, c in configs.items()},
                 "manifests": manifests})
    return EXIT_OK


def _require_blowout_entry(path: str) -> None:
    """Training needs the phi = 1 record; its absence is a training failure."""
    doc = _load_json_file(path, "reference")
    entries = doc.get("records") if isinstance(doc, dict) else None
    if isinstance(entries, list) and entries:
        ratios = [e.get("phi_ratio") for e in entries if isinstance(e, dict)]
        if not any(isinstance(r, (int, float)) and abs(r - 1.0) <= RATIO_ATOL for r in ratios):
            raise CliError(EXIT_TRAIN, f"cannot train: {path} has no phi_ratio = 1 record")


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    settings = _fit_settings(args, cfg)
    out = Path(args.out)
    _check_out_file(out, args.force)
    _require_blowout_entry(args.reference)
    reference = _read_protocol(args.reference)
    try:
        result = fit_detector(args.kind, reference, settings)
    except (TrainingDiverged, DegenerateFit) as exc:
        raise CliError(EXIT_TRAIN, f"training failed: {exc}") from None
    except RatioNotFound as exc:
        raise CliError(EXIT_TRAIN, f"cannot train: {exc.args[0]}") from None
    dump_json(result.detector.to_dict(), out)
    if result.history:
        write_csv(_sibling(out, ".history.csv"), ("epoch", "train_loss", "val_loss"),
                  ((h.epoch, h.train_loss, h.val_loss) for h in result.history))
    if result.bic_rows:
        write_csv(_sibling(out, ".bic.csv"), ("n_states", "loglik", "bic"),
                  ((r.n_states, r.loglik, r.bic) for r in result.bic_rows))
    _run_record(_sibling(out, ".run.json"), "train", args, {"settings": settings.to_dict()})
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out)
    _check_out_file(out, args.force)
    reference = _read_protocol(args.reference)
    settings = _fit_settings(args, cfg)
    if args.model is not None:
        detector = _load_detector(args.model)
        if args.detector is not None and args.detector != detector.kind:
            raise CliError(EXIT_CONFIG, f"--detector {args.detector} but model is {detector.kind}")
    elif args.detector == "trans-error":
        try:
            detector = fit_detector("trans-error", reference, settings).detector
        except RatioNotFound as exc:
            raise CliError(EXIT_DATA, str(exc.args[0])) from None
    else:
        raise CliError(EXIT_CONFIG, "--model is required unless --detector trans-error")
    try:
        curve = reference_curve(detector, reference, settings.train_frac)
        threshold = calibrate(curve, reference.transition_ratio, detector.direction)
    except RatioNotFound as exc:
        raise CliError(EXIT_DATA, f"transition ratio missing from reference: {exc.args[0]}") from None
    doc = {"detector": detector.kind, "threshold": threshold.to_dict(), "curve": curve.to_dict()}
    if isinstance(detector, TransErrorDetector):
        doc["model"] = detector.to_dict()
    dump_json(doc, out)
    write_csv(_sibling(out, ".curve.csv"), ("phi_ratio", "value"), _curve_rows(curve))
    _run_record(_sibling(out, ".run.json"), "calibrate", args,
                {"detector": detector.kind, "train_frac": settings.train_frac})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    _check_out_file(out, args.force)
    tdoc = _load_json_file(args.threshold, "threshold")
    try:
        threshold = TransitionThreshold.from_dict(tdoc["threshold"])
    except (KeyError, TypeError):
        raise CliError(EXIT_CONFIG, f"{args.threshold}: not a threshold file") from None
    if args.model is not None:
        detector = _load_detector(args.model)
    elif "model" in tdoc:
        detector = detector_from_dict(tdoc["model"])
    else:
        raise CliError(EXIT_CONFIG, "--model is required for this threshold")
    if tdoc.get("detector", detector.kind) != detector.kind:
        raise CliError(EXIT_CONFIG, f"threshold is for {tdoc['detector']}, model is {detector.kind}")
    protocols = [_read_protocol(p) for p in args.tests]
    for protocol in protocols:
        for rec in protocol.records:
            if rec.label is None:
                raise CliError(EXIT_DATA, f"{protocol.name}: record at {rec.phi_ratio} has no label")
    curves = [protocol_curve(detector, p) for p in protocols]
    try:
        report = evaluate(detector.kind, threshold, protocols, curves)
    except LabelMissing as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    dump_json(report.to_dict(), out)
    rows = []
    for result in report.per_protocol:
        protocol = next(p for p in protocols if p.name == result.name)
        for rec, value, pred in zip(protocol.records, result.curve.values, result.predictions):
            rows.append((result.name, rec.phi_ratio, value, rec.label.value, pred.value))
    write_csv(_sibling(out, ".curves.csv"), ("protocol", "phi_ratio", "value", "label", "predicted"), rows)
    _run_record(_sibling(out, ".run.json"), "evaluate", args,
                {"detector": detector.kind, "threshold": threshold.to_dict()})
    overall = report.overall
    log.info("overall accuracy %.4f (tp=%d fp=%d tn=%d fn=%d)", overall.accuracy,
             overall.tp, overall.fp, overall.tn, overall.fn)
    return EXIT_OK


def cmd_bench(args) -> int:
    out = Path(args.out)
    _check_out_file(out, args.force)
    if args.repeats < 3:
        raise CliError(EXIT_CONFIG, "--repeats must be >= 3")
    detectors = [_load_detector(p) for p in args.models]
    protocols = [_read_protocol(p) for p in args.tests]
    rows = bench_suite(detectors, protocols, args.repeats)
    write_bench_csv(out, rows)
    _run_record(_sibling(out, ".run.json"), "bench", args,
                {"detectors": [d.kind for d in detectors], "environment": environment()})
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lbo-detect", description="Lean blowout detection pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, config=True):
        p.add_argument("--out", required=True)
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
        if config:
            p.add_argument("--config", help="JSON config with optional seed/synth/fit sections")
            p.add_argument("--seed", type=int)

    g = sub.add_parser("generate", help="write the five synthetic protocols")
    common(g)
    g.add_argument("--samples", type=int, help="samples per record")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit a detector on the reference blowout record")
    common(t)
    t.add_argument("--kind", required=True, choices=DETECTOR_KINDS)
    t.add_argument("--reference", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--hidden", type=int, help="width of both recurrent layers")
    t.add_argument("--dense", type=int, help="width of the ReLU head layer")
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--n-min", type=int, help="smallest HMM state count")
    t.add_argument("--n-max", type=int, help="largest HMM state count")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("calibrate", help="threshold from the reference transition record")
    common(c)
    c.add_argument("--model")
    c.add_argument("--reference", required=True)
    c.add_argument("--detector", choices=DETECTOR_KINDS)
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", help="classify test protocols against a threshold")
    common(e, config=False)
    e.add_argument("--model")
    e.add_argument("--threshold", required=True)
    e.add_argument("--tests", nargs="+", required=True)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bench", help="time each detector's metric on every test record")
    common(b, config=False)
    b.add_argument("--models", nargs="+", required=True)
    b.add_argument("--tests", nargs="+", required=True)
    b.add_argument("--repeats", type=int, default=3)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (TrainingDiverged, DegenerateFit) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (LabelMissing, RatioNotFound) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FS
    except (ConfigInvalid, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
