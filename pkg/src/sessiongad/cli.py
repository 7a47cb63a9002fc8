"""Command-line entry point wiring the pipeline stages.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
divergence.  Errors print one machine-parseable line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, PipelineConfig
from .gad import DivergenceError, GadError
from .ingest import IngestError, MitreMapping
from .metrics import MetricError
from . import pipeline
from .pipeline import DataError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class UsageError(ValueError):
    pass


def _fail(code: int, message: str) -> int:
    print(f'sessiongad: error code={code} msg="{message}"', file=sys.stderr)
    return code


def _load_config(args) -> PipelineConfig:
    if args.config is None:
        raise UsageError("--config is required")
    try:
        config = PipelineConfig.from_file(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    if getattr(args, "seed", None) is not None:
        config.override("seed", args.seed)
    return config


def _load_mapping(args) -> MitreMapping:
    if getattr(args, "mitre_map", None):
        return MitreMapping.from_file(args.mitre_map)
    return MitreMapping.default()


def _cmd_gen(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = pipeline.run_gen(config, out_dir)
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_train_embed(args) -> int:
    config = _load_config(args)
    pipeline.run_train_embed(config, args.input, args.output,
                             _load_mapping(args))
    print(args.output)
    return EXIT_OK


def _cmd_featurize(args) -> int:
    config = _load_config(args)
    pipeline.run_featurize(config, args.input, args.models, args.prevalence,
                           args.output, _load_mapping(args))
    print(args.output)
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _load_config(args)
    pipeline.run_train(config, args.input, args.output)
    print(args.output)
    return EXIT_OK


def _cmd_score(args) -> int:
    config = _load_config(args)
    pipeline.run_score(config, args.input, args.model, args.output)
    print(args.output)
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = _load_config(args)
    ap, roc = pipeline.run_eval(config, args.scores, args.labels,
                                args.output, method=args.method)
    print(f"auprc={ap:.6f} auroc={roc:.6f} -> {args.output}")
    return EXIT_OK


def _cmd_sweep_alpha(args) -> int:
    config = _load_config(args)
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --alphas: {exc}") from exc
    if not alphas:
        raise UsageError("--alphas must list at least one value")
    rows = pipeline.run_sweep(config, args.input, args.labels, alphas,
                              args.output)
    if args.figure:
        from .report import render_sweep_figure
        render_sweep_figure(rows, args.figure)
        print(args.figure)
    print(args.output)
    return EXIT_OK


def _cmd_report(args) -> int:
    from .report import (build_report, render_score_figure,
                         render_technique_figure, render_text)
    config = _load_config(args)
    top_fraction = args.top_fraction if args.top_fraction is not None \
        else config["report.top_fraction"]
    score_rows = pipeline.read_scores(args.scores)
    events = pipeline._load_events(args.events) if score_rows else []
    report = build_report(score_rows, events, _load_mapping(args),
                          top_fraction, config)
    out = Path(args.output)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(out)
    if args.text:
        with open(args.text, "w", encoding="utf-8") as fh:
            fh.write(render_text(report))
        print(args.text)
    if config["report.figures"]:
        figures_dir = Path(args.figures_dir) if args.figures_dir \
            else out.parent
        figures_dir.mkdir(parents=True, exist_ok=True)
        score_png = figures_dir / (out.stem + "_scores.png")
        tech_png = figures_dir / (out.stem + "_techniques.png")
        render_score_figure(score_rows, report["flagged"], score_png)
        render_technique_figure(report, tech_png)
        print(score_png)
        print(tech_png)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sessiongad",
        description="Group anomaly detection over endpoint session logs.")
    parser.add_argument("--version", action="version",
                        version=f"sessiongad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=False,
                       help="flat key = value configuration file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")

    p = sub.add_parser("gen", help="synthesise a labeled dataset")
    common(p)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train-embed", help="train embedding models")
    common(p)
    p.add_argument("--input", required=True, help="events.jsonl")
    p.add_argument("--output", required=True, help="embed_models.bin")
    p.add_argument("--mitre-map", help="signature-pattern mapping TSV")
    p.set_defaults(func=_cmd_train_embed)

    p = sub.add_parser("featurize", help="extract per-session features")
    common(p)
    p.add_argument("--input", required=True, help="events.jsonl")
    p.add_argument("--models", required=True, help="embed_models.bin")
    p.add_argument("--prevalence", default=None, help="prevalence.jsonl")
    p.add_argument("--output", required=True, help="features.jsonl")
    p.add_argument("--mitre-map", help="signature-pattern mapping TSV")
    p.set_defaults(func=_cmd_featurize)

    p = sub.add_parser("train", help="train the group anomaly detector")
    common(p)
    p.add_argument("--input", required=True, help="features.jsonl")
    p.add_argument("--output", required=True, help="gad_model.bin")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("score", help="rank session groups by anomaly score")
    common(p)
    p.add_argument("--input", required=True, help="features.jsonl")
    p.add_argument("--model", required=True, help="gad_model.bin")
    p.add_argument("--output", required=True, help="scores.jsonl")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("eval", help="compute AUROC/AUPRC against labels")
    common(p)
    p.add_argument("--scores", required=True, help="scores.jsonl")
    p.add_argument("--labels", required=True, help="labels.jsonl")
    p.add_argument("--output", required=True, help="metrics.csv")
    p.add_argument("--method", default="aae-tail-filtered")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep-alpha",
                       help="train/score across tail percentiles")
    common(p)
    p.add_argument("--input", required=True, help="features.jsonl")
    p.add_argument("--labels", required=True, help="labels.jsonl")
    p.add_argument("--alphas", default="1,5,10,15,20",
                   help="comma-separated percentile list")
    p.add_argument("--output", required=True, help="metrics.csv")
    p.add_argument("--figure", default=None,
                   help="also render the sensitivity curve PNG")
    p.set_defaults(func=_cmd_sweep_alpha)

    p = sub.add_parser("report", help="emit the analyst report")
    common(p)
    p.add_argument("--scores", required=True, help="scores.jsonl")
    p.add_argument("--events", required=True, help="events.jsonl")
    p.add_argument("--output", required=True, help="report.json")
    p.add_argument("--text", default=None, help="plain-text rendering path")
    p.add_argument("--figures-dir", default=None,
                   help="directory for report figures")
    p.add_argument("--top-fraction", type=float, default=None,
                   help="fraction of sessions to flag")
    p.add_argument("--mitre-map", help="signature-pattern mapping TSV")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed a usage message
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    except DivergenceError as exc:
        return _fail(EXIT_DIVERGED, str(exc))
    except (DataError, IngestError, GadError, MetricError, OSError) as exc:
        return _fail(EXIT_DATA, str(exc))


if __name__ == "__main__":
    sys.exit(main())
