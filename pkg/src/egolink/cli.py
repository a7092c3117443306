"""Command-line entry point: simulate, curate, associate, evaluate, report.

Exit codes: 0 on success, 1 on invalid data or configuration, 2 on I/O
failure. Errors are printed to stderr as one JSON object. Each run writes a
``<output>.manifest.json`` next to its main output recording the resolved
configuration, input digests, tool version and wall-clock duration.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import tomli

from . import __version__
from .association import AssociationConfig, masked_affinity
from .curation import CurationRules, curate
from .errors import EgolinkError, ParseError, ValidationError
from .evaluation import PROTOCOLS, evaluate
from .metadata import LOG_FORMATS, load_camera_logs
from .report import load_report, metric_table, plot_cmc
from .simulate import ScenarioConfig, export_dataset, generate_scenario
from .tracks import read_tracklets, write_tracklets

logger = logging.getLogger("egolink")

ALL_CROSS_CAMERA = "all-cross-camera"


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    """Reports bad command lines through the same JSON error path as other failures."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_toml(path) -> dict:
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            return tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ParseError(str(exc), path=path) from None


def _digest(path: Path) -> dict:
    """sha256 of a file, or of every file below a directory."""
    path = Path(path)
    if path.is_dir():
        return {str(p.relative_to(path)): _digest(p) for p in sorted(path.rglob("*")) if p.is_file()}
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_manifest(output: Path, subcommand: str, config: dict, inputs: dict, started: float):
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _digest(p)} for name, p in inputs.items()},
        "version": __version__,
        "duration_s": time.perf_counter() - started,
    }
    path = output.parent / f"{output.name}.manifest.json"
    _write_json(path, manifest)
    return path


def _read_query_ids(source: str, tracklets) -> list[str]:
    if source == ALL_CROSS_CAMERA:
        cams = {t.camera_id for t in tracklets}
        return [t.track_id for t in tracklets if len(cams - {t.camera_id}) > 0]
    lines = Path(source).read_text(encoding="utf-8").splitlines()
    return [s.strip() for s in lines if s.strip() and not s.lstrip().startswith("#")]


# --------------------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    started = time.perf_counter()
    cfg = ScenarioConfig.from_dict(_load_toml(args.config))
    world = generate_scenario(cfg)
    out = Path(args.out)
    export_dataset(world, out, overwrite=args.overwrite)
    _write_manifest(out, "simulate", cfg.to_dict(), {"config": Path(args.config)}, started)
    logger.info("simulated %d tracklets over %d cameras", len(world.tracklets), len(world.cameras))
    return 0


def cmd_curate(args) -> int:
    started = time.perf_counter()
    data = _load_toml(args.rules) if args.rules else {}
    if args.strict:
        data["strict"] = True
    rules = CurationRules.from_dict(data)
    kept, report = curate(read_tracklets(args.input), rules)
    out = Path(args.out)
    write_tracklets(kept, out)
    if args.report:
        _write_json(args.report, report.to_dict())
    inputs = {"tracklets": Path(args.input)}
    if args.rules:
        inputs["rules"] = Path(args.rules)
    _write_manifest(out, "curate", vars(rules), inputs, started)
    logger.info("kept %d of %d tracklets", report.output_tracklets, report.input_tracklets)
    return 0


def _association_inputs(args):
    cfg = AssociationConfig.from_dict(_load_toml(args.config) if args.config else {})
    tracklets = read_tracklets(args.tracklets)
    cameras = load_camera_logs(args.cameras, args.camera_format)
    inputs = {"tracklets": Path(args.tracklets), "cameras": Path(args.cameras)}
    if args.config:
        inputs["config"] = Path(args.config)
    return cfg, tracklets, cameras, inputs


def cmd_associate(args) -> int:
    started = time.perf_counter()
    cfg, tracklets, cameras, inputs = _association_inputs(args)
    ids = _read_query_ids(args.queries, tracklets)
    by_id = {t.track_id: t for t in tracklets}
    missing = [q for q in ids if q not in by_id]
    if missing:
        raise EgolinkError(f"unknown query id(s): {missing[:5]}")
    if args.queries != ALL_CROSS_CAMERA:
        inputs["queries"] = Path(args.queries)
    m = masked_affinity([by_id[q] for q in ids], tracklets, cameras, cfg, threads=args.threads)
    out = Path(args.out)
    _write_json(out, m.to_dict())
    _write_manifest(out, "associate", {**cfg.to_dict(), "queries": args.queries}, inputs, started)
    return 0


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    cfg, tracklets, cameras, inputs = _association_inputs(args)
    queries = None
    if args.queries:
        queries = _read_query_ids(args.queries, tracklets)
        if args.queries != ALL_CROSS_CAMERA:
            inputs["queries"] = Path(args.queries)
    report = evaluate(tracklets, cameras, cfg, protocol=args.protocol, queries=queries,
                      max_rank=args.max_rank, threads=args.threads)
    out = Path(args.out)
    out.write_text(report.to_json(), encoding="utf-8")
    _write_manifest(out, "evaluate", {**cfg.to_dict(), "protocol": args.protocol,
                                      "max_rank": args.max_rank, "queries": args.queries},
                    inputs, started)
    logger.info("rank-1 %.4f  mAP %.4f", report.rank(1), report.map)
    return 0


def cmd_report(args) -> int:
    started = time.perf_counter()
    report = load_report(args.input)
    plot = Path(args.plot)
    plot_cmc(report, plot)
    table = metric_table(report)
    if args.table:
        Path(args.table).write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    _write_manifest(plot, "report", {"table": args.table}, {"report": Path(args.input)}, started)
    return 0


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="egolink",
        description="Cross-camera track association for moving cameras, gated by sensor metadata.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=1, help="worker cap for scoring (default 1)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="generate a synthetic multi-camera corpus")
    p.add_argument("--config", required=True, help="scenario TOML")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--overwrite", action="store_true", help="replace a non-empty output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("curate", help="apply the tracklet curation rules")
    p.add_argument("--rules", help="rules TOML (defaults apply when omitted)")
    p.add_argument("--in", dest="input", required=True, help="tracklets JSONL")
    p.add_argument("--out", required=True, help="curated tracklets JSONL")
    p.add_argument("--report", help="curation report JSON")
    p.add_argument("--strict", action="store_true", help="fail on missing annotations")
    p.set_defaults(func=cmd_curate)

    for name, func, text in (("associate", cmd_associate, "write the gated affinity matrix"),
                             ("evaluate", cmd_evaluate, "rank the corpus and score CMC/mAP")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--tracklets", required=True, help="tracklets JSONL")
        p.add_argument("--cameras", required=True, help="camera log directory or JSONL file")
        p.add_argument("--camera-format", choices=LOG_FORMATS, default=None)
        p.add_argument("--config", help="association TOML (defaults apply when omitted)")
        p.add_argument("--out", required=True)
        if name == "associate":
            p.add_argument("--queries", required=True,
                           help=f"file of query ids, one per line, or {ALL_CROSS_CAMERA!r}")
        else:
            p.add_argument("--queries", help="file of query ids (default: every tracklet)")
            p.add_argument("--protocol", choices=PROTOCOLS, default="cross-camera")
            p.add_argument("--max-rank", type=int, default=50)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="render the CMC plot and metric table")
    p.add_argument("--in", dest="input", required=True, help="report JSON from evaluate")
    p.add_argument("--plot", required=True, help="output SVG")
    p.add_argument("--table", help="also write the metric table to this file")
    p.set_defaults(func=cmd_report)
    return parser


def _error(kind: str, exc: BaseException, code: int) -> int:
    obj = {"error": kind, "message": str(exc)}
    path = getattr(exc, "filename", None) or getattr(exc, "path", None)
    if path is not None:
        obj["path"] = str(path)
    line = getattr(exc, "line", None)
    if line is not None:
        obj["line"] = line
    sys.stderr.write(json.dumps(obj, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    level = os.environ.get("EGOLINK_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help and --version
        return exc.code if isinstance(exc.code, int) else 0
    except UsageError as exc:
        return _error("UsageError", exc, 1)
    if args.threads < 1:
        return _error("ValidationError", ValueError("--threads must be >= 1"), 1)
    try:
        return args.func(args)
    except (EgolinkError, ValueError) as exc:
        return _error(type(exc).__name__, exc, 1)
    except OSError as exc:
        return _error(type(exc).__name__, exc, 2)


if __name__ == "__main__":
    sys.exit(main())
