"""Command line: one subcommand per pipeline component, plus ``pipeline`` for the whole chain.

Exit status is 0 on success, 1 for invalid input (bad config, unreadable or
malformed files, unknown command) and 2 for failures while running.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, apply_overrides, load_config
from .detect import AttackPath, MissingLabels, evaluate
from .events import IngestIOError, ParseError, dumps_jsonl
from .graph import GraphError, build_graph, export_dot, export_jsonl, import_jsonl
from .reduce import reduce_graph
from .simgen import BadConfig
from . import pipeline as pl

log = logging.getLogger("scg")

COMMANDS = ("simgen", "ingest", "build", "reduce", "train", "detect", "eval", "export", "pipeline")


class UsageError(ValueError):
    pass


class UnknownCommand(UsageError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (default: $SCG_CONFIG)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config field; VALUE is parsed as JSON")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--strict", action="store_true", help="fail on the first malformed input line")
    p.add_argument("--keep-labels", action="store_true", help="keep ground-truth labels from inputs")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simgen", help="generate a labeled scenario as jsonl")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ingest", help="parse and merge log files into canonical jsonl")
    p.add_argument("--input", action="append", required=True, metavar="FORMAT:PATH",
                   help="FORMAT is one of audit-kv, dns-tsv, jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="write the skip/error summary JSON here")

    p = sub.add_parser("build", help="build the provenance graph from events")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("jsonl", "dot"), default="jsonl")

    p = sub.add_parser("reduce", help="deduplicate and cluster a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--remap", help="write the original-to-reduced id table here")

    p = sub.add_parser("train", help="train the temporal model and write a checkpoint")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--max-batches", type=int, help="stop after this many batches")

    p = sub.add_parser("detect", help="score, threshold and reconstruct attack paths")
    p.add_argument("--events", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="metrics for a detection report against labeled events")
    p.add_argument("--events", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--out")

    p = sub.add_parser("export", help="export a graph, or the subgraph of a report's paths")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("jsonl", "dot"), default="dot")
    p.add_argument("--report", help="restrict to the union of this report's paths")

    p = sub.add_parser("pipeline", help="simgen (or --input) through eval in one run")
    p.add_argument("--input", action="append", metavar="FORMAT:PATH")
    p.add_argument("--out", required=True, help="report path")
    p.add_argument("--timing", action="store_true", help="add wall-clock stage timings to the report")

    for name in COMMANDS:
        _common(sub.choices[name])
    return parser


def _sources(specs):
    out = []
    for spec in specs:
        fmt, sep, path = spec.partition(":")
        if not sep or not path:
            raise UsageError(f"expected FORMAT:PATH, got {spec!r}")
        out.append((fmt, path))
    return out


def _write(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise pl.Io(f"cannot write {path}: {exc.strerror}") from exc


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}") from exc


def _read_graph(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    return import_jsonl(data)


def _ingest(args, cfg, keep_labels=None):
    keep = args.keep_labels if keep_labels is None else keep_labels
    return pl.ingest([("jsonl", args.events)], cfg, keep_labels=keep)


def _events(args, cfg, keep_labels=None):
    return _ingest(args, cfg, keep_labels).events


def cmd_simgen(args, cfg):
    _write(args.out, pl.simulate(cfg))


def cmd_ingest(args, cfg):
    res = pl.ingest(_sources(args.input), cfg, keep_labels=args.keep_labels)
    _write(args.out, dumps_jsonl(res.events))
    summary = json.dumps(res.summary(), sort_keys=True, indent=1) + "\n"
    if args.summary:
        _write(args.summary, summary.encode("utf-8"))
    log.info("ingested %d events, skipped %s", len(res.events), res.skipped)


def cmd_build(args, cfg):
    graph = build_graph(_events(args, cfg), cfg.model.d_f)
    _write(args.out, export_dot(graph) if args.format == "dot" else export_jsonl(graph))


def cmd_reduce(args, cfg):
    red = reduce_graph(_read_graph(args.graph), cfg.reduce)
    _write(args.out, export_jsonl(red.graph))
    if args.remap:
        _write(args.remap, red.export_remap())


def _prepare(args, cfg):
    ing = _ingest(args, cfg)
    graph, red = pl.build_and_reduce(ing.events, cfg)
    return ing, graph, red, pl.training_split(ing.events, red, cfg)


def cmd_train(args, cfg):
    _, _, red, split = _prepare(args, cfg)
    resume = load_checkpoint(args.resume) if args.resume else None
    out = pl.train(red.graph, split.train_ids, cfg, resume=resume, max_batches=args.max_batches)
    save_checkpoint(args.out, pl.to_checkpoint(out, cfg))
    log.info("trained to position %s, %d losses", out.position, len(out.losses))


def cmd_detect(args, cfg):
    ing, graph, red, split = _prepare(args, cfg)
    ck = load_checkpoint(args.checkpoint)
    if ck.dims != cfg.model:
        raise UsageError("checkpoint model dims differ from config")
    if not ck.config.get("done", True):
        raise UsageError(f"{args.checkpoint} stops mid-training at {ck.position}; resume it first")
    det = pl.detect(red.graph, ck.params, split, cfg)
    counts = pl.run_counts(ing.events, graph, red, split)
    drops = {"ingest_skipped": list(ing.skipped), "distrib_dropped_writes": int(ck.config.get("dropped", 0))}
    pl.write_report(args.out, **pl.report_body(cfg, graph, red, det, None, counts, drops))


def cmd_eval(args, cfg):
    events = _events(args, cfg, keep_labels=True)
    if any(ev.label is None for ev in events):
        raise MissingLabels("eval needs labeled events")
    _, red = pl.build_and_reduce(events, cfg)
    split = pl.training_split(events, red, cfg)
    report = _read_json(args.report)
    alerts = [a["edge"] for a in report["alerts"]]
    paths = [AttackPath(tuple(e["id"] for e in p["edges"]), p["score"], p["seed"]) for p in report["paths"]]
    scores = [float("nan") if s is None else s for s in report.get("scores", [])] or None
    metrics = evaluate(alerts, paths, [ev.label for ev in events], red.members(),
                       split.in_scope[red.edge_map], scores)
    data = (json.dumps(pl._clean(metrics), sort_keys=True, indent=1) + "\n").encode("utf-8")
    if args.out:
        _write(args.out, data)
    else:
        sys.stdout.write(data.decode("utf-8"))


def cmd_export(args, cfg):
    graph = _read_graph(args.graph)
    if args.report:
        report = _read_json(args.report)
        edges = sorted({e["id"] for p in report["paths"] for e in p["edges"]})
        if args.format != "dot":
            raise UsageError("path subgraphs export as dot only")
        _write(args.out, export_dot(graph, edges, name="attack_paths"))
        return
    _write(args.out, export_dot(graph) if args.format == "dot" else export_jsonl(graph))


def cmd_pipeline(args, cfg):
    sources = _sources(args.input) if args.input else None
    res = pl.run_pipeline(cfg, sources, timing=args.timing)
    pl.write_report(args.out, **res.report)
    if res.metrics is not None:
        m = res.metrics
        log.info("recall %.3f  benign alert rate %.4f  stages %s", m["recall"], m["benign_alert_rate"],
                 ",".join(m["stages_covered"]))


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}

VALIDATION_ERRORS = (UsageError, ConfigError, BadConfig, ParseError, IngestIOError, CheckpointError,
                     MissingLabels, GraphError, FileNotFoundError)


def run_command(argv) -> int:
    argv = list(argv)
    if argv and not argv[0].startswith("-") and argv[0] not in COMMANDS:
        print(f"scg: error: UnknownCommand: {argv[0]!r} (choose from {', '.join(COMMANDS)})", file=sys.stderr)
        return 1
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UnknownCommand("no command given")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        cfg = load_config(args.config)
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.strict:
            overrides.append("ingest.strict=true")
        if args.keep_labels:
            overrides.append("ingest.keep_labels=true")
        cfg = apply_overrides(cfg, overrides)
        HANDLERS[args.command](args, cfg)
    except VALIDATION_ERRORS as exc:
        print(f"scg: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"scg: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
