"""Command-line entry points: ``analyze``, ``synth`` and ``score``.

Exit codes for ``analyze``: 0 when the pipeline ran (with or without
alarms), 2 for a configuration problem (bad flag value, unreadable or
invalid rule file), 3 for an input problem (missing events file, report
that cannot be written, a stage failing on the data).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .ingest import normalize_stream
from .pipeline import ConfigError, RunConfig, run_pipeline
from .report import ReportWriteFailure, render_report, write_report
from .rules import RuleError, load_rules, starter_rules_path
from .synth import MetricLevel, Truth, UnknownKind, generate_scenario, score

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3


def _build_parser() -> argparse.ArgumentParser:
    # argparse itself exits with status 2 on malformed flags
    p = argparse.ArgumentParser(prog="cliprov", description="Command-line provenance analysis.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="run the detection pipeline over an event stream")
    a.add_argument("--events", required=True, help="JSON-lines event file, or - for stdin")
    a.add_argument("--rules", help="YAML rule file (default: bundled starter pack)")
    a.add_argument("--contamination", type=float)
    a.add_argument("--rs-high", type=float)
    a.add_argument("--rs-medium", type=float)
    a.add_argument("--rs-low", type=float)
    a.add_argument("--nn", type=int, dest="neighbors")
    a.add_argument("--vs", type=int, dest="vector_size")
    a.add_argument("--seed", type=int)
    a.add_argument("--batch-size", type=int)
    a.add_argument("--report", dest="report_path", help="write JSON report here (plus <path>.txt digest)")
    a.add_argument("--llm-endpoint")

    s = sub.add_parser("synth", help="generate a labelled synthetic scenario")
    s.add_argument("--kind", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", type=int, default=200)
    s.add_argument("--out", required=True, help="events output (JSON lines)")
    s.add_argument("--truth", required=True, help="ground-truth output (JSON)")

    c = sub.add_parser("score", help="score a report against ground truth")
    c.add_argument("--alarms", required=True, help="report JSON written by analyze")
    c.add_argument("--truth", required=True)
    c.add_argument("--level", choices=[m.value for m in MetricLevel], default="node")
    return p


def _read_lines(path: str) -> list[str]:
    if path == "-":
        return sys.stdin.read().splitlines()
    return Path(path).read_text(encoding="utf-8").splitlines()


def _analyze(args: argparse.Namespace) -> int:
    overrides = {
        k: getattr(args, k)
        for k in ("contamination", "rs_high", "rs_medium", "rs_low", "neighbors",
                  "vector_size", "seed", "batch_size", "report_path", "llm_endpoint")
    }
    overrides["rules_path"] = args.rules
    try:
        cfg = RunConfig.from_env(**overrides)
        rules_path = cfg.rules_path or str(starter_rules_path())
        rules = load_rules(rules_path)
    except (ConfigError, RuleError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        lines = _read_lines(args.events)
    except (OSError, UnicodeDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    parsed = normalize_stream(lines)

    try:
        result = run_pipeline(parsed.events, cfg, rules, skipped_lines=parsed.skipped)
    except Exception as exc:  # any stage failing on the data
        manifest = getattr(exc, "manifest", {"error": str(exc)})
        print(f"input error: {exc}", file=sys.stderr)
        if cfg.report_path:
            js, txt = render_report([], manifest)
            try:
                write_report(cfg.report_path, js, txt)
            except ReportWriteFailure:
                pass
        return EXIT_INPUT

    result.manifest["rules_path"] = Path(rules_path).name
    result.manifest["input"]["duplicates"] = parsed.duplicates
    js, txt = render_report(result.alarms, result.manifest, result.restored)
    if cfg.report_path:
        try:
            write_report(cfg.report_path, js, txt)
        except ReportWriteFailure as exc:
            print(f"input error: {exc}", file=sys.stderr)
            return EXIT_INPUT
    sys.stdout.write(txt)
    return EXIT_OK


def _synth(args: argparse.Namespace) -> int:
    try:
        sc = generate_scenario(args.kind, seed=args.seed, scale=args.scale)
    except (UnknownKind, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sc.write(args.out, args.truth)
    print(f"{sc.name}: {len(sc.events)} events, {len(sc.attack_nodes)} attack nodes")
    return EXIT_OK


def _score(args: argparse.Namespace) -> int:
    try:
        report = json.loads(Path(args.alarms).read_text(encoding="utf-8"))
        truth = Truth.load(args.truth)
    except (OSError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    alarms = report["alarms"] if isinstance(report, dict) else report
    m = score(alarms, truth, args.level)
    print(json.dumps(m.to_dict(), sort_keys=True))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    handler = {"analyze": _analyze, "synth": _synth, "score": _score}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
