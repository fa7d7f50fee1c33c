"""Command-line entry point binding all stages into user-invocable commands.

Exit codes: 0 success, 1 configuration or input-parse error, 2 scanner
failure. Filter-stage faults never change the exit code while fail-open is
enabled. Secrets travel only through environment variables.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backends import (
    BackendConfigError,
    CassetteError,
    CassetteRecorder,
    LiveBackend,
    LlmBackend,
    ReplayBackend,
    ScriptedBackend,
)
from .benchmark import GroundTruthError, load_ground_truth
from .filter_agent import FilterError
from .ingest import ScannerOutputError
from .pipeline import ConfigError, ScannerError, parse_config_file, plan_mission, run_mission, run_scanner
from .report import (
    build_report,
    format_comparison_text,
    format_scorecard_text,
    load_report,
    render_json,
    render_text,
)
from .scoring import DetectionsError, compare, load_detections, score_per_cwe, serialize_detections

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SCANNER = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; configuration errors are exit 1 here."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _add_run_flags(parser: argparse.ArgumentParser, *, replay_only: bool = False) -> None:
    parser.add_argument("--target", help="source tree to scan (and to read context from)")
    parser.add_argument("--scan-json", help="saved scanner JSON document to load instead of scanning")
    parser.add_argument("--config", help="mission config file (key = value lines)")
    parser.add_argument("--ground-truth", help="expected-results CSV for scoring")
    parser.add_argument("--baseline", help="baseline detections file for delta reporting")
    if not replay_only:
        parser.add_argument(
            "--backend",
            choices=["live", "scripted", "replay"],
            default="scripted",
            help="LLM backend (default: scripted)",
        )
    parser.add_argument("--cassette", help="cassette file: recorded with live, replayed with replay")
    parser.add_argument("--verdicts", help="scripted backend: JSON file of finding_id -> classification")
    parser.add_argument("--batch-size", type=int, help="findings per LLM call (default 15)")
    parser.add_argument("--parallelism", type=int, help="concurrent batches (default 4)")
    parser.add_argument("--no-fail-open", action="store_true", help="abort on filter failures instead of retaining")
    parser.add_argument("--match-any-cwe", action="store_true", help="score by file only, ignoring CWE codes")
    parser.add_argument("--model", help="model identifier (overrides QSC_MODEL)")
    parser.add_argument("--template", help="prompt template file with {{findings_block}}")
    parser.add_argument("--cwe-map", help="CWE alias table file (alias -> category lines)")
    parser.add_argument("--scanner-cmd", help="scanner executable (default semgrep)")
    parser.add_argument("--out-json", default="report.json", help="JSON report path")
    parser.add_argument("--out-text", default="report.txt", help="text report path")
    parser.add_argument("--detections-out", help="also write kept detections (TestCaseId,CWE lines)")


def _mission_config(args: argparse.Namespace) -> dict[str, object]:
    config: dict[str, object] = {}
    if args.config:
        config.update(parse_config_file(Path(args.config).read_text(encoding="utf-8")))
    overrides = {
        "target_root": args.target,
        "scan_json": args.scan_json,
        "ground_truth": args.ground_truth,
        "baseline": args.baseline,
        "batch_size": args.batch_size,
        "parallelism": args.parallelism,
        "model": args.model,
        "template": args.template,
        "cwe_map": args.cwe_map,
        "scanner_cmd": args.scanner_cmd,
        "out_json": args.out_json,
        "out_text": args.out_text,
    }
    if args.no_fail_open:
        overrides["fail_open"] = False
    if args.match_any_cwe:
        overrides["match_any_cwe"] = True
    config.update({k: v for k, v in overrides.items() if v is not None})
    return config


def _build_backend(args: argparse.Namespace) -> tuple[LlmBackend, CassetteRecorder | None]:
    name = getattr(args, "backend", "replay")
    if name == "live":
        backend: LlmBackend = LiveBackend(model_id=args.model)
        if args.cassette:
            recorder = CassetteRecorder(backend, args.cassette)
            return recorder, recorder
        return backend, None
    if name == "replay":
        if not args.cassette:
            raise BackendConfigError("--cassette is required with the replay backend")
        return ReplayBackend(args.cassette), None
    verdicts = {}
    if args.verdicts:
        verdicts = json.loads(Path(args.verdicts).read_text(encoding="utf-8"))
        if not isinstance(verdicts, dict):
            raise BackendConfigError("--verdicts file must hold a JSON object")
    # With no script the scripted backend behaves as a conservative
    # retain-everything reviewer.
    default = None if verdicts else "true_positive"
    return ScriptedBackend(verdicts, default=default), None


def cmd_run(args: argparse.Namespace) -> int:
    try:
        plan = plan_mission(_mission_config(args))
        backend, recorder = _build_backend(args)
    except (ConfigError, BackendConfigError, CassetteError, json.JSONDecodeError, OSError) as exc:
        if args.parser is not None:
            args.parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    gt = None
    baseline = None
    try:
        if plan.ground_truth_path is not None:
            gt = load_ground_truth(plan.ground_truth_path.read_bytes())
        if plan.baseline_path is not None:
            baseline = load_detections(plan.baseline_path.read_bytes())
    except (GroundTruthError, DetectionsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    succeeded = False
    try:
        mission = run_mission(plan, backend)
        succeeded = True
    except ScannerError as exc:
        print(f"scanner error: {exc}", file=sys.stderr)
        return EXIT_SCANNER
    except ScannerOutputError as exc:
        print(f"scanner output error: {exc}", file=sys.stderr)
        return EXIT_SCANNER
    except FilterError as exc:
        # Only reachable with --no-fail-open; strictness was asked for.
        print(f"filter error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        # Recorded exchanges are kept even when a later stage fails, but a
        # failed run never clobbers an existing cassette with an empty one.
        if recorder is not None and (succeeded or recorder.record_count):
            recorder.save()

    report = build_report(mission, gt, baseline)
    plan.out_json.parent.mkdir(parents=True, exist_ok=True)
    plan.out_json.write_bytes(render_json(report))
    plan.out_text.parent.mkdir(parents=True, exist_ok=True)
    plan.out_text.write_text(render_text(report), encoding="utf-8")
    if args.detections_out:
        Path(args.detections_out).write_bytes(
            serialize_detections(
                {
                    (ff.finding.test_id, ff.finding.cwe.code)
                    for ff in mission.kept
                    if ff.finding.test_id is not None
                }
            )
        )
    print(
        f"run {report.run_id}: retained {len(report.retained)}, "
        f"suppressed {len(report.suppressed)}, "
        f"fail-open events {len(report.fail_open_events)}"
    )
    print(f"reports written to {plan.out_json} and {plan.out_text}")
    return EXIT_OK


def cmd_scan(args: argparse.Namespace) -> int:
    try:
        plan = plan_mission(
            {"target_root": args.target, "scanner_cmd": args.scanner_cmd or None}
        )
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        payload = run_scanner(plan)
    except ScannerError as exc:
        print(f"scanner error: {exc}", file=sys.stderr)
        return EXIT_SCANNER
    if args.out:
        Path(args.out).write_bytes(payload)
        print(f"scanner output written to {args.out}")
    else:
        sys.stdout.buffer.write(payload)
    return EXIT_OK


def cmd_filter(args: argparse.Namespace) -> int:
    # A filter run is a mission over saved scanner output without scoring.
    args.ground_truth = None
    args.baseline = None
    return cmd_run(args)


def cmd_score(args: argparse.Namespace) -> int:
    try:
        detections = load_detections(Path(args.detections).read_bytes())
        gt = load_ground_truth(Path(args.ground_truth).read_bytes())
        baseline = (
            load_detections(Path(args.baseline).read_bytes()) if args.baseline else None
        )
    except (DetectionsError, GroundTruthError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    card = score_per_cwe(detections, gt, match_any_cwe=args.match_any_cwe)
    print(f"metrics vs ground truth ({card.overall[0].total} test cases):")
    print("\n".join(format_scorecard_text(card)))
    if baseline is not None:
        baseline_card = score_per_cwe(baseline, gt, match_any_cwe=args.match_any_cwe)
        comparison = compare(baseline_card, card)
        print()
        print("baseline metrics:")
        print("\n".join(format_scorecard_text(baseline_card)))
        print()
        print("f1 deltas vs baseline:")
        print("\n".join(format_comparison_text(comparison)))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        report = load_report(Path(args.input).read_bytes())
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out_json:
        Path(args.out_json).write_bytes(render_json(report))
    text = render_text(
        report, max_retained=args.max_retained, max_suppressed=args.max_suppressed
    )
    if args.out_text:
        Path(args.out_text).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    args.backend = "replay"
    return cmd_run(args)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sastsieve",
        description="Filter static-analysis security findings through an LLM reviewer "
        "with fail-open retention, then score against benchmark ground truth.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parser.set_defaults(parser=None)

    run = sub.add_parser("run", help="execute the full pipeline and write reports")
    _add_run_flags(run)
    run.set_defaults(func=cmd_run, parser=run)

    scan = sub.add_parser("scan", help="run the external scanner and emit its JSON")
    scan.add_argument("--target", required=True, help="source tree to scan")
    scan.add_argument("--scanner-cmd", help="scanner executable (default semgrep)")
    scan.add_argument("--out", help="write scanner JSON here instead of stdout")
    scan.set_defaults(func=cmd_scan)

    filt = sub.add_parser("filter", help="filter saved scanner output without scoring")
    _add_run_flags(filt)
    filt.set_defaults(func=cmd_filter, parser=filt)

    score_p = sub.add_parser("score", help="score a detections file against ground truth")
    score_p.add_argument("--detections", required=True, help="TestCaseId,CWE lines")
    score_p.add_argument("--ground-truth", required=True, help="expected-results CSV")
    score_p.add_argument("--baseline", help="baseline detections for delta columns")
    score_p.add_argument("--match-any-cwe", action="store_true", help="score by file only")
    score_p.set_defaults(func=cmd_score)

    rep = sub.add_parser("report", help="re-render a saved JSON report")
    rep.add_argument("--in", dest="input", required=True, help="JSON report file")
    rep.add_argument("--out-json", help="rewrite canonical JSON here")
    rep.add_argument("--out-text", help="write the text report here instead of stdout")
    rep.add_argument("--max-retained", type=int, default=20, help="retained findings shown in text")
    rep.add_argument("--max-suppressed", type=int, default=10, help="suppressed findings shown in text")
    rep.set_defaults(func=cmd_report)

    replay = sub.add_parser("replay", help="rerun a mission from a recorded cassette")
    _add_run_flags(replay, replay_only=True)
    replay.set_defaults(func=cmd_replay, parser=replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
