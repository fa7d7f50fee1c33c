"""Mission orchestration: plan a run, obtain scanner output, route findings
by evidence, filter, and assemble the result.

Stages run sequentially (scan, parse, normalize, dedupe, correlate,
filter); only the filter stage is internally concurrent. Filter-stage
faults never abort a mission while fail-open is enabled.
"""

from __future__ import annotations

import json
import logging
import subprocess
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from .filter_agent import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_CONTEXT_BUDGET,
    DEFAULT_PARALLELISM,
    FilterConfig,
    FilterStats,
    filter_findings,
)
from .ingest import CweMappingTable, dedupe_by_testcase, normalize, parse_scanner_output
from .model import FilteredFinding, Finding, Verdict

log = logging.getLogger(__name__)

SCANNER_MODE_INVOKE = "invoke_external"
SCANNER_MODE_LOAD = "load_saved"


class ConfigError(ValueError):
    """Invalid mission configuration; the message names the offending field."""


class ScannerError(RuntimeError):
    """Scanner could not be launched, failed, or produced no usable output."""


@dataclass(frozen=True)
class MissionPlan:
    """Fully resolved run parameters."""

    target_root: Path | None = None
    scanner_mode: str = SCANNER_MODE_INVOKE
    scan_json_path: Path | None = None
    batch_size: int = DEFAULT_BATCH_SIZE
    parallelism: int = DEFAULT_PARALLELISM
    fail_open_enabled: bool = True
    ground_truth_path: Path | None = None
    baseline_path: Path | None = None
    out_json: Path = Path("report.json")
    out_text: Path = Path("report.txt")
    scanner_cmd: str = "semgrep"
    scanner_name: str = "semgrep"
    cwe_map_path: Path | None = None
    template_path: Path | None = None
    model_id: str = ""
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    timeout: float = 60.0
    match_any_cwe: bool = False


# Config keys, with the coercion each value goes through.
_PATH_KEYS = (
    "target_root",
    "scan_json",
    "ground_truth",
    "baseline",
    "out_json",
    "out_text",
    "cwe_map",
    "template",
)
_INT_KEYS = ("batch_size", "parallelism", "context_budget")
_BOOL_KEYS = ("fail_open", "match_any_cwe")
_STR_KEYS = ("scanner_cmd", "scanner_name", "model")
_FLOAT_KEYS = ("timeout",)
_KNOWN_KEYS = set(_PATH_KEYS) | set(_INT_KEYS) | set(_BOOL_KEYS) | set(_STR_KEYS) | set(_FLOAT_KEYS)


def parse_config_file(text: str) -> dict[str, str]:
    """Parse the ``key = value`` mission config format (# comments allowed)."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {stripped!r}")
        values[key.strip()] = value.strip()
    return values


def _coerce_bool(key: str, value: object) -> bool:
    if isinstance(value, bool):
        return value
    lowered = str(value).strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def plan_mission(config: Mapping[str, object]) -> MissionPlan:
    """Resolve a config mapping into a MissionPlan with defaults applied.

    Rejects unknown keys and out-of-range values with an error naming the
    field. A plan needs either target_root (external scan) or scan_json
    (saved scanner output); with both, the saved output wins and the target
    supplies source context.
    """
    unknown = set(config) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(str(k) for k in unknown))}")

    plan = MissionPlan()
    updates: dict[str, object] = {}

    key_to_field = {
        "target_root": "target_root",
        "scan_json": "scan_json_path",
        "ground_truth": "ground_truth_path",
        "baseline": "baseline_path",
        "out_json": "out_json",
        "out_text": "out_text",
        "cwe_map": "cwe_map_path",
        "template": "template_path",
        "fail_open": "fail_open_enabled",
        "model": "model_id",
    }

    for key in _PATH_KEYS:
        if config.get(key) is not None:
            updates[key_to_field.get(key, key)] = Path(str(config[key]))
    for key in _INT_KEYS:
        if config.get(key) is not None:
            try:
                value = int(str(config[key]))
            except ValueError:
                raise ConfigError(f"{key}: expected an integer, got {config[key]!r}") from None
            if value < 1:
                raise ConfigError(f"{key}: must be >= 1, got {value}")
            updates[key] = value
    for key in _BOOL_KEYS:
        if config.get(key) is not None:
            updates[key_to_field.get(key, key)] = _coerce_bool(key, config[key])
    for key in _STR_KEYS:
        if config.get(key) is not None:
            updates[key_to_field.get(key, key)] = str(config[key])
    for key in _FLOAT_KEYS:
        if config.get(key) is not None:
            try:
                value = float(str(config[key]))
            except ValueError:
                raise ConfigError(f"{key}: expected a number, got {config[key]!r}") from None
            if value <= 0:
                raise ConfigError(f"{key}: must be positive, got {value}")
            updates[key] = value

    plan = replace(plan, **updates)
    if plan.scan_json_path is not None:
        plan = replace(plan, scanner_mode=SCANNER_MODE_LOAD)
    elif plan.target_root is None:
        raise ConfigError("target_root: a target directory or scan_json is required")
    return plan


def run_scanner(plan: MissionPlan) -> bytes:
    """Obtain the scanner's JSON document per the plan's scanner mode.

    External invocation treats a nonzero exit as success when stdout still
    parses as a results document (scanners commonly signal "findings found"
    through the exit code).
    """
    if plan.scanner_mode == SCANNER_MODE_LOAD:
        path = plan.scan_json_path
        try:
            return path.read_bytes()
        except OSError as exc:
            raise ScannerError(f"saved scanner output unreadable: {path}: {exc}") from exc

    argv = [plan.scanner_cmd, "scan", "--config", "auto", "--json", str(plan.target_root)]
    log.info("invoking scanner: %s", " ".join(argv))
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=3600)
    except FileNotFoundError as exc:
        raise ScannerError(f"scanner executable not found: {plan.scanner_cmd}") from exc
    except subprocess.TimeoutExpired as exc:
        raise ScannerError(f"scanner timed out: {exc}") from exc
    if proc.returncode != 0:
        try:
            document = json.loads(proc.stdout.decode("utf-8", errors="replace"))
            parseable = isinstance(document, dict) and isinstance(document.get("results"), list)
        except json.JSONDecodeError:
            parseable = False
        if not parseable:
            stderr_tail = proc.stderr.decode("utf-8", errors="replace")[-2000:]
            raise ScannerError(
                f"scanner exited with {proc.returncode} and no parseable output:\n{stderr_tail}"
            )
        log.info("scanner exited %d but produced parseable output; continuing", proc.returncode)
    return proc.stdout


class EvidenceProvider(ABC):
    """Source of runtime evidence (UI traces, API logs, ...) for findings.

    ``query`` must be side-effect-free with respect to the finding set.
    No live provider ships; the routing interface exists so one can be
    plugged in.
    """

    name: str = "evidence"

    @abstractmethod
    def query(self, finding: Finding) -> str | None:
        """Return an evidence reference for the finding, or None."""


def correlate_evidence(
    findings: Sequence[Finding],
    providers: Sequence[EvidenceProvider] = (),
) -> tuple[list[FilteredFinding], list[Finding]]:
    """Split findings into evidence-verified and unverified.

    A finding is verified iff some provider returns evidence for it;
    provider failures are logged and treated as no evidence. With zero
    providers everything is unverified.
    """
    verified: list[FilteredFinding] = []
    unverified: list[Finding] = []
    for finding in findings:
        evidence_ref = None
        for provider in providers:
            try:
                ref = provider.query(finding)
            except Exception as exc:
                log.warning("evidence provider %s failed on %s: %s", provider.name, finding.id, exc)
                continue
            if ref:
                evidence_ref = f"{provider.name}:{ref}"
                break
        if evidence_ref is None:
            unverified.append(finding)
        else:
            verified.append(FilteredFinding(finding, Verdict.evidence(evidence_ref)))
    return verified, unverified


@dataclass(frozen=True)
class MissionResult:
    """Everything a run produced, immutable once assembled."""

    plan: MissionPlan
    scanner_finding_count: int
    skipped_results: int
    verified: tuple[FilteredFinding, ...]
    retained: tuple[FilteredFinding, ...]
    suppressed: tuple[FilteredFinding, ...]
    stats: FilterStats
    started_at: str = ""
    finished_at: str = ""

    @property
    def kept(self) -> tuple[FilteredFinding, ...]:
        """Verified plus retained findings: everything not suppressed."""
        return self.verified + self.retained


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _drop_duplicate_ids(findings: list[Finding]) -> list[Finding]:
    # Identical scanner results hash to the same id; keep the first so ids
    # stay pairwise distinct within the run.
    seen: set[str] = set()
    out = []
    for finding in findings:
        if finding.id in seen:
            continue
        seen.add(finding.id)
        out.append(finding)
    if len(out) != len(findings):
        log.info("dropped %d findings with duplicate ids", len(findings) - len(out))
    return out


def run_mission(
    plan: MissionPlan,
    backend,
    providers: Sequence[EvidenceProvider] = (),
) -> MissionResult:
    """Execute scan, parse, normalize, dedupe, correlate, filter, assemble."""
    started = _utcnow()
    payload = run_scanner(plan)
    parsed = parse_scanner_output(payload)
    log.info("scanner produced %d results (%d skipped)", len(parsed.findings), parsed.skipped)

    if plan.cwe_map_path is not None:
        table = CweMappingTable.load(plan.cwe_map_path.read_text(encoding="utf-8"))
    else:
        table = CweMappingTable.default()
    findings = [normalize(raw, table, scanner=plan.scanner_name) for raw in parsed.findings]
    deduped = _drop_duplicate_ids(dedupe_by_testcase(findings))
    log.info("%d findings after per-test-case dedupe", len(deduped))

    verified, unverified = correlate_evidence(deduped, providers)
    log.info("%d findings verified by evidence, %d sent to the filter", len(verified), len(unverified))

    template_text = None
    if plan.template_path is not None:
        template_text = plan.template_path.read_text(encoding="utf-8")
    retained, suppressed, stats = filter_findings(
        unverified,
        backend,
        FilterConfig(
            batch_size=plan.batch_size,
            parallelism=plan.parallelism,
            source_root=plan.target_root,
            context_budget=plan.context_budget,
            template_text=template_text,
            model_id=plan.model_id,
            timeout=plan.timeout,
            fail_open_enabled=plan.fail_open_enabled,
        ),
    )
    log.info(
        "filter retained %d and suppressed %d findings over %d batches",
        len(retained),
        len(suppressed),
        stats.batch_count,
    )
    return MissionResult(
        plan=plan,
        scanner_finding_count=len(parsed.findings),
        skipped_results=parsed.skipped,
        verified=tuple(verified),
        retained=tuple(retained),
        suppressed=tuple(suppressed),
        stats=stats,
        started_at=started,
        finished_at=_utcnow(),
    )
