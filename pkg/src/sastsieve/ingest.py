"""Parse raw scanner output and normalize it into findings.

The parser understands Semgrep-style JSON: a top-level ``results`` list where
each result carries ``check_id``, ``path``, ``start.line``, ``end.line``,
``extra.severity``, ``extra.message`` and optionally
``extra.metadata.cwe`` (a string or a list of strings).
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Mapping

from .model import (
    BENCHMARK_CWE_NAMES,
    CweCategory,
    Finding,
    Severity,
    TestCaseId,
    finding_id,
    test_id_from_path,
)

log = logging.getLogger(__name__)

_CWE_TAG = re.compile(r"CWE[-_ ]?(\d+)", re.IGNORECASE)

# Unknown severity labels fold to warning: scoring never consults severity,
# reports do.
_SEVERITY_FOLD = {
    "info": Severity.INFO,
    "low": Severity.INFO,
    "note": Severity.INFO,
    "informational": Severity.INFO,
    "warning": Severity.WARNING,
    "warn": Severity.WARNING,
    "medium": Severity.WARNING,
    "moderate": Severity.WARNING,
    "error": Severity.ERROR,
    "high": Severity.ERROR,
    "critical": Severity.ERROR,
}


class ScannerOutputError(ValueError):
    """Raised when the scanner document is not valid JSON or lacks results."""


@dataclass(frozen=True)
class RawFinding:
    """One scanner result before normalization."""

    rule_id: str
    file_path: str
    start_line: int
    end_line: int
    severity_label: str
    message: str
    cwe_tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.start_line < 1 or self.end_line < self.start_line:
            raise ValueError(
                f"invalid line range {self.start_line}-{self.end_line} for {self.file_path}"
            )


@dataclass(frozen=True)
class CweMappingTable:
    """Maps scanner-reported CWE codes onto scoring categories.

    ``aliases`` redirects scanner vocabularies onto the benchmark codes
    (e.g. 326 -> 327); targets missing from ``entries`` resolve to "Other".
    """

    entries: Mapping[int, CweCategory]
    aliases: Mapping[int, int]

    @classmethod
    def default(cls) -> "CweMappingTable":
        entries = {code: CweCategory(code) for code in BENCHMARK_CWE_NAMES}
        # 326 tags weak-crypto strength variants, 759/760 tag unsalted/salted
        # one-way hashes; scanners commonly report these for the 327/328
        # benchmark categories.
        aliases = {326: 327, 759: 328, 760: 328}
        return cls(entries=entries, aliases=aliases)

    @classmethod
    def load(cls, text: str) -> "CweMappingTable":
        """Parse an alias override file: one ``alias_code -> category_code`` per line."""
        table = cls.default()
        aliases = dict(table.aliases)
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            left, sep, right = stripped.partition("->")
            if not sep:
                raise ScannerOutputError(
                    f"mapping table line {lineno}: expected 'alias -> category', got {stripped!r}"
                )
            try:
                aliases[int(left.strip())] = int(right.strip())
            except ValueError as exc:
                raise ScannerOutputError(f"mapping table line {lineno}: {exc}") from exc
        return cls(entries=table.entries, aliases=aliases)


@dataclass(frozen=True)
class ParsedScan:
    """Result of parsing one scanner document."""

    findings: tuple[RawFinding, ...]
    skipped: int


def _cwe_tags(result: dict) -> tuple[str, ...]:
    metadata = result.get("extra", {}).get("metadata", {})
    if not isinstance(metadata, dict):
        return ()
    cwe = metadata.get("cwe")
    if cwe is None:
        return ()
    if isinstance(cwe, str):
        return (cwe,)
    if isinstance(cwe, list):
        return tuple(str(tag) for tag in cwe)
    return (str(cwe),)


def parse_scanner_output(payload: bytes | str) -> ParsedScan:
    """Parse the scanner's JSON document into raw findings.

    Results lacking a usable path or start line are skipped and counted;
    everything else is mapped in document order.
    """
    if isinstance(payload, bytes):
        payload = payload.decode("utf-8", errors="replace")
    try:
        document = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise ScannerOutputError(f"scanner output is not valid JSON: {exc}") from exc
    if not isinstance(document, dict) or not isinstance(document.get("results"), list):
        raise ScannerOutputError("scanner output lacks a top-level 'results' array")

    findings: list[RawFinding] = []
    skipped = 0
    for result in document["results"]:
        if not isinstance(result, dict):
            skipped += 1
            continue
        path = result.get("path")
        start = result.get("start", {})
        start_line = start.get("line") if isinstance(start, dict) else None
        if not isinstance(path, str) or not path or not isinstance(start_line, int) or start_line < 1:
            skipped += 1
            continue
        end = result.get("end", {})
        end_line = end.get("line") if isinstance(end, dict) else None
        if not isinstance(end_line, int) or end_line < start_line:
            end_line = start_line
        extra = result.get("extra", {})
        if not isinstance(extra, dict):
            extra = {}
        findings.append(
            RawFinding(
                rule_id=str(result.get("check_id", "")),
                file_path=path,
                start_line=start_line,
                end_line=end_line,
                severity_label=str(extra.get("severity", "")),
                message=str(extra.get("message", "")),
                cwe_tags=_cwe_tags(result),
            )
        )
    if skipped:
        log.warning("skipped %d scanner results lacking a path or start line", skipped)
    return ParsedScan(findings=tuple(findings), skipped=skipped)


def map_cwe(cwe_tags: tuple[str, ...] | list[str], table: CweMappingTable) -> CweCategory:
    """Map scanner CWE tags onto a category via the first parseable code.

    Returns the code-0 "Other" category when no tag parses. Total function.
    """
    code = None
    for tag in cwe_tags:
        match = _CWE_TAG.search(tag)
        if match:
            code = int(match.group(1))
            break
        stripped = tag.strip()
        if stripped.isdigit():
            code = int(stripped)
            break
    if code is None:
        return CweCategory(0)
    if len(cwe_tags) > 1:
        log.warning("finding carries %d CWE tags; using the first parseable one (CWE-%d)",
                    len(cwe_tags), code)
    code = table.aliases.get(code, code)
    entry = table.entries.get(code)
    return entry if entry is not None else CweCategory(code)


def fold_severity(label: str) -> Severity:
    return _SEVERITY_FOLD.get(label.strip().lower(), Severity.WARNING)


def normalize(raw: RawFinding, table: CweMappingTable, scanner: str = "semgrep") -> Finding:
    """Turn a raw scanner result into a Finding with a stable derived id."""
    cwe = map_cwe(raw.cwe_tags, table)
    origin = f"{scanner}:{raw.rule_id}"
    return Finding(
        id=finding_id(origin, raw.file_path, raw.start_line, cwe.code),
        test_id=test_id_from_path(raw.file_path),
        cwe=cwe,
        file_path=raw.file_path,
        start_line=raw.start_line,
        end_line=raw.end_line,
        severity=fold_severity(raw.severity_label),
        description=raw.message,
        origin=origin,
    )


def dedupe_by_testcase(findings: list[Finding]) -> list[Finding]:
    """Keep the first finding per (test_id, CWE code) pair.

    Findings without a test id pass through untouched. Idempotent and
    order-preserving.
    """
    seen: set[tuple[TestCaseId, int]] = set()
    out: list[Finding] = []
    for finding in findings:
        if finding.test_id is None:
            out.append(finding)
            continue
        key = (finding.test_id, finding.cwe.code)
        if key in seen:
            continue
        seen.add(key)
        out.append(finding)
    return out
