"""Load and validate benchmark ground truth.

The expected-results file is comma separated: test name, category name,
true/false vulnerability flag, numeric CWE code. Lines starting with ``#``
are comments; extra trailing columns are ignored; both LF and CRLF line
endings are accepted and fields are trimmed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .model import CweCategory, TestCaseId


class GroundTruthError(ValueError):
    """Raised on malformed or duplicate ground-truth records."""


@dataclass(frozen=True)
class GroundTruthEntry:
    test_id: TestCaseId
    category_name: str
    is_vulnerable: bool
    cwe: CweCategory


@dataclass(frozen=True)
class GroundTruth:
    """The benchmark label set, immutable after load."""

    entries: Mapping[TestCaseId, GroundTruthEntry]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def vulnerable_count(self) -> int:
        return sum(1 for e in self.entries.values() if e.is_vulnerable)

    @property
    def safe_count(self) -> int:
        return len(self.entries) - self.vulnerable_count

    def cwe_codes(self) -> list[int]:
        return sorted({e.cwe.code for e in self.entries.values()})

    def restrict_to_cwe(self, code: int) -> "GroundTruth":
        return GroundTruth(
            {tid: e for tid, e in self.entries.items() if e.cwe.code == code}
        )


@dataclass(frozen=True)
class DistributionSummary:
    """Per-CWE (vulnerable, safe) counts plus overall totals."""

    per_cwe: Mapping[int, tuple[int, int]]
    totals: tuple[int, int, int]  # (vulnerable, safe, all)


def _parse_flag(raw: str, lineno: int) -> bool:
    lowered = raw.strip().lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    raise GroundTruthError(f"line {lineno}: vulnerability flag must be true/false, got {raw!r}")


def load_ground_truth(payload: bytes | str) -> GroundTruth:
    """Parse the expected-results document into a GroundTruth.

    Raises GroundTruthError with the offending line number on malformed
    records, on a repeated test name, and on a document with no records.
    """
    if isinstance(payload, bytes):
        payload = payload.decode("utf-8-sig", errors="replace")
    entries: dict[TestCaseId, GroundTruthEntry] = {}
    for lineno, line in enumerate(payload.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = [part.strip() for part in stripped.split(",")]
        if len(fields) < 4:
            raise GroundTruthError(
                f"line {lineno}: expected at least 4 comma-separated fields, got {len(fields)}"
            )
        name, category, flag_raw, code_raw = fields[:4]
        try:
            test_id = TestCaseId(name)
        except ValueError as exc:
            raise GroundTruthError(f"line {lineno}: {exc}") from exc
        is_vulnerable = _parse_flag(flag_raw, lineno)
        try:
            code = int(code_raw)
        except ValueError as exc:
            raise GroundTruthError(f"line {lineno}: CWE code is not numeric: {code_raw!r}") from exc
        if test_id in entries:
            raise GroundTruthError(f"line {lineno}: duplicate test case {test_id}")
        entries[test_id] = GroundTruthEntry(
            test_id=test_id,
            category_name=category,
            is_vulnerable=is_vulnerable,
            cwe=CweCategory(code),
        )
    if not entries:
        raise GroundTruthError("ground-truth document contains no records")
    return GroundTruth(entries=entries)


def serialize_ground_truth(gt: GroundTruth) -> bytes:
    """Render entries back to the CSV form accepted by load_ground_truth."""
    lines = ["# test name, category, real vulnerability, cwe"]
    for entry in gt.entries.values():
        flag = "true" if entry.is_vulnerable else "false"
        lines.append(f"{entry.test_id},{entry.category_name},{flag},{entry.cwe.code}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def summarize_distribution(gt: GroundTruth) -> DistributionSummary:
    """Count vulnerable and safe cases per CWE code and overall."""
    per_cwe: dict[int, list[int]] = {}
    for entry in gt.entries.values():
        bucket = per_cwe.setdefault(entry.cwe.code, [0, 0])
        bucket[0 if entry.is_vulnerable else 1] += 1
    frozen = {code: (vuln, safe) for code, (vuln, safe) in sorted(per_cwe.items())}
    vulnerable = sum(v for v, _ in frozen.values())
    safe = sum(s for _, s in frozen.values())
    return DistributionSummary(per_cwe=frozen, totals=(vulnerable, safe, vulnerable + safe))


def detections_from_entries(entries: Iterable[GroundTruthEntry]) -> set[tuple[TestCaseId, int]]:
    """Convenience: the (test id, CWE code) pairs for a set of entries."""
    return {(e.test_id, e.cwe.code) for e in entries}
