"""Scanner-independent domain types shared by every stage of the pipeline.

Everything in here is an immutable value object; instances can be shared
freely between threads.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum

TEST_CASE_PATTERN = re.compile(r"BenchmarkTest\d{5}")

# The eleven benchmark categories with their canonical names. Any other code
# is rendered as "Other".
BENCHMARK_CWE_NAMES = {
    22: "Path Traversal",
    78: "Command Injection",
    79: "Cross-Site Scripting",
    89: "SQL Injection",
    90: "LDAP Injection",
    327: "Weak Cryptography",
    328: "Weak Hashing",
    330: "Weak Randomness",
    501: "Trust Boundary Violation",
    614: "Insecure Cookie",
    643: "XPath Injection",
}


@dataclass(frozen=True, order=True)
class TestCaseId:
    """Benchmark test-case identity, e.g. ``BenchmarkTest00001``."""

    value: str

    def __post_init__(self) -> None:
        if not TEST_CASE_PATTERN.fullmatch(self.value):
            raise ValueError(f"not a benchmark test-case id: {self.value!r}")

    def __str__(self) -> str:
        return self.value


def test_id_from_path(file_path: str) -> TestCaseId | None:
    """Extract the test-case id from a file path, or None.

    Matching looks only at the stem of the final path segment, so
    ``src/main/java/.../BenchmarkTest00001.java`` maps to
    ``BenchmarkTest00001`` and anything else maps to None. Total function:
    never raises, never returns a malformed id.
    """
    segment = re.split(r"[/\\]", file_path)[-1]
    dot = segment.rfind(".")
    stem = segment[:dot] if dot > 0 else segment
    if TEST_CASE_PATTERN.fullmatch(stem):
        return TestCaseId(stem)
    return None


@dataclass(frozen=True, order=True)
class CweCategory:
    """A CWE category keyed by numeric code; code 0 means "no CWE".

    The name is derived from the code, so benchmark categories always carry
    their canonical name and everything else is "Other".
    """

    code: int
    name: str = field(init=False, compare=False)

    def __post_init__(self) -> None:
        if self.code < 0:
            raise ValueError(f"CWE code must be non-negative, got {self.code}")
        object.__setattr__(self, "name", BENCHMARK_CWE_NAMES.get(self.code, "Other"))

    @property
    def label(self) -> str:
        return f"CWE-{self.code}"


class Severity(str, Enum):
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"


class Classification(str, Enum):
    TRUE_POSITIVE = "true_positive"
    FALSE_POSITIVE = "false_positive"


class Provenance(str, Enum):
    LLM_DECISION = "llm_decision"
    FAIL_OPEN = "fail_open"
    EVIDENCE_VERIFIED = "evidence_verified"


class FailOpenCause(str, Enum):
    TRANSPORT_ERROR = "transport_error"
    TIMEOUT = "timeout"
    MALFORMED_RESPONSE = "malformed_response"
    MISSING_ENTRY = "missing_entry"


@dataclass(frozen=True)
class Finding:
    """One normalized scanner alert."""

    id: str
    test_id: TestCaseId | None
    cwe: CweCategory
    file_path: str
    start_line: int
    end_line: int
    severity: Severity
    description: str
    origin: str

    def __post_init__(self) -> None:
        if self.start_line < 1:
            raise ValueError(f"start_line must be >= 1, got {self.start_line}")
        if self.end_line < self.start_line:
            raise ValueError(
                f"end_line {self.end_line} precedes start_line {self.start_line}"
            )


def finding_id(origin: str, file_path: str, start_line: int, cwe_code: int) -> str:
    """Stable identity for a finding; replay fixtures depend on it not changing."""
    key = "\x1f".join((origin, file_path, str(start_line), str(cwe_code)))
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Verdict:
    """The filter's decision on a finding plus how it was reached.

    Fail-open and evidence-verified verdicts always retain (classification
    true_positive); construction rejects anything else.
    """

    classification: Classification
    provenance: Provenance
    rationale: str | None = None
    cause: FailOpenCause | None = None
    evidence_ref: str | None = None

    def __post_init__(self) -> None:
        if self.provenance is Provenance.LLM_DECISION:
            if self.rationale is None:
                raise ValueError("llm_decision verdict requires a rationale")
            if self.cause is not None or self.evidence_ref is not None:
                raise ValueError("llm_decision verdict carries only a rationale")
        elif self.provenance is Provenance.FAIL_OPEN:
            if self.classification is not Classification.TRUE_POSITIVE:
                raise ValueError("fail-open never suppresses a finding")
            if self.cause is None:
                raise ValueError("fail_open verdict requires a cause")
            if self.rationale is not None or self.evidence_ref is not None:
                raise ValueError("fail_open verdict carries only a cause")
        elif self.provenance is Provenance.EVIDENCE_VERIFIED:
            if self.classification is not Classification.TRUE_POSITIVE:
                raise ValueError("evidence-verified findings are always retained")
            if self.evidence_ref is None:
                raise ValueError("evidence_verified verdict requires an evidence_ref")
            if self.rationale is not None or self.cause is not None:
                raise ValueError("evidence_verified verdict carries only a reference")

    @classmethod
    def llm(cls, classification: Classification | str, rationale: str) -> "Verdict":
        return cls(Classification(classification), Provenance.LLM_DECISION, rationale=rationale)

    @classmethod
    def fail_open(cls, cause: FailOpenCause | str) -> "Verdict":
        return cls(
            Classification.TRUE_POSITIVE,
            Provenance.FAIL_OPEN,
            cause=FailOpenCause(cause),
        )

    @classmethod
    def evidence(cls, evidence_ref: str) -> "Verdict":
        return cls(
            Classification.TRUE_POSITIVE,
            Provenance.EVIDENCE_VERIFIED,
            evidence_ref=evidence_ref,
        )

    @property
    def retained(self) -> bool:
        return self.classification is Classification.TRUE_POSITIVE


@dataclass(frozen=True)
class FilteredFinding:
    """A finding together with its verdict and, for filtered ones, its batch."""

    finding: Finding
    verdict: Verdict
    batch_index: int | None = None

    def __post_init__(self) -> None:
        needs_batch = self.verdict.provenance in (
            Provenance.LLM_DECISION,
            Provenance.FAIL_OPEN,
        )
        if needs_batch and self.batch_index is None:
            raise ValueError("filtered verdicts must record their batch index")
        if not needs_batch and self.batch_index is not None:
            raise ValueError("evidence-verified findings carry no batch index")
        if self.batch_index is not None and self.batch_index < 0:
            raise ValueError("batch_index must be non-negative")
