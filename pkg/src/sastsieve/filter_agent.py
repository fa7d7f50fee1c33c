"""Contextual review of scanner findings with fail-open retention.

Unverified findings are batched, each batch is turned into a prompt with
source context, sent to an LLM backend, and the structured response is
validated. A finding is suppressed only when a well-formed response names
its id as a false positive; every failure mode retains findings instead.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .model import (
    Classification,
    FailOpenCause,
    FilteredFinding,
    Finding,
    Verdict,
)

log = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 15
DEFAULT_PARALLELISM = 4
DEFAULT_CONTEXT_BUDGET = 16_000
DEFAULT_TIMEOUT = 60.0
DEFAULT_MAX_OUTPUT_TOKENS = 4096

FINDINGS_PLACEHOLDER = "{{findings_block}}"
FINDING_HEADER = "### Finding "
_TRUNCATION_MARKER = "[... source truncated ...]\n"

SYSTEM_TEXT = (
    "You review static-analysis security findings and decide, from the "
    "provided source context, whether each one is a true positive (really "
    "exploitable) or a false positive (the flagged pattern is safe in "
    "context, e.g. the input is sanitized, validated, encoded, or "
    "parameterized before reaching the sink).\n"
    "Answer ONLY with a single JSON object, no prose and no code fences, "
    "of exactly this shape:\n"
    '{"results": [{"finding_id": "<id>", '
    '"classification": "true_positive" | "false_positive", '
    '"rationale": "<one short sentence>"}]}\n'
    "The results array must contain exactly one entry for every finding_id "
    "listed in the request, and no others."
)


class FilterError(RuntimeError):
    """Raised for batch failures only when fail-open is disabled."""


@dataclass(frozen=True)
class Batch:
    """A slice of findings reviewed in one LLM call."""

    index: int
    items: tuple[tuple[Finding, str], ...]

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("batch index must be non-negative")
        if not self.items:
            raise ValueError("a batch holds at least one finding")

    @property
    def findings(self) -> tuple[Finding, ...]:
        return tuple(finding for finding, _ in self.items)


@dataclass(frozen=True)
class LlmRequest:
    model_id: str
    system_text: str
    user_text: str
    timeout: float = DEFAULT_TIMEOUT
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS

    def __post_init__(self) -> None:
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class FilterVerdictRecord:
    """One classification entry from a parsed response."""

    finding_id: str
    classification: Classification
    rationale: str


@dataclass(frozen=True)
class BatchOutcome:
    """What one backend exchange produced: records, or a failure cause."""

    records: tuple[FilterVerdictRecord, ...] | None
    cause: FailOpenCause | None
    raw_response: str | None
    latency: float

    def __post_init__(self) -> None:
        if (self.records is None) == (self.cause is None):
            raise ValueError("outcome carries either records or a failure cause")
        if self.cause is FailOpenCause.MISSING_ENTRY:
            raise ValueError("missing_entry is a per-finding cause, not a batch failure")

    @classmethod
    def parsed(
        cls,
        records: Sequence[FilterVerdictRecord],
        raw_response: str | None = None,
        latency: float = 0.0,
    ) -> "BatchOutcome":
        return cls(records=tuple(records), cause=None, raw_response=raw_response, latency=latency)

    @classmethod
    def failed(
        cls,
        cause: FailOpenCause | str,
        raw_response: str | None = None,
        latency: float = 0.0,
    ) -> "BatchOutcome":
        return cls(records=None, cause=FailOpenCause(cause), raw_response=raw_response, latency=latency)

    @property
    def ok(self) -> bool:
        return self.records is not None


@dataclass(frozen=True)
class FilterStats:
    """Run-level accounting for the filter stage."""

    batch_count: int
    llm_calls: int
    fail_open_events: tuple[tuple[int, str], ...]  # (batch_index, cause)
    total_latency: float

    @property
    def fail_open_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for _, cause in self.fail_open_events:
            counts[cause] = counts.get(cause, 0) + 1
        return counts


@dataclass(frozen=True)
class FilterConfig:
    batch_size: int = DEFAULT_BATCH_SIZE
    parallelism: int = DEFAULT_PARALLELISM
    source_root: Path | None = None
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    template_text: str | None = None  # None -> packaged default template
    model_id: str = ""
    timeout: float = DEFAULT_TIMEOUT
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    fail_open_enabled: bool = True

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.context_budget < 1:
            raise ValueError("context_budget must be >= 1")


def default_template() -> str:
    """The prompt template shipped with the package."""
    return (
        resources.files(__package__)
        .joinpath("templates/review_prompt.txt")
        .read_text(encoding="utf-8")
    )


def partition_batches(findings: Sequence[Finding], size: int) -> list[Batch]:
    """Split findings in order into ceil(n / size) batches of at most `size`."""
    if size < 1:
        raise ValueError("batch size must be >= 1")
    batches = []
    for index, start in enumerate(range(0, len(findings), size)):
        chunk = findings[start : start + size]
        batches.append(Batch(index=index, items=tuple((f, "") for f in chunk)))
    return batches


def read_source_context(
    finding: Finding,
    root: Path | str,
    budget: int = DEFAULT_CONTEXT_BUDGET,
) -> str:
    """Read the finding's source file, windowed around its lines when large.

    Files within the budget are returned verbatim. Larger files yield a
    window that always contains the finding's (clamped) line range, grown
    outward at line boundaries until the budget is reached, with truncation
    markers for omitted regions. Raises OSError when the file is missing.
    """
    path = Path(root) / finding.file_path
    text = path.read_text(encoding="utf-8", errors="replace")
    if len(text) <= budget:
        return text

    lines = text.splitlines(keepends=True)
    last = len(lines) - 1
    lo = min(finding.start_line - 1, last)
    hi = min(finding.end_line - 1, last)
    remaining = budget - 2 * len(_TRUNCATION_MARKER)
    size = sum(len(lines[i]) for i in range(lo, hi + 1))
    while True:
        grew = False
        if lo > 0 and size + len(lines[lo - 1]) <= remaining:
            lo -= 1
            size += len(lines[lo])
            grew = True
        if hi < last and size + len(lines[hi + 1]) <= remaining:
            hi += 1
            size += len(lines[hi])
            grew = True
        if not grew:
            break
    parts = []
    if lo > 0:
        parts.append(_TRUNCATION_MARKER)
    parts.extend(lines[lo : hi + 1])
    if hi < last:
        parts.append(_TRUNCATION_MARKER)
    return "".join(parts)


def _findings_block(batch: Batch) -> str:
    sections = []
    for finding, snippet in batch.items:
        sections.append(
            "\n".join(
                [
                    f"{FINDING_HEADER}{finding.id}",
                    f"- type: {finding.cwe.name} ({finding.cwe.label})",
                    f"- file: {finding.file_path}",
                    f"- lines: {finding.start_line}-{finding.end_line}",
                    f"- severity: {finding.severity.value}",
                    f"- reported by: {finding.origin}",
                    f"- scanner message: {finding.description}",
                    "",
                    "Source context:",
                    "```",
                    snippet.rstrip("\n"),
                    "```",
                    "",
                ]
            )
        )
    return "\n".join(sections)


def build_prompt(
    batch: Batch,
    template: str,
    *,
    model_id: str = "",
    timeout: float = DEFAULT_TIMEOUT,
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
) -> LlmRequest:
    """Render the batch into a request via the template's findings placeholder."""
    block = _findings_block(batch)
    if FINDINGS_PLACEHOLDER in template:
        user_text = template.replace(FINDINGS_PLACEHOLDER, block)
    else:
        log.warning("prompt template lacks %s; appending findings block", FINDINGS_PLACEHOLDER)
        user_text = template.rstrip("\n") + "\n\n" + block
    return LlmRequest(
        model_id=model_id,
        system_text=SYSTEM_TEXT,
        user_text=user_text,
        timeout=timeout,
        max_output_tokens=max_output_tokens,
    )


def _strip_fences(raw: str) -> str:
    text = raw.strip()
    if text.startswith("```") and text.endswith("```") and len(text) > 6:
        body = text[3:-3]
        newline = body.find("\n")
        if newline != -1 and (not body[:newline].strip() or body[:newline].strip().isalpha()):
            body = body[newline + 1 :]
        text = body.strip()
    return text


def parse_llm_response(raw: str, batch: Batch, latency: float = 0.0) -> BatchOutcome:
    """Validate the backend's raw text against the verdict schema.

    Failure is a value: anything that is not exactly one JSON object of the
    documented shape yields a malformed_response outcome. Records naming
    finding ids outside the batch are dropped with a warning.
    """
    try:
        document = json.loads(_strip_fences(raw))
    except (json.JSONDecodeError, RecursionError):
        return BatchOutcome.failed(FailOpenCause.MALFORMED_RESPONSE, raw, latency)
    if not isinstance(document, dict) or not isinstance(document.get("results"), list):
        return BatchOutcome.failed(FailOpenCause.MALFORMED_RESPONSE, raw, latency)

    known_ids = {finding.id for finding in batch.findings}
    records: list[FilterVerdictRecord] = []
    seen: set[str] = set()
    for item in document["results"]:
        if not isinstance(item, dict) or not isinstance(item.get("finding_id"), str):
            return BatchOutcome.failed(FailOpenCause.MALFORMED_RESPONSE, raw, latency)
        try:
            classification = Classification(item.get("classification"))
        except ValueError:
            return BatchOutcome.failed(FailOpenCause.MALFORMED_RESPONSE, raw, latency)
        rationale = item.get("rationale", "")
        if not isinstance(rationale, str):
            return BatchOutcome.failed(FailOpenCause.MALFORMED_RESPONSE, raw, latency)
        fid = item["finding_id"]
        if fid not in known_ids:
            log.warning("batch %d: dropping verdict for unknown finding id %r", batch.index, fid)
            continue
        if fid in seen:
            log.warning("batch %d: duplicate verdict for %r; keeping the first", batch.index, fid)
            continue
        seen.add(fid)
        records.append(
            FilterVerdictRecord(finding_id=fid, classification=classification, rationale=rationale)
        )
    return BatchOutcome.parsed(records, raw, latency)


def apply_verdicts(batch: Batch, outcome: BatchOutcome) -> list[FilteredFinding]:
    """Attach verdicts to every finding of the batch, exactly once each.

    A failed outcome retains the whole batch fail-open. A parsed outcome
    suppresses findings named false positive, retains findings named true
    positive, and retains unnamed findings fail-open (missing_entry).
    """
    if not outcome.ok:
        verdict = Verdict.fail_open(outcome.cause)
        return [FilteredFinding(f, verdict, batch.index) for f in batch.findings]
    by_id = {record.finding_id: record for record in outcome.records}
    result = []
    for finding in batch.findings:
        record = by_id.get(finding.id)
        if record is None:
            verdict = Verdict.fail_open(FailOpenCause.MISSING_ENTRY)
        else:
            verdict = Verdict.llm(record.classification, record.rationale)
        result.append(FilteredFinding(finding, verdict, batch.index))
    return result


def _attach_snippets(batch: Batch, config: FilterConfig) -> Batch:
    if config.source_root is None:
        return batch
    items = tuple(
        (finding, read_source_context(finding, config.source_root, config.context_budget))
        for finding, _ in batch.items
    )
    return Batch(index=batch.index, items=items)


def _process_batch(
    batch: Batch, backend, template: str, config: FilterConfig
) -> tuple[BatchOutcome, bool]:
    """Run one batch end to end; the flag records whether the backend was called."""
    # Local import: backends depends on this module for LlmRequest.
    from .backends import BackendError, BackendTimeoutError

    try:
        batch = _attach_snippets(batch, config)
    except OSError as exc:
        log.warning("batch %d: failed to read source context: %s", batch.index, exc)
        return BatchOutcome.failed(FailOpenCause.TRANSPORT_ERROR, None, 0.0), False
    request = build_prompt(
        batch,
        template,
        model_id=config.model_id,
        timeout=config.timeout,
        max_output_tokens=config.max_output_tokens,
    )
    started = time.perf_counter()
    try:
        raw = backend.complete(request)
    except BackendTimeoutError as exc:
        log.warning("batch %d: backend timed out: %s", batch.index, exc)
        return BatchOutcome.failed(FailOpenCause.TIMEOUT, None, time.perf_counter() - started), True
    except BackendError as exc:
        log.warning("batch %d: backend failed: %s", batch.index, exc)
        return (
            BatchOutcome.failed(FailOpenCause.TRANSPORT_ERROR, None, time.perf_counter() - started),
            True,
        )
    except Exception as exc:  # backend contract violation; still fail open
        log.error("batch %d: unexpected backend error: %s", batch.index, exc)
        return (
            BatchOutcome.failed(FailOpenCause.TRANSPORT_ERROR, None, time.perf_counter() - started),
            True,
        )
    return parse_llm_response(raw, batch, time.perf_counter() - started), True


def filter_findings(
    findings: Sequence[Finding],
    backend,
    config: FilterConfig | None = None,
) -> tuple[list[FilteredFinding], list[FilteredFinding], FilterStats]:
    """Review findings in batches and split them into retained and suppressed.

    The union of retained and suppressed is exactly the input; ordering
    follows the original finding order regardless of batch completion
    order. All backend failures are absorbed as fail-open retention unless
    fail-open is disabled, in which case the first batch failure raises
    FilterError.
    """
    config = config or FilterConfig()
    batches = partition_batches(findings, config.batch_size)
    template = config.template_text if config.template_text is not None else default_template()

    results: list[tuple[BatchOutcome, bool]]
    if len(batches) <= 1 or config.parallelism == 1:
        results = [_process_batch(b, backend, template, config) for b in batches]
    else:
        workers = min(config.parallelism, len(batches))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda b: _process_batch(b, backend, template, config), batches)
            )

    retained: list[FilteredFinding] = []
    suppressed: list[FilteredFinding] = []
    events: list[tuple[int, str]] = []
    llm_calls = 0
    total_latency = 0.0
    for batch, (outcome, called) in zip(batches, results):
        llm_calls += int(called)
        total_latency += outcome.latency
        if not outcome.ok:
            if not config.fail_open_enabled:
                raise FilterError(
                    f"batch {batch.index} failed ({outcome.cause.value}) with fail-open disabled"
                )
            events.append((batch.index, outcome.cause.value))
        for filtered in apply_verdicts(batch, outcome):
            if filtered.verdict.cause is FailOpenCause.MISSING_ENTRY:
                if not config.fail_open_enabled:
                    raise FilterError(
                        f"batch {batch.index} response omitted finding {filtered.finding.id} "
                        "with fail-open disabled"
                    )
                events.append((batch.index, FailOpenCause.MISSING_ENTRY.value))
            if filtered.verdict.retained:
                retained.append(filtered)
            else:
                suppressed.append(filtered)

    stats = FilterStats(
        batch_count=len(batches),
        llm_calls=llm_calls,
        fail_open_events=tuple(events),
        total_latency=total_latency,
    )
    return retained, suppressed, stats
