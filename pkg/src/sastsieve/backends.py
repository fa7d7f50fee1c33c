"""LLM backend implementations: live HTTP, scripted, and record/replay.

Every backend exposes one method, ``complete(request) -> str``, returning
the model's raw text. Failures raise BackendError (transport) or
BackendTimeoutError; callers in the filter absorb both as fail-open. All
backends are safe to call from multiple threads.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Mapping

import requests

from .filter_agent import FINDING_HEADER, LlmRequest
from .model import Classification

log = logging.getLogger(__name__)

ENV_API_KEY = "QSC_API_KEY"
ENV_API_BASE = "QSC_API_BASE"
ENV_MODEL = "QSC_MODEL"

MAX_RETRIES = 2
BACKOFF_SECONDS = (1.0, 4.0)

_FINDING_ID_LINE = re.compile(rf"^{re.escape(FINDING_HEADER)}(\S+)\s*$", re.MULTILINE)


class BackendError(Exception):
    """Transport-class backend failure."""


class BackendTimeoutError(BackendError):
    """The request exceeded its timeout."""


class BackendConfigError(ValueError):
    """Backend construction failed; the message names what is missing."""


class CassetteError(ValueError):
    """The cassette file is missing or malformed."""


class CassetteMissError(BackendError):
    """Replay found no recorded response for the request."""


class LlmBackend(ABC):
    """Contract every backend satisfies."""

    @abstractmethod
    def complete(self, request: LlmRequest) -> str:
        """Return the model's raw text; raise BackendError on failure."""


def extract_finding_ids(user_text: str) -> list[str]:
    """Finding ids as enumerated by the prompt's findings block."""
    return _FINDING_ID_LINE.findall(user_text)


def request_digest(request: LlmRequest) -> str:
    """Cryptographic hash of the normalized request (timeout excluded)."""
    payload = json.dumps(
        {
            "model_id": request.model_id,
            "system_text": request.system_text,
            "user_text": request.user_text,
            "max_output_tokens": request.max_output_tokens,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class LiveBackend(LlmBackend):
    """OpenAI-compatible chat-completion client.

    Credentials come from the environment (QSC_API_KEY bearer token,
    QSC_API_BASE endpoint, QSC_MODEL default model). Transient transport
    failures (connection errors, 429, 5xx) are retried at most twice with
    1s/4s backoff; timeouts and malformed output are never retried.
    """

    def __init__(
        self,
        api_base: str | None = None,
        api_key: str | None = None,
        model_id: str | None = None,
        max_retries: int = MAX_RETRIES,
        backoff: tuple[float, ...] = BACKOFF_SECONDS,
    ):
        self.api_base = (api_base or os.environ.get(ENV_API_BASE, "")).rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.model_id = model_id or os.environ.get(ENV_MODEL, "")
        self.max_retries = max_retries
        self.backoff = backoff
        if not self.api_key:
            raise BackendConfigError(f"{ENV_API_KEY} is not set (bearer token required)")
        if not self.api_base:
            raise BackendConfigError(f"{ENV_API_BASE} is not set (endpoint URL required)")

    def _url(self) -> str:
        if self.api_base.endswith("/chat/completions"):
            return self.api_base
        return self.api_base + "/chat/completions"

    def complete(self, request: LlmRequest) -> str:
        model = request.model_id or self.model_id
        if not model:
            raise BackendConfigError(f"{ENV_MODEL} is not set and the request names no model")
        body = {
            "model": model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": 0,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_error: BackendError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff[min(attempt - 1, len(self.backoff) - 1)])
            try:
                response = requests.post(
                    self._url(), json=body, headers=headers, timeout=request.timeout
                )
            except requests.Timeout as exc:
                raise BackendTimeoutError(f"request timed out after {request.timeout}s") from exc
            except requests.RequestException as exc:
                last_error = BackendError(f"transport error: {exc}")
                log.warning("attempt %d/%d failed: %s", attempt + 1, self.max_retries + 1, exc)
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = BackendError(
                    f"transient HTTP {response.status_code}: {response.text[:200]}"
                )
                log.warning("attempt %d/%d: %s", attempt + 1, self.max_retries + 1, last_error)
                continue
            if response.status_code != 200:
                raise BackendError(f"HTTP {response.status_code}: {response.text[:500]}")
            try:
                content = response.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"unexpected completion envelope: {exc}") from exc
            if not isinstance(content, str):
                raise BackendError("unexpected completion envelope: content is not text")
            return content
        raise last_error if last_error else BackendError("no attempts made")


class ScriptedBackend(LlmBackend):
    """Returns canned verdicts keyed by finding id.

    Finding ids are read from the request's findings block. Ids without a
    scripted verdict fall back to ``default`` when given, and are omitted
    from the response otherwise (the filter then retains them fail-open).
    Read-only after construction, hence safe under concurrent calls.
    """

    def __init__(
        self,
        verdicts: Mapping[str, object] | None = None,
        default: Classification | str | None = None,
    ):
        normalized: dict[str, tuple[Classification, str]] = {}
        for fid, value in (verdicts or {}).items():
            if isinstance(value, (tuple, list)):
                classification, rationale = value
            else:
                classification, rationale = value, "scripted verdict"
            normalized[fid] = (Classification(classification), str(rationale))
        self._verdicts = normalized
        self._default = Classification(default) if default is not None else None

    def complete(self, request: LlmRequest) -> str:
        results = []
        for fid in extract_finding_ids(request.user_text):
            entry = self._verdicts.get(fid)
            if entry is None:
                if self._default is None:
                    continue
                entry = (self._default, "scripted default")
            classification, rationale = entry
            results.append(
                {
                    "finding_id": fid,
                    "classification": classification.value,
                    "rationale": rationale,
                }
            )
        return json.dumps({"results": results})


class ReplayBackend(LlmBackend):
    """Replays recorded responses byte for byte; a cache miss fails the call."""

    def __init__(self, cassette_path: Path | str):
        path = Path(cassette_path)
        try:
            records = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise CassetteError(f"cassette not found: {path}") from exc
        except (OSError, json.JSONDecodeError) as exc:
            raise CassetteError(f"cassette unreadable: {path}: {exc}") from exc
        if not isinstance(records, list):
            raise CassetteError(f"cassette must be a JSON array: {path}")
        self._responses: dict[str, str] = {}
        for record in records:
            if (
                not isinstance(record, dict)
                or not isinstance(record.get("request_digest"), str)
                or not isinstance(record.get("response_text"), str)
            ):
                raise CassetteError(f"malformed cassette record in {path}")
            self._responses[record["request_digest"]] = record["response_text"]

    def complete(self, request: LlmRequest) -> str:
        digest = request_digest(request)
        try:
            return self._responses[digest]
        except KeyError:
            raise CassetteMissError(f"no recorded response for request {digest[:12]}...") from None


class CassetteRecorder(LlmBackend):
    """Wraps another backend and persists every successful exchange.

    Records accumulate in memory and are written by ``save()`` (or on exit
    when used as a context manager), sorted by digest so the cassette file
    is independent of batch completion order.
    """

    def __init__(self, inner: LlmBackend, cassette_path: Path | str):
        self._inner = inner
        self._path = Path(cassette_path)
        self._records: dict[str, dict[str, str]] = {}
        self._lock = threading.Lock()

    def complete(self, request: LlmRequest) -> str:
        text = self._inner.complete(request)
        digest = request_digest(request)
        with self._lock:
            self._records[digest] = {
                "request_digest": digest,
                "request_user_text": request.user_text,
                "response_text": text,
            }
        return text

    @property
    def record_count(self) -> int:
        with self._lock:
            return len(self._records)

    def save(self) -> None:
        with self._lock:
            records = [self._records[k] for k in sorted(self._records)]
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._path.write_text(
            json.dumps(records, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    def __enter__(self) -> "CassetteRecorder":
        return self

    def __exit__(self, *exc_info) -> None:
        self.save()
