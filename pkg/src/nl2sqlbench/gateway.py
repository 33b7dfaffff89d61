"""Uniform access to generation backends plus SQL extraction from raw output.

Two backends share one interface: a remote chat-completions service (for real
model serving engines) and a table-driven mock scripted from a fixture file
(for hermetic runs and tests). Extra backend parameters are forwarded into
the request body untouched, so engine-specific knobs such as diffusion block
or window sizes pass through without the harness interpreting them.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import BackendError, ConfigError

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.8  # sampling default; greedy forces 0
DEFAULT_MAX_NEW_TOKENS = 2048
DEFAULT_TIMEOUT_SECONDS = 120.0
DEFAULT_RETRIES = 2
DEFAULT_MAX_CONCURRENCY = 8


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    num_candidates: int = 1
    backend_params: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        if self.num_candidates < 1:
            raise ConfigError("num_candidates must be at least 1")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError("temperature must be within [0, 2]")


@dataclass
class Candidate:
    trajectory_id: int
    raw_text: str
    extracted_sql: str | None
    latency_seconds: float
    token_count: int
    tokens_approximate: bool = False
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.extracted_sql is None


@dataclass
class BackendReply:
    text: str
    usage_tokens: int | None
    latency_seconds: float


def count_tokens(raw_text: str, backend_usage: int | None = None) -> int:
    """Backend-reported usage when available, else a whitespace-split approximation."""
    if backend_usage is not None:
        return int(backend_usage)
    return len(raw_text.split())


_ANSWER_RE = re.compile(r"<answer>(.*?)(?:</answer>|$)", re.IGNORECASE | re.DOTALL)
_FENCE_RE = re.compile(r"```sql\b[ \t]*\r?\n?(.*?)(?:```|$)", re.IGNORECASE | re.DOTALL)


def extract_sql(raw_text: str) -> str | None:
    """Pull the SQL statement out of a raw model reply.

    Preference order: the last ```sql fence inside the <answer> section, then
    the last ```sql fence anywhere, then the suffix starting at the first
    top-level SELECT/WITH keyword. Returns None when nothing SQL-like exists.
    """
    if not raw_text:
        return None
    answer_sections = _ANSWER_RE.findall(raw_text)
    search_spaces = [answer_sections[-1]] if answer_sections else []
    search_spaces.append(raw_text)
    for space in search_spaces:
        fences = _FENCE_RE.findall(space)
        if fences:
            return _clean_sql(fences[-1])
    fallback = _select_suffix(raw_text)
    if fallback:
        return _clean_sql(fallback)
    return None


def _clean_sql(text: str) -> str | None:
    cleaned = text.strip()
    cleaned = re.sub(r"```\s*$", "", cleaned).strip()
    cleaned = cleaned.rstrip(";").strip()
    return cleaned or None


_CTE_HEAD = re.compile(r"WITH\s+(?:RECURSIVE\s+)?\w+(?:\s*\([^)]*\))?\s+AS\s*\(", re.IGNORECASE)


def _select_suffix(text: str) -> str | None:
    stripped = re.sub(r"'(?:[^']|'')*'", lambda m: " " * len(m.group(0)), text)
    depth = 0
    for match in re.finditer(r"[()]|\b(?:SELECT|WITH)\b", stripped, flags=re.IGNORECASE):
        token = match.group(0)
        if token == "(":
            depth += 1
        elif token == ")":
            depth = max(0, depth - 1)
        elif depth == 0:
            # prose uses "with" freely, so WITH only counts as a CTE head
            if token.upper() == "WITH" and not _CTE_HEAD.match(stripped, match.start()):
                continue
            return text[match.start():]
    return None


# ---------------------------------------------------------------------------
# Backends


@dataclass
class MockRule:
    pattern: str
    reply: str
    prompt_match: str = "substring"  # or "exact"
    trajectory_id: int | None = None
    latency: float = 0.0
    tokens: int | None = None

    def matches(self, prompt: str, trajectory_id: int) -> bool:
        if self.trajectory_id is not None and self.trajectory_id != trajectory_id:
            return False
        if self.prompt_match == "exact":
            return prompt == self.pattern
        return self.pattern in prompt


class MockBackend:
    """Table-driven scripted backend; first matching rule wins.

    Fully deterministic given the prompt: replies, latencies, and token
    counts come from the fixture, so end-to-end runs are reproducible
    byte-for-byte. Every call is appended to ``calls`` for auditing.
    """

    name = "mock"

    def __init__(self, rules: list[MockRule] | None = None, default_reply: str = ""):
        self.rules = list(rules or [])
        self.default_reply = default_reply
        self.calls: list[tuple[str, int]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path, default_reply: str = "") -> "MockBackend":
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(entries, list):
            raise ConfigError(f"{path}: mock fixture must be an array of rules")
        rules = []
        for idx, entry in enumerate(entries):
            if "pattern" not in entry or "reply" not in entry:
                raise ConfigError(f"{path}: rule {idx} needs 'pattern' and 'reply'")
            rules.append(
                MockRule(
                    pattern=entry["pattern"],
                    reply=entry["reply"],
                    prompt_match=entry.get("prompt_match", "substring"),
                    trajectory_id=entry.get("trajectory_id"),
                    latency=float(entry.get("latency", 0.0)),
                    tokens=entry.get("tokens"),
                )
            )
        return cls(rules, default_reply=default_reply)

    def complete(self, request: GenerationRequest, trajectory_id: int) -> BackendReply:
        with self._lock:
            self.calls.append((request.prompt, trajectory_id))
        for rule in self.rules:
            if rule.matches(request.prompt, trajectory_id):
                return BackendReply(rule.reply, rule.tokens, rule.latency)
        return BackendReply(self.default_reply, None, 0.0)


class RemoteBackend:
    """Chat-completions client with retries, backoff, and an in-flight cap."""

    name = "remote"

    def __init__(
        self,
        url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        timeout_seconds: float = DEFAULT_TIMEOUT_SECONDS,
        retries: int = DEFAULT_RETRIES,
        max_concurrency: int = DEFAULT_MAX_CONCURRENCY,
    ):
        self.url = url or os.environ.get("BACKEND_URL")
        self.api_key = api_key or os.environ.get("BACKEND_API_KEY")
        self.model = model or os.environ.get("BACKEND_MODEL")
        if not self.url:
            raise ConfigError("remote backend needs a URL (flag or BACKEND_URL)")
        self.timeout_seconds = timeout_seconds
        self.retries = retries
        self._semaphore = threading.Semaphore(max_concurrency)

    def build_body(self, request: GenerationRequest, trajectory_id: int) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
            "n": 1,
        }
        if request.seed is not None:
            body["seed"] = request.seed + trajectory_id
        body.update(request.backend_params)  # opaque pass-through, never interpreted
        return body

    def complete(self, request: GenerationRequest, trajectory_id: int) -> BackendReply:
        import requests

        body = self.build_body(request, trajectory_id)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            start = time.monotonic()
            try:
                with self._semaphore:
                    response = requests.post(
                        self.url, json=body, headers=headers, timeout=self.timeout_seconds
                    )
                response.raise_for_status()
                payload = response.json()
                text = payload["choices"][0]["message"]["content"]
                usage = payload.get("usage") or {}
                tokens = usage.get("completion_tokens", usage.get("total_tokens"))
                return BackendReply(text or "", tokens, time.monotonic() - start)
            except Exception as exc:  # noqa: BLE001 - transport errors vary by stack
                last_error = exc
                if attempt < self.retries:
                    time.sleep(2**attempt)
        raise BackendError(f"backend unreachable after {self.retries} retries: {last_error}")


def generate(request: GenerationRequest, backend) -> list[Candidate]:
    """Produce exactly num_candidates candidates, extraction applied to each.

    Per-candidate transport failures become failed candidates (empty text, no
    extracted SQL, error message attached) so the pool length is always
    num_candidates and the run continues.
    """

    def one(trajectory_id: int) -> Candidate:
        start = time.monotonic()
        try:
            reply = backend.complete(request, trajectory_id)
        except BackendError as exc:
            logger.warning("trajectory %d failed: %s", trajectory_id, exc)
            return Candidate(
                trajectory_id=trajectory_id,
                raw_text="",
                extracted_sql=None,
                latency_seconds=time.monotonic() - start,
                token_count=0,
                error=str(exc),
            )
        return Candidate(
            trajectory_id=trajectory_id,
            raw_text=reply.text,
            extracted_sql=extract_sql(reply.text),
            latency_seconds=reply.latency_seconds,
            token_count=count_tokens(reply.text, reply.usage_tokens),
            tokens_approximate=reply.usage_tokens is None,
        )

    if request.num_candidates == 1:
        return [one(0)]
    with ThreadPoolExecutor(max_workers=min(request.num_candidates, DEFAULT_MAX_CONCURRENCY)) as pool:
        return list(pool.map(one, range(request.num_candidates)))
