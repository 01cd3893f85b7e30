"""Chat-completion access for LLM evaluators.

Remote models are reached over the OpenAI-compatible ``/chat/completions``
wire format.  Models whose endpoint is ``mock`` are answered in-process by
deterministic mock backends and never touch the network.  Every reply goes
through an append-only JSONL cache keyed by (model, prompt, temperature,
run index).

Cache file format, one JSON object per line::

    {"key": "<sha256>", "model_id": "...", "run_index": 0, "attempt": 0, "reply": "..."}
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

from .prompting import ParseFailure, RenderedPrompt, parse_rating

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.00001
FALLBACK_RATING = 3
REMINDER = "Respond with a single digit 1-5."
MOCK_ENDPOINT = "mock"


class LLMError(RuntimeError):
    pass


class AuthError(LLMError):
    pass


class TransportError(LLMError):
    pass


class MalformedResponse(LLMError):
    pass


class OfflineError(LLMError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """One evaluator model.

    ``endpoint`` is either an HTTP(S) base URL of an OpenAI-compatible server
    or ``"mock"``.  For mocks the ``model_id`` selects the behaviour:
    ``echo:<text>`` always replies ``<text>``; ``transcript:<path>`` replays a
    recorded JSONL transcript; any other id must be registered with the
    client (see ``LLMClient(mocks=...)``).
    """

    model_id: str
    endpoint: str = MOCK_ENDPOINT
    auth_env_var: str | None = None
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = 16
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 1.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not self.is_mock:
            url = httpx.URL(self.endpoint)
            if url.scheme not in ("http", "https") or not url.host:
                raise ValueError(f"malformed endpoint {self.endpoint!r}")

    @property
    def is_mock(self) -> bool:
        return self.endpoint == MOCK_ENDPOINT

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ModelSpec":
        return cls(**raw)


def cache_key(model_id: str, prompt: str, temperature: float, run_index: int, attempt: int = 0) -> str:
    payload = [model_id, prompt, repr(float(temperature)), int(run_index)]
    if attempt:
        payload.append(int(attempt))
    return hashlib.sha256(json.dumps(payload, ensure_ascii=False).encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only reply cache; in-memory only when ``path`` is None."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._data: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        rec = json.loads(line)
                        self._data[rec["key"]] = rec["reply"]

    def get(self, key: str) -> str | None:
        return self._data.get(key)

    def put(self, key: str, reply: str, **meta) -> None:
        with self._lock:
            if key in self._data:
                return
            self._data[key] = reply
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, **meta, "reply": reply}, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._data)


# -- mock backends -----------------------------------------------------------

MockBackend = Callable[[str, int, "str | None"], str]


def echo_mock(text: str) -> MockBackend:
    return lambda prompt, run_index, case_id: text


class ScriptedMock:
    """Replies from a fixed script.

    With a list, replies are handed out in call order (single-threaded use).
    With a mapping, replies are looked up by ``(prompt, run_index)``, which is
    how recorded transcripts replay.
    """

    def __init__(self, script: Sequence[str] | Mapping[tuple[str, int], str]):
        self._lock = threading.Lock()
        if isinstance(script, Mapping):
            self._table = dict(script)
            self._queue = None
        else:
            self._table = None
            self._queue = list(script)
        self.calls = 0

    @classmethod
    def from_transcript(cls, path: str | Path) -> "ScriptedMock":
        table = {}
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    table[(rec["prompt"], int(rec.get("run_index", 0)))] = rec["reply"]
        return cls(table)

    def __call__(self, prompt: str, run_index: int, case_id: str | None) -> str:
        with self._lock:
            self.calls += 1
            if self._table is not None:
                try:
                    return self._table[(prompt, run_index)]
                except KeyError:
                    raise LLMError("prompt not found in transcript") from None
            if not self._queue:
                raise LLMError("scripted mock exhausted")
            return self._queue.pop(0)


def case_lookup_mock(replies: Mapping[str, str]) -> MockBackend:
    """Replies by case id, e.g. the ground truth for a perfect-oracle run."""

    def reply(prompt: str, run_index: int, case_id: str | None) -> str:
        if case_id is None or case_id not in replies:
            raise LLMError(f"no scripted reply for case {case_id!r}")
        return replies[case_id]

    return reply


# -- client --------------------------------------------------------------------


class LLMClient:
    def __init__(
        self,
        cache: ResponseCache | None = None,
        offline: bool = False,
        mocks: Mapping[str, MockBackend] | None = None,
        sleep: Callable[[float], None] = time.sleep,
        transport: httpx.BaseTransport | None = None,
    ):
        self.cache = cache if cache is not None else ResponseCache()
        self.offline = offline
        self.mocks = dict(mocks or {})
        self.sleep = sleep
        self._transport = transport
        self._http: httpx.Client | None = None
        self._http_lock = threading.Lock()
        self._count_lock = threading.Lock()
        self.request_count = 0  # backend calls, i.e. cache misses

    def _mock_for(self, spec: ModelSpec) -> MockBackend:
        if spec.model_id in self.mocks:
            return self.mocks[spec.model_id]
        if spec.model_id.startswith("echo:"):
            return echo_mock(spec.model_id[len("echo:"):])
        if spec.model_id.startswith("transcript:"):
            mock = ScriptedMock.from_transcript(spec.model_id[len("transcript:"):])
            self.mocks[spec.model_id] = mock
            return mock
        raise LLMError(f"no mock backend registered for {spec.model_id!r}")

    def _client(self) -> httpx.Client:
        with self._http_lock:
            if self._http is None:
                self._http = httpx.Client(transport=self._transport)
            return self._http

    def _post(self, spec: ModelSpec, prompt: str) -> str:
        if self.offline:
            raise OfflineError(f"offline mode: no cached reply for {spec.model_id}")
        headers = {"Content-Type": "application/json"}
        if spec.auth_env_var:
            token = os.environ.get(spec.auth_env_var)
            if not token:
                raise AuthError(f"credential variable {spec.auth_env_var} is not set")
            headers["Authorization"] = f"Bearer {token}"
        url = spec.endpoint.rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"
        body = {
            "model": spec.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": spec.temperature,
            "max_tokens": spec.max_tokens,
        }
        last: Exception | None = None
        for attempt in range(spec.max_retries + 1):
            if attempt:
                self.sleep(spec.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client().post(url, json=body, headers=headers, timeout=spec.timeout)
            except httpx.TransportError as exc:
                last = exc
                log.warning("%s: transport error (attempt %d): %s", spec.model_id, attempt + 1, type(exc).__name__)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"{spec.model_id}: authentication failed (HTTP {resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = TransportError(f"HTTP {resp.status_code}")
                log.warning("%s: HTTP %d (attempt %d)", spec.model_id, resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"{spec.model_id}: HTTP {resp.status_code}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise MalformedResponse(f"{spec.model_id}: malformed chat-completions body") from None
            if not isinstance(content, str):
                raise MalformedResponse(f"{spec.model_id}: reply content is not text")
            return content
        raise TransportError(f"{spec.model_id}: giving up after {spec.max_retries + 1} attempts ({last})")

    def complete(
        self,
        spec: ModelSpec,
        prompt: str,
        run_index: int = 0,
        *,
        case_id: str | None = None,
        attempt: int = 0,
    ) -> str:
        key = cache_key(spec.model_id, prompt, spec.temperature, run_index, attempt)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        if spec.is_mock:
            reply = self._mock_for(spec)(prompt, run_index, case_id)
        else:
            reply = self._post(spec, prompt)
        with self._count_lock:
            self.request_count += 1
        self.cache.put(key, reply, model_id=spec.model_id, run_index=run_index, attempt=attempt)
        return reply

    def close(self) -> None:
        if self._http is not None:
            self._http.close()
            self._http = None


@dataclass
class BoundModel:
    """A (client, model) pair usable as a plain ``prompt -> reply`` callable."""

    client: LLMClient
    spec: ModelSpec
    run_index: int = 0

    def __call__(self, prompt: str) -> str:
        return self.client.complete(self.spec, prompt, self.run_index)


@dataclass(frozen=True)
class Rating:
    rating: int
    parse_failed: bool


def rate_case(
    client: LLMClient,
    spec: ModelSpec,
    rendered: RenderedPrompt,
    run_index: int = 0,
    retry_budget: int = 2,
) -> Rating:
    """Ask once, re-ask with a format reminder up to ``retry_budget`` times,
    then fall back to the midpoint rating."""
    if retry_budget < 0:
        raise ValueError("retry_budget must be >= 0")
    prompt = rendered.text
    for attempt in range(retry_budget + 1):
        reply = client.complete(spec, prompt, run_index, case_id=rendered.case_id, attempt=attempt)
        try:
            return Rating(parse_rating(reply), False)
        except ParseFailure:
            log.info("%s: unparseable reply for case %s (attempt %d)", spec.model_id, rendered.case_id, attempt + 1)
            prompt = f"{rendered.text}\n\n{REMINDER}"
    return Rating(FALLBACK_RATING, True)


class RateAllError(LLMError):
    def __init__(self, message: str, failed_cases: list[str], partial: dict[str, list[int]]):
        super().__init__(message)
        self.failed_cases = failed_cases
        self.partial = partial


@dataclass
class RateAllResult:
    means: list[float]
    parse_failures: int
    ratings: list[list[int]] = field(default_factory=list)


def rate_all(
    client: LLMClient,
    spec: ModelSpec,
    prompts: Sequence[RenderedPrompt],
    runs: int = 5,
    parallelism: int = 4,
    retry_budget: int = 2,
) -> RateAllResult:
    """Rate every prompt ``runs`` times and average per case (kept real-valued)."""
    if runs < 1 or parallelism < 1:
        raise ValueError("runs and parallelism must be >= 1")
    tasks = [(i, r) for i in range(len(prompts)) for r in range(runs)]

    def work(task: tuple[int, int]) -> Rating | LLMError:
        i, r = task
        try:
            return rate_case(client, spec, prompts[i], r, retry_budget)
        except (AuthError, OfflineError):
            raise
        except LLMError as exc:
            return exc

    if parallelism == 1:
        results = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(work, tasks))  # map keeps input order

    per_case: list[list[int]] = [[] for _ in prompts]
    failures = 0
    errors: dict[int, LLMError] = {}
    for (i, _), res in zip(tasks, results):
        if isinstance(res, Rating):
            per_case[i].append(res.rating)
            failures += res.parse_failed
        else:
            errors[i] = res
    failed = [prompts[i].case_id for i, rs in enumerate(per_case) if not rs]
    if failed:
        partial = {p.case_id: rs for p, rs in zip(prompts, per_case) if rs}
        first = errors[next(i for i, rs in enumerate(per_case) if not rs)]
        raise RateAllError(
            f"{spec.model_id}: {len(failed)} case(s) failed every run ({first}); "
            f"{len(partial)}/{len(prompts)} cases completed",
            failed,
            partial,
        )
    means = [sum(rs) / len(rs) for rs in per_case]
    return RateAllResult(means=means, parse_failures=failures, ratings=per_case)
