"""Inference backends.

:class:`Backend` is the contract: ``generate`` for one request and
``generate_batch`` for many (order preserved, per-item failures carried in
the response instead of aborting the batch). Two implementations:

* :class:`ScriptedBackend` answers from an ordered rule table; used by
  tests, demos and deterministic replays.
* :class:`CompletionsClient` talks to an OpenAI-compatible
  ``POST /v1/completions`` endpoint (vLLM and friends).
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal

import httpx

from . import errors

logger = logging.getLogger(__name__)

FinishReason = Literal["stop", "length", "error"]

ENV_PREFIX = "RAGI_"


@dataclass(frozen=True)
class GenerationParams:
    max_tokens: int = 256
    temperature: float = 0.0
    stop: tuple[str, ...] = ()
    seed: int | None = None
    n_samples: int = 1

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        object.__setattr__(self, "stop", tuple(self.stop))


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    params: GenerationParams = field(default_factory=GenerationParams)
    tag: str = ""
    intrinsic: str | None = None  # selects a per-intrinsic model name, if configured

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    finish_reason: FinishReason
    tag: str
    error: Exception | None = None

    def unwrap(self) -> str:
        if self.error is not None:
            raise self.error
        return self.text


class Backend:
    """Base contract. Subclasses implement :meth:`generate`."""

    concurrency: int = 1

    def generate(self, req: CompletionRequest) -> CompletionResponse:
        raise NotImplementedError

    def _safe_generate(self, req: CompletionRequest) -> CompletionResponse:
        try:
            return self.generate(req)
        except errors.BackendError as exc:
            return CompletionResponse("", "error", req.tag, exc)

    def generate_batch(self, reqs: Sequence[CompletionRequest]) -> list[CompletionResponse]:
        if not reqs:
            raise ValueError("generate_batch needs at least one request")
        if self.concurrency <= 1 or len(reqs) == 1:
            return [self._safe_generate(r) for r in reqs]
        with ThreadPoolExecutor(max_workers=min(self.concurrency, len(reqs))) as pool:
            return list(pool.map(self._safe_generate, reqs))


# -- scripted ----------------------------------------------------------------

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def truncate_tokens(text: str, max_tokens: int) -> tuple[str, bool]:
    """Keep the first ``max_tokens`` word/punctuation tokens. Returns (text, truncated)."""
    matches = list(_TOKEN_RE.finditer(text))
    if len(matches) <= max_tokens:
        return text, False
    return text[: matches[max_tokens - 1].end()], True


@dataclass
class ScriptRule:
    match: Literal["exact", "substring", "regex"]
    pattern: str
    responses: tuple[str, ...]
    calls: int = 0

    def __post_init__(self) -> None:
        if self.match not in ("exact", "substring", "regex"):
            raise errors.ScriptFormatError(f"unknown matcher {self.match!r}")
        if not self.responses:
            raise errors.ScriptFormatError("rule needs a response")
        self._regex = re.compile(self.pattern, re.DOTALL) if self.match == "regex" else None

    def matches(self, prompt: str) -> bool:
        if self.match == "exact":
            return prompt == self.pattern
        if self.match == "substring":
            return self.pattern in prompt
        return self._regex.search(prompt) is not None

    def next_response(self) -> str:
        # A sequence is consumed call by call; its last entry repeats afterwards.
        out = self.responses[min(self.calls, len(self.responses) - 1)]
        self.calls += 1
        return out


class ScriptedBackend(Backend):
    """Deterministic rule-table backend.

    Rules are tried in order; the first match answers. With ``strict`` an
    unmatched prompt raises :class:`NoScriptMatch`; otherwise ``default`` is
    returned. Completions are cut to ``params.max_tokens`` word tokens.
    """

    def __init__(
        self,
        rules: Sequence[ScriptRule | tuple] = (),
        *,
        strict: bool = True,
        default: str = "",
        concurrency: int = 1,
    ) -> None:
        self.rules: list[ScriptRule] = []
        for rule in rules:
            if isinstance(rule, tuple):
                self.add(*rule)
            else:
                self.rules.append(rule)
        self.strict = strict
        self.default = default
        self.concurrency = concurrency
        self.log: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    def add(self, pattern: str, response: str | Sequence[str], match: str = "substring") -> ScriptedBackend:
        responses = (response,) if isinstance(response, str) else tuple(response)
        self.rules.append(ScriptRule(match, pattern, responses))
        return self

    def generate(self, req: CompletionRequest) -> CompletionResponse:
        with self._lock:
            for rule in self.rules:
                if rule.matches(req.prompt):
                    text = rule.next_response()
                    break
            else:
                if self.strict:
                    raise errors.NoScriptMatch(req.prompt)
                text = self.default
            text, cut = truncate_tokens(text, req.params.max_tokens)
            self.log.append((req.prompt, text))
        return CompletionResponse(text, "length" if cut else "stop", req.tag)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ScriptedBackend:
        if not isinstance(data, Mapping) or not isinstance(data.get("rules"), list):
            raise errors.ScriptFormatError("script must be an object with a 'rules' list")
        rules = []
        for idx, raw in enumerate(data["rules"]):
            if not isinstance(raw, Mapping) or not isinstance(raw.get("pattern"), str):
                raise errors.ScriptFormatError(f"rule {idx}: needs a string 'pattern'")
            if "response" in raw:
                responses = (raw["response"],)
            else:
                responses = tuple(raw.get("responses") or ())
            if not responses or not all(isinstance(r, str) for r in responses):
                raise errors.ScriptFormatError(f"rule {idx}: needs 'response' or non-empty 'responses' strings")
            try:
                rules.append(ScriptRule(raw.get("match", "substring"), raw["pattern"], responses))
            except re.error as exc:
                raise errors.ScriptFormatError(f"rule {idx}: bad regex: {exc}") from None
        default = data.get("default", "")
        if not isinstance(default, str):
            raise errors.ScriptFormatError("'default' must be a string")
        return cls(rules, strict=bool(data.get("strict", True)), default=default)

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedBackend:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise errors.ScriptFormatError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(data)


class RecordingBackend(Backend):
    """Wraps another backend and keeps every (prompt, completion) pair."""

    def __init__(self, inner: Backend) -> None:
        self.inner = inner
        self.concurrency = inner.concurrency
        self.records: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    def generate(self, req: CompletionRequest) -> CompletionResponse:
        resp = self.inner.generate(req)
        with self._lock:
            self.records.append({"tag": req.tag, "prompt": req.prompt, "completion": resp.text})
        return resp


# -- OpenAI-compatible completions client ------------------------------------


@dataclass(frozen=True)
class BackendConfig:
    base_url: str = "http://localhost:8000"
    model: str = "default"
    models: Mapping[str, str] = field(default_factory=dict)  # per-intrinsic overrides
    timeout: float = 60.0
    concurrency: int = 8
    retries: int = 2
    api_key: str | None = None

    def model_for(self, intrinsic: str | None) -> str:
        if intrinsic and intrinsic in self.models:
            return self.models[intrinsic]
        return self.model

    @classmethod
    def load(cls, path: str | Path | None = None, env: Mapping[str, str] | None = None) -> BackendConfig:
        """Read an optional JSON file, then apply ``RAGI_*`` environment overrides."""
        env = os.environ if env is None else env
        data: dict[str, Any] = {}
        if path is not None:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        models = dict(data.pop("models", {}) or {})
        cfg = cls(**data, models=models)
        overrides: dict[str, Any] = {}
        if f"{ENV_PREFIX}BACKEND_URL" in env:
            overrides["base_url"] = env[f"{ENV_PREFIX}BACKEND_URL"]
        if f"{ENV_PREFIX}MODEL" in env:
            overrides["model"] = env[f"{ENV_PREFIX}MODEL"]
        if f"{ENV_PREFIX}TIMEOUT" in env:
            overrides["timeout"] = float(env[f"{ENV_PREFIX}TIMEOUT"])
        if f"{ENV_PREFIX}CONCURRENCY" in env:
            overrides["concurrency"] = int(env[f"{ENV_PREFIX}CONCURRENCY"])
        if f"{ENV_PREFIX}RETRIES" in env:
            overrides["retries"] = int(env[f"{ENV_PREFIX}RETRIES"])
        if f"{ENV_PREFIX}API_KEY" in env:
            overrides["api_key"] = env[f"{ENV_PREFIX}API_KEY"]
        for key, value in env.items():
            if key.startswith(f"{ENV_PREFIX}MODEL_"):
                models[key[len(ENV_PREFIX) + 6 :].upper()] = value
        return replace(cfg, models=models, **overrides)


class CompletionsClient(Backend):
    """Client for ``POST {base_url}/v1/completions``.

    Retries only transport failures (connection errors, timeouts); an HTTP
    error status or a well-formed but odd completion is never retried.
    """

    def __init__(self, config: BackendConfig, *, transport: httpx.BaseTransport | None = None) -> None:
        self.config = config
        self.concurrency = max(1, config.concurrency)
        headers = {"Authorization": f"Bearer {config.api_key}"} if config.api_key else {}
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            timeout=config.timeout,
            headers=headers,
            transport=transport,
        )
        self._slots = threading.Semaphore(self.concurrency)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> CompletionsClient:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def payload(self, req: CompletionRequest) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.config.model_for(req.intrinsic),
            "prompt": req.prompt,
            "max_tokens": req.params.max_tokens,
            "temperature": req.params.temperature,
            "n": req.params.n_samples,
        }
        if req.params.stop:
            body["stop"] = list(req.params.stop)
        if req.params.seed is not None:
            body["seed"] = req.params.seed
        return body

    def _post(self, body: dict[str, Any]) -> httpx.Response:
        attempts = self.config.retries + 1
        for attempt in range(attempts):
            try:
                with self._slots:
                    return self._client.post("/v1/completions", json=body)
            except httpx.TimeoutException as exc:
                last: Exception = errors.BackendTimeout(f"timed out after {self.config.timeout}s: {exc}")
            except httpx.TransportError as exc:
                last = errors.BackendUnavailable(f"{self.config.base_url}: {exc}")
            if attempt + 1 < attempts:
                logger.warning("completion request failed (%s), retry %d", last, attempt + 1)
                time.sleep(min(0.1 * 2**attempt, 2.0))
        raise last

    def generate(self, req: CompletionRequest) -> CompletionResponse:
        resp = self._post(self.payload(req))
        if resp.status_code >= 400:
            raise errors.BackendUnavailable(f"server returned {resp.status_code}: {resp.text[:200]}")
        try:
            choice = resp.json()["choices"][0]
            text = choice["text"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise errors.BackendError(f"unexpected completion payload: {resp.text[:200]}") from None
        if not isinstance(text, str):
            raise errors.BackendError("completion text is not a string")
        finish = choice.get("finish_reason")
        return CompletionResponse(text, finish if finish in ("stop", "length") else "stop", req.tag)
