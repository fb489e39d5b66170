"""Chat backends: an HTTP chat-completion client and a deterministic offline mock.

Retry policy of the remote client (exponential backoff, ``max_retries``):

==================  ===========  ==========================================
condition           retried      raised when retries are exhausted / at once
==================  ===========  ==========================================
HTTP 401 / 403      no           AuthFailure
HTTP 429            yes          RateLimited (honours ``Retry-After``)
HTTP 5xx            yes          ServerError
other HTTP 4xx      no           BackendError
timeout             yes          BackendTimeout
connection error    yes          ServerError
bad JSON / schema   yes          MalformedReply
==================  ===========  ==========================================
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from ..baselines import IdmParams, clamp_accel, idm_accel
from ..errors import (
    AuthFailure,
    BackendError,
    BackendTimeout,
    InvalidArgument,
    MalformedReply,
    RateLimited,
    ServerError,
)
from .prompts import extract_history_table, extract_horizon, fmt_num, format_answer

log = logging.getLogger(__name__)

Messages = Sequence[dict]
DEFAULT_API_KEY_ENV = "FOLLOWBENCH_API_KEY"


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    base_url: str | None = None
    model_name: str = "gpt-4"
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    rate_limit_per_min: float = 60.0
    backoff_base: float = 1.0
    max_tokens: int | None = 800
    log_dir: str | None = None

    def __post_init__(self):
        if self.kind not in ("remote", "mock"):
            raise InvalidArgument(f"backend kind must be 'remote' or 'mock', got {self.kind!r}")
        if self.kind == "remote" and not self.base_url:
            raise InvalidArgument("remote backend needs base_url")
        if self.max_retries < 0 or self.timeout <= 0 or self.rate_limit_per_min <= 0:
            raise InvalidArgument("timeout and rate limit must be positive, max_retries >= 0")


class Backend(Protocol):
    def complete(self, messages: Messages) -> str: ...


class RateLimiter:
    """Spaces calls at least ``60 / per_minute`` seconds apart; thread-safe."""

    def __init__(self, per_minute: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 60.0 / per_minute
        self._clock = clock
        self._sleep = sleep
        self._next = None
        self._lock = threading.Lock()

    def wait(self) -> None:
        with self._lock:
            now = self._clock()
            if self._next is not None and now < self._next:
                self._sleep(self._next - now)
                now = self._next
            self._next = now + self.interval


class MockBackend:
    """Offline stand-in for an LLM.

    Reads the history table out of the last user message, runs IDM on the
    latest row for the requested horizon and answers in the structured
    format. Pure: the same messages always produce the same reply.
    """

    def __init__(self, params: IdmParams | None = None):
        self.params = params or IdmParams()

    def predicted_speed(self, user_message: str) -> float:
        rows = extract_history_table(user_message)
        horizon = extract_horizon(user_message)
        t, spacing, lv, fv, rel = rows[-1]
        if spacing > 0:
            a = idm_accel(self.params, fv, fv - lv, spacing)
        else:
            a = -8.0
        return round(max(0.0, fv + clamp_accel(a) * horizon), 2)

    def complete(self, messages: Messages) -> str:
        user = next(m["content"] for m in reversed(messages) if m["role"] == "user")
        try:
            rows = extract_history_table(user)
        except ValueError:
            # re-ask turns carry no table; answer from the original prompt
            user = next(m["content"] for m in messages if m["role"] == "user")
            rows = extract_history_table(user)
        v = self.predicted_speed(user)
        _, spacing, lv, fv, rel = rows[-1]
        _, spacing0, _, _, _ = rows[0]
        trend = "closing" if rel < 0 else "opening" if rel > 0 else "steady"
        if v > fv:
            action = f"accelerate gently from {fmt_num(fv)} m/s"
        elif v < fv:
            action = f"slow down from {fmt_num(fv)} m/s"
        else:
            action = f"hold its speed of {fmt_num(fv)} m/s"
        reasoning = (
            f"Step 1: The spacing went from {fmt_num(spacing0)} m to {fmt_num(spacing)} m over the history.\n"
            f"Step 2: The lead vehicle is at {fmt_num(lv)} m/s and the gap is {trend} "
            f"(relative speed {fmt_num(rel)} m/s).\n"
            f"Step 3: Balancing the desired headway against the current gap, the following vehicle should "
            f"{action}.\n"
        )
        explanation = (
            f"The gap of {fmt_num(spacing)} m is {trend}, so the following vehicle should {action} "
            f"to keep a safe headway behind the lead vehicle."
        )
        return reasoning + format_answer(v, explanation)


class RemoteBackend:
    """Chat-completion client for any OpenAI-compatible endpoint."""

    def __init__(
        self,
        config: BackendConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        if config.kind != "remote":
            raise InvalidArgument("RemoteBackend needs a remote config")
        key = os.environ.get(config.api_key_env)
        if not key:
            raise AuthFailure(f"environment variable {config.api_key_env} is not set")
        self.config = config
        self._key = key
        self._sleep = sleep
        self.limiter = RateLimiter(config.rate_limit_per_min, clock=clock, sleep=sleep)
        self._client = httpx.Client(timeout=config.timeout, transport=transport)
        self._log_lock = threading.Lock()
        self.url = config.base_url.rstrip("/") + "/chat/completions"

    def _log(self, record: dict) -> None:
        if not self.config.log_dir:
            return
        path = Path(self.config.log_dir) / "backend_log.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._log_lock, path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    def complete(self, messages: Messages) -> str:
        if not os.environ.get(self.config.api_key_env):
            raise AuthFailure(f"environment variable {self.config.api_key_env} is not set")
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": m["role"], "content": m["content"]} for m in messages],
            "temperature": self.config.temperature,
        }
        if self.config.max_tokens:
            payload["max_tokens"] = self.config.max_tokens
        headers = {"Authorization": f"Bearer {self._key}", "Content-Type": "application/json"}

        last: BackendError | None = None
        for attempt in range(self.config.max_retries + 1):
            self.limiter.wait()
            delay = self.config.backoff_base * 2 ** attempt
            record = {"url": self.url, "attempt": attempt, "request": payload,
                      "headers": {"Authorization": "Bearer ***"}}
            try:
                resp = self._client.post(self.url, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                last = BackendTimeout(f"request timed out after {self.config.timeout}s: {exc}")
            except httpx.TransportError as exc:
                last = ServerError(f"transport error: {exc}")
            else:
                record["status"] = resp.status_code
                record["response"] = resp.text
                self._log(record)
                code = resp.status_code
                if code in (401, 403):
                    raise AuthFailure(f"HTTP {code} from {self.url}")
                if code == 429:
                    last = RateLimited(f"HTTP 429 from {self.url}")
                    retry_after = resp.headers.get("retry-after")
                    if retry_after:
                        try:
                            delay = max(delay, float(retry_after))
                        except ValueError:
                            pass
                elif code >= 500:
                    last = ServerError(f"HTTP {code} from {self.url}")
                elif code >= 400:
                    raise BackendError(f"HTTP {code} from {self.url}: {resp.text[:200]}")
                else:
                    try:
                        content = resp.json()["choices"][0]["message"]["content"]
                        if not isinstance(content, str):
                            raise TypeError("content is not a string")
                        return content
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        last = MalformedReply(f"unexpected reply body: {exc}")
            if last is not None and "status" not in record:
                record["error"] = str(last)
                self._log(record)
            if attempt < self.config.max_retries:
                log.warning("backend attempt %d failed (%s); retrying in %.1fs", attempt + 1, last, delay)
                self._sleep(delay)
        assert last is not None
        raise last

    def close(self) -> None:
        self._client.close()


def make_backend(config: BackendConfig, **kwargs) -> Backend:
    if config.kind == "mock":
        return MockBackend()
    return RemoteBackend(config, **kwargs)


def chat(backend: BackendConfig | Backend, messages: Messages) -> str:
    """Send ``messages`` (system + user turns) and return the raw reply text."""
    if isinstance(backend, BackendConfig):
        backend = make_backend(backend)
    return backend.complete(messages)
