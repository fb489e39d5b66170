import json

import httpx
import pytest

from followbench.errors import (
    AuthFailure,
    BackendError,
    BackendTimeout,
    InvalidArgument,
    MalformedReply,
    RateLimited,
    ServerError,
)
from followbench.events import StepState
from followbench.llm.backend import BackendConfig, MockBackend, RateLimiter, RemoteBackend, chat
from followbench.llm.parsing import parse_response
from followbench.llm.prompts import build_prompt

KEY_ENV = "FOLLOWBENCH_TEST_KEY"


def ok(content="Predicted speed: 5.00 m/s\nExplanation: fine"):
    return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})


def remote(monkeypatch, handler, tmp_path=None, **kw):
    monkeypatch.setenv(KEY_ENV, "sk-secret-value")
    cfg = BackendConfig(kind="remote", base_url="http://llm.test/v1", api_key_env=KEY_ENV,
                        rate_limit_per_min=1e9, log_dir=str(tmp_path) if tmp_path else None, **kw)
    sleeps = []
    backend = RemoteBackend(cfg, transport=httpx.MockTransport(handler), sleep=sleeps.append)
    return backend, sleeps


MSGS = [{"role": "system", "content": "s"}, {"role": "user", "content": "u"}]


def test_success_posts_chat_payload(monkeypatch, tmp_path):
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return ok()

    backend, _ = remote(monkeypatch, handler, tmp_path)
    assert backend.complete(MSGS).startswith("Predicted speed")
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-secret-value"
    assert seen["body"]["messages"] == MSGS and seen["body"]["temperature"] == 0.0
    log = (tmp_path / "backend_log.jsonl").read_text()
    assert "sk-secret-value" not in log and "Bearer ***" in log


@pytest.mark.parametrize(
    "responses, exc",
    [
        ([httpx.Response(500)] * 4, ServerError),
        ([httpx.Response(429)] * 4, RateLimited),
        ([httpx.Response(200, text="not json")] * 4, MalformedReply),
    ],
)
def test_retries_then_raises(monkeypatch, responses, exc):
    calls = iter(responses)
    backend, sleeps = remote(monkeypatch, lambda r: next(calls), backoff_base=0.5)
    with pytest.raises(exc) as info:
        backend.complete(MSGS)
    assert info.value.retryable
    assert sleeps == [0.5, 1.0, 2.0]


def test_recovers_after_transient_errors(monkeypatch):
    calls = iter([httpx.Response(503), httpx.Response(429, headers={"Retry-After": "7"}), ok()])
    backend, sleeps = remote(monkeypatch, lambda r: next(calls))
    assert parse_response(backend.complete(MSGS)).speed == 5.0
    assert sleeps == [1.0, 7.0]


def test_timeout_is_retried(monkeypatch):
    n = {"calls": 0}

    def handler(request):
        n["calls"] += 1
        raise httpx.ReadTimeout("slow", request=request)

    backend, _ = remote(monkeypatch, handler, max_retries=1)
    with pytest.raises(BackendTimeout):
        backend.complete(MSGS)
    assert n["calls"] == 2


def test_auth_failure_not_retried(monkeypatch):
    n = {"calls": 0}

    def handler(request):
        n["calls"] += 1
        return httpx.Response(401)

    backend, sleeps = remote(monkeypatch, handler)
    with pytest.raises(AuthFailure):
        backend.complete(MSGS)
    assert n["calls"] == 1 and sleeps == []


def test_other_client_error_not_retried(monkeypatch):
    backend, sleeps = remote(monkeypatch, lambda r: httpx.Response(400, text="bad"))
    with pytest.raises(BackendError):
        backend.complete(MSGS)
    assert sleeps == []


def test_missing_key_env(monkeypatch):
    monkeypatch.delenv(KEY_ENV, raising=False)
    with pytest.raises(AuthFailure, match=KEY_ENV):
        RemoteBackend(BackendConfig(kind="remote", base_url="http://x", api_key_env=KEY_ENV))


def test_config_validation():
    with pytest.raises(InvalidArgument):
        BackendConfig(kind="remote")
    with pytest.raises(InvalidArgument):
        BackendConfig(kind="carrier-pigeon")


def test_rate_limiter_spacing():
    clock = {"t": 0.0}
    slept = []

    def sleep(s):
        slept.append(s)
        clock["t"] += s

    rl = RateLimiter(120, clock=lambda: clock["t"], sleep=sleep)
    rl.wait()
    rl.wait()
    clock["t"] += 2.0
    rl.wait()
    assert slept == [0.5]


def test_mock_backend_is_deterministic_and_parseable():
    h = [StepState(round(k * 0.1, 9), 10.0, 5.0, 4.0, 1.0) for k in range(41)]
    msgs = build_prompt(h).combined
    a = chat(BackendConfig(), msgs)
    assert a == MockBackend().complete(msgs)
    parsed = parse_response(a)
    assert parsed.parse_method == "structured"
    assert parsed.speed == MockBackend().predicted_speed(msgs[-1]["content"])
