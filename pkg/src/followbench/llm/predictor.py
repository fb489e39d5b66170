"""LLM-backed follower speed predictor with parsing, safety filter, cache and IDM fallback."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from typing import Sequence

from ..baselines import IdmParams, physics_predict
from ..errors import BackendError, BackendUnavailable, UnparseableReply
from ..events import StepState
from .backend import Backend, Messages
from .parsing import SafetyLimits, parse_response, safety_filter
from .prompts import (
    ANSWER_EXPLANATION_LABEL,
    ANSWER_SPEED_LABEL,
    PromptBundle,
    TaskConfig,
    build_system_message,
    build_user_message,
)

log = logging.getLogger(__name__)

FALLBACK_REASON = "llm fallback"
REASK_MESSAGE = (
    "Your previous answer could not be read. Answer again and end with exactly:\n"
    f"{ANSWER_SPEED_LABEL} <number> m/s\n{ANSWER_EXPLANATION_LABEL} <reason>"
)


@dataclass(frozen=True)
class PredictionOutcome:
    speed: float
    explanation: str
    raw_reply: str
    parse_method: str | None
    filtered: bool
    filter_reason: str | None = None
    t: float | None = None


class ReplyCache:
    """Replies keyed by a hash of the message list; safe to share between threads."""

    def __init__(self):
        self._data: dict[str, str] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(messages: Messages) -> str:
        blob = json.dumps([[m["role"], m["content"]] for m in messages], ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def get(self, messages: Messages) -> str | None:
        k = self.key(messages)
        with self._lock:
            if k in self._data:
                self.hits += 1
                return self._data[k]
            self.misses += 1
            return None

    def put(self, messages: Messages, reply: str) -> None:
        with self._lock:
            self._data[self.key(messages)] = reply

    def __len__(self) -> int:
        return len(self._data)


class GenFollowerPredictor:
    """Prompted-LLM predictor.

    Each call renders the system and user messages, asks the backend,
    parses ``(speed, explanation)`` and clamps the speed with the safety
    filter. An unreadable reply gets one re-ask; if that also fails (or the
    backend is down) the IDM prediction is used instead, unless
    ``fallback`` is off, in which case the error propagates.
    """

    def __init__(
        self,
        backend: Backend,
        task: TaskConfig = TaskConfig(),
        limits: SafetyLimits = SafetyLimits(),
        fallback: bool = True,
        fallback_params: IdmParams | None = None,
        cache: ReplyCache | None = None,
        name: str = "genfollower",
    ):
        self.backend = backend
        self.task = task
        self.limits = limits
        self.fallback = fallback
        self.fallback_params = fallback_params or IdmParams()
        self.cache = cache if cache is not None else ReplyCache()
        self.name = name
        self.requires_warmup = task.history_window
        self.system_message = build_system_message(task)
        self.outcomes: list[PredictionOutcome] = []

    def _ask(self, messages: list[dict]) -> str:
        cached = self.cache.get(messages)
        if cached is not None:
            return cached
        reply = self.backend.complete(messages)
        self.cache.put(messages, reply)
        return reply

    def prompt(self, history: Sequence[StepState], horizon: float) -> PromptBundle:
        return PromptBundle(self.system_message, build_user_message(history, self.task.dt, horizon, self.task))

    def predict_outcome(self, history: Sequence[StepState], horizon: float | None = None) -> PredictionOutcome:
        horizon = self.task.horizon if horizon is None else horizon
        bundle = self.prompt(history, horizon)
        now = history[-1]
        messages = bundle.combined
        raw = ""
        cause = None
        try:
            raw = self._ask(messages)
            try:
                parsed = parse_response(raw)
            except UnparseableReply:
                reask = messages + [
                    {"role": "assistant", "content": raw},
                    {"role": "user", "content": REASK_MESSAGE},
                ]
                raw = self._ask(reask)
                parsed = parse_response(raw)
        except UnparseableReply as exc:
            if not self.fallback:
                raise
            cause = f"unparseable reply: {exc}"
        except BackendError as exc:
            if not self.fallback:
                raise BackendUnavailable(f"backend failed at t={now.t:.2f}: {exc}") from exc
            cause = f"backend error: {exc}"

        if cause is not None:
            log.warning("%s at t=%.2f: %s; using IDM fallback", self.name, now.t, cause)
            v = physics_predict("idm", self.fallback_params, history, horizon)
            res = safety_filter(v, now.fv_speed, horizon, self.limits)
            out = PredictionOutcome(res.speed, f"IDM fallback ({cause})", raw, None, True,
                                    FALLBACK_REASON, now.t)
        else:
            res = safety_filter(parsed.speed, now.fv_speed, horizon, self.limits)
            out = PredictionOutcome(res.speed, parsed.explanation, raw, parsed.parse_method,
                                    res.filtered, res.reason, now.t)
        self.outcomes.append(out)
        return out

    def predict(self, history: Sequence[StepState], horizon: float) -> float:
        return self.predict_outcome(history, horizon).speed
