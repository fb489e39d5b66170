"""Reply parsing and the post-processing safety filter."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from ..errors import UnparseableReply

# replies claiming speeds beyond this magnitude are treated as garbage
MAX_ABS_SPEED = 200.0

_NUM = r"[-+]?\d+(?:\.\d+)?"
_STRUCTURED = re.compile(
    r"predicted\s+(?:fv\s+|follow(?:ing|er)?\s+(?:vehicle\s+)?)?speed\W{0,6}?[:=]\W{0,6}?"
    r"(?:(?:approximately|about|around|~)\s*)?(" + _NUM + r")",
    re.I,
)
_EXPLANATION = re.compile(r"explanation\W{0,4}?:\**\s*(.*)", re.I | re.S)
_NUMBER = re.compile(r"(?<![\w.])(" + _NUM + r")(?![\d.]\d)")
_SPEED_UNIT = re.compile(
    r"\s*(?:m/s(?![²^2/\w])|meters?\s+per\s+second(?!\s+(?:squared|per))|metres?\s+per\s+second(?!\s+(?:squared|per))|mps\b)",
    re.I,
)
_ACCEL_UNIT = re.compile(r"\s*(?:m/s\s*(?:²|\^?2)|m/s/s|met(?:er|re)s?\s+per\s+second\s+(?:squared|per))", re.I)
_SPEED_WORD = re.compile(r"\b(speed|velocity)\b", re.I)
_CUE = re.compile(
    r"\b(predict\w*|will|should|next|final\w*|answer|recommend\w*|target|expect\w*|estimate\w*|"
    r"adjust\w*|settle\w*|reach\w*|become|result\w*|choose|chosen|set|go(?:es)?\s+to|slow\w*|"
    r"speed\s+up|increase\w*|decrease\w*|output)\b",
    re.I,
)
_CONTEXT = 80


@dataclass(frozen=True)
class ParsedReply:
    speed: float
    explanation: str
    parse_method: str


def _check(value: float, raw: str) -> float:
    if not math.isfinite(value) or abs(value) > MAX_ABS_SPEED:
        raise UnparseableReply(f"implausible speed {value} in reply: {raw[:120]!r}")
    return value


def _sentence_prefix(text: str, start: int) -> str:
    lo = max(0, start - _CONTEXT)
    prefix = text[lo:start]
    # stay inside the current sentence / line
    cut = max(prefix.rfind("\n"), prefix.rfind(". "), prefix.rfind("; "))
    return prefix[cut + 1:] if cut >= 0 else prefix


def parse_response(raw: str) -> ParsedReply:
    """Extract (speed, explanation) from an LLM reply.

    The structured ``Predicted speed: <n> m/s`` / ``Explanation:`` contract is
    tried first (last occurrence wins). Otherwise numbers that look like
    speeds (a speed unit follows, or "speed"/"velocity" precedes them in the
    same sentence) are collected and the last one introduced by a predictive
    cue ("will", "predict", "should", ...) is taken, falling back to the last
    speed-like number.
    """
    if raw is None:
        raise UnparseableReply("empty reply")
    text = raw.strip()
    if not text:
        raise UnparseableReply("empty reply")

    matches = list(_STRUCTURED.finditer(text))
    if matches:
        m = matches[-1]
        speed = _check(float(m.group(1)), raw)
        em = _EXPLANATION.search(text, m.end())
        if em is None:
            em = _EXPLANATION.search(text)
        explanation = em.group(1).strip() if em else ""
        if not explanation:
            explanation = (text[:m.start()] + text[m.end():]).strip() or text
        return ParsedReply(speed, explanation, "structured")

    candidates = []
    for m in _NUMBER.finditer(text):
        if _ACCEL_UNIT.match(text, m.end()):
            continue
        unit = _SPEED_UNIT.match(text, m.end())
        prefix = _sentence_prefix(text, m.start())
        if unit is None and not _SPEED_WORD.search(prefix[-40:]):
            continue
        end = unit.end() if unit else m.end()
        candidates.append((m, end, bool(_CUE.search(prefix))))
    if not candidates:
        raise UnparseableReply(f"no speed found in reply: {raw[:120]!r}")
    cued = [c for c in candidates if c[2]]
    m, end, _ = (cued or candidates)[-1]
    speed = _check(float(m.group(1)), raw)
    explanation = text[end:].strip(" \t\n.,;:-") or text
    return ParsedReply(speed, explanation, "regex_fallback")


@dataclass(frozen=True)
class SafetyLimits:
    a_max_f: float = 5.0
    b_max_f: float = 8.0
    v_cap: float = 60.0


@dataclass(frozen=True)
class FilterResult:
    speed: float
    filtered: bool
    reason: str | None = None


def safety_filter(
    predicted: float,
    v_now: float,
    horizon: float,
    limits: SafetyLimits = SafetyLimits(),
) -> FilterResult:
    """Clamp a predicted speed into the physically reachable bracket.

    Bracket: ``[max(0, v_now - b_max_f*h), min(v_cap, v_now + a_max_f*h)]``.
    """
    lo = max(0.0, v_now - limits.b_max_f * horizon)
    hi = min(limits.v_cap, v_now + limits.a_max_f * horizon)
    if not math.isfinite(predicted):
        return FilterResult(min(max(v_now, lo), hi), True, "non-finite prediction")
    if predicted < lo:
        reason = "non-negative speed" if lo == 0.0 else "deceleration cap"
        return FilterResult(lo, True, reason)
    if predicted > hi:
        reason = "speed cap" if hi == limits.v_cap else "acceleration cap"
        return FilterResult(hi, True, reason)
    return FilterResult(predicted, False, None)
