"""System / user message templates for the LLM speed predictor.

Numbers in prose are rendered with at most two decimals (trailing zeros
dropped, so 5.00 reads "5"); numbers in the history table always carry
exactly two decimals.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from ..errors import ShortHistory
from ..events import StepState

PROMPT_VERSION = "1"

ANSWER_SPEED_LABEL = "Predicted speed:"
ANSWER_EXPLANATION_LABEL = "Explanation:"
HISTORY_FENCE = "history"
STATE_FENCE = "current_state"
HISTORY_HEADER = "t,spacing,lead_speed,follow_speed,rel_speed"


@dataclass(frozen=True)
class TaskConfig:
    history_window: float = 4.0
    horizon: float = 0.5
    dt: float = 0.1
    max_accel: float = 5.0
    max_decel: float = 8.0

    @property
    def n_history(self) -> int:
        return round(self.history_window / self.dt) + 1


@dataclass(frozen=True)
class PromptBundle:
    system_message: str
    user_message: str

    @property
    def combined(self) -> list[dict[str, str]]:
        return [
            {"role": "system", "content": self.system_message},
            {"role": "user", "content": self.user_message},
        ]


def fmt_num(x: float) -> str:
    """Two-decimal rendering with trailing zeros stripped: 5.0 -> '5', 4.25 -> '4.25'."""
    s = f"{x:.2f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def fmt_fixed(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def build_system_message(task: TaskConfig = TaskConfig()) -> str:
    window = fmt_num(task.history_window)
    horizon = fmt_num(task.horizon)
    return f"""You are a car-following speed predictor for an autonomous vehicle. You watch a following vehicle (FV) and the lead vehicle (LV) directly ahead of it in the same lane, and you predict the speed of the FV {horizon} seconds after the latest observation.

### Input
The user gives you the past {window} seconds of car-following states, sampled every {fmt_num(task.dt)} s, oldest row first. Every row has five comma-separated fields:
- t: time in seconds
- spacing: distance from the front of the FV to the rear of the LV, in meters
- lead_speed: speed of the LV, in m/s
- follow_speed: speed of the FV, in m/s
- rel_speed: lead_speed minus follow_speed, in m/s (negative means the gap is closing)

Delimiters separate the parts of the input: the table is inside a ``` fence labeled {HISTORY_FENCE}, and a one-sentence summary of the latest state is inside a ``` fence labeled {STATE_FENCE}.

### Task
Predict the speed of the FV {horizon} seconds after the last row of the history.

### Rules
1. Remember that safety is the top priority during car-following. Keep a safe gap to the LV, accepting a less smooth ride when needed.
2. Be careful in extreme car-following situations, such as very small following distances or a gap that is closing fast: slow down early and firmly instead of waiting.
3. Never predict a speed that would make the spacing negative.
4. The speed must be non-negative and physically reachable: at most {fmt_num(task.max_accel)} m/s^2 of acceleration and {fmt_num(task.max_decel)} m/s^2 of deceleration over the prediction horizon.

### Response format
You may reason step by step first. Your answer must end with exactly these two parts:
{ANSWER_SPEED_LABEL} <number> m/s
{ANSWER_EXPLANATION_LABEL} <one to three sentences explaining why the FV will drive at that speed>
"""


def state_sentence(s: StepState) -> str:
    rel = s.lv_speed - s.fv_speed if s.rel_speed is None else s.rel_speed
    return (
        f"The lead vehicle is traveling at {fmt_num(s.lv_speed)} m/s, "
        f"the following vehicle is traveling at {fmt_num(s.fv_speed)} m/s, "
        f"the distance between them is {fmt_num(s.spacing)} meters, "
        f"and the relative speed is {fmt_num(rel)} m/s."
    )


def history_rows(history: Sequence[StepState]) -> list[str]:
    rows = []
    for s in history:
        rel = s.lv_speed - s.fv_speed if s.rel_speed is None else s.rel_speed
        rows.append(",".join(fmt_fixed(x) for x in (s.t, s.spacing, s.lv_speed, s.fv_speed, rel)))
    return rows


def select_history(history: Sequence[StepState], task: TaskConfig) -> list[StepState]:
    """Last ``history_window`` seconds of ``history`` (``n_history`` samples)."""
    n = task.n_history
    if len(history) < n:
        span = (len(history) - 1) * task.dt if history else 0.0
        raise ShortHistory(
            f"prompt needs {task.history_window}s of history ({n} samples), got {len(history)} ({span:.2f}s)"
        )
    return list(history[-n:])


def build_user_message(
    history: Sequence[StepState],
    dt: float | None = None,
    horizon: float | None = None,
    task: TaskConfig = TaskConfig(),
) -> str:
    dt = task.dt if dt is None else dt
    horizon = task.horizon if horizon is None else horizon
    if dt != task.dt:
        task = TaskConfig(task.history_window, task.horizon, dt, task.max_accel, task.max_decel)
    hist = select_history(history, task)
    now = hist[-1]
    fence = "```"
    rows = "\n".join(history_rows(hist))
    h = fmt_num(horizon)
    return f"""Here are the car-following states over the past {fmt_num(task.history_window)} seconds, sampled every {fmt_num(dt)} s (oldest first):
{fence}{HISTORY_FENCE}
{HISTORY_HEADER}
{rows}
{fence}

Latest state (t = {fmt_fixed(now.t)} s):
{fence}{STATE_FENCE}
{state_sentence(now)}
{fence}

State update rule: the spacing evolves by the trapezoid of relative speeds. Over each interval dT = {fmt_num(dt)} s,
  dV(t+dT) = V_LV(t+dT) - V_FV(t+dT)
  S(t+dT) = S(t) + (dV(t) + dV(t+dT)) / 2 * dT
so the speed you choose for the FV decides how the spacing changes over the next {h} s.

Prediction horizon: {h} s

Let's think step by step:
1. Describe how the spacing, the lead speed and the follow speed have changed over the history.
2. Judge whether the current gap is safe and whether it is opening or closing.
3. Choose the speed of the FV {h} s after t = {fmt_fixed(now.t)} s.
4. Use the update rule to check that the spacing stays safe at that speed.

End your answer with:
{ANSWER_SPEED_LABEL} <number> m/s
{ANSWER_EXPLANATION_LABEL} <reason>
"""


def build_prompt(history: Sequence[StepState], horizon: float | None = None, task: TaskConfig = TaskConfig()) -> PromptBundle:
    return PromptBundle(build_system_message(task), build_user_message(history, task.dt, horizon, task))


_FENCED = re.compile(r"```(\w+)\n(.*?)```", re.S)


def extract_history_table(user_message: str) -> list[tuple[float, ...]]:
    """Parse the fenced history block of a user message back into float rows."""
    for label, body in _FENCED.findall(user_message):
        if label == HISTORY_FENCE:
            lines = [ln for ln in body.strip().splitlines() if ln and ln != HISTORY_HEADER]
            return [tuple(float(x) for x in ln.split(",")) for ln in lines]
    raise ValueError("no history block in message")


def extract_horizon(user_message: str, default: float = 0.5) -> float:
    m = re.search(r"Prediction horizon:\s*([0-9.]+)\s*s", user_message)
    return float(m.group(1)) if m else default


def format_answer(speed: float, explanation: str) -> str:
    return f"{ANSWER_SPEED_LABEL} {fmt_fixed(speed)} m/s\n{ANSWER_EXPLANATION_LABEL} {explanation}"
