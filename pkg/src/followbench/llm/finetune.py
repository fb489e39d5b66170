"""Export chat fine-tuning examples built from recorded events.

Each JSONL line is ``{"messages": [system, user, assistant]}``. The user
turn is rendered from the recorded history and the assistant turn states
the recorded follower speed ``horizon`` seconds later. A sidecar
``<stem>.index.csv`` maps line numbers back to ``(event_id, t)``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import InsufficientData, InvalidArgument
from ..events import CarFollowingEvent, StepState
from .prompts import TaskConfig, build_system_message, build_user_message, fmt_num, format_answer

DEFAULT_N_INSTANCES = 50


def prediction_points(events: Sequence[CarFollowingEvent], task: TaskConfig = TaskConfig()) -> list[tuple[int, int]]:
    """All ``(event_index, step_index)`` with a full history window and a recorded future."""
    points = []
    for i, ev in enumerate(events):
        w = round(task.history_window / ev.dt)
        h = round(task.horizon / ev.dt)
        points.extend((i, k) for k in range(w, len(ev.steps) - h))
    return points


def assistant_explanation(now: StepState, future_speed: float, horizon: float) -> str:
    rel = now.lv_speed - now.fv_speed
    trend = "closing" if rel < 0 else "opening" if rel > 0 else "steady"
    change = future_speed - now.fv_speed
    if abs(change) < 0.005:
        action = f"keeps its speed at about {fmt_num(future_speed)} m/s"
    elif change > 0:
        action = f"speeds up from {fmt_num(now.fv_speed)} to {fmt_num(future_speed)} m/s"
    else:
        action = f"slows from {fmt_num(now.fv_speed)} to {fmt_num(future_speed)} m/s"
    return (
        f"The gap of {fmt_num(now.spacing)} m to the lead vehicle at {fmt_num(now.lv_speed)} m/s "
        f"is {trend}, so over the next {fmt_num(horizon)} s the following vehicle {action}."
    )


def build_example(event: CarFollowingEvent, k: int, task: TaskConfig = TaskConfig()) -> dict:
    w = round(task.history_window / event.dt)
    h = round(task.horizon / event.dt)
    history = event.steps[k - w:k + 1]
    future = event.steps[k + h].fv_speed
    user = build_user_message(history, event.dt, task.horizon, task)
    answer = format_answer(future, assistant_explanation(history[-1], future, task.horizon))
    return {"messages": [
        {"role": "system", "content": build_system_message(task)},
        {"role": "user", "content": user},
        {"role": "assistant", "content": answer},
    ]}


def export_finetune_dataset(
    events: Sequence[CarFollowingEvent],
    out_path: str | Path,
    n_instances: int = DEFAULT_N_INSTANCES,
    seed: int = 0,
    task: TaskConfig = TaskConfig(),
) -> list[tuple[str, float]]:
    """Write ``n_instances`` examples sampled without replacement; returns ``(event_id, t)`` per line."""
    if n_instances < 1:
        raise InvalidArgument(f"n_instances must be >= 1, got {n_instances}")
    points = prediction_points(events, task)
    if n_instances > len(points):
        raise InsufficientData(f"asked for {n_instances} examples but only {len(points)} prediction points exist")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(points), size=n_instances, replace=False).tolist())

    out_path = Path(out_path)
    index = []
    with out_path.open("w", encoding="utf-8") as fh:
        for j in chosen:
            i, k = points[j]
            ev = events[i]
            fh.write(json.dumps(build_example(ev, k, task), ensure_ascii=False) + "\n")
            index.append((ev.event_id, ev.steps[k].t))
    with out_path.with_suffix(".index.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["line", "event_id", "t"])
        for line, (eid, t) in enumerate(index, start=1):
            w.writerow([line, eid, repr(t)])
    return index
