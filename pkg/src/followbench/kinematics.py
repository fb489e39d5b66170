"""Closed-loop state update and rollout of speed predictors against recorded leaders."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import InvalidArgument, InvalidStride, NonFiniteInput, PredictorFailure
from .events import CarFollowingEvent, StepState

DEFAULT_WARMUP = 4.0
LLM_STRIDE = 0.5


def step_spacing(s_t: float, dv_t: float, dv_t1: float, dt: float) -> float:
    """Advance the spacing one step with the trapezoid of relative speeds.

    ``S(t+1) = S(t) + (dV(t) + dV(t+1)) / 2 * dt`` with ``dV = v_lv - v_fv``.
    """
    if not (math.isfinite(s_t) and math.isfinite(dv_t) and math.isfinite(dv_t1) and math.isfinite(dt)):
        raise NonFiniteInput(f"non-finite input to step_spacing: {(s_t, dv_t, dv_t1, dt)}")
    if dt <= 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    return s_t + (dv_t + dv_t1) / 2.0 * dt


@runtime_checkable
class Predictor(Protocol):
    """Anything that maps a state history to the follower speed ``horizon`` seconds ahead.

    ``history`` is ordered oldest first and ends at the current time step.
    """

    name: str
    requires_warmup: float

    def predict(self, history: Sequence[StepState], horizon: float) -> float: ...


@dataclass(frozen=True)
class SimStep:
    t: float
    spacing_sim: float
    fv_speed_sim: float
    lv_speed: float
    rel_speed_sim: float


@dataclass(frozen=True)
class SimulatedTrajectory:
    event_id: str
    dt: float
    warmup_end: float
    sim_steps: tuple[SimStep, ...]
    collided: bool
    collision_t: float | None
    model_name: str = ""

    @property
    def warmup_index(self) -> int:
        return round((self.warmup_end - self.sim_steps[0].t) / self.dt)

    def evaluation_steps(self) -> tuple[SimStep, ...]:
        """Steps strictly after the warmup, i.e. the span metrics are computed on."""
        return self.sim_steps[self.warmup_index + 1:]

    def spacing_array(self, evaluation_only: bool = True) -> np.ndarray:
        steps = self.evaluation_steps() if evaluation_only else self.sim_steps
        return np.array([s.spacing_sim for s in steps])


def evaluation_slice(event: CarFollowingEvent, warmup: float) -> slice:
    """Index range of ``event.steps`` matching ``SimulatedTrajectory.evaluation_steps``."""
    return slice(round(warmup / event.dt) + 1, len(event.steps))


def _stride_steps(stride: float, dt: float) -> int:
    n = round(stride / dt)
    if n < 1 or abs(n * dt - stride) > 1e-9 * max(1.0, stride):
        raise InvalidStride(f"stride {stride}s is not a positive multiple of dt={dt}")
    return n


def rollout(
    event: CarFollowingEvent,
    predictor: Predictor,
    warmup: float = DEFAULT_WARMUP,
    stride: float | None = None,
) -> SimulatedTrajectory:
    """Closed-loop simulation of the follower over ``event``.

    Up to ``warmup`` the simulated state is the recorded one. Afterwards the
    predictor is queried every ``stride`` seconds (default: the event's dt)
    on the *simulated* history; follower speed is linearly interpolated on
    the dt grid between predictions, the leader speed is replayed from the
    record, and spacing is integrated with :func:`step_spacing`. A negative
    spacing flags a collision but the simulation keeps going so every event
    contributes a full-length series to the error metrics.
    """
    dt = event.dt
    stride = dt if stride is None else stride
    n_sub = _stride_steps(stride, dt)
    if warmup < getattr(predictor, "requires_warmup", 0.0) - 1e-9:
        raise InvalidArgument(
            f"warmup {warmup}s shorter than {predictor.name} needs ({predictor.requires_warmup}s)"
        )
    w = round(warmup / dt)
    if abs(w * dt - warmup) > 1e-9 or w < 0:
        raise InvalidArgument(f"warmup {warmup}s is not on the dt={dt} grid")
    n = len(event.steps)
    if w >= n - 1:
        raise InvalidArgument(
            f"event {event.event_id}: duration {event.duration}s does not exceed warmup {warmup}s"
        )

    rec = event.steps
    history: list[StepState] = list(rec[:w + 1])
    collided = False
    collision_t = None

    k = w
    while k < n - 1:
        t_now = history[k].t
        try:
            v_pred = float(predictor.predict(history, stride))
        except Exception as exc:
            raise PredictorFailure(
                f"{getattr(predictor, 'name', predictor)!s} failed on event {event.event_id} "
                f"at t={t_now:.3f}: {exc}",
                t=t_now, event_id=event.event_id,
            ) from exc
        if not math.isfinite(v_pred):
            raise PredictorFailure(
                f"{predictor.name} returned non-finite speed at t={t_now:.3f}",
                t=t_now, event_id=event.event_id,
            )
        v_now = history[k].fv_speed
        for j in range(1, n_sub + 1):
            if k + j >= n:
                break
            fv = v_pred if j == n_sub else v_now + (v_pred - v_now) * j / n_sub
            prev = history[k + j - 1]
            lv = rec[k + j].lv_speed
            rel = lv - fv
            s = step_spacing(prev.spacing, prev.lv_speed - prev.fv_speed, rel, dt)
            history.append(StepState(rec[k + j].t, s, lv, fv, rel))
            if s < 0 and not collided:
                collided = True
                collision_t = rec[k + j].t
        k += n_sub

    sim = tuple(SimStep(h.t, h.spacing, h.fv_speed, h.lv_speed, h.lv_speed - h.fv_speed) for h in history)
    return SimulatedTrajectory(
        event_id=event.event_id,
        dt=dt,
        warmup_end=rec[w].t,
        sim_steps=sim,
        collided=collided,
        collision_t=collision_t,
        model_name=getattr(predictor, "name", ""),
    )


class PlaybackPredictor:
    """Oracle that replays the recorded follower speed of one event."""

    requires_warmup = 0.0

    def __init__(self, event: CarFollowingEvent, name: str = "playback"):
        self.event = event
        self.name = name

    def predict(self, history: Sequence[StepState], horizon: float) -> float:
        ev = self.event
        k = min(round((history[-1].t + horizon - ev.t0) / ev.dt), len(ev.steps) - 1)
        return ev.steps[k].fv_speed


class ConstantSpeedPredictor:
    """Holds the current follower speed, or a fixed speed when ``speed`` is given."""

    requires_warmup = 0.0

    def __init__(self, speed: float | None = None, name: str = "constant"):
        self.speed = speed
        self.name = name

    def predict(self, history: Sequence[StepState], horizon: float) -> float:
        return history[-1].fv_speed if self.speed is None else self.speed


TRAJECTORY_COLUMNS = ("event_id", "t", "spacing_sim", "fv_speed_sim", "lv_speed", "rel_speed_sim", "collided")


def write_trajectories(trajectories: Iterable[SimulatedTrajectory], path: str | Path) -> None:
    """Plot-ready CSV of simulated states; ``collided`` marks steps with negative spacing."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for tr in trajectories:
            for s in tr.sim_steps:
                w.writerow([tr.event_id, f"{s.t:.6g}", repr(s.spacing_sim), repr(s.fv_speed_sim),
                            repr(s.lv_speed), repr(s.rel_speed_sim), int(s.spacing_sim < 0)])
