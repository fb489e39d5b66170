"""Synthetic car-following events with a known physics follower.

The follower is driven by :func:`physics_predict` and the spacing by
:func:`step_spacing`, i.e. the exact arithmetic a closed-loop rollout uses,
so a rollout with the generating parameters reproduces the record.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import GhrParams, IdmParams, ghr_delay_steps, idm_equilibrium_spacing, physics_predict
from .errors import InvalidArgument
from .events import CarFollowingEvent, StepState, validate_event
from .kinematics import step_spacing


@dataclass(frozen=True)
class LeaderProfile:
    """How the lead vehicle moves.

    kind:
        ``constant``     fixed speed ``speed``
        ``stop_and_go``  cruise / brake to standstill / hold / re-accelerate cycles
        ``random``       piecewise-constant random accelerations
    """

    kind: str = "random"
    speed: float = 10.0
    v_max: float = 25.0


def _accel_schedule(profile: LeaderProfile, n: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    lv = np.empty(n)
    if profile.kind == "constant":
        lv[:] = profile.speed
        return lv
    if profile.kind == "random":
        v = rng.uniform(5.0, 20.0)
        k = 0
        while k < n:
            a = rng.uniform(-1.5, 1.2)
            seg = int(rng.uniform(1.0, 3.0) / dt)
            for _ in range(seg):
                if k >= n:
                    break
                lv[k] = v
                v = min(max(v + a * dt, 0.0), profile.v_max)
                k += 1
        return lv
    if profile.kind == "stop_and_go":
        v = rng.uniform(8.0, 15.0)
        k = 0

        def hold(seconds: float, v: float, k: int) -> int:
            for _ in range(int(seconds / dt)):
                if k < n:
                    lv[k] = v
                k += 1
            return k

        while k < n:
            k = hold(rng.uniform(1.0, 3.0), v, k)
            decel = rng.uniform(1.0, 2.5)
            while v > 0 and k < n:
                lv[k] = v
                v = max(v - decel * dt, 0.0)
                k += 1
            k = hold(rng.uniform(0.5, 2.0), 0.0, k)
            accel = rng.uniform(0.8, 1.5)
            target = rng.uniform(6.0, 15.0)
            while v < target and k < n:
                lv[k] = v
                v = min(v + accel * dt, target)
                k += 1
        return lv
    raise InvalidArgument(f"unknown leader profile {profile.kind!r}")


def _simulate_follower(
    params: IdmParams | GhrParams,
    lv: np.ndarray,
    dt: float,
    fv0: float,
    s_init: float,
    event_id: str,
) -> CarFollowingEvent:
    model = params.model
    ts = [round(k * dt, 9) for k in range(len(lv))]
    first = StepState(ts[0], s_init, float(lv[0]), fv0, float(lv[0]) - fv0)
    states = [first]
    pad: list[StepState] = []
    if model == "ghr" and params.tau > 0:
        # before t=0 the pair is assumed to have been in its initial state
        pad = [first] * ghr_delay_steps(params.tau, dt)
    for k in range(len(lv) - 1):
        hist = pad + states if pad else states
        fv = physics_predict(model, params, hist, dt, grid_dt=dt)
        lv_next = float(lv[k + 1])
        rel = lv_next - fv
        prev = states[-1]
        s = step_spacing(prev.spacing, prev.lv_speed - prev.fv_speed, rel, dt)
        states.append(StepState(ts[k + 1], s, lv_next, fv, rel))
    return CarFollowingEvent(event_id, dt, tuple(states), source=f"synthetic:{model}")


def synth_events(
    generator: LeaderProfile,
    params: IdmParams | GhrParams,
    n: int,
    seed: int,
    dt: float = 0.1,
    duration: float = 15.0,
    max_tries: int = 50,
) -> list[CarFollowingEvent]:
    """``n`` validated events whose follower obeys ``params`` exactly.

    Draws that produce a collision are rejected and redrawn.
    """
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    n_steps = int(round(duration / dt)) + 1
    events = []
    for i in range(n):
        for _ in range(max_tries):
            lv = _accel_schedule(generator, n_steps, dt, rng)
            fv0 = float(max(lv[0] + rng.uniform(-1.0, 1.0), 0.0))
            if isinstance(params, IdmParams) and fv0 < params.v0:
                s_init = idm_equilibrium_spacing(params, fv0) * rng.uniform(0.9, 1.4)
            else:
                s_init = 5.0 + fv0 * rng.uniform(1.0, 2.0)
            ev = _simulate_follower(params, lv, dt, fv0, float(s_init), f"synth-{seed}-{i:04d}")
            if all(s.spacing > 0 for s in ev.steps):
                events.append(validate_event(ev))
                break
        else:
            raise InvalidArgument(f"could not draw a collision-free event for {params} in {max_tries} tries")
    return events
