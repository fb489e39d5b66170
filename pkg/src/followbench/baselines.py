"""Physics car-following baselines: Intelligent Driver Model and Gazis-Herman-Rothery.

Both acceleration laws are written on numpy primitives so the scalar
predictors and the batched calibration path share one arithmetic kernel.

Relative-speed conventions differ between the two laws and the rest of the
package. IDM's interaction term takes the *closing* speed ``v_fv - v_lv``;
GHR's stimulus is ``v_lv - v_fv`` (the package-wide ``rel_speed``). The
adapters below do the flip; callers of ``idm_accel`` pass closing speed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import ClassVar, Sequence

import numpy as np

from .errors import InsufficientHistory, InvalidArgument, NonPositiveSpacing
from .events import StepState

# global acceleration envelope applied by physics_predict
EMERGENCY_DECEL = 8.0
MAX_ACCEL = 5.0
# speed floor used in the GHR speed term when its exponent is negative
GHR_MIN_SPEED = 0.1


class _Params:
    BOUNDS: ClassVar[dict[str, tuple[float, float]]]
    model: ClassVar[str]

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def bounds_arrays(cls) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([cls.BOUNDS[n][0] for n in cls.names()])
        hi = np.array([cls.BOUNDS[n][1] for n in cls.names()])
        return lo, hi

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names()], dtype=float)

    @classmethod
    def from_array(cls, x) -> "_Params":
        return cls(*(float(v) for v in x))

    def in_bounds(self) -> bool:
        return all(self.BOUNDS[n][0] <= getattr(self, n) <= self.BOUNDS[n][1] for n in self.names())

    def to_json_dict(self) -> dict:
        return {"model": self.model, **asdict(self)}


@dataclass(frozen=True)
class IdmParams(_Params):
    v0: float = 30.0
    T_hw: float = 1.5
    a_max: float = 1.0
    b: float = 2.0
    delta: float = 4.0
    s0: float = 2.0

    model: ClassVar[str] = "idm"
    BOUNDS: ClassVar[dict[str, tuple[float, float]]] = {
        "v0": (1.0, 40.0),
        "T_hw": (0.1, 5.0),
        "a_max": (0.1, 5.0),
        "b": (0.1, 5.0),
        "delta": (1.0, 10.0),
        "s0": (0.1, 10.0),
    }

    def __post_init__(self):
        for n in self.names():
            if not getattr(self, n) > 0:
                raise InvalidArgument(f"IDM parameter {n} must be positive, got {getattr(self, n)}")
        if self.delta < 1:
            raise InvalidArgument(f"IDM delta must be >= 1, got {self.delta}")


@dataclass(frozen=True)
class GhrParams(_Params):
    c: float = 5.0
    m_exp: float = 0.0
    l_exp: float = 1.0
    tau: float = 0.5

    model: ClassVar[str] = "ghr"
    BOUNDS: ClassVar[dict[str, tuple[float, float]]] = {
        "c": (1e-4, 100.0),
        "m_exp": (-2.0, 2.0),
        "l_exp": (-1.0, 4.0),
        "tau": (0.0, 2.0),
    }

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidArgument(f"GHR sensitivity c must be positive, got {self.c}")
        if not 0.0 <= self.tau <= 2.0:
            raise InvalidArgument(f"GHR tau must lie in [0, 2], got {self.tau}")


PARAM_TYPES: dict[str, type[_Params]] = {"idm": IdmParams, "ghr": GhrParams}


def load_params(path: str | Path) -> IdmParams | GhrParams:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    model = data.pop("model", None)
    if model not in PARAM_TYPES:
        raise InvalidArgument(f"{path}: 'model' must be one of {sorted(PARAM_TYPES)}, got {model!r}")
    cls = PARAM_TYPES[model]
    unknown = set(data) - set(cls.names())
    if unknown:
        raise InvalidArgument(f"{path}: unknown {model} parameter(s) {sorted(unknown)}")
    return cls(**{k: float(v) for k, v in data.items()})


def save_params(params: IdmParams | GhrParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params.to_json_dict(), indent=2) + "\n", encoding="utf-8")


# --- acceleration kernels (scalar or array) ------------------------------------

def idm_accel_raw(v0, T_hw, a_max, b, delta, s0, v, dv_closing, s):
    s_star = s0 + v * T_hw + v * dv_closing / (2.0 * np.sqrt(a_max * b))
    return a_max * (1.0 - np.power(v / v0, delta) - np.power(s_star / s, 2))


def ghr_accel_raw(c, m_exp, l_exp, v_fv_now, dv_delayed, s_delayed):
    v_eff = np.where((m_exp < 0) & (v_fv_now < GHR_MIN_SPEED), GHR_MIN_SPEED, v_fv_now)
    return c * np.power(v_eff, m_exp) * dv_delayed / np.power(s_delayed, l_exp)


def idm_accel(p: IdmParams, v: float, dv_closing: float, s: float) -> float:
    """IDM acceleration. ``dv_closing = v_fv - v_lv`` (positive when approaching)."""
    if not s > 0:
        raise NonPositiveSpacing(f"IDM needs positive spacing, got {s}")
    return float(idm_accel_raw(p.v0, p.T_hw, p.a_max, p.b, p.delta, p.s0, v, dv_closing, s))


def ghr_accel(p: GhrParams, v_fv_now: float, dv_delayed: float, s_delayed: float) -> float:
    """GHR stimulus-response acceleration ``c * v^m * dv / s^l``.

    ``dv_delayed`` is ``v_lv - v_fv`` and ``s_delayed`` the spacing, both taken
    ``tau`` seconds ago. With a negative speed exponent the follower speed is
    floored at ``GHR_MIN_SPEED`` so a stopped vehicle yields a finite response.
    """
    if not s_delayed > 0:
        raise NonPositiveSpacing(f"GHR needs positive delayed spacing, got {s_delayed}")
    return float(ghr_accel_raw(p.c, p.m_exp, p.l_exp, v_fv_now, dv_delayed, s_delayed))


def ghr_delay_steps(tau: float, grid_dt: float) -> int:
    return int(round(tau / grid_dt))


def _grid_dt(history: Sequence[StepState]) -> float | None:
    if len(history) < 2:
        return None
    return history[-1].t - history[-2].t


def clamp_accel(a: float, a_min: float = -EMERGENCY_DECEL, a_max: float = MAX_ACCEL) -> float:
    if not math.isfinite(a):
        return a_min
    return min(max(a, a_min), a_max)


def physics_predict(
    model: str,
    params: IdmParams | GhrParams,
    history: Sequence[StepState],
    dt: float,
    grid_dt: float | None = None,
) -> float:
    """Follower speed ``dt`` seconds after the last history sample (one Euler step).

    Once the simulated spacing is non-positive (a collision already
    happened) both laws are undefined; the follower then brakes at the
    emergency limit.
    """
    if not history:
        raise InsufficientHistory("empty history")
    now = history[-1]
    v = now.fv_speed
    if model == "idm":
        if now.spacing <= 0:
            a = -EMERGENCY_DECEL
        else:
            a = idm_accel(params, v, v - now.lv_speed, now.spacing)
    elif model == "ghr":
        k = 0
        if params.tau > 0:
            grid_dt = grid_dt or _grid_dt(history)
            if grid_dt is None:
                raise InsufficientHistory(f"GHR with tau={params.tau}s needs more than one sample")
            k = ghr_delay_steps(params.tau, grid_dt)
        if len(history) < k + 1:
            span = (len(history) - 1) * (grid_dt or 0.0)
            raise InsufficientHistory(
                f"GHR delay tau={params.tau}s needs {k + 1} samples, history has {len(history)} ({span:.2f}s)"
            )
        past = history[-1 - k]
        if now.spacing <= 0 or past.spacing <= 0:
            a = -EMERGENCY_DECEL
        else:
            a = ghr_accel(params, v, past.lv_speed - past.fv_speed, past.spacing)
    else:
        raise InvalidArgument(f"unknown physics model {model!r}")
    return max(0.0, v + clamp_accel(a) * dt)


class IdmPredictor:
    requires_warmup = 0.0

    def __init__(self, params: IdmParams | None = None, name: str = "idm"):
        self.params = params or IdmParams()
        self.name = name

    def predict(self, history: Sequence[StepState], horizon: float) -> float:
        return physics_predict("idm", self.params, history, horizon)


class GhrPredictor:
    def __init__(self, params: GhrParams | None = None, name: str = "ghr"):
        self.params = params or GhrParams()
        self.name = name
        self.requires_warmup = self.params.tau

    def predict(self, history: Sequence[StepState], horizon: float) -> float:
        return physics_predict("ghr", self.params, history, horizon)


def make_physics_predictor(params: IdmParams | GhrParams, name: str | None = None):
    if isinstance(params, IdmParams):
        return IdmPredictor(params, name or "idm")
    return GhrPredictor(params, name or "ghr")


def idm_equilibrium_spacing(p: IdmParams, v: float) -> float:
    """Steady-state gap at speed ``v`` behind a leader at the same speed (v < v0)."""
    s_star = p.s0 + v * p.T_hw
    return s_star / math.sqrt(1.0 - (v / p.v0) ** p.delta)
