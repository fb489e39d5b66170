"""Genetic-algorithm calibration of IDM / GHR parameters on closed-loop spacing error."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .baselines import (
    EMERGENCY_DECEL,
    MAX_ACCEL,
    PARAM_TYPES,
    GhrParams,
    IdmParams,
    ghr_accel_raw,
    idm_accel_raw,
    make_physics_predictor,
)
from .errors import InvalidArgument
from .events import CarFollowingEvent
from .kinematics import DEFAULT_WARMUP, evaluation_slice, rollout
from .metrics import mse_spacing

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaConfig:
    population: int = 50
    generations: int = 200
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    mutation_sigma: float = 0.1
    elitism: int = 2
    seed: int = 0
    tournament_k: int = 3

    def __post_init__(self):
        if self.population < 2:
            raise InvalidArgument(f"population must be >= 2, got {self.population}")
        if not 1 <= self.elitism < self.population:
            raise InvalidArgument(f"elitism must be in [1, population), got {self.elitism}")
        if self.generations < 0:
            raise InvalidArgument(f"generations must be >= 0, got {self.generations}")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgument(f"{name} must lie in [0, 1]")
        if self.mutation_sigma < 0:
            raise InvalidArgument("mutation_sigma must be >= 0")
        if self.tournament_k < 1:
            raise InvalidArgument("tournament_k must be >= 1")


@dataclass
class CalibrationResult:
    model: str
    best_params: IdmParams | GhrParams
    best_fitness: float
    history: list[float]
    n_evaluations: int
    event_ids: list[str] = field(default_factory=list)


def fitness(
    model: str,
    params: IdmParams | GhrParams,
    events: Sequence[CarFollowingEvent],
    warmup: float = DEFAULT_WARMUP,
) -> float:
    """Closed-loop spacing MSE of ``params`` over ``events`` via the generic rollout."""
    if not events:
        raise InvalidArgument("fitness needs at least one event")
    if params.model != model:
        raise InvalidArgument(f"{model} fitness called with {params.model} parameters")
    predictor = make_physics_predictor(params)
    observed, simulated = [], []
    for ev in events:
        tr = rollout(ev, predictor, warmup=warmup)
        observed.append(ev.arrays["spacing"][evaluation_slice(ev, warmup)])
        simulated.append(tr.spacing_array())
    return mse_spacing(observed, simulated)


def _group_events(events: Sequence[CarFollowingEvent]) -> list[list[int]]:
    groups: dict[tuple[int, float], list[int]] = {}
    for i, ev in enumerate(events):
        groups.setdefault((len(ev.steps), ev.dt), []).append(i)
    return list(groups.values())


def batch_event_mse(
    model: str,
    X: np.ndarray,
    events: Sequence[CarFollowingEvent],
    warmup: float = DEFAULT_WARMUP,
) -> np.ndarray:
    """Per-(individual, event) closed-loop spacing MSE, shape ``(len(X), len(events))``.

    Vectorised equivalent of rolling out ``make_physics_predictor`` for every
    row of ``X`` on every event with stride dt; agrees with :func:`fitness`
    to rounding.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = X.shape[0]
    out = np.empty((P, len(events)))
    for idx in _group_events(events):
        grp = [events[i] for i in idx]
        dt = grp[0].dt
        n = len(grp[0].steps)
        w = round(warmup / dt)
        if w >= n - 1:
            raise InvalidArgument(f"events of {n} steps are too short for warmup {warmup}s")
        LV = np.stack([ev.arrays["lv_speed"] for ev in grp])       # (E, n)
        S_rec = np.stack([ev.arrays["spacing"] for ev in grp])
        FV_rec = np.stack([ev.arrays["fv_speed"] for ev in grp])
        E = len(grp)
        S = np.empty((P, E, n))
        FV = np.empty((P, E, n))
        S[:, :, :w + 1] = S_rec[None, :, :w + 1]
        FV[:, :, :w + 1] = FV_rec[None, :, :w + 1]

        if model == "idm":
            v0, T_hw, a_max, b, delta, s0 = (X[:, j:j + 1] for j in range(6))
        elif model == "ghr":
            c, m_exp, l_exp, tau = (X[:, j:j + 1] for j in range(4))
            delay = np.rint(tau[:, 0] / dt).astype(int)
            if np.any(delay > w):
                raise InvalidArgument(f"GHR delay exceeds the {warmup}s warmup")
            p_idx = np.arange(P)[:, None]
            e_idx = np.arange(E)[None, :]
        else:
            raise InvalidArgument(f"unknown physics model {model!r}")

        with np.errstate(all="ignore"):
            for k in range(w, n - 1):
                v = FV[:, :, k]
                s = S[:, :, k]
                lv = LV[None, :, k]
                if model == "idm":
                    ok = s > 0
                    a = idm_accel_raw(v0, T_hw, a_max, b, delta, s0, v, v - lv, np.where(ok, s, 1.0))
                else:
                    kd = (k - delay)[:, None]
                    s_d = S[p_idx, e_idx, kd]
                    dv_d = LV[e_idx, kd] - FV[p_idx, e_idx, kd]
                    ok = (s > 0) & (s_d > 0)
                    a = ghr_accel_raw(c, m_exp, l_exp, v, dv_d, np.where(ok, s_d, 1.0))
                a = np.where(ok, a, -EMERGENCY_DECEL)
                a = np.where(np.isfinite(a), np.minimum(np.maximum(a, -EMERGENCY_DECEL), MAX_ACCEL),
                             -EMERGENCY_DECEL)
                fv = np.maximum(0.0, v + a * dt)
                FV[:, :, k + 1] = fv
                rel_next = LV[None, :, k + 1] - fv
                S[:, :, k + 1] = s + ((lv - v) + rel_next) / 2.0 * dt

            err = (S_rec[None, :, w + 1:] - S[:, :, w + 1:]) ** 2
            out[:, idx] = err.mean(axis=2)
    return out


def population_fitness(
    model: str,
    X: np.ndarray,
    events: Sequence[CarFollowingEvent],
    warmup: float = DEFAULT_WARMUP,
    jobs: int = 1,
) -> np.ndarray:
    """Fitness of every row of ``X``; chunks may be evaluated concurrently, results keep row order."""
    X = np.atleast_2d(X)
    if jobs <= 1 or len(X) < 2 * jobs:
        f = batch_event_mse(model, X, events, warmup).mean(axis=1)
    else:
        chunks = np.array_split(np.arange(len(X)), jobs)
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda ix: batch_event_mse(model, X[ix], events, warmup), chunks))
        f = np.concatenate(parts).mean(axis=1)
    return np.where(np.isfinite(f), f, np.inf)


def _tournament(rng: np.random.Generator, f: np.ndarray, k: int) -> int:
    picks = rng.integers(0, len(f), size=k)
    return int(picks[np.argmin(f[picks])])


def calibrate_ga(
    model: str,
    events: Sequence[CarFollowingEvent],
    config: GaConfig = GaConfig(),
    warmup: float = DEFAULT_WARMUP,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
    jobs: int = 1,
    on_generation: Callable[[int, float], None] | None = None,
) -> CalibrationResult:
    """Real-coded GA: tournament selection, uniform crossover, Gaussian mutation, elitism.

    ``history[0]`` is the best fitness of the random initial population and
    ``history[g]`` the best after generation ``g``; elitism makes it
    non-increasing. All randomness comes from one generator seeded with
    ``config.seed``.
    """
    if model not in PARAM_TYPES:
        raise InvalidArgument(f"unsupported model {model!r}; calibrate supports {sorted(PARAM_TYPES)}")
    if not events:
        raise InvalidArgument("calibration needs at least one event")
    cls = PARAM_TYPES[model]
    lo, hi = bounds if bounds is not None else cls.bounds_arrays()
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    span = hi - lo
    G = len(lo)
    P = config.population
    rng = np.random.default_rng(config.seed)

    def evaluate(X):
        return population_fitness(model, X, events, warmup, jobs)

    X = lo + rng.random((P, G)) * span
    f = evaluate(X)
    n_eval = P
    history = [float(f.min())]
    if on_generation:
        on_generation(0, history[-1])

    sigma = config.mutation_sigma * span
    n_children = P - config.elitism
    for gen in range(1, config.generations + 1):
        order = np.argsort(f, kind="stable")
        elite_X = X[order[:config.elitism]]
        elite_f = f[order[:config.elitism]]

        children = []
        while len(children) < n_children:
            p1 = X[_tournament(rng, f, config.tournament_k)]
            p2 = X[_tournament(rng, f, config.tournament_k)]
            if rng.random() < config.crossover_rate:
                mask = rng.random(G) < 0.5
                c1, c2 = np.where(mask, p1, p2), np.where(mask, p2, p1)
            else:
                c1, c2 = p1.copy(), p2.copy()
            for child in (c1, c2):
                hit = rng.random(G) < config.mutation_rate
                child = child + hit * rng.normal(0.0, 1.0, G) * sigma
                children.append(np.clip(child, lo, hi))
        children_X = np.array(children[:n_children])
        children_f = evaluate(children_X)
        n_eval += n_children

        X = np.vstack([elite_X, children_X])
        f = np.concatenate([elite_f, children_f])
        history.append(float(f.min()))
        if on_generation:
            on_generation(gen, history[-1])
        log.debug("generation %d best %.6g", gen, history[-1])

    best = int(np.argmin(f))
    return CalibrationResult(
        model=model,
        best_params=cls.from_array(X[best]),
        best_fitness=float(f[best]),
        history=history,
        n_evaluations=n_eval,
        event_ids=[ev.event_id for ev in events],
    )


def calibrate_per_event(
    model: str,
    events: Sequence[CarFollowingEvent],
    config: GaConfig = GaConfig(),
    warmup: float = DEFAULT_WARMUP,
    jobs: int = 1,
) -> list[CalibrationResult]:
    """One independent GA run per event (same seed for each)."""
    return [calibrate_ga(model, [ev], config, warmup, jobs=jobs) for ev in events]
