"""Car-following events: data model, ingestion, validation and history windows.

Sign convention used everywhere in the package: ``rel_speed = lv_speed - fv_speed``
(positive means the gap is opening). Units are SI.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyFile,
    InconsistentRelSpeed,
    InvalidArgument,
    MissingColumn,
    NegativeSpeed,
    NonPositiveSpacing,
    NonUniformTimestep,
    OutOfRange,
)

TIME_TOL = 1e-9
REL_SPEED_TOL = 0.01
CSV_COLUMNS = ("event_id", "t", "spacing", "lv_speed", "fv_speed", "rel_speed")
REQUIRED_COLUMNS = CSV_COLUMNS[:5]


@dataclass(frozen=True)
class StepState:
    t: float
    spacing: float
    lv_speed: float
    fv_speed: float
    rel_speed: float | None = None

    def as_vector(self) -> tuple[float, float, float, float]:
        """Model input ``[spacing, lv_speed, fv_speed, rel_speed]``."""
        rel = self.lv_speed - self.fv_speed if self.rel_speed is None else self.rel_speed
        return (self.spacing, self.lv_speed, self.fv_speed, rel)


@dataclass(frozen=True)
class CarFollowingEvent:
    event_id: str
    dt: float
    steps: tuple[StepState, ...]
    source: str = ""

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def duration(self) -> float:
        return (len(self.steps) - 1) * self.dt

    @property
    def t0(self) -> float:
        return self.steps[0].t

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        """Column arrays (read-only) for vectorised consumers."""
        cols = {
            "t": np.array([s.t for s in self.steps]),
            "spacing": np.array([s.spacing for s in self.steps]),
            "lv_speed": np.array([s.lv_speed for s in self.steps]),
            "fv_speed": np.array([s.fv_speed for s in self.steps]),
            "rel_speed": np.array([
                s.lv_speed - s.fv_speed if s.rel_speed is None else s.rel_speed
                for s in self.steps
            ]),
        }
        for arr in cols.values():
            arr.setflags(write=False)
        return cols

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises OutOfRange if off-grid or outside the event."""
        k = round((t - self.t0) / self.dt)
        if abs(self.t0 + k * self.dt - t) > 1e-6 or not 0 <= k < len(self.steps):
            raise OutOfRange(f"event {self.event_id}: t={t} is not on the event grid")
        return k


def validate_event(event: CarFollowingEvent) -> CarFollowingEvent:
    """Check the event invariants and return a normalised copy.

    Missing relative speeds are filled in; provided ones that agree with
    ``lv - fv`` to within 0.01 m/s are replaced by the exact difference, so
    downstream code can rely on the identity to machine precision.
    """
    eid = event.event_id
    if len(event.steps) < 2:
        raise InvalidArgument(f"event {eid}: need at least 2 steps, got {len(event.steps)}")
    if not (event.dt > 0 and math.isfinite(event.dt)):
        raise NonUniformTimestep(f"event {eid}: dt must be positive, got {event.dt}")

    fixed = []
    prev_t = None
    for i, s in enumerate(event.steps):
        vals = (s.t, s.spacing, s.lv_speed, s.fv_speed)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidArgument(f"event {eid}, step {i}: non-finite value in {vals}")
        if prev_t is not None and abs((s.t - prev_t) - event.dt) > TIME_TOL + 1e-12 * abs(s.t):
            raise NonUniformTimestep(
                f"event {eid}, step {i}: t={s.t} after t={prev_t} breaks dt={event.dt}"
            )
        prev_t = s.t
        if s.lv_speed < 0 or s.fv_speed < 0:
            raise NegativeSpeed(
                f"event {eid}, step {i} (t={s.t}): negative speed "
                f"lv={s.lv_speed} fv={s.fv_speed}"
            )
        if s.spacing <= 0:
            raise NonPositiveSpacing(f"event {eid}, step {i} (t={s.t}): spacing={s.spacing}")
        rel = s.lv_speed - s.fv_speed
        if s.rel_speed is not None and abs(s.rel_speed - rel) > REL_SPEED_TOL:
            raise InconsistentRelSpeed(
                f"event {eid}, step {i} (t={s.t}): rel_speed={s.rel_speed} "
                f"but lv-fv={rel:.6f}"
            )
        fixed.append(replace(s, rel_speed=rel) if s.rel_speed != rel else s)
    return replace(event, steps=tuple(fixed))


def _check_uniform(eid: str, ts: Sequence[float]) -> float:
    if len(ts) < 2:
        raise InvalidArgument(f"event {eid}: need at least 2 rows, got {len(ts)}")
    dt = ts[1] - ts[0]
    if dt <= 0:
        raise NonUniformTimestep(f"event {eid}: timestamps not increasing at t={ts[1]}")
    # snap to the nearest micro-second so that e.g. 0.30000000000000004 - 0.2 reads as 0.1
    dt_round = round(dt, 6)
    return dt_round if abs(dt_round - dt) <= TIME_TOL else dt


def _load_csv(path: Path) -> list[CarFollowingEvent]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyFile(f"{path}: file is empty")
        header = [c.strip() for c in reader.fieldnames]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        has_rel = "rel_speed" in header

        grouped: dict[str, list[tuple[int, StepState]]] = {}
        for row_no, row in enumerate(reader, start=2):
            row = {k.strip(): v for k, v in row.items() if k is not None}
            eid = row["event_id"].strip()
            try:
                rel_raw = row.get("rel_speed", "") if has_rel else ""
                step = StepState(
                    t=float(row["t"]),
                    spacing=float(row["spacing"]),
                    lv_speed=float(row["lv_speed"]),
                    fv_speed=float(row["fv_speed"]),
                    rel_speed=float(rel_raw) if rel_raw not in ("", None) else None,
                )
            except (TypeError, ValueError) as exc:
                raise MissingColumn(f"{path}, row {row_no} (event {eid}): {exc}") from exc
            if step.lv_speed < 0 or step.fv_speed < 0:
                raise NegativeSpeed(
                    f"{path}, row {row_no} (event {eid}): negative speed "
                    f"lv={step.lv_speed} fv={step.fv_speed}"
                )
            grouped.setdefault(eid, []).append((row_no, step))

    if not grouped:
        raise EmptyFile(f"{path}: no data rows")
    events = []
    for eid, rows in grouped.items():
        ts = [s.t for _, s in rows]
        dt = _check_uniform(eid, ts)
        events.append(CarFollowingEvent(eid, dt, tuple(s for _, s in rows), source=str(path)))
    return events


def _load_json(path: Path) -> list[CarFollowingEvent]:
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise EmptyFile(f"{path}: file is empty")
    data = json.loads(text)
    if not data:
        raise EmptyFile(f"{path}: no events")
    events = []
    for i, obj in enumerate(data):
        for key in ("event_id", "dt", "steps"):
            if key not in obj:
                raise MissingColumn(f"{path}: event #{i} lacks key {key!r}")
        eid = str(obj["event_id"])
        steps = []
        for j, s in enumerate(obj["steps"]):
            missing = [c for c in ("t", "spacing", "lv_speed", "fv_speed") if c not in s]
            if missing:
                raise MissingColumn(f"{path}: event {eid}, step {j} lacks {', '.join(missing)}")
            steps.append(StepState(
                t=float(s["t"]),
                spacing=float(s["spacing"]),
                lv_speed=float(s["lv_speed"]),
                fv_speed=float(s["fv_speed"]),
                rel_speed=None if s.get("rel_speed") is None else float(s["rel_speed"]),
            ))
        events.append(CarFollowingEvent(eid, float(obj["dt"]), tuple(steps), source=str(path)))
    return events


def load_events(
    path: str | Path,
    format: str | None = None,
    expected_duration: float | None = None,
) -> list[CarFollowingEvent]:
    """Read and validate events from a CSV or JSON file, preserving file order.

    ``format`` defaults to the file suffix. If ``expected_duration`` is given,
    every event must span exactly that many seconds.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("csv", "json"):
        raise InvalidArgument(f"unsupported event format {fmt!r}")
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    if path.stat().st_size == 0:
        raise EmptyFile(f"{path}: file is empty")

    raw = _load_csv(path) if fmt == "csv" else _load_json(path)
    events = [validate_event(ev) for ev in raw]
    if expected_duration is not None:
        for ev in events:
            if abs(ev.duration - expected_duration) > 1e-6:
                raise InvalidArgument(
                    f"event {ev.event_id}: duration {ev.duration:.3f}s, expected {expected_duration}s"
                )
    return events


def save_events(events: Iterable[CarFollowingEvent], path: str | Path, format: str | None = None) -> None:
    """Write events in the ingestion schema. Floats use ``repr`` so re-reading is lossless."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    events = list(events)
    if fmt == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for ev in events:
                for s in ev.steps:
                    rel = "" if s.rel_speed is None else repr(s.rel_speed)
                    w.writerow([ev.event_id, repr(s.t), repr(s.spacing), repr(s.lv_speed),
                                repr(s.fv_speed), rel])
    elif fmt == "json":
        payload = [
            {
                "event_id": ev.event_id,
                "dt": ev.dt,
                "steps": [
                    {k: v for k, v in (("t", s.t), ("spacing", s.spacing), ("lv_speed", s.lv_speed),
                                       ("fv_speed", s.fv_speed), ("rel_speed", s.rel_speed))
                     if v is not None}
                    for s in ev.steps
                ],
            }
            for ev in events
        ]
        path.write_text(json.dumps(payload), encoding="utf-8")
    else:
        raise InvalidArgument(f"unsupported event format {fmt!r}")


def slice_history(event: CarFollowingEvent, t_now: float, window: float) -> list[StepState]:
    """Samples covering ``[t_now - window, t_now]`` inclusive (``window/dt + 1`` of them)."""
    if window < 0:
        raise InvalidArgument(f"window must be >= 0, got {window}")
    if t_now - window < event.t0 - 1e-9:
        raise OutOfRange(
            f"event {event.event_id}: window of {window}s before t={t_now} precedes the event start"
        )
    if t_now > event.t0 + event.duration + 1e-9:
        raise OutOfRange(
            f"event {event.event_id}: t={t_now} exceeds the event duration {event.duration}s"
        )
    k = event.index_of(t_now)
    n = round(window / event.dt)
    if abs(n * event.dt - window) > 1e-6:
        raise InvalidArgument(f"window {window}s is not a multiple of dt={event.dt}")
    return list(event.steps[k - n:k + 1])
