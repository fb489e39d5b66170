"""Evaluation measures: spacing MSE, collision rate and time-to-collision, plus reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyInput, InvalidArgument, LengthMismatch
from .events import CarFollowingEvent
from .kinematics import SimulatedTrajectory, evaluation_slice

TTC_AGGREGATIONS = ("mean", "median", "global-min")


def mse_spacing(observed: Sequence[Sequence[float]], simulated: Sequence[Sequence[float]]) -> float:
    """Mean over events of the per-event mean squared spacing error."""
    if len(observed) != len(simulated):
        raise LengthMismatch(f"{len(observed)} observed series vs {len(simulated)} simulated")
    if not observed:
        raise EmptyInput("no series to compare")
    per_event = []
    for i, (y, y_hat) in enumerate(zip(observed, simulated)):
        y = np.asarray(y, dtype=float)
        y_hat = np.asarray(y_hat, dtype=float)
        if y.shape != y_hat.shape:
            raise LengthMismatch(f"series {i}: {y.shape} observed vs {y_hat.shape} simulated")
        if y.size == 0:
            raise EmptyInput(f"series {i} is empty")
        per_event.append(float(np.mean((y - y_hat) ** 2)))
    return float(np.mean(per_event))


def collision_rate(trajectories: Sequence[SimulatedTrajectory]) -> float:
    """Percentage of events whose simulated spacing ever drops below zero."""
    if not trajectories:
        raise EmptyInput("collision_rate needs at least one trajectory")
    hits = sum(1 for tr in trajectories if any(s.spacing_sim < 0 for s in tr.sim_steps))
    return 100.0 * hits / len(trajectories)


class TtcPoint(NamedTuple):
    t: float
    ttc: float


def ttc(spacing: float, rel_speed: float) -> float:
    """``-S / dV`` while closing (``dV < 0``), ``inf`` otherwise."""
    if rel_speed >= 0:
        return math.inf
    return -spacing / rel_speed


def ttc_series(trajectory: SimulatedTrajectory) -> list[TtcPoint]:
    """TTC over the evaluation window, stopping at the first non-positive spacing."""
    out = []
    for s in trajectory.evaluation_steps():
        if s.spacing_sim <= 0:
            break
        out.append(TtcPoint(s.t, ttc(s.spacing_sim, s.lv_speed - s.fv_speed_sim)))
    return out


def event_min_ttc(trajectory: SimulatedTrajectory) -> float:
    values = [p.ttc for p in ttc_series(trajectory)]
    return min(values, default=math.inf)


class TtcAggregate(NamedTuple):
    value: float
    n_no_closing: int
    method: str


def min_ttc_aggregate(trajectories: Sequence[SimulatedTrajectory], method: str = "mean") -> TtcAggregate:
    """Aggregate per-event minimum TTC across events.

    Events that never close on the leader have no finite TTC; they are left
    out of the aggregate and counted in ``n_no_closing``. If no event has a
    finite value the aggregate is ``inf``.
    """
    if not trajectories:
        raise EmptyInput("min_ttc_aggregate needs at least one trajectory")
    if method not in TTC_AGGREGATIONS:
        raise InvalidArgument(f"ttc aggregation must be one of {TTC_AGGREGATIONS}, got {method!r}")
    mins = [event_min_ttc(tr) for tr in trajectories]
    finite = [m for m in mins if math.isfinite(m)]
    n_no = len(mins) - len(finite)
    if not finite:
        return TtcAggregate(math.inf, n_no, method)
    if method == "mean":
        value = float(np.mean(finite))
    elif method == "median":
        value = float(np.median(finite))
    else:
        value = min(finite)
    return TtcAggregate(value, n_no, method)


# --- reports ------------------------------------------------------------------

@dataclass
class EventResult:
    event_id: str
    mse: float
    collided: bool
    min_ttc: float


@dataclass
class EvalReport:
    model_name: str
    n_events: int
    mse_spacing: float
    collision_rate: float
    min_ttc_aggregate: float
    ttc_aggregation: str = "mean"
    n_no_closing: int = 0
    n_failed: int = 0
    per_event: list[EventResult] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("mse_spacing", "collision_rate", "min_ttc_aggregate"):
            d[k] = _json_float(d[k])
        for pe in d["per_event"]:
            pe["mse"] = _json_float(pe["mse"])
            pe["min_ttc"] = _json_float(pe["min_ttc"])
        return d


def _json_float(x: float):
    # JSON has no inf/nan; an infinite TTC (never closing) is written as null
    return x if math.isfinite(x) else None


def build_report(
    model_name: str,
    events: Sequence[CarFollowingEvent],
    trajectories: Sequence[SimulatedTrajectory],
    ttc_aggregation: str = "mean",
    failures: Sequence[dict] = (),
) -> EvalReport:
    """Assemble a report from matched (event, trajectory) pairs.

    ``failures`` lists events the model could not be rolled out on; they
    are reported but excluded from every metric.
    """
    if len(events) != len(trajectories):
        raise LengthMismatch(f"{len(events)} events vs {len(trajectories)} trajectories")
    if not trajectories:
        return EvalReport(model_name, 0, math.nan, math.nan, math.nan, ttc_aggregation,
                          n_failed=len(failures), failures=list(failures))
    observed, simulated, per_event = [], [], []
    for ev, tr in zip(events, trajectories):
        if ev.event_id != tr.event_id:
            raise InvalidArgument(f"event {ev.event_id} paired with trajectory {tr.event_id}")
        y = ev.arrays["spacing"][evaluation_slice(ev, tr.warmup_end - ev.t0)]
        y_hat = tr.spacing_array()
        observed.append(y)
        simulated.append(y_hat)
        per_event.append(EventResult(
            ev.event_id,
            float(np.mean((y - y_hat) ** 2)),
            tr.collided,
            event_min_ttc(tr),
        ))
    agg = min_ttc_aggregate(trajectories, ttc_aggregation)
    return EvalReport(
        model_name=model_name,
        n_events=len(trajectories),
        mse_spacing=mse_spacing(observed, simulated),
        collision_rate=collision_rate(trajectories),
        min_ttc_aggregate=agg.value,
        ttc_aggregation=ttc_aggregation,
        n_no_closing=agg.n_no_closing,
        n_failed=len(failures),
        per_event=per_event,
        failures=list(failures),
    )


TABLE_HEADERS = ("Model", "MSE of Spacing ↓", "Collision Rate % ↓", "Minimum TTC ↑")


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "n/a"
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return f"{x:.2f}"


def format_table(reports: Sequence[EvalReport]) -> str:
    """Aligned text table; arrows mark whether lower or higher is better."""
    rows = [TABLE_HEADERS] + [
        (r.model_name, _fmt(r.mse_spacing), _fmt(r.collision_rate), _fmt(r.min_ttc_aggregate))
        for r in reports
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = []
    for j, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [row[i].rjust(widths[i]) for i in range(1, 4)]
        lines.append("  ".join(cells))
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    notes = sorted({r.ttc_aggregation for r in reports})
    lines.append(f"(Minimum TTC aggregated across events by: {', '.join(notes)})")
    failed = [f"{r.model_name}={r.n_failed}" for r in reports if r.n_failed]
    if failed:
        lines.append(f"(events excluded after rollout failure: {', '.join(failed)})")
    return "\n".join(lines)


def reports_to_json(reports: Sequence[EvalReport], **meta) -> str:
    return json.dumps({**meta, "models": [r.to_dict() for r in reports]}, indent=2, sort_keys=True) + "\n"


REPORT_CSV_COLUMNS = ("model", "n_events", "n_failed", "mse_spacing", "collision_rate",
                      "min_ttc_aggregate", "ttc_aggregation", "n_no_closing")


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_CSV_COLUMNS)
    for r in reports:
        w.writerow([r.model_name, r.n_events, r.n_failed, repr(r.mse_spacing), repr(r.collision_rate),
                    repr(r.min_ttc_aggregate), r.ttc_aggregation, r.n_no_closing])
    return buf.getvalue()


def write_reports(reports: Sequence[EvalReport], out_dir: str | Path, **meta) -> None:
    out = Path(out_dir)
    (out / "report.json").write_text(reports_to_json(reports, **meta), encoding="utf-8")
    (out / "report.csv").write_text(reports_to_csv(reports), encoding="utf-8")
    (out / "report.txt").write_text(format_table(reports) + "\n", encoding="utf-8")
