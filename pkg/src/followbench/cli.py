"""Command-line entry point.

Subcommands: ``calibrate``, ``simulate``, ``benchmark``, ``export-finetune``
and ``synth`` (synthetic data). Options may also come from ``--config FILE``:
either ``key = value`` lines or a previous run's ``run_manifest.json``;
flags given on the command line win.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 backend error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .baselines import GhrParams, GhrPredictor, IdmParams, IdmPredictor, load_params, save_params
from .calibrate import GaConfig, calibrate_ga, calibrate_per_event
from .errors import BackendError, ConfigError, DataError, PredictorFailure
from .events import CarFollowingEvent, load_events, save_events
from .kinematics import (
    DEFAULT_WARMUP,
    LLM_STRIDE,
    ConstantSpeedPredictor,
    PlaybackPredictor,
    SimulatedTrajectory,
    rollout,
    write_trajectories,
)
from .llm.backend import BackendConfig, make_backend
from .llm.finetune import DEFAULT_N_INSTANCES, export_finetune_dataset
from .llm.predictor import GenFollowerPredictor, ReplyCache
from .llm.prompts import PROMPT_VERSION, TaskConfig
from .metrics import TTC_AGGREGATIONS, EvalReport, build_report, format_table, write_reports
from .synth import LeaderProfile, synth_events

log = logging.getLogger("followbench")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND = 0, 2, 3, 4
CALIBRATABLE = ("idm", "ghr")
MODELS = ("idm", "ghr", "genfollower", "constant", "playback")


class UsageError(ConfigError):
    pass


# --- argument parsing -----------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="key = value file or run_manifest.json with option defaults")
    if data:
        p.add_argument("--data", help="event file (CSV or JSON)")
        p.add_argument("--format", choices=("csv", "json"), help="event file format (default: suffix)")
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--jobs", type=int, default=1, help="concurrent workers")
    p.add_argument("--log-level", default="WARNING")


def _add_sim(p: argparse.ArgumentParser) -> None:
    p.add_argument("--warmup", type=float, default=DEFAULT_WARMUP, help="seconds pinned to the record")
    p.add_argument("--llm-stride", type=float, default=LLM_STRIDE, help="seconds between LLM predictions")
    p.add_argument("--params-idm", help="IDM parameter JSON (default parameters otherwise)")
    p.add_argument("--params-ghr", help="GHR parameter JSON (default parameters otherwise)")
    p.add_argument("--ttc-agg", choices=TTC_AGGREGATIONS, default="mean")
    p.add_argument("--backend", choices=("mock", "remote"), default="mock")
    p.add_argument("--base-url")
    p.add_argument("--model-name", default="gpt-4")
    p.add_argument("--api-key-env", default="FOLLOWBENCH_API_KEY")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--rate-limit", type=float, default=60.0, help="requests per minute")
    p.add_argument("--no-fallback", action="store_true", help="fail instead of falling back to IDM")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="followbench", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"followbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="GA calibration of IDM or GHR parameters")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--warmup", type=float, default=DEFAULT_WARMUP)
    p.add_argument("--population", type=int, default=50)
    p.add_argument("--generations", type=int, default=200)
    p.add_argument("--crossover-rate", type=float, default=0.9)
    p.add_argument("--mutation-rate", type=float, default=0.1)
    p.add_argument("--mutation-sigma", type=float, default=0.1)
    p.add_argument("--elitism", type=int, default=2)
    p.add_argument("--tournament-k", type=int, default=3)
    p.add_argument("--per-event", action="store_true", help="calibrate every event separately")

    p = sub.add_parser("simulate", help="roll out one model and write its trajectories")
    _add_common(p)
    _add_sim(p)
    p.add_argument("--model", required=True)

    p = sub.add_parser("benchmark", help="evaluate several models and print the results table")
    _add_common(p)
    _add_sim(p)
    p.add_argument("--models", default="idm,ghr,genfollower", help="comma-separated model list")

    p = sub.add_parser("export-finetune", help="write chat fine-tuning examples as JSONL")
    _add_common(p)
    p.add_argument("--n", type=int, default=DEFAULT_N_INSTANCES, help="number of examples")
    p.add_argument("--output", help="JSONL path (default: <out>/finetune.jsonl)")
    p.add_argument("--history-window", type=float, default=4.0)
    p.add_argument("--horizon", type=float, default=0.5)

    p = sub.add_parser("synth", help="generate synthetic events with a known physics follower")
    _add_common(p, data=False)
    p.add_argument("--output", required=True, help="CSV or JSON path")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--profile", choices=("constant", "stop_and_go", "random"), default="random")
    p.add_argument("--leader-speed", type=float, default=10.0)
    p.add_argument("--params", help="generator parameter JSON (default: IDM defaults)")
    p.add_argument("--duration", type=float, default=15.0)
    p.add_argument("--dt", type=float, default=0.1)
    return parser


def _read_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file {path} does not exist")
    if p.suffix == ".json":
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from exc
        return dict(data.get("config", data))
    cfg = {}
    for n, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        cfg[k.replace("-", "_")] = v
    return cfg


def _coerce(value, default):
    if isinstance(default, bool) and isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return value


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    first, _ = parser.parse_known_args(argv)
    if getattr(first, "config", None):
        cfg = _read_config(first.config)
        subparser = parser._subparsers._group_actions[0].choices[first.command]
        known = {a.dest: a for a in subparser._actions}
        defaults = {}
        for k, v in cfg.items():
            if k in ("command", "config") or k not in known:
                continue
            defaults[k] = _coerce(v, known[k].default)
        subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


# --- helpers -------------------------------------------------------------------

def _load_data(args) -> list[CarFollowingEvent]:
    if not args.data:
        raise UsageError("--data is required")
    path = Path(args.data)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    return load_events(path, args.format)


def _write_manifest(args, out: Path, extra: dict | None = None) -> None:
    config = {k: v for k, v in vars(args).items() if k not in ("config",)}
    manifest = {
        "command": args.command,
        "code_version": __version__,
        "prompt_version": PROMPT_VERSION,
        "seed": args.seed,
        "config": config,
        **(extra or {}),
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")


def _backend_config(args, out: Path) -> BackendConfig:
    return BackendConfig(
        kind=args.backend,
        base_url=args.base_url,
        model_name=args.model_name,
        api_key_env=args.api_key_env,
        timeout=args.timeout,
        max_retries=args.max_retries,
        temperature=args.temperature,
        rate_limit_per_min=args.rate_limit,
        log_dir=str(out / "llm_log") if args.backend == "remote" else None,
    )


def _params(args, model: str):
    path = getattr(args, f"params_{model}")
    if not path:
        return IdmParams() if model == "idm" else GhrParams()
    if not Path(path).exists():
        raise UsageError(f"parameter file {path} does not exist")
    params = load_params(path)
    if params.model != model:
        raise UsageError(f"{path} holds {params.model} parameters, expected {model}")
    return params


class ModelRunner:
    """Builds a fresh predictor per event (shared backend and reply cache for the LLM)."""

    def __init__(self, model: str, args, out: Path):
        if model not in MODELS:
            raise UsageError(f"unsupported model: {model} (choose from {', '.join(MODELS)})")
        self.model = model
        self.stride = None
        self.predictors: dict[str, object] = {}
        if model == "idm":
            p = _params(args, "idm")
            self.factory: Callable[[CarFollowingEvent], object] = lambda ev: IdmPredictor(p)
        elif model == "ghr":
            p = _params(args, "ghr")
            self.factory = lambda ev: GhrPredictor(p)
        elif model == "constant":
            self.factory = lambda ev: ConstantSpeedPredictor()
        elif model == "playback":
            self.factory = lambda ev: PlaybackPredictor(ev)
        else:
            backend = make_backend(_backend_config(args, out))
            cache = ReplyCache()
            fallback = not args.no_fallback
            self.stride = args.llm_stride
            task = TaskConfig(horizon=args.llm_stride)
            self.factory = lambda ev: GenFollowerPredictor(
                backend, TaskConfig(task.history_window, task.horizon, ev.dt), fallback=fallback, cache=cache
            )

    def run(self, events: Sequence[CarFollowingEvent], warmup: float, jobs: int):
        def one(ev):
            pred = self.factory(ev)
            self.predictors[ev.event_id] = pred
            try:
                return rollout(ev, pred, warmup=warmup, stride=self.stride), None
            except PredictorFailure as exc:
                return None, {"event_id": ev.event_id, "t": exc.t, "error": str(exc)}

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(one, events))
        else:
            results = [one(ev) for ev in events]
        ok_events, trajs, failures = [], [], []
        for ev, (tr, fail) in zip(events, results):
            if tr is None:
                failures.append(fail)
            else:
                ok_events.append(ev)
                trajs.append(tr)
        return ok_events, trajs, failures

    def write_explanations(self, path: Path, event_ids: Sequence[str]) -> None:
        with path.open("w", encoding="utf-8") as fh:
            for eid in event_ids:
                pred = self.predictors.get(eid)
                for o in getattr(pred, "outcomes", []):
                    fh.write(json.dumps({"event_id": eid, **asdict(o)}, sort_keys=True) + "\n")


def _evaluate(model: str, events, args, out: Path) -> tuple[EvalReport, list[SimulatedTrajectory]]:
    runner = ModelRunner(model, args, out)
    ok_events, trajs, failures = runner.run(events, args.warmup, args.jobs)
    report = build_report(model, ok_events, trajs, args.ttc_agg, failures)
    write_trajectories(trajs, out / f"trajectories_{model}.csv")
    if model == "genfollower":
        runner.write_explanations(out / f"explanations_{model}.jsonl", [ev.event_id for ev in events])
    return report, trajs


# --- subcommands ---------------------------------------------------------------

def cmd_calibrate(args) -> int:
    if args.model not in CALIBRATABLE:
        raise UsageError(f"unsupported model: {args.model} (calibrate supports {', '.join(CALIBRATABLE)})")
    config = GaConfig(
        population=args.population, generations=args.generations, crossover_rate=args.crossover_rate,
        mutation_rate=args.mutation_rate, mutation_sigma=args.mutation_sigma, elitism=args.elitism,
        seed=args.seed, tournament_k=args.tournament_k,
    )
    events = _load_data(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params_path = out / f"params_{args.model}.json"
    hist_path = out / "fitness_history.csv"
    if args.per_event:
        results = calibrate_per_event(args.model, events, config, args.warmup, args.jobs)
        payload = {r.event_ids[0]: {**r.best_params.to_json_dict(), "fitness": r.best_fitness} for r in results}
        params_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        with hist_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["event_id", "generation", "best_fitness"])
            for r in results:
                w.writerows([r.event_ids[0], g, repr(f)] for g, f in enumerate(r.history))
        print(f"calibrated {len(results)} events separately -> {params_path}")
    else:
        res = calibrate_ga(args.model, events, config, args.warmup, jobs=args.jobs)
        save_params(res.best_params, params_path)
        with hist_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "best_fitness"])
            w.writerows([g, repr(f)] for g, f in enumerate(res.history))
        print(f"best fitness {res.best_fitness:.6g} m^2 -> {params_path}")
        for k, v in asdict(res.best_params).items():
            print(f"  {k:>7} = {v:.6g}")
    _write_manifest(args, out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    events = _load_data(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report, _ = _evaluate(args.model, events, args, out)
    write_reports([report], out, warmup=args.warmup, ttc_aggregation=args.ttc_agg)
    _write_manifest(args, out)
    print(format_table([report]))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    if not models:
        raise UsageError("no models requested")
    for m in models:
        if m not in MODELS:
            raise UsageError(f"unsupported model: {m} (choose from {', '.join(MODELS)})")
    events = _load_data(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = [_evaluate(m, events, args, out)[0] for m in models]
    write_reports(reports, out, warmup=args.warmup, llm_stride=args.llm_stride,
                  ttc_aggregation=args.ttc_agg, seed=args.seed, data=str(args.data),
                  code_version=__version__)
    _write_manifest(args, out)
    print(format_table(reports))
    return EXIT_OK


def cmd_export_finetune(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be a positive integer, got {args.n}")
    events = _load_data(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(args.output) if args.output else out / "finetune.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    task = TaskConfig(history_window=args.history_window, horizon=args.horizon, dt=events[0].dt)
    export_finetune_dataset(events, path, args.n, args.seed, task)
    _write_manifest(args, out)
    print(f"wrote {args.n} examples -> {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    params = load_params(args.params) if args.params else IdmParams()
    profile = LeaderProfile(args.profile, speed=args.leader_speed)
    events = synth_events(profile, params, args.n, args.seed, dt=args.dt, duration=args.duration)
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_events(events, path)
    print(f"wrote {len(events)} events -> {path}")
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "benchmark": cmd_benchmark,
    "export-finetune": cmd_export_finetune,
    "synth": cmd_synth,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
