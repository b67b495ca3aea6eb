"""Command-line entry point.

Subcommands: ``simulate`` (full round loop), ``evogame`` (strategy-dynamics
trajectory), ``migrate`` (task reassignment on an instance file), ``auction``
(one auction on an instance file) and ``verify`` (property suites).

Every run writes a ``manifest.json`` into the output directory before its
outputs; re-running with the same config, seed and version reproduces the
output files byte for byte. Exit codes: 0 success, 1 usage, 2 configuration,
3 runtime failure, 4 verification failure.
"""

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import fields, is_dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

import fedmob
from fedmob import evogame, sim, verify
from fedmob.auction import (AuctionInfeasibleError, load_instance, outcome_to_dict,
                            run_auction)
from fedmob.channel import ChannelParams, ChannelState, capacity
from fedmob.evogame import PopulationState
from fedmob.migration import (GAParams, OnlineQueue, Receiver, Task, run_migration,
                              write_generation_log)
from fedmob.sim import (AccuracyBlock, AuctionBlock, EvoGameBlock, MigrationBlock,
                        SimConfig, TaskBlock, metrics_to_dict)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_VERIFY = 4

OUT_DIR_ENV = "FEDMOB_OUT"

# JSON key -> (SimConfig attribute, block dataclass)
_BLOCK_KEYS = {
    "channel": ("channel", ChannelParams),
    "evogame": ("evo", EvoGameBlock),
    "migration": ("migration", MigrationBlock),
    "auction": ("auction", AuctionBlock),
    "accuracy": ("accuracy", AccuracyBlock),
    "task": ("task", TaskBlock),
}
_TUPLE_KEYS = {"reward_range", "momentum", "data_volume_range", "x0"}


class ConfigError(Exception):
    """Configuration problems: missing file, bad syntax, broken invariant."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(message)


def _coerce(value, key):
    if key in _TUPLE_KEYS and isinstance(value, list):
        return tuple(value)
    return value


def _build_block(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError("unknown-key",
                          f"unknown keys in {where}: {', '.join(unknown)}")
    kwargs = {k: _coerce(v, k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError("invariant", f"invalid {where} configuration: {exc}") from exc


def config_from_dict(data: dict) -> SimConfig:
    if not isinstance(data, dict):
        raise ConfigError("syntax", "config root must be a JSON object")
    top_allowed = {f.name for f in fields(SimConfig) if f.name not in
                   {"channel", "evo", "migration", "auction", "accuracy", "task"}}
    unknown = sorted(set(data) - top_allowed - set(_BLOCK_KEYS))
    if unknown:
        raise ConfigError("unknown-key", f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _BLOCK_KEYS:
            attr, cls = _BLOCK_KEYS[key]
            if not isinstance(value, dict):
                raise ConfigError("syntax", f"section {key!r} must be an object")
            kwargs[attr] = _build_block(cls, value, key)
        else:
            kwargs[key] = _coerce(value, key)
    try:
        return SimConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError("invariant", f"invalid configuration: {exc}") from exc


def config_to_dict(cfg: SimConfig) -> dict:
    out: Dict = {}
    blocks = {attr: key for key, (attr, _) in _BLOCK_KEYS.items()}
    for f in fields(SimConfig):
        value = getattr(cfg, f.name)
        if f.name in blocks:
            out[blocks[f.name]] = dataclasses.asdict(value)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def parse_config(path: str) -> SimConfig:
    """Load a JSON config file; an empty file means all defaults."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError("missing", f"config file not found: {path}")
    text = p.read_text()
    if not text.strip():
        return SimConfig()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("syntax", f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_DIR_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args) -> SimConfig:
    cfg = parse_config(args.config) if args.config else SimConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "rounds", None) is not None:
        overrides["rounds"] = args.rounds
    if overrides:
        try:
            cfg = dataclasses.replace(cfg, **overrides)
        except ValueError as exc:
            raise ConfigError("invariant", str(exc)) from exc
    return cfg


class Manifest:
    """Replay record written before any output file."""

    def __init__(self, out_dir: Path, command: str, seed: Optional[int],
                 config: Optional[dict], extra: Optional[dict] = None):
        self.path = out_dir / "manifest.json"
        self.data = {
            "artifact": "fedmob",
            "version": fedmob.__version__,
            "schema_version": 1,
            "command": command,
            "seed": seed,
            "config": config,
            "outputs": [],
            "duration_seconds": None,
        }
        if extra:
            self.data.update(extra)
        self._start = time.perf_counter()
        self.write()

    def write(self):
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def add_output(self, path: Path):
        self.data["outputs"].append(path.name)

    def finish(self):
        self.data["duration_seconds"] = time.perf_counter() - self._start
        self.write()


def _write_metrics(metrics, fmt: str, path: Path) -> None:
    if fmt == "jsonl":
        with open(path, "w") as fh:
            for m in metrics:
                fh.write(json.dumps(metrics_to_dict(m), sort_keys=True))
                fh.write("\n")
        return
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if not metrics:
            writer.writerow(["round"])
            return
        b = len(metrics[0].region_proportions)
        writer.writerow(
            ["round"] + [f"x_{i + 1}" for i in range(b)]
            + ["migrations_triggered", "migrations_reassigned", "comm_overhead"]
            + [f"accuracy_{i + 1}" for i in range(b)]
            + ["total_payment", "participation_rate", "auction_satisfied"])
        for m in metrics:
            writer.writerow(
                [m.round] + [repr(v) for v in m.region_proportions]
                + [m.migrations_triggered, m.migrations_reassigned,
                   repr(m.comm_overhead)]
                + [repr(v) for v in m.regional_accuracy]
                + [repr(m.total_payment), repr(m.participation_rate),
                   int(m.auction_satisfied)])


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    manifest = Manifest(out, "simulate", cfg.seed, config_to_dict(cfg),
                        {"format": args.format})
    _, metrics = sim.run_simulation(cfg)
    metrics_path = out / ("metrics.jsonl" if args.format == "jsonl" else "metrics.csv")
    _write_metrics(metrics, args.format, metrics_path)
    manifest.add_output(metrics_path)
    manifest.finish()
    print(f"simulate: {cfg.rounds} rounds -> {metrics_path}")
    return EXIT_OK


def cmd_evogame(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    try:
        raw = [float(v) for v in args.x0.split(",")]
        x0 = PopulationState.from_proportions(raw)
    except ValueError as exc:
        raise ConfigError("invariant", f"bad --x0: {exc}") from exc
    rewards = cfg.region_rewards()
    if len(x0) != cfg.n_regions:
        rewards = np.linspace(cfg.reward_range[0], cfg.reward_range[1], len(x0))
    volume = (sum(cfg.data_volume_range) / 2.0,) * len(x0)
    params = evogame.GameParams(rewards=tuple(rewards), data_volume=volume,
                                unit_cost=cfg.evo.unit_cost,
                                learning_rate=cfg.evo.learning_rate)
    q0 = capacity(ChannelState(cfg.channel.beta_mean, 1.0, cfg.channel.p_max),
                  cfg.channel)
    q = np.full(len(x0), q0)
    manifest = Manifest(out, "evogame", cfg.seed, config_to_dict(cfg),
                        {"x0": list(x0.x), "horizon": args.horizon})
    n_steps = max(int(round(args.horizon / cfg.evo.dt)), 1)
    traj = evogame.integrate(x0, params, q, cfg.evo.dt, n_steps)
    traj_path = out / "trajectory.csv"
    traj.write_csv(str(traj_path))
    manifest.add_output(traj_path)
    manifest.finish()
    report = evogame.detect_equilibrium(traj, cfg.evo.equilibrium_tol)
    if report is None:
        print(f"evogame: no equilibrium within t={args.horizon} -> {traj_path}")
    else:
        print(f"evogame: equilibrium from t={report.time:g} -> {traj_path}")
    return EXIT_OK


def cmd_migrate(args) -> int:
    out = _out_dir(args)
    path = Path(args.instance)
    if not path.is_file():
        raise ConfigError("missing", f"instance file not found: {args.instance}")
    try:
        data = json.loads(path.read_text())
        tasks = [Task(id=str(t["id"]), origin_user=int(t.get("origin_user", -1)),
                      required_capacity=float(t["required_capacity"]),
                      data_size=float(t["data_size"]),
                      progress=float(t.get("progress", 0.0)))
                 for t in data["tasks"]]
        receivers = [Receiver(id=int(u["id"]), capacity=float(u["capacity"]))
                     for u in data["users"]]
        params = GAParams(**data.get("params", {}))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError("syntax", f"bad migration instance: {exc}") from exc
    seed = args.seed if args.seed is not None else 0
    manifest = Manifest(out, "migrate", seed, None, {"instance": str(path)})
    queue = OnlineQueue(tasks)
    result = run_migration(queue, receivers, params, seed)
    plan_path = out / "plan.json"
    with open(plan_path, "w") as fh:
        json.dump({"mapping": result.plan.mapping,
                   "objectives": list(result.plan.objectives),
                   "assigned": result.plan.assigned,
                   "unassigned": result.plan.unassigned},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    log_path = out / "generations.csv"
    write_generation_log(result.history, str(log_path))
    manifest.add_output(plan_path)
    manifest.add_output(log_path)
    manifest.finish()
    print(f"migrate: {result.plan.assigned} assigned, "
          f"{result.plan.unassigned} unassigned -> {plan_path}")
    return EXIT_OK


def cmd_auction(args) -> int:
    out = _out_dir(args)
    path = Path(args.instance)
    if not path.is_file():
        raise ConfigError("missing", f"instance file not found: {args.instance}")
    try:
        bids, cfg, capacities = load_instance(str(path))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError("syntax", f"bad auction instance: {exc}") from exc
    manifest = Manifest(out, "auction", None, None, {"instance": str(path)})
    outcome = run_auction(bids, cfg, capacities)
    outcome_path = out / "outcome.json"
    with open(outcome_path, "w") as fh:
        json.dump(outcome_to_dict(outcome), fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add_output(outcome_path)
    manifest.finish()
    print(f"auction: {len(outcome.winners)} winners, "
          f"total payment {outcome.total_payment:g} -> {outcome_path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    out = _out_dir(args)
    manifest = Manifest(out, "verify", None, None, {"quick": args.quick})
    results = verify.run_all(quick=args.quick)
    failed = 0
    for res in results:
        tag = "PASS" if res.ok else "FAIL"
        print(f"{tag} {res.name}: {res.detail}")
        failed += 0 if res.ok else 1
    report_path = out / "verify.json"
    with open(report_path, "w") as fh:
        json.dump([{"name": r.name, "ok": r.ok, "detail": r.detail} for r in results],
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add_output(report_path)
    manifest.finish()
    if failed:
        print(f"verify: {failed} check(s) failed")
        return EXIT_VERIFY
    print(f"verify: all {len(results)} checks passed")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="fedmob", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON config file (empty file = defaults)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV} or .)")

    p = sub.add_parser("simulate", help="run the full round loop")
    common(p)
    p.add_argument("--rounds", type=int, help="override the configured horizon")
    p.add_argument("--format", choices=("csv", "jsonl"), default="jsonl")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evogame", help="integrate the strategy dynamics")
    common(p)
    p.add_argument("--x0", required=True,
                   help="comma-separated initial proportions (normalized)")
    p.add_argument("--horizon", type=float, default=500.0)
    p.set_defaults(func=cmd_evogame)

    p = sub.add_parser("migrate", help="reassign tasks from an instance file")
    common(p, config=False)
    p.add_argument("--instance", required=True)
    p.set_defaults(func=cmd_migrate)

    p = sub.add_parser("auction", help="run one auction from an instance file")
    common(p, config=False)
    p.add_argument("--instance", required=True)
    p.set_defaults(func=cmd_auction)

    p = sub.add_parser("verify", help="run the property suites")
    common(p, config=False)
    p.add_argument("--quick", action="store_true", help="reduced sample sizes")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error ({exc.kind}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AuctionInfeasibleError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, LookupError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())
