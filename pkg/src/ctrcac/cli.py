"""Command-line front end: ``ctrcac {learn,fly,oracle-check,sweep}``."""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import environments
from .config import ConfigError, ScenarioConfig, config_from_dict, read_mapping, write_resolved
from .gains import GainsDocument, bundled
from .rcac import DEFAULT_HYPERPARAMS, oracle_check

log = logging.getLogger("ctrcac")

EXIT_DIVERGED = 1
EXIT_INVALID = 2
ORACLE_TOL = 1e-4


def resolve_gains(source) -> GainsDocument:
    """A gains file path, or the name of a bundled set (with or without .json)."""
    path = Path(source)
    if path.is_file():
        return GainsDocument.load(path)
    try:
        return bundled(path.stem)
    except KeyError:
        raise ConfigError(f"gains_file: {source} is neither a file nor a bundled gain set") from None


def build_config(args, mode: str) -> ScenarioConfig:
    data = read_mapping(args.config) if args.config else {}
    data["mode"] = mode
    if getattr(args, "gains", None):
        data["gains_file"] = args.gains
    if getattr(args, "dt", None) is not None:
        data.setdefault("integrator", {})["dt"] = args.dt
    return config_from_dict(
        data, environment=args.env, seed=args.seed, out=args.out, duration=args.duration,
    )


def execute(cfg: ScenarioConfig, out_dir) -> dict:
    """Runs one scenario and writes its artifacts; returns a summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    gains = None
    if cfg.mode == "fly" and cfg.initial_gains is None:
        gains = resolve_gains(cfg.gains_file).gains
    summary = {"out": str(out), "status": "ok", "t_end": cfg.duration}
    try:
        res = environments.run(cfg, gains=gains)
        telemetry, final_gains = res.telemetry, res.gains
    except environments.DivergenceError as exc:
        summary.update(status="diverged", t_end=exc.t, message=str(exc))
        telemetry = exc.telemetry or environments.Telemetry()
        final_gains = None
    telemetry.write_csv(out / "telemetry.csv")
    if final_gains is not None:
        meta = {"scenario": cfg.digest(), "mode": cfg.mode, "trajectory": cfg.trajectory.kind, "environment": cfg.environment}
        GainsDocument(final_gains, meta).save(out / "gains.json")
    if len(telemetry):
        r = telemetry.array()[-1, 1:4]
        ref = environments.ClosedLoop(cfg, gains).reference.sample([telemetry.array()[-1, 0]])[0, :3]
        summary["final_error"] = [float(v) for v in np.abs(r - ref)]
    return summary


def _cmd_run(args, mode: str) -> int:
    cfg = build_config(args, mode)
    out = Path(cfg.out or f"runs/{mode}-{cfg.digest()}")
    summary = execute(cfg, out)
    print(json.dumps(summary))
    if summary["status"] != "ok":
        log.error("run diverged: %s", summary.get("message"))
        return EXIT_DIVERGED
    return 0


def _cmd_oracle(args) -> int:
    worst = {}
    for key, h in DEFAULT_HYPERPARAMS.items():
        worst[key] = oracle_check(h, seeds=range(args.seeds), duration=args.window, dt=args.dt or 1e-3)
        print(f"{key}: max relative error {worst[key]:.3e}")
    ok = max(worst.values()) < ORACLE_TOL
    print(f"oracle check {'passed' if ok else 'FAILED'} (tolerance {ORACLE_TOL:g})")
    return 0 if ok else EXIT_DIVERGED


def _set_path(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def _sweep_worker(job):
    data, out = job
    try:
        return execute(config_from_dict(data), out)
    except ConfigError as exc:
        return {"out": str(out), "status": "invalid", "message": str(exc)}


def _cmd_sweep(args) -> int:
    base = build_config(args, args.mode).to_dict()
    axes = []
    for item in args.set:
        key, _, values = item.partition("=")
        if not values:
            raise ConfigError(f"--set {item}: expected key=v1,v2,...")
        axes.append((key, [json.loads(v) for v in values.split(",")]))
    out_root = Path(args.out or "runs/sweep")
    jobs, labels = [], []
    for combo in itertools.product(*(vals for _, vals in axes)):
        data = json.loads(json.dumps(base))
        label = []
        for (key, _), value in zip(axes, combo):
            _set_path(data, key, value)
            label.append(f"{key}={value}")
        name = "_".join(label).replace("/", "-") or "base"
        data["out"] = str(out_root / name)
        jobs.append((data, out_root / name))
        labels.append(dict(zip((k for k, _ in axes), combo)))
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(_sweep_worker, jobs))
    out_root.mkdir(parents=True, exist_ok=True)
    fields = [k for k, _ in axes] + ["status", "t_end", "final_error", "out"]
    with open(out_root / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for label, res in zip(labels, results):
            w.writerow({**label, **res})
    for label, res in zip(labels, results):
        print(label, res["status"], res.get("final_error", ""))
    return 0 if all(r["status"] == "ok" for r in results) else EXIT_DIVERGED


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="scenario file (JSON or YAML)")
    p.add_argument("--env", choices=("source", "target"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--duration", type=float)
    p.add_argument("--dt", type=float)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctrcac", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    _common(sub.add_parser("learn", help="learn gains from zero on a scenario"))
    fly = sub.add_parser("fly", help="fly frozen gains")
    _common(fly)
    fly.add_argument("--gains", help="gains file or bundled set (table2_waypoint, table2_helix)")
    oracle = sub.add_parser("oracle-check", help="compare propagated and batch minimizers")
    oracle.add_argument("--seeds", type=int, default=20)
    oracle.add_argument("--window", type=float, default=10.0)
    oracle.add_argument("--dt", type=float)
    sweep = sub.add_parser("sweep", help="grid of runs in parallel")
    _common(sweep)
    sweep.add_argument("--mode", choices=("learn", "fly"), default="learn")
    sweep.add_argument("--gains")
    sweep.add_argument("--set", action="append", default=[], metavar="KEY=V1,V2", help="dotted config key and JSON values")
    sweep.add_argument("--workers", type=int)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.verb == "learn":
            return _cmd_run(args, "learn")
        if args.verb == "fly":
            return _cmd_run(args, "fly")
        if args.verb == "oracle-check":
            return _cmd_oracle(args)
        return _cmd_sweep(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
