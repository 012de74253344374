"""Command-line entry point: train, eval, openloop, analyze, teleop."""

import argparse
import csv
import os
import sys

from .config import ConfigError, RunConfig, load_config, parse_assignments


def _add_config_args(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")


def _resolve_config(args):
    cfg = RunConfig()
    try:
        if args.config:
            cfg = load_config(args.config, cfg)
        cfg = parse_assignments(args.set, cfg)
    except ConfigError as exc:
        raise SystemExit(f"config error: {exc}")
    return cfg


def _write_rows(rows, path):
    if not rows:
        return
    keys = sorted({k for row in rows for k in row})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def cmd_train(args):
    from .runner import run_train
    cfg = _resolve_config(args)
    result, ckpt = run_train(cfg)
    last = result.log_rows[-1] if result.log_rows else {}
    print(f"trained {result.updates_done} updates in {result.wall_seconds:.0f}s; "
          f"return={last.get('return_mean', float('nan')):.2f}; checkpoint={ckpt}")
    return 0


def cmd_eval(args):
    from .runner import run_eval
    cfg = _resolve_config(args)
    checkpoint = args.checkpoint or cfg.checkpoint
    if not checkpoint:
        raise SystemExit("eval needs --checkpoint or checkpoint= in config")
    rows = run_eval(cfg, checkpoint, scenario=args.scenario)
    for row in rows:
        print(" ".join(f"{k}={v}" for k, v in row.items()))
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_rows(rows, os.path.join(cfg.out_dir, f"eval_{args.scenario}.csv"))
    return 0


def cmd_openloop(args):
    from .runner import run_openloop
    cfg = _resolve_config(args)
    out_dir = os.path.join(cfg.out_dir, f"openloop_{args.gait}")
    trace, metrics, _ = run_openloop(
        args.gait, f=args.frequency, duration=args.duration, mu=args.mu,
        backend=cfg.contact_backend, out_dir=out_dir)
    print(f"gait={args.gait} f={args.frequency} duration={args.duration}s")
    for k, v in metrics.as_dict().items():
        print(f"  {k} = {v}")
    print(f"traces -> {out_dir}")
    return 0


def cmd_analyze(args):
    from .analysis import GaitTrace, gait_metrics, export_traces
    import numpy as np
    with open(args.telemetry, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [{k: float(v) for k, v in row.items()} for row in reader]
    trace = GaitTrace.from_rows(rows)
    metrics = gait_metrics(trace)
    for k, v in metrics.as_dict().items():
        print(f"{k} = {v}")
    if args.export:
        paths = export_traces(trace, "all", args.export)
        print("exported: " + ", ".join(paths))
    return 0


def cmd_teleop(args):
    from .teleop import TeleopServer
    cfg = _resolve_config(args)
    checkpoint = args.checkpoint or cfg.checkpoint
    if not checkpoint:
        raise SystemExit("teleop needs --checkpoint or checkpoint= in config")
    server = TeleopServer(checkpoint, port=args.port, host=args.host,
                          run_config=cfg, static_dir=args.static_dir)
    print(f"teleop server on {args.host}:{args.port} (ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cpgloco",
        description="Oscillator-driven quadruped locomotion lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a locomotion policy")
    _add_config_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--scenario", default="track",
                   choices=["track", "mass_sweep", "terrain", "omni"])
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("openloop", help="run a fixed open-loop gait baseline")
    _add_config_args(p)
    p.add_argument("gait", choices=["trot", "walk", "pace"])
    p.add_argument("--frequency", type=float, default=2.0)
    p.add_argument("--duration", type=float, default=8.0)
    p.add_argument("--mu", type=float, default=1.5)
    p.set_defaults(fn=cmd_openloop)

    p = sub.add_parser("analyze", help="compute gait metrics from telemetry CSV")
    p.add_argument("telemetry")
    p.add_argument("--export", help="directory for trace CSV exports")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("teleop", help="serve live teleoperation")
    _add_config_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static-dir", default=None,
                   help="serve a browser UI from this directory")
    p.set_defaults(fn=cmd_teleop)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    sys.exit(args.fn(args))


if __name__ == "__main__":
    main()
