"""Command line entry point: ``compliant-sim run|check|rmse|serve``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..streaming import Mailbox, StreamServer
from .config import ConfigError, load_scenario
from .logs import read_log
from .loop import run_scenario
from .metrics import JOINT, TASK_XYZ, compute_rmse

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

log = logging.getLogger("compliant_control")


def _window(text: str):
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError:
        raise argparse.ArgumentTypeError("window must look like t0:t1") from None


def _seeds(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compliant-sim", description="Closed-loop impedance control scenarios.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run a scenario and write its log")
    r.add_argument("scenario", type=Path)
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--seeds", type=_seeds, help="repeat over seeds, e.g. 1-10")
    r.add_argument("--log", type=Path, help="log path (default: <scenario stem>.csv in the working directory)")
    r.add_argument("--json", action="store_true", help="print metrics as JSON")
    r.add_argument("--segmented", action="store_true", help="run inter-event segments in one kernel call")

    c = sub.add_parser("check", help="validate a scenario without running it")
    c.add_argument("scenario", type=Path)

    m = sub.add_parser("rmse", help="RMSE of a written log")
    m.add_argument("log", type=Path)
    m.add_argument("--window", type=_window)
    m.add_argument("--frame", choices=(TASK_XYZ, JOINT), default=TASK_XYZ)

    s = sub.add_parser("serve", help="run a scenario with the reference fed over TCP")
    s.add_argument("scenario", type=Path)
    s.add_argument("--port", type=int, default=5555)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--log", type=Path)
    s.add_argument("--json", action="store_true")
    s.add_argument("--no-realtime", action="store_true", help="do not pace the loop to wall clock")
    return p


def _report(result, as_json: bool, seed: int) -> None:
    if as_json:
        d = result.metrics.to_dict()
        d["seed"] = seed
        print(json.dumps(d))
    else:
        print(f"seed {seed}")
        print(result.metrics.summary())
    if result.diverged:
        print(f"error: {result.message}", file=sys.stderr)


def _seeded_log(path: Path | None, seed: int, many: bool) -> Path | None:
    if path is None or not many:
        return path
    return path.with_name(f"{path.stem}_seed{seed}{path.suffix}")


def _log_for(args, sc) -> Path:
    # without an explicit path the log lands in the working directory
    return args.log or sc.log_path or Path(args.scenario.stem + ".csv")


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    seeds = args.seeds or [args.seed if args.seed is not None else scenario.seed]
    code = EXIT_OK
    for seed in seeds:
        sc = scenario.with_seed(seed)
        path = _seeded_log(_log_for(args, sc), seed, len(seeds) > 1)
        result = run_scenario(sc, log_path=path, segmented=args.segmented)
        _report(result, args.json, seed)
        if result.diverged:
            code = EXIT_DIVERGED
    return code


def cmd_check(args) -> int:
    sc = load_scenario(args.scenario)
    print(
        f"ok: {sc.model.n_joints} joints, {sc.duration:g} s at dt={sc.dt:g}, reference {sc.reference}, "
        f"{len(sc.disturbances)} disturbances, {len(sc.reconfig)} reconfig events"
    )
    return EXIT_OK


def cmd_rmse(args) -> int:
    try:
        log_data = read_log(args.log)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    try:
        values = compute_rmse(log_data, args.window, args.frame)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    unit = "cm" if args.frame == TASK_XYZ else "rad"
    print(" ".join(f"{v:.6g}" for v in values) + f" {unit}")
    return EXIT_OK


def cmd_serve(args) -> int:
    sc = load_scenario(args.scenario)
    mailbox = Mailbox()
    with StreamServer(mailbox, args.port, args.host) as server:
        print(f"listening on {server.address[0]}:{server.address[1]}", flush=True)
        result = run_scenario(sc, log_path=_log_for(args, sc), mailbox=mailbox, realtime=not args.no_realtime)
    _report(result, args.json, sc.seed)
    if server.errors or mailbox.dropped:
        print(f"stream: {server.errors} rejected records, {mailbox.dropped} dropped", file=sys.stderr)
    return EXIT_DIVERGED if result.diverged else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"run": cmd_run, "check": cmd_check, "rmse": cmd_rmse, "serve": cmd_serve}[args.verb]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
