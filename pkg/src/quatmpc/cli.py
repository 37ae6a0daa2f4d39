"""``quatmpc`` command line: ``run``, ``montecarlo`` and ``verify``.

Exit codes: 0 success, 1 usage or configuration error, 2 scenario-level
failure (fall, divergence, tracking loss) or a failed verification check.
The default output directory comes from ``$QMPC_OUT`` (else ``./quatmpc_out``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, sim, verify
from .exceptions import ConfigError

OUT_ENV = "QMPC_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 1, 2

# fields of a run summary that depend on wall-clock timing
TIMING_FIELDS = ("median_solve_ms", "max_solve_ms")


def default_out():
    return os.environ.get(OUT_ENV, "quatmpc_out")


def write_atomic(path, text):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(args, subcommand, out, started, files, **extra):
    m = {
        "subcommand": subcommand,
        "argv": getattr(args, "argv", sys.argv[1:]),
        "seed": getattr(args, "seed", None),
        "out": str(out),
        "version": __version__,
        "started_utc": started.isoformat(),
        "wall_time_s": round((datetime.now(timezone.utc) - started).total_seconds(), 3),
        "files": sorted(files),
    }
    m.update(extra)
    return m


def cmd_run(args):
    started = datetime.now(timezone.utc)
    scenario = sim.load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    if args.controller is not None:
        scenario = replace(scenario, controller=args.controller)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = sim.run_scenario(scenario)
    log.to_csv(out / "run.csv")
    summary = {k: v for k, v in log.summary.items() if k not in TIMING_FIELDS}
    telemetry = {k: log.summary[k] for k in TIMING_FIELDS if k in log.summary}
    telemetry["ticks"] = log.summary["ticks"]
    write_json(out / "summary.json", summary)
    write_json(out / "telemetry.json", telemetry)
    files = ["run.csv", "summary.json", "telemetry.json", "manifest.json"]
    write_json(out / "manifest.json", _manifest(args, "run", out, started, files, scenario=str(args.scenario)))
    ok = summary["success"]
    print(
        f"{scenario.name} [{scenario.controller}]: {summary['outcome']}, "
        f"max attitude error {summary['max_attitude_error_deg']:.2f} deg, "
        f"median solve {telemetry['median_solve_ms']:.2f} ms over {telemetry['ticks']} ticks"
    )
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_montecarlo(args):
    started = datetime.now(timezone.utc)
    if args.trials < 1:
        raise ConfigError("--trials", "must be at least 1")
    scenario = sim.load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = sim.monte_carlo(args.trials, args.controller, args.seed, scenario, workers=args.workers)
    records = {str(i): r for i, r in report.records.items()}
    write_json(out / "trials.json", records)
    write_json(out / "summary.json", report.summary())
    write_atomic(out / "table.txt", report.table() + "\n")
    files = ["trials.json", "summary.json", "table.txt", "manifest.json"]
    write_json(out / "manifest.json", _manifest(args, "montecarlo", out, started, files, scenario=str(args.scenario)))
    print(f"{args.controller}: success rate {report.successes}/{report.trials} = {report.success_rate:.2f}")
    return EXIT_OK


def cmd_verify(args):
    t0 = time.perf_counter()
    results = verify.run_all(grad_fault=args.inject_fault)
    for r in results:
        print(r.line())
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed in {time.perf_counter() - t0:.1f} s")
    return EXIT_OK if n_fail == 0 else EXIT_FAILURE


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="quatmpc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one scenario and write its log")
    r.add_argument("scenario", help="scenario file, or the name of a packaged scenario")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--controller", choices=sim.CONTROLLERS, default=None, help="override the controller type")
    r.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./quatmpc_out)")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("montecarlo", help="seeded falling-robot trials")
    m.add_argument("--trials", type=int, default=100)
    m.add_argument("--controller", choices=sim.CONTROLLERS, default="quaternion")
    m.add_argument("--seed", type=int, default=0, help="base seed")
    m.add_argument("--scenario", default="falling_cat")
    m.add_argument("--workers", type=int, default=1, help="worker processes")
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_montecarlo)

    v = sub.add_parser("verify", help="run the numerical oracle checks")
    v.add_argument("--inject-fault", type=float, default=0.0, help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    if hasattr(args, "out") and args.out is None:
        args.out = default_out()
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"quatmpc: configuration error in {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
