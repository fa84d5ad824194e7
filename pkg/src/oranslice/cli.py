"""Command-line entry point: ``oranslice {run,sweep,report,selftest}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import REGIMES, ConfigError, dump_config, load_config
from . import harness

log = logging.getLogger("oranslice")


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _nonnegative_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError("must be a nonnegative number")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oranslice", description="Federated DRL RAN slicing simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one regime at one load and seed")
    run.add_argument("--config", type=Path)
    run.add_argument("--regime", choices=REGIMES)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--embb-load", type=_nonnegative_float, help="per-BS eMBB load in bit/s")
    run.add_argument("--urllc-load", type=_nonnegative_float, help="per-BS URLLC load in bit/s")
    run.add_argument("--ttis", type=_positive_int)
    run.add_argument("--out", type=Path)

    sweep = sub.add_parser("sweep", help="run the regimes x loads x seeds grid of the config")
    sweep.add_argument("--config", type=Path)
    sweep.add_argument("--out", type=Path)
    sweep.add_argument("--workers", type=_positive_int)
    sweep.add_argument("--ttis", type=_positive_int)

    rep = sub.add_parser("report", help="summarize a finished run directory")
    rep.add_argument("--out", type=Path, required=True)

    sub.add_parser("selftest", help="run quick built-in consistency checks")

    show = sub.add_parser("config", help="print the fully resolved configuration")
    show.add_argument("--config", type=Path)
    return parser


def cmd_run(args) -> int:
    network, train, plan = load_config(args.config)
    regime = args.regime or train.regime
    embb = plan.embb_loads_bps[-1] if args.embb_load is None else args.embb_load
    urllc = plan.urllc_load_bps if args.urllc_load is None else args.urllc_load
    ttis = args.ttis or plan.ttis_per_run
    out = harness.ensure_writable(args.out or plan.output_dir)
    network.with_loads(embb, urllc).validate()
    record = harness.execute_run(network, train, regime, embb, urllc, args.seed, ttis, plan.master_seed,
                                 plan.warmup_fraction)
    entry = harness.write_run(record, out, plan.save_models)
    one = replace(plan, regimes=(regime,), embb_loads_bps=(embb,), urllc_load_bps=urllc, seeds=(args.seed,),
                  ttis_per_run=ttis, output_dir=str(out))
    harness.write_manifest(out, [entry], plan.master_seed, one)
    s = record.summary
    print(f"{record.name}: final_reward={s['final_reward']:.4f} "
          f"urllc_delay_ms={1e3 * s['urllc_mean_delay_s']:.4f} "
          f"embb_throughput_mbps={s['embb_throughput_bps'] / 1e6:.4f}")
    return 0


def cmd_sweep(args) -> int:
    network, train, plan = load_config(args.config)
    changes = {}
    if args.out is not None:
        changes["output_dir"] = str(args.out)
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.ttis is not None:
        changes["ttis_per_run"] = args.ttis
    plan = replace(plan, **changes)
    plan.validate()
    manifest = harness.run_experiment(plan, network, train)
    print(f"wrote {manifest}")
    return 0


def cmd_report(args) -> int:
    result = harness.report(args.out)
    sys.stdout.write(harness.format_table(result["table"]))
    for d in result["deltas"]:
        print(f"eMBB {d['embb_load_bps'] / 1e6:g}M: URLLC delay reduction FRL vs IRL "
              f"{100 * d['urllc_delay_reduction']:.1f}%, eMBB throughput gain {100 * d['embb_throughput_gain']:.1f}%")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    failures = run_selftest(print)
    return 1 if failures else 0


def cmd_config(args) -> int:
    sys.stdout.write(dump_config(*load_config(args.config)))
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "report": cmd_report, "selftest": cmd_selftest,
            "config": cmd_config}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, FileNotFoundError, PermissionError) as exc:
        print(f"oranslice: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
