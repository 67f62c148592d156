"""Command-line runner.

Exit codes: 0 when every check passes, 1 on a bound or lemma violation (or
an inconclusive check, or a diverged run), 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import _backend
from .bounds import to_jsonable
from .config import CHECK_KEYS, ConfigError, default_config_text, load_config, parse_config
from .pipeline import (
    BETA_CAP,
    bound_report,
    budget_report,
    e2e_run,
    read_final_thetas,
    run_optimize,
    run_sample,
    setup_from_config,
    write_trajectory_csv,
)
from .sampler import write_samples_csv
from .verify import LEMMA_IDS, THEOREM_IDS, format_table, overall_status, run_checks, verdict_report

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2

ALL_CHECKS = LEMMA_IDS + THEOREM_IDS


def _dump(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _write(out_dir, name, text) -> str:
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="config file (default: the bundled d = 2 example)")
    common.add_argument("--out", default=".", help="report directory (created if missing)")
    common.add_argument("--threads", type=int, help="worker threads; overrides SCORELAB_THREADS")

    ap = argparse.ArgumentParser(prog="scorelab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("optimize", parents=[common], help="run SGLD replicas, write the trajectory CSV")
    p = sub.add_parser("sample", parents=[common], help="run the EM sampler, write terminal samples")
    p.add_argument("--theta", help="trajectory CSV from `optimize` (default: theta_hat = mu)")
    p = sub.add_parser("bound", parents=[common], help="evaluate a theorem bound")
    p.add_argument("which", choices=["t1", "t2"])
    p = sub.add_parser("budget", parents=[common], help="solve the delta budget tables")
    p.add_argument("which", choices=["t1", "t2"])
    p.add_argument("--delta", type=_positive, required=True)
    p = sub.add_parser("verify", parents=[common], help="Monte Carlo lemma and theorem checks")
    p.add_argument("ids", nargs="*", default=["all"], metavar="ID",
                   help=f"check ids ({', '.join(ALL_CHECKS)}) or 'all'")
    p = sub.add_parser("e2e", parents=[common], help="budget, optimize, sample and compare")
    p.add_argument("--delta", type=_positive, required=True)
    p.add_argument("--beta-cap", type=_positive, default=BETA_CAP)
    return ap


def _load(args):
    if args.config:
        return load_config(args.config)
    return parse_config(default_config_text(), "<default>")


def _resolve_ids(ids):
    out = []
    for i in ids:
        if i == "all":
            out.extend(ALL_CHECKS)
        elif i in ALL_CHECKS:
            out.append(i)
        else:
            raise ConfigError(f"unknown check id {i!r}; choose from {', '.join(ALL_CHECKS)} or all")
    return list(dict.fromkeys(out))


def run(args) -> int:
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    cmd = args.command

    if cmd == "optimize":
        cfg.require("optimize")
        res, report = run_optimize(cfg)
        write_trajectory_csv(os.path.join(args.out, "optimize.csv"), res)
        _write(args.out, "optimize.json", _dump(report))
        print(f"wrote {os.path.join(args.out, 'optimize.csv')}")
        return EXIT_OK

    if cmd == "sample":
        cfg.require("sample")
        thetas = read_final_thetas(args.theta) if args.theta else None
        samples, report = run_sample(cfg, thetas)
        write_samples_csv(os.path.join(args.out, "samples.csv"), samples)
        _write(args.out, "sample.json", _dump(report))
        print(f"W2 to target: {report['w2']['mean']:.6g}")
        return EXIT_OK

    if cmd == "bound":
        cfg.require(f"bound {args.which}")
        text = _dump(bound_report(cfg, args.which))
        _write(args.out, f"bound_{args.which}.json", text)
        sys.stdout.write(text)
        return EXIT_OK

    if cmd == "budget":
        cfg.require(f"budget {args.which}")
        text = _dump(budget_report(cfg, args.which, args.delta))
        _write(args.out, f"budget_{args.which}.json", text)
        sys.stdout.write(text)
        return EXIT_OK

    if cmd == "verify":
        ids = _resolve_ids(args.ids)
        keys = ("d", "mu", "seed") + tuple(k for i in ids for k in CHECK_KEYS[i])
        cfg.require("verify " + " ".join(args.ids), keys)
        checks = run_checks(ids, setup_from_config(cfg))
        _write(args.out, "verify.json", verdict_report(checks, cfg.resolved(), cfg["seed"]))
        sys.stdout.write(format_table(checks))
        status = overall_status(checks)
        print(f"status: {status}")
        return EXIT_OK if status == "pass" else EXIT_VIOLATION

    if cmd == "e2e":
        cfg.require("e2e")
        report = e2e_run(cfg, args.delta, args.beta_cap)
        _write(args.out, "e2e.json", _dump(report))
        lo, hi = report["total_w2_ci"]
        print(f"total_w2 = {report['total_w2']:.6g} (95% CI {lo:.4g} .. {hi:.4g}), "
              f"delta = {args.delta}, bound = {report['bound']['total']:.6g}: {report['status']}")
        return EXIT_OK if report["status"] == "pass" else EXIT_VIOLATION

    raise AssertionError(cmd)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            ap.error("--threads must be positive")
        _backend.set_threads(args.threads)
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"run diverged: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except ValueError as exc:
        # parameter validation inside the library (step size range, horizons, ...)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        _backend.set_threads(None)


if __name__ == "__main__":
    sys.exit(main())
