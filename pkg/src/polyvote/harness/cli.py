"""Command line entry point.

    polyvote <kind> [--config FILE] [--alpha A] [--n0 N] [--horizon T]
                    [--reps R] [--seed S] [--threads K] [--csv PATH] [--json PATH]
                    [--section.key VALUE ...]

Dotted flags override any config field; values are parsed as JSON and fall
back to plain strings. Exit status: 0 success, 1 configuration error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from ..chain import record_times
from ..oracle import ResourceLimitError
from . import experiments
from .config import KINDS, ConfigError, ExperimentConfig, build, load_file, parse_value, set_dotted
from .montecarlo import ExperimentResult, run_monte_carlo

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polyvote", description="Monte Carlo and exact experiments for the Poly(alpha) stake chain.")
    p.add_argument("kind", choices=KINDS, help="experiment to run")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--alpha", type=float)
    p.add_argument("--n0", type=float, help="single-bidder initial stake")
    p.add_argument("--horizon", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--csv", help="write the result table here")
    p.add_argument("--json", help="write the JSON report here (default: stdout)")
    p.add_argument("--timing", action="store_true", help="include wall-clock time in the JSON report")
    return p


def _dotted(extra: list[str]) -> dict:
    out: dict = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognized argument {tok!r}")
        if "=" in tok:
            key, raw = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for {tok}")
            key, raw = tok[2:], extra[i + 1]
            i += 2
        set_dotted(out, key, parse_value(raw))
    return out


def _overrides(args, extra: list[str]) -> dict:
    ov = _dotted(extra)
    if args.alpha is not None:
        if args.kind in ("phase", "fluid"):
            set_dotted(ov, "experiment.alphas", [args.alpha])
        set_dotted(ov, "protocol.alpha", args.alpha)
    if args.n0 is not None:
        set_dotted(ov, "protocol.stakes", [args.n0])
    if args.horizon is not None:
        set_dotted(ov, "experiment.horizon", args.horizon)
    for name in ("reps", "seed", "threads"):
        if getattr(args, name) is not None:
            set_dotted(ov, f"mc.{name}", getattr(args, name))
    for name in ("csv", "json"):
        if getattr(args, name) is not None:
            set_dotted(ov, f"output.{name}", getattr(args, name))
    if args.timing:
        set_dotted(ov, "output.timing", True)
    return ov


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Dispatch a validated config to its experiment driver."""
    e, raw = cfg.experiment, cfg.echo()
    common = dict(reps=cfg.reps, seed=cfg.seed, threads=cfg.threads, config=raw)
    if cfg.kind == "simulate":
        horizon = int(e["horizon"])
        times = e.get("times")
        if times is None and e.get("stride"):
            times = record_times(horizon, int(e["stride"]))
        res, _ = run_monte_carlo(cfg.protocol, horizon, times=times, bins=int(e.get("bins", 40)), **common)
        return res
    if cfg.kind == "tails":
        return experiments.estimate_tails(cfg.protocol, e["times"], e["lambdas"], epsilon=float(e["epsilon"]), **common)
    if cfg.kind == "roots":
        return experiments.roots_report(cfg.protocol.alpha, config=raw)
    if cfg.kind == "phase":
        classes = experiments.BidderClasses(**e["classes"])
        return experiments.phase_sweep(
            e["alphas"], e["ladder"], classes=classes, horizon_factor=float(e["horizon_factor"]),
            epsilon=float(e["epsilon"]), doubling_check=bool(e["doubling_check"]), **common,
        )
    if cfg.kind == "trade":
        return experiments.trade_compare(cfg.protocol, cfg.market, cfg.policies, focal=int(e["focal"]), **common)
    if cfg.kind == "fluid":
        return experiments.fluid_check(e["alphas"], e["ladder"], N0=cfg.protocol.initial_volume, refine=int(e["refine"]), **common)
    return experiments.oracle_check(cfg.protocol.alpha, cfg.protocol.initial_volume, int(e["horizon"]), tv_tol=float(e["tv_tol"]), **common)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args, extra = _parser().parse_known_args(argv)
        user = load_file(args.config) if args.config else {}
        cfg = build(args.kind, user, _overrides(args, extra))
        res = run_experiment(cfg)
        out = cfg.output
        timing = bool(out.get("timing"))
        res.write(out.get("csv"), out.get("json"), timing)
        if not out.get("json"):
            print(res.to_json(timing))
        return EXIT_OK
    except (ArithmeticError, AssertionError) as exc:
        print(f"polyvote: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ResourceLimitError, ValueError, TypeError, KeyError, OSError) as exc:
        print(f"polyvote: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
