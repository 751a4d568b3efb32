"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 a run diverged.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import load_config
from .core import OscillatorParams, Variant
from .errors import ConfigError, DataFormatError, DomainError
from .param_init import InitSpec, init_ring
from .spectral import baseline_spectral_curve, eigenvalues

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so ``main`` owns the exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: error: {message}")


def _variants(arg: str) -> list[str]:
    if arg == "all":
        return [v.value for v in Variant]
    return [Variant.parse(v).value for v in arg.split(",")]


def _bench_args(p):
    p.add_argument("--variant", default="all", help="variant name, comma list, or 'all'")
    p.add_argument("--seeds", type=int, default=None, help="number of seeds (default: protocol)")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--out", default="results")
    p.add_argument("--config", default=None, help="run config replacing the built-in protocol")
    p.add_argument("--max-steps", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dlinoss", description="Damped linear oscillatory state-space models")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train every seed of a run config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--variant", default=None)

    _bench_args(sub.add_parser("decay-bench", help="exponential-decay regression benchmark"))
    _bench_args(sub.add_parser("adding-bench", help="adding-task convergence benchmark"))

    p = sub.add_parser("spectra", help="plot-ready CSV of reachable eigenvalues")
    p.add_argument("--variant", default="dlinoss", choices=["dlinoss", "im", "imex"])
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")

    p = sub.add_parser("init-study", help="initialization study on the adding task")
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results")
    p.add_argument("--max-steps", type=int, default=None)

    p = sub.add_parser("report", help="summarize stored runs")
    p.add_argument("results_dir")
    return ap


def _protocol(args, builtin: dict) -> dict:
    if args.config:
        base = load_config(args.config).to_dict()
    else:
        base = json.loads(json.dumps(builtin))
    if args.max_steps is not None:
        base.setdefault("train", {})["max_steps"] = args.max_steps
    if args.seeds is not None:
        base["seeds"] = list(range(args.seed, args.seed + args.seeds))
    return base


def _diverged(summary: dict) -> bool:
    return any(s == "diverged" for task in summary.values() for row in task.values()
               for s in row["status"].values())


def _cmd_train(args) -> int:
    cfg = load_config(args.config).with_overrides(args.seed, args.out, args.variant)
    docs = harness.run_grid([cfg])
    summary = {cfg.task["kind"]: harness.summarize(docs)}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_DIVERGED if _diverged(summary) else EXIT_OK


def _cmd_bench(args, builtin) -> int:
    base = _protocol(args, builtin)
    summary = harness.bench(base, _variants(args.variant), out=args.out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_DIVERGED if _diverged(summary) else EXIT_OK


def spectra_rows(variant: str, samples: int, seed: int = 0) -> list[tuple]:
    """(variant, gamma_or_seed, re, im, magnitude) rows.

    Baselines sweep gamma = dt sqrt(A) deterministically (IM over [0, inf) via
    a tangent grid, IMEX over [0, 2]); the damped model draws eigenvalues
    area-uniformly over the unit disk from ``seed`` and maps them through the
    inverse parameterization, so every row reports that seed.
    """
    if samples < 1:
        raise ConfigError("--samples must be >= 1")
    k = np.arange(samples)
    if variant == "im":
        gammas = np.tan(0.5 * math.pi * k / samples)
        lam = baseline_spectral_curve("im", gammas)
        tags = gammas
    elif variant == "imex":
        gammas = 2.0 * k / max(samples - 1, 1)
        lam = baseline_spectral_curve("imex", gammas)
        tags = gammas
    else:
        rng = np.random.default_rng(seed)
        dt = rng.uniform(0.05, 1.0, size=samples)
        p = init_ring(InitSpec(r_min=0.0, r_max=1.0), samples, dt, rng)
        lam = eigenvalues(OscillatorParams(A=p.A, G=p.G, dt=p.dt)).lam
        tags = np.full(samples, seed)
    return [(variant, float(t), float(z.real), float(z.imag), float(abs(z)))
            for t, z in zip(tags, lam)]


def _cmd_spectra(args) -> int:
    rows = spectra_rows(args.variant, args.samples, args.seed)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["variant", "gamma_or_seed", "re", "im", "magnitude"])
        for r in rows:
            w.writerow([r[0]] + [repr(x) for x in r[1:]])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def _cmd_init_study(args) -> int:
    base = json.loads(json.dumps(harness.INIT_STUDY))
    if args.max_steps is not None:
        base["train"]["max_steps"] = args.max_steps
    seeds = None if args.seeds is None else list(range(args.seed, args.seed + args.seeds))
    rows = harness.init_study(harness.default_init_grid(), base, seeds=seeds, out=args.out)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "init_study.json").write_text(json.dumps(rows, indent=2))
    print(json.dumps(harness.rank_table(rows), indent=2))
    return EXIT_OK


def _cmd_report(args) -> int:
    print(json.dumps(harness.report(args.results_dir), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "decay-bench":
            return _cmd_bench(args, harness.DECAY_BENCH)
        if args.command == "adding-bench":
            return _cmd_bench(args, harness.ADDING_BENCH)
        if args.command == "spectra":
            return _cmd_spectra(args)
        if args.command == "init-study":
            return _cmd_init_study(args)
        return _cmd_report(args)
    except (ConfigError, DataFormatError, DomainError, OSError) as exc:
        print(f"dlinoss: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
