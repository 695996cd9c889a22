"""Command line entry point: simulate, beams, bounds and table subcommands.

Exit codes: 0 success, 1 validation error, 2 numeric failure,
3 invariant violation (including a FAILED run report).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import beamsel, harness
from .errors import InvariantViolation, NumericError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_INVARIANT = 0, 1, 2, 3


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config)
    changes = {}
    if args.zsamples is not None:
        if args.zsamples < 1:
            raise ValidationError("--zsamples must be at least 1")
        changes["z_samples"] = args.zsamples
    if args.tol is not None:
        if not args.tol > 0:
            raise ValidationError("--tol must be positive")
        changes["flux_tol"] = args.tol
        changes["energy_tol"] = 10 * args.tol
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    report = harness.run(cfg, args.out)
    print(report.text())
    if args.out:
        print(f"outputs written to {args.out}")
    if report.status != "PASSED":
        raise InvariantViolation("; ".join(report.failures))
    return EXIT_OK


def cmd_beams(args) -> int:
    cfg = _load(args)
    for name, beams in harness.build_beam_sets(cfg).items():
        report = beamsel.validate(beams, beams.gamma, cfg.k0)
        print(f"# {name}: {len(beams)} beams, gamma={beams.gamma:.6f}, {report.summary()}")
        print(beamsel.beam_table(beams))
        print()
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg = _load(args)
    sets = harness.build_beam_sets(cfg)
    ref = sets[harness.reference_name(cfg, sets)]
    scalars, certs = harness.section_scalars(cfg, ref)
    for k, v in scalars.items():
        print(f"{k:>24} = {v:.10g}")
    print()
    for c in certs:
        vals = ", ".join(f"z={z}: {v:.6g}" for z, v in c["values"].items())
        print(f"{c['name']}: {c['formula']}\n    {vals}")
    report = harness.run(dataclasses.replace(cfg, oracle_tol=None), args.out)
    checks = list(report.dominance)
    if args.seed is not None:
        rand_checks, drifts = harness.random_suite(args.seed)
        checks += rand_checks
        worst = np.max(np.asarray(drifts), axis=0)
        print(f"\nrandom suite (seed {args.seed}): {len(drifts)} systems, "
              f"max flux drift {worst[0]:.2e}, max energy drift {worst[1]:.2e}")
    bad = [c for c in checks if not c.ok]
    print(f"\ndominance: {len(checks)} checks, {len(bad)} violated")
    for c in bad:
        print(f"  VIOLATED {c.name} [{c.context}]")
    harness.require_clean(checks)
    return EXIT_OK


def cmd_table(args) -> int:
    cfg = _load(args)
    if cfg.frame.dimension == 2:
        print(harness.excitation_table(cfg))
        print()
    report = harness.run(dataclasses.replace(cfg, oracle_tol=None), args.out, dominance=False)
    print(harness.comparison_table(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dhw", description="Beam-restricted DHW simulations with error certificates"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, help_ in [
        ("simulate", cmd_simulate, "solve every configured beam set and write outputs"),
        ("beams", cmd_beams, "print beam-set tables"),
        ("bounds", cmd_bounds, "evaluate certificates and dominance checks"),
        ("table", cmd_table, "excitation-error and endpoint-amplitude tables"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", type=Path, help="experiment config (JSON)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--zsamples", type=int, default=None, help="z intervals on [0, z*]")
        p.add_argument("--tol", type=float, default=None, help="relative flux drift tolerance")
        p.add_argument("--seed", type=int, default=None, help="seed for the randomized suite")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse signals usage errors with 2, which is reserved for numeric failures here
        return EXIT_VALIDATION if exc.code == 2 else int(exc.code or 0)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
