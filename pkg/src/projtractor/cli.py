"""
Command line entry point: ``projtractor <command> [options]``.

Every command prints one JSON record per check (to ``--report`` or standard
output) and a short summary on standard error.  Exit codes: 0 when every
check passes, 1 when a check fails, 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .catalog import BASE_GEOMETRIES, CATALOG
from .errors import ConfigError
from .suite import (
    DIMENSION_CASES,
    CheckRecord,
    Options,
    check_dimension,
    check_dimension_suite,
    check_flat_case,
    check_geodesics,
    check_identities,
    check_projective_invariance,
    check_prolongation,
    check_rank1_agreement,
    check_recovery,
    full_suite,
    resolve,
)

COMMANDS = (
    "verify-identities",
    "projective-invariance",
    "flat-check",
    "recovery",
    "prolong-residual",
    "rank1-agreement",
    "holonomy-dim",
    "geodesic-drift",
    "full-suite",
)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="projtractor",
        description="Numerical checks of projective tractor calculus and Killing tensor prolongation.",
    )
    p.add_argument("command", choices=COMMANDS)
    p.add_argument(
        "--geometry",
        action="append",
        help="catalog name or TOML file; repeatable (default depends on the command)",
    )
    p.add_argument("--rank", type=int, help="Killing tensor rank (default depends on the command)")
    p.add_argument("--points", type=int, default=20, help="random sample points (default 20)")
    p.add_argument("--loops", type=int, default=8, help="holonomy loops, at least 8 (default 8)")
    p.add_argument("--steps", type=int, default=200, help="RK4 steps per loop piece, even (default 200)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--jet-order", type=int, default=6, help="jet truncation order (default 6)")
    p.add_argument("--report", help="write the JSON-lines report here instead of standard output")
    p.add_argument(
        "--tol-scale",
        type=float,
        default=1.0,
        help="multiply every upper tolerance by this factor (default 1)",
    )
    return p


def _validate(args) -> None:
    if args.points < 1:
        raise ConfigError("--points must be positive")
    if args.loops < 8:
        raise ConfigError("--loops must be at least 8")
    if args.steps < 16 or args.steps % 2:
        raise ConfigError("--steps must be an even number >= 16")
    if args.jet_order < 4:
        raise ConfigError("--jet-order must be at least 4")
    if not args.tol_scale > 0:
        raise ConfigError("--tol-scale must be positive")
    for g in args.geometry or ():
        resolve(g)


def run_command(command: str, geometries: Sequence[str] | None, rank: int | None, opts: Options) -> list[CheckRecord]:
    """Execute ``command`` and return its records."""
    geos = list(geometries or ())
    if command == "verify-identities":
        return check_identities(opts, geos or list(CATALOG))
    if command == "projective-invariance":
        return check_projective_invariance(opts, geos or list(BASE_GEOMETRIES), ranks=(rank,) if rank else (1, 2))
    if command == "flat-check":
        return check_flat_case(opts, ranks=(rank,) if rank else (1, 2, 3))
    if command == "recovery":
        return check_recovery(opts)
    if command == "prolong-residual":
        out = []
        for g in geos or ["liouville"]:
            out += check_prolongation(opts, g, rank or 2)
        return out
    if command == "rank1-agreement":
        out = []
        for g in geos or ["sphere2"]:
            out += check_rank1_agreement(opts, g)
        return out
    if command == "holonomy-dim":
        if not geos and rank is None:
            return check_dimension_suite(opts, DIMENSION_CASES)
        out = []
        for g in geos or ["flat2"]:
            for r in (rank,) if rank else (1, 2):
                out += check_dimension(opts, g, r)
        return out
    if command == "geodesic-drift":
        out = []
        for g in geos or ["liouville"]:
            out += check_geodesics(opts, g)
        return out
    if command == "full-suite":
        return full_suite(opts)
    raise ConfigError(f"unknown command {command!r}")


def _summary(records: Sequence[CheckRecord]) -> str:
    lines = []
    for r in records:
        status = "PASS" if r.passed else "FAIL"
        rank = "" if r.rank is None else f" r={r.rank}"
        value = r.error if r.error else r.value
        lines.append(f"{status} {r.check} [{r.geometry}{rank}] {value} {r.relation} {r.bound}")
    failed = sum(not r.passed for r in records)
    lines.append(f"{len(records) - failed}/{len(records)} checks passed")
    return "\n".join(lines)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _validate(args)
        opts = Options(args.points, args.loops, args.steps, args.seed, args.jet_order, args.tol_scale)
        records = run_command(args.command, args.geometry, args.rank, opts)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = "".join(r.to_json() + "\n" for r in records)
    if args.report:
        try:
            with open(args.report, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"error: cannot write report: {exc}", file=sys.stderr)
            return 2
    else:
        sys.stdout.write(text)
    print(_summary(records), file=sys.stderr)
    return 0 if records and all(r.passed for r in records) else 1


if __name__ == "__main__":
    sys.exit(main())
