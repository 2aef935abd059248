"""Command line entry point ``dag``.

Exit codes: 0 success, 2 configuration error, 3 verification failure,
4 training aborted on a non-finite value.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from . import harness as hn
from .config import MODES, ConfigError, DagConfig, load_config


def _seeds(text: str) -> list[int]:
    """``0,1,2`` or an inclusive range ``0..4``; forms may be mixed."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            out.extend(range(lo_i, hi_i + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("no seeds given")
    return out


def _modes(text: str) -> list[str]:
    modes = [m.strip().lower() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise argparse.ArgumentTypeError(f"unknown mode(s) {bad}; choose from {', '.join(MODES)}")
    return modes


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dag", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="randomized checks of the divergence identities")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identity-only", action="store_true", help="degenerate path: identity maps, single-component mixtures")
    p.add_argument("--inject-noninvertible", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("transforms", help="transform catalogue checks")
    p.add_argument("--self-test", action="store_true", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one configuration into a run directory")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sweep", help="train every (mode, seed) pair")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--seeds", type=_seeds, required=True, help="e.g. 0..4 or 1,3,7")
    p.add_argument("--modes", type=_modes, required=True, help="comma separated, e.g. da,dag")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("report", help="median final metrics per mode")
    p.add_argument("--runs", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="summary CSV path (default RUNS/summary.csv)")
    return parser


def _load(path: Path) -> DagConfig:
    try:
        return load_config(path)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc


def _cmd_train(args) -> int:
    cfg = _load(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    manifest = hn.run_experiment(cfg, args.out)
    for note in manifest.notes:
        print(f"note: {note}")
    if manifest.aborted:
        print(f"aborted: {manifest.abort_reason}", file=sys.stderr)
        return hn.EXIT_NAN
    print(f"wrote {args.out}")
    return hn.EXIT_OK


def _cmd_sweep(args) -> int:
    if args.jobs < 1:
        raise ConfigError("--jobs", "must be >= 1")
    base = _load(args.config)
    # validate every combination before any training starts
    for m in args.modes:
        base.replace(mode=m)
    status = hn.sweep(base, args.seeds, args.modes, args.out, jobs=args.jobs)
    for mode, seed, state in status:
        print(f"{mode:10s} seed {seed:<6d} {state}")
    return hn.EXIT_NAN if any(s == "nan_abort" for _, _, s in status) else hn.EXIT_OK


def _cmd_report(args) -> int:
    path, table = hn.write_report(args.runs, args.out)
    cols = hn.SUMMARY_COLUMNS
    print(",".join(cols))
    for row in table:
        print(",".join(row[c] if c == "mode" else hn._fmt(row[c]) for c in cols))
    print(f"wrote {path}", file=sys.stderr)
    return hn.EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            if args.trials < 1:
                raise ConfigError("--trials", "must be >= 1")
            code, _ = hn.verify_all(args.trials, args.seed, args.inject_noninvertible, args.identity_only)
            return code
        if args.command == "transforms":
            code, _ = hn.transform_self_test(args.seed)
            return code
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "report":
            return _cmd_report(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return hn.EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return hn.EXIT_CONFIG
    return hn.EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
