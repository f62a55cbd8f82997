"""Command-line entry point: ``spde-lab {validate,ensemble,estimate,report}``.

Exit status: 0 when every check passes, 1 when a check fails, 2 for
malformed input (bad config, missing files or fields).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .analysis import DegenerateSeriesError, InsufficientSamplesError
from .config import ALL_CHECKS, ConfigError, RunConfig
from .harness import (
    SUMMARY,
    VALIDATION,
    FingerprintMismatchError,
    ReportError,
    dump_json,
    estimate_exponents,
    load_records,
    output_dir,
    render_report,
    render_validation,
    run_ensemble,
    structure_csv,
    validate_config,
    write_tables,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _err(msg: str) -> None:
    print(f"spde-lab: {msg}", file=sys.stderr)


def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        config = config.replace(ensemble={"master_seed": args.seed})
    if getattr(args, "checks", None):
        config = config.replace(analysis={"checks": args.checks})
    return config


def _check_list(text: str) -> list[str]:
    items = [c.strip() for c in text.split(",") if c.strip()]
    bad = [c for c in items if c not in ALL_CHECKS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown checks {bad}; choose from {', '.join(ALL_CHECKS)}")
    return items


def _lag_list(text: str) -> list[int]:
    try:
        lags = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not lags or min(lags) < 1:
        raise argparse.ArgumentTypeError("lags must be positive integers")
    return lags


def cmd_validate(args) -> int:
    config = _load_config(args)
    result = validate_config(config)
    sys.stdout.write(render_validation(result))
    out = output_dir(config, args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / VALIDATION).write_text(dump_json(result), encoding="utf-8")
    return EXIT_OK if result["pass"] else EXIT_FAIL


def cmd_ensemble(args) -> int:
    config = _load_config(args)
    result = validate_config(config)
    if not result["pass"]:
        sys.stdout.write(render_validation(result))
        _err("configuration violates the model hypotheses; run 'validate' for details")
        return EXIT_FAIL
    summary, _ = run_ensemble(config, args.out, workers=args.workers)
    text, status = render_report(summary)
    sys.stdout.write(text)
    print(f"records written to {output_dir(config, args.out)}")
    return status


def cmd_estimate(args) -> int:
    records_dir = Path(args.records)
    try:
        manifest, records = load_records(records_dir)
    except FileNotFoundError as exc:
        _err(str(exc))
        return EXIT_USAGE
    config = RunConfig.from_dict(manifest["config"])
    lags = args.lags or config["analysis"][f"{args.direction}_lags"]
    try:
        est, used, dropped = estimate_exponents(records, args.direction, lags, args.bootstrap)
    except (InsufficientSamplesError, DegenerateSeriesError, ValueError) as exc:
        _err(f"no estimate: {exc}")
        return EXIT_USAGE
    for lag in dropped:
        print(f"warning: lag {lag} dropped (too few increment samples)", file=sys.stderr)
    out = Path(args.out) if args.out else records_dir
    out.mkdir(parents=True, exist_ok=True)
    report = {"fingerprint": manifest["fingerprint"], "lags_dropped": dropped, **est.to_dict()}
    (out / f"exponent_{args.direction}.json").write_text(dump_json(report), encoding="utf-8")
    (out / f"structure_{args.direction}.csv").write_text(structure_csv(est.table), encoding="utf-8")
    print(
        f"{args.direction} exponent {est.estimate:.4f} +/- {est.half_width:.4f} "
        f"(R^2 {est.r2:.3f}, {est.count} series, lags {used})"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.summary)
    if path.is_dir():
        path = path / SUMMARY
    try:
        summary = json.loads(path.read_text(encoding="utf-8"))
        text, status = render_report(summary)
    except FileNotFoundError:
        _err(f"no summary at {path}")
        return EXIT_USAGE
    except (ReportError, json.JSONDecodeError) as exc:
        _err(f"malformed summary: {exc}")
        return EXIT_USAGE
    sys.stdout.write(text)
    write_tables(Path(args.out) if args.out else path.parent, summary)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spde-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="TOML run configuration")
            p.add_argument("--seed", type=int, help="override [ensemble].master_seed")
        p.add_argument("--out", help="output directory (default: $SPDE_LAB_OUT/<fingerprint>)")

    p = sub.add_parser("validate", help="check the configuration against the model hypotheses")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("ensemble", help="simulate all paths, persist records, run checks")
    common(p)
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--checks", type=_check_list, help="comma-separated checks to run")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("estimate", help="Holder exponent from stored records")
    p.add_argument("records", help="directory holding index.json and path records")
    p.add_argument("--direction", choices=("time", "space"), required=True)
    p.add_argument("--lags", type=_lag_list, help="comma-separated lags in grid/record steps")
    p.add_argument("--bootstrap", type=int, default=200)
    common(p, config=False)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("report", help="render summary.json as text and CSV tables")
    p.add_argument("summary", help="summary.json or the directory containing it")
    common(p, config=False)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        source = getattr(args, "config", "config")
        for loc, msg in exc.diagnostics:
            _err(f"{source}: {loc}: {msg}")
        return EXIT_USAGE
    except FingerprintMismatchError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except ValueError as exc:
        _err(f"invalid input: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
