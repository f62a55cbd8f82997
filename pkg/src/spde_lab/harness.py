"""Ensemble orchestration, persistence, ensemble checks and the text report."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .analysis import (
    DegenerateSeriesError,
    EnsembleTooSmallError,
    ExponentEstimate,
    InsufficientSamplesError,
    aggregate_exponents,
    embedding_consistency,
    lq_moment_check,
    martingale_check,
    moment_stability,
    periodic_heat_gaussian,
    space_exponents,
    time_exponents,
    usable_lags,
)
from .coefficients import validate_assumptions
from .config import ALL_CHECKS, RunConfig
from .noise import LIPSCHITZ, RngStream, check_noise, lipschitz_probe
from .records import COMPLETED, PathRecord, record_filename
from .solver import run_path

# Every report carries one of these anchors; the renderer rejects anything else.
ANCHORS: dict[str, str] = {
    "assumptions": "structural hypotheses on coefficients and noise",
    "heat_oracle": "analytic periodic heat solution",
    "positivity": "nonnegativity of the tamed solution",
    "martingale": "discounted weighted-L1 supermartingale and sup-L1 bound",
    "moment": "space-time L_q moment bound",
    "exponent_time": "Holder regularity in time",
    "exponent_space": "Holder regularity in space",
    "embedding": "embedding-implied exponent pair",
    "termination": "pasting and termination statistics",
}
assert set(ANCHORS) == set(ALL_CHECKS)

MANIFEST = "index.json"
SUMMARY = "summary.json"
TIMING = "timing.json"
VALIDATION = "validation.json"


class FingerprintMismatchError(ValueError):
    pass


class ReportError(ValueError):
    pass


# json helpers ----------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def check_report(check: str, *, parameters=None, statistic=None, bound=None, margin=None, passed=None, details=None):
    """The serialized shape of every check: {check, anchor, parameters, statistic, bound, margin, pass}."""
    return {
        "check": check,
        "anchor": ANCHORS[check],
        "parameters": parameters or {},
        "statistic": statistic,
        "bound": bound,
        "margin": margin,
        "pass": passed,
        "details": details or {},
    }


def skipped(check: str, reason: str) -> dict:
    return check_report(check, details={"skipped": reason})


# output location ---------------------------------------------------------------


def output_dir(config: RunConfig, override: str | os.PathLike | None = None) -> Path:
    """--out, then [outputs].directory, then $SPDE_LAB_OUT/<fingerprint>, then ./spde_lab_out/<fingerprint>."""
    if override:
        return Path(override)
    if config["outputs"]["directory"]:
        return Path(config["outputs"]["directory"])
    root = os.environ.get("SPDE_LAB_OUT", "spde_lab_out")
    return Path(root) / config.fingerprint


# validation ----------------------------------------------------------------------


def validate_config(config: RunConfig) -> dict[str, Any]:
    """Coefficient assumptions, noise bounds, the regime probe and the parameter invariants."""
    coeffs = config.coefficients()
    model = config.noise()
    entries = [e.to_dict() for e in validate_assumptions(coeffs, config.regime).entries]
    entries += [e.to_dict() for e in check_noise(model)]
    if config.regime == LIPSCHITZ:
        probe = lipschitz_probe(model, 4096, RngStream(config["ensemble"]["master_seed"]))
        entries.append({"name": "lipschitz_probe", "pass": probe.passed, "value": probe.max_ratio,
                        "bound": probe.K, "detail": "sampled |sigma(u)-sigma(v)| / |u-v| and |sigma(u)|/|u|",
                        "probe": probe.to_dict()})
    entries += [e.to_dict() for e in config.invariants()]
    return {
        "fingerprint": config.fingerprint,
        "regime": config.regime,
        "entries": entries,
        "pass": all(e["pass"] for e in entries),
    }


def render_validation(result: dict[str, Any]) -> str:
    lines = [f"validation {result['fingerprint']} ({result['regime']})"]
    for e in result["entries"]:
        flag = "PASS" if e["pass"] else "FAIL"
        extra = ""
        if e.get("value") is not None:
            extra += f" value {e['value']:.6g}"
        if e.get("bound") is not None:
            extra += f" bound {e['bound']:.6g}"
        if not e["pass"] and e.get("witness"):
            extra += f" witness {json.dumps(_clean(e['witness']), sort_keys=True)}"
        lines.append(f"  {e['name']}: {flag}{extra}")
    lines.append("overall: " + ("PASS" if result["pass"] else "FAIL"))
    return "\n".join(lines) + "\n"


# ensemble --------------------------------------------------------------------------


def _run_one(args) -> bytes:
    data, index = args
    return run_path(RunConfig(data), index).to_bytes()


def simulate(config: RunConfig, indices: Iterable[int] | None = None, workers: int = 1) -> list[PathRecord]:
    """Run paths (default: all configured paths) and return their records in index order."""
    if indices is None:
        indices = range(config["ensemble"]["paths"])
    indices = list(indices)
    if workers <= 1 or len(indices) <= 1:
        return [run_path(config, i) for i in indices]
    jobs = [(config.data, i) for i in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        blobs = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [PathRecord.from_bytes(b) for b in blobs]


def ensure_single_fingerprint(records: Sequence[PathRecord]) -> str:
    prints = sorted({r.fingerprint for r in records})
    if len(prints) > 1:
        raise FingerprintMismatchError(f"records from different configurations: {prints}")
    if not prints:
        raise ValueError("no records")
    return prints[0]


def write_records(out: Path, config: RunConfig, records: Sequence[PathRecord]) -> dict[str, Any]:
    """Persist records and the manifest; the caller is the only writer."""
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        blob = rec.to_bytes()
        name = record_filename(rec.path_index)
        (out / name).write_bytes(blob)
        entries.append(
            {
                "index": rec.path_index,
                "file": name,
                "seed": rec.seed,
                "status": rec.status,
                "end_time": rec.end_time,
                "sha256": hashlib.sha256(blob).hexdigest(),
            }
        )
    manifest = {
        "fingerprint": config.fingerprint,
        "version": __version__,
        "config": config.canonical(),
        "paths": entries,
    }
    (out / MANIFEST).write_text(dump_json(manifest), encoding="utf-8")
    (out / "config.toml").write_text(config.to_toml(), encoding="utf-8")
    return manifest


def load_manifest(directory) -> dict[str, Any]:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {directory}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_records(directory) -> tuple[dict[str, Any], list[PathRecord]]:
    """Manifest and records; rejects records whose fingerprint differs from the manifest."""
    manifest = load_manifest(directory)
    records = [PathRecord.load(Path(directory) / e["file"]) for e in manifest["paths"]]
    if not records:
        raise ValueError(f"no path records listed in {directory}")
    fp = ensure_single_fingerprint(records)
    if fp != manifest["fingerprint"]:
        raise FingerprintMismatchError(f"records carry {fp}, manifest says {manifest['fingerprint']}")
    return manifest, records


# checks ----------------------------------------------------------------------------------


def _is_heat_problem(config: RunConfig) -> bool:
    coeffs = config.coefficients()
    a = coeffs.a_mean
    return (
        config.noise().is_zero
        and not (coeffs.has_b or coeffs.has_c or coeffs.has_b_bar)
        and coeffs.a_is_constant
        and np.array_equal(a, np.eye(config.grid.dim))
        and coeffs.modulation_amplitude == 0
        and config["initial"]["preset"] == "gaussian-bump"
    )


def _auto_checks(config: RunConfig, records: Sequence[PathRecord]) -> list[str]:
    out = ["assumptions", "positivity", "termination"]
    if _is_heat_problem(config):
        out.append("heat_oracle")
    if config.regime == LIPSCHITZ:
        if len(records) >= 100:
            out.append("martingale")
        out.append("moment")
    n_rec = max(len(r.times) for r in records)
    if not _is_heat_problem(config) and n_rec >= 64 and len(records[0].snapshots):
        out += ["exponent_time", "exponent_space", "embedding"]
    return [c for c in ALL_CHECKS if c in out]


def _check_assumptions(config):
    result = validate_config(config)
    failed = [e["name"] for e in result["entries"] if not e["pass"]]
    return check_report(
        "assumptions",
        parameters={"regime": config.regime},
        statistic=len(failed),
        bound=0,
        margin=-len(failed),
        passed=not failed,
        details={"failed": failed, "entries": result["entries"]},
    )


def _check_heat(config, records):
    rec = records[0]
    grid = rec.grid
    amp, width = float(config["initial"]["amplitude"]), float(config["initial"]["width"])
    errs = []
    for t, snap in zip(rec.snapshot_times, rec.snapshots):
        exact = periodic_heat_gaussian(grid, amp, width, float(t))
        errs.append({"t": float(t), "rel_l2": float(np.linalg.norm(snap - exact) / np.linalg.norm(exact))})
    stat = max(e["rel_l2"] for e in errs) if errs else math.inf
    bound = 1e-3
    return check_report(
        "heat_oracle",
        parameters={"amplitude": amp, "width": width, "T": config.T, "dt": config.dt, "N": grid.points_per_dim},
        statistic=stat,
        bound=bound,
        margin=bound - stat,
        passed=stat <= bound,
        details={"errors": errs},
    )


def _check_positivity(records):
    sup0 = max(float(r.series["sup"][0]) for r in records)
    low = min(float(r.series["min"].min()) for r in records)
    stat = max(0.0, -low) / sup0 if sup0 > 0 else max(0.0, -low)
    bound = 1e-6
    return check_report(
        "positivity",
        parameters={"paths": len(records)},
        statistic=stat,
        bound=bound,
        margin=bound - stat,
        passed=stat <= bound,
        details={"min_value": low, "sup_u0": sup0},
    )


def _check_martingale(config, records):
    K = float(config["coefficients"]["K"])
    params = {"K": K, "k": config.psi_k, "T": config.T, "paths": len(records)}
    try:
        rep = martingale_check(records, K, config.psi_k)
    except EnsembleTooSmallError as exc:
        return check_report("martingale", parameters=params, passed=False, details={"error": str(exc)})
    return check_report(
        "martingale",
        parameters=params,
        statistic=rep.sup_statistic,
        bound=rep.sup_bound,
        margin=rep.sup_margin,
        passed=rep.passed,
        details={
            "supermartingale_pass": rep.supermartingale_pass,
            "max_excess_over_2se": rep.max_excess,
            "excluded_paths": rep.excluded,
            "curve": rep.curve_rows(),
        },
    )


def _check_moment(config, records, workers):
    q = config.q
    params = {"q": q, "T": config.T, "dt": config.dt, "paths": len(records)}
    if config.regime != LIPSCHITZ:
        return skipped("moment", "moment bound applies to the Lipschitz regime")
    base = lq_moment_check(records, q)
    details: dict[str, Any] = {"se": base.se, "u0_stat": base.u0_stat, "statistic": base.statistic}
    passed = base.finite
    if config["analysis"]["moment_stability"]:
        n = config["ensemble"]["paths"]
        doubled = list(records) + simulate(config, range(n, 2 * n), workers)
        halved = simulate(config.replace(time={"dt": config.dt / 2}), range(n), workers)
        variants = {
            "doubled_ensemble": lq_moment_check(doubled, q),
            "halved_dt": lq_moment_check(halved, q),
        }
        stab = moment_stability(base, variants)
        details["variants"] = {k: {"N_hat": v.N_hat, "statistic": v.statistic, "paths": v.n_paths}
                               for k, v in variants.items()}
        details["stability"] = stab
        passed = passed and stab["pass"]
    return check_report(
        "moment",
        parameters=params,
        statistic=base.N_hat,
        bound=math.inf,
        margin=math.inf if base.finite else -math.inf,
        passed=passed,
        details=details,
    )


def _limit_pair(config) -> tuple[float, float]:
    """(time, space) exponent limits: (1/2, 1) in the Lipschitz regime, ((1-k)/2, 1-k) with k = (lambda d) v (lambda0 d)."""
    k = 0.0 if config.regime == LIPSCHITZ else config.kappa_floor
    return 0.5 * (1.0 - k), 1.0 - k


def estimate_exponents(records, direction: str, lags, n_boot: int = 200) -> tuple[ExponentEstimate, list[int], list[int]]:
    """Aggregate exponent over completed paths; returns (estimate, lags used, lags dropped)."""
    live = [r for r in records if not r.terminated]
    if not live:
        raise ValueError("no completed paths to estimate from")
    if direction == "time":
        length = min(len(r.times) for r in live)
        used = usable_lags(length, lags)
        ests = time_exponents(live, used, n_boot=n_boot) if len(used) >= 2 else []
    elif direction == "space":
        length = live[0].grid.points_per_dim
        used = usable_lags(length, lags, periodic=True)
        ests = space_exponents(live, used, n_boot=n_boot) if len(used) >= 2 else []
    else:
        raise ValueError(f"direction must be 'time' or 'space', got {direction!r}")
    dropped = [lag for lag in lags if lag not in used]
    if len(used) < 2:
        raise InsufficientSamplesError(max(lags), length, 32)
    return aggregate_exponents(ests, direction), used, dropped


def _check_exponent(config, records, direction, cache):
    lags = config["analysis"][f"{direction}_lags"]
    limit = _limit_pair(config)[0 if direction == "time" else 1]
    eps, delta = float(config["analysis"]["epsilon"]), float(config["analysis"]["delta"])
    bound = limit - eps - delta
    check = f"exponent_{direction}"
    params = {"limit": limit, "epsilon": eps, "delta": delta, "lags": lags}
    try:
        est, used, dropped = estimate_exponents(records, direction, lags, config["analysis"]["bootstrap"])
    except (ValueError, DegenerateSeriesError) as exc:
        return check_report(check, parameters=params, bound=bound, passed=False, details={"error": str(exc)})
    cache[direction] = est
    return check_report(
        check,
        parameters=params,
        statistic=est.estimate,
        bound=bound,
        margin=est.estimate - bound,
        passed=est.estimate >= bound,
        details={
            "half_width": est.half_width,
            "r2": est.r2,
            "series": est.count,
            "lags_used": used,
            "lags_dropped": dropped,
            "table": est.table,
            "terminated_paths": sum(r.terminated for r in records),
        },
    )


def _check_embedding(config, records, cache):
    p = min(config.p_list)
    kappa = config.kappa
    d = config.grid.dim
    delta = float(config["analysis"]["delta"])
    params = {"p": p, "kappa": kappa, "d": d, "delta": delta}
    for direction in ("time", "space"):
        if direction not in cache:
            try:
                cache[direction] = estimate_exponents(
                    records, direction, config["analysis"][f"{direction}_lags"], config["analysis"]["bootstrap"]
                )[0]
            except (ValueError, DegenerateSeriesError) as exc:
                return check_report("embedding", parameters=params, passed=False, details={"error": str(exc)})
    rep = embedding_consistency(cache["time"], cache["space"], p, kappa, d, delta)
    margin = min(rep.time_margin, rep.space_margin)
    return check_report(
        "embedding",
        parameters=params,
        statistic=[rep.time_estimate, rep.space_estimate],
        bound=[rep.time_guarantee - delta, rep.space_guarantee - delta],
        margin=margin,
        passed=rep.passed,
        details={"time_margin": rep.time_margin, "space_margin": rep.space_margin, "feasible": rep.feasible},
    )


def path_statistics(records: Sequence[PathRecord]) -> dict[str, Any]:
    by_status: dict[str, int] = {}
    for r in records:
        by_status[r.status] = by_status.get(r.status, 0) + 1
    total = len(records)
    done = by_status.get(COMPLETED, 0)
    return {
        "total": total,
        "completed": done,
        "terminated": total - done,
        "terminated_fraction": (total - done) / total if total else 0.0,
        "by_status": dict(sorted(by_status.items())),
        "pasting_events": int(sum(len(r.events) for r in records)),
    }


def _check_termination(records):
    stats = path_statistics(records)
    frac = stats["terminated_fraction"]
    return check_report(
        "termination",
        parameters={"paths": stats["total"]},
        statistic=frac,
        bound=1.0,
        margin=1.0 - frac,
        passed=frac < 1.0,
        details=stats,
    )


def run_checks(
    config: RunConfig,
    records: Sequence[PathRecord],
    checks: Sequence[str] | None = None,
    workers: int = 1,
) -> list[dict[str, Any]]:
    """Run the requested checks (default: those applicable to the run) in canonical order."""
    ensure_single_fingerprint(records)
    if checks is None:
        checks = config["analysis"]["checks"]
    if checks is None:
        checks = _auto_checks(config, records)
    unknown = [c for c in checks if c not in ANCHORS]
    if unknown:
        raise ValueError(f"unknown checks {unknown}")
    cache: dict[str, ExponentEstimate] = {}
    out = []
    for check in [c for c in ALL_CHECKS if c in checks]:
        if check == "assumptions":
            out.append(_check_assumptions(config))
        elif check == "heat_oracle":
            out.append(_check_heat(config, records) if _is_heat_problem(config)
                       else skipped(check, "configuration is not the heat-flow oracle problem"))
        elif check == "positivity":
            out.append(_check_positivity(records))
        elif check == "martingale":
            out.append(_check_martingale(config, records))
        elif check == "moment":
            out.append(_check_moment(config, records, workers))
        elif check in ("exponent_time", "exponent_space"):
            out.append(_check_exponent(config, records, check.split("_")[1], cache))
        elif check == "embedding":
            out.append(_check_embedding(config, records, cache))
        elif check == "termination":
            out.append(_check_termination(records))
    return out


def summarize(config: RunConfig, records: Sequence[PathRecord], reports: list[dict]) -> dict[str, Any]:
    return {
        "fingerprint": config.fingerprint,
        "version": __version__,
        "config": config.canonical(),
        "paths": path_statistics(records),
        "checks": reports,
        "pass": all(r["pass"] is not False for r in reports),
    }


def run_ensemble(
    config: RunConfig,
    out: str | os.PathLike | None = None,
    *,
    workers: int = 1,
    checks: Sequence[str] | None = None,
    write: bool = True,
) -> tuple[dict[str, Any], list[PathRecord]]:
    """Simulate every path, persist records and manifest, run checks, write summary.json."""
    start = time.perf_counter()
    records = simulate(config, workers=workers)
    reports = run_checks(config, records, checks, workers)
    summary = summarize(config, records, reports)
    if write:
        directory = output_dir(config, out)
        write_records(directory, config, records)
        (directory / SUMMARY).write_text(dump_json(summary), encoding="utf-8")
        write_tables(directory, summary)
        timing = {"fingerprint": config.fingerprint, "wall_seconds": time.perf_counter() - start,
                  "paths": len(records), "workers": workers}
        (directory / TIMING).write_text(dump_json(timing), encoding="utf-8")
    return summary, records


# tables and report ------------------------------------------------------------------------


def _csv(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _clean(row.get(k)) for k in columns})
    return buf.getvalue()


def structure_csv(table: list[dict]) -> str:
    return _csv(table, ["lag", "delta", "S", "series"] if table and "series" in table[0] else ["lag", "delta", "S", "samples"])


def write_tables(directory, summary: dict[str, Any]) -> list[Path]:
    """Plot-ready CSVs: structure functions per direction and the discounted weighted-L1 curve."""
    directory = Path(directory)
    written = []
    for rep in summary["checks"]:
        det = rep.get("details", {})
        if rep["check"].startswith("exponent_") and det.get("table"):
            path = directory / f"structure_{rep['check'].split('_')[1]}.csv"
            path.write_text(structure_csv(det["table"]), encoding="utf-8")
            written.append(path)
        if rep["check"] == "martingale" and det.get("curve"):
            path = directory / "martingale_curve.csv"
            path.write_text(_csv(det["curve"], ["t", "mean", "se"]), encoding="utf-8")
            written.append(path)
    return written


_REQUIRED = ("check", "anchor", "statistic", "bound", "margin", "pass")


def _fmt(x) -> str:
    if x is None:
        return "n/a"
    if isinstance(x, list):
        return "(" + ", ".join(_fmt(v) for v in x) + ")"
    if isinstance(x, str):
        return x
    return f"{float(x):.4g}"


def render_report(summary: dict[str, Any]) -> tuple[str, int]:
    """Fixed-format text report and exit status (0 all pass, 1 some check failed).

    Raises ReportError for missing fields or anchors outside the registry.
    """
    for key in ("fingerprint", "version", "paths", "checks"):
        if key not in summary:
            raise ReportError(f"summary is missing '{key}'")
    known = set(ANCHORS.values())
    lines = [
        f"spde-lab {summary['version']} report",
        f"fingerprint: {summary['fingerprint']}",
    ]
    paths = summary["paths"]
    try:
        lines.append(
            f"paths: {paths['total']} total, {paths['completed']} completed, {paths['terminated']} terminated"
        )
    except (KeyError, TypeError) as exc:
        raise ReportError(f"summary paths block is missing {exc}") from exc
    failed = 0
    for rep in summary["checks"]:
        missing = [k for k in _REQUIRED if k not in rep]
        if missing:
            raise ReportError(f"check {rep.get('check', '?')} is missing {missing}")
        if rep["anchor"] not in known:
            raise ReportError(f"unregistered anchor {rep['anchor']!r}")
        det = rep.get("details") or {}
        if rep["pass"] is None:
            lines.append(f"{rep['anchor']}: SKIPPED ({det.get('skipped', 'not applicable')})")
            continue
        flag = "PASS" if rep["pass"] else "FAIL"
        failed += not rep["pass"]
        line = f"{rep['anchor']}: {flag}, margin {_fmt(rep['margin'])}"
        line += f" (statistic {_fmt(rep['statistic'])}, bound {_fmt(rep['bound'])})"
        if "error" in det:
            line += f" [{det['error']}]"
        lines.append(line)
    lines.append(f"overall: {'FAIL' if failed else 'PASS'} ({failed} failed)")
    return "\n".join(lines) + "\n", int(failed > 0)
