"""Run configuration: a flat TOML file with one level of tables.

Example::

    [grid]
    dim = 1
    N = 256
    L = 8.0

    [time]
    T = 0.25
    dt = 1e-4

    [noise]
    regime = "lipschitz"
    mu_preset = "geometric:0.5"

Every table and key is optional; defaults are listed in ``SECTIONS``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .coefficients import AssumptionCheck, CoefficientSet, coefficient_preset
from .cutoff import CutoffSpec
from .grid import GridSpec
from .noise import LIPSCHITZ, REGIMES, SUPERLINEAR, NoiseModel, noise_preset

_NUM = (int, float)
_ANY = object

# section -> key -> (default, accepted types)
SECTIONS: dict[str, dict[str, tuple[Any, Any]]] = {
    "grid": {"dim": (1, int), "N": (256, int), "L": (8.0, _NUM)},
    "time": {"T": (0.25, _NUM), "dt": (1e-4, _NUM), "snapshots": (8, int), "record_every": (1, int)},
    "coefficients": {
        "preset": ("identity", str),
        "K": (1.0, _NUM),
        "lambda": (1.0, _NUM),
        "a": (None, (int, float, list)),
        "b": (None, (int, float, list)),
        "c": (None, _NUM),
        "b_bar": (None, (int, float, list)),
        "modulation_amplitude": (0.0, _NUM),
        "modulation_frequency": (0.0, _NUM),
    },
    "noise": {
        "regime": (LIPSCHITZ, str),
        "channels": (16, int),
        "lambda0": (0.0, _NUM),
        "mu_preset": ("geometric:0.5", str),
        "mu_scale": (0.5, _NUM),
    },
    "cutoff": {"m0": ("auto", (str, int, float)), "growth": (2.0, _NUM), "m_max": (1e6, _NUM)},
    "initial": {
        "preset": ("gaussian-bump", str),
        "amplitude": (1.0, _NUM),
        "width": (1.0, _NUM),
        "values": (None, list),
        "file": (None, str),
    },
    "ensemble": {"paths": (256, int), "master_seed": (0, int)},
    "outputs": {
        "directory": (None, str),
        "p_list": ([8.0], list),
        "psi_k": (8.0, (str, int, float)),
        "probes": (8, int),
        "bessel_gammas": ([-1.0, 0.5], list),
        "bessel_p": (2.0, _NUM),
    },
    "analysis": {
        "checks": (None, list),
        "kappa": ("auto", (str, int, float)),
        "q": ("auto", (str, int, float)),
        "time_lags": ([1, 2, 4, 8, 16, 32], list),
        "space_lags": ([1, 2, 4, 8], list),
        "moment_stability": (False, bool),
        "delta": (0.1, _NUM),
        "epsilon": (0.1, _NUM),
        "bootstrap": (200, int),
    },
}

ALL_CHECKS = (
    "assumptions",
    "heat_oracle",
    "positivity",
    "martingale",
    "moment",
    "exponent_time",
    "exponent_space",
    "embedding",
    "termination",
)


class ConfigError(ValueError):
    """Malformed configuration; ``diagnostics`` lists ``(location, message)`` pairs."""

    def __init__(self, diagnostics: list[tuple[str, str]]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(f"{loc}: {msg}" for loc, msg in diagnostics))


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = ""
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines[(section, "")] = no
            continue
        m = re.match(r"^([A-Za-z0-9_\-\"]+)\s*=", s)
        if m:
            lines[(section, m.group(1).strip('"'))] = no
    return lines


def _type_ok(value, types) -> bool:
    if types is _ANY:
        return True
    if isinstance(value, bool) and types is not bool and not (isinstance(types, tuple) and bool in types):
        return False
    return isinstance(value, types)


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration; ``data`` maps section -> key -> value (defaults filled)."""

    data: dict[str, dict[str, Any]]

    # construction -----------------------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict[str, Any], *, lines: dict | None = None) -> "RunConfig":
        lines = lines or {}
        diags: list[tuple[str, str]] = []

        def where(section, key=""):
            no = lines.get((section, key))
            loc = f"[{section}]" + (f".{key}" if key else "")
            return f"line {no}: {loc}" if no else loc

        data: dict[str, dict[str, Any]] = {}
        for section in raw:
            if section not in SECTIONS:
                diags.append((where(section), "unknown table"))
            elif not isinstance(raw[section], dict):
                diags.append((where(section), "expected a table"))
        for section, spec in SECTIONS.items():
            given = raw.get(section, {})
            if not isinstance(given, dict):
                continue
            out = {}
            for key in given:
                if key not in spec:
                    diags.append((where(section, key), "unknown key"))
            for key, (default, types) in spec.items():
                if given.get(key) is not None:
                    value = given[key]
                    if not _type_ok(value, types):
                        diags.append((where(section, key), f"unexpected type {type(value).__name__}"))
                        continue
                    out[key] = value
                else:
                    out[key] = copy.deepcopy(default)
            data[section] = out
        if not diags:
            diags.extend(_value_diagnostics(data, where))
        if diags:
            raise ConfigError(diags)
        return cls(data)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([("syntax", str(exc))]) from exc
        return cls.from_dict(raw, lines=_key_lines(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def replace(self, **sections: dict[str, Any]) -> "RunConfig":
        """Copy with some keys overridden, e.g. ``cfg.replace(time={"dt": 5e-5})``."""
        raw = copy.deepcopy(self.data)
        for section, values in sections.items():
            raw.setdefault(section, {}).update(values)
        return RunConfig.from_dict(raw)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.data[section]

    # identity ---------------------------------------------------------------
    def canonical(self) -> dict[str, Any]:
        """Config minus output location, used for fingerprinting."""
        canon = copy.deepcopy(self.data)
        canon["outputs"].pop("directory", None)
        return canon

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_toml(self) -> str:
        out = []
        for section, values in self.data.items():
            out.append(f"[{section}]")
            for key, value in values.items():
                if value is not None:
                    out.append(f"{key} = {json.dumps(value)}")
            out.append("")
        return "\n".join(out)

    # derived objects --------------------------------------------------------
    @property
    def regime(self) -> str:
        return self["noise"]["regime"]

    @property
    def grid(self) -> GridSpec:
        g = self["grid"]
        return GridSpec(g["dim"], float(g["L"]), g["N"])

    @property
    def dt(self) -> float:
        return float(self["time"]["dt"])

    @property
    def n_steps(self) -> int:
        return int(round(self["time"]["T"] / self.dt))

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    def coefficients(self) -> CoefficientSet:
        c = self["coefficients"]
        return coefficient_preset(
            self.grid,
            c["preset"],
            K=float(c["K"]),
            lam=float(c["lambda"]),
            a=c["a"],
            b=c["b"],
            c=c["c"],
            b_bar=c["b_bar"],
            modulation_amplitude=float(c["modulation_amplitude"]),
            modulation_frequency=float(c["modulation_frequency"]),
        )

    def noise(self) -> NoiseModel:
        n = self["noise"]
        return noise_preset(
            self.grid,
            n["regime"],
            n["channels"],
            n["mu_preset"],
            scale=float(n["mu_scale"]),
            K=float(self["coefficients"]["K"]),
            lambda0=float(n["lambda0"]),
        )

    def initial_field(self) -> np.ndarray:
        return initial_data(self.grid, self["initial"])

    def cutoff(self, u0: np.ndarray | None = None) -> CutoffSpec:
        c = self["cutoff"]
        m0 = c["m0"]
        if m0 == "auto":
            u0 = self.initial_field() if u0 is None else u0
            m0 = 2.0 * float(np.max(np.abs(u0)))
            if m0 == 0.0:
                m0 = 1.0
        return CutoffSpec(float(m0), float(c["growth"]), float(c["m_max"]))

    @property
    def p_list(self) -> list[float]:
        return [float(p) for p in self["outputs"]["p_list"]]

    @property
    def q(self) -> float:
        q = self["analysis"]["q"]
        if q == "auto":
            return 2.0 * min(self.p_list) * (1.0 + float(self["coefficients"]["lambda"]))
        return float(q)

    @property
    def recorded_p(self) -> list[float]:
        ps = list(self.p_list)
        if self.q not in ps:
            ps.append(self.q)
        return ps

    @property
    def psi_k(self) -> float:
        from .coefficients import psi_threshold

        k = self["outputs"]["psi_k"]
        if k == "auto":
            lam = float(self["coefficients"]["lambda"])
            return math.ceil(psi_threshold(self.cutoff().m0, lam) * 100.0) / 100.0
        return float(k)

    @property
    def kappa(self) -> float:
        """Regularity loss parameter: 0 in the Lipschitz regime."""
        if self.regime == LIPSCHITZ:
            return 0.0
        k = self["analysis"]["kappa"]
        if k != "auto":
            return float(k)
        d = self["grid"]["dim"]
        lo = self.kappa_floor
        hi = min(1.0, 1.0 - (d + 2) / min(self.p_list))
        return 0.5 * (lo + hi)

    @property
    def kappa_floor(self) -> float:
        d = self["grid"]["dim"]
        lam = float(self["coefficients"]["lambda"])
        lam0 = float(self["noise"]["lambda0"])
        return max(lam * d, lam0 * d)

    @property
    def checks(self) -> list[str]:
        chosen = self["analysis"]["checks"]
        return list(ALL_CHECKS) if chosen is None else list(chosen)

    # model hypotheses ------------------------------------------------------
    def invariants(self) -> list[AssumptionCheck]:
        """Parameter constraints required by the regime plus nonnegative initial data."""
        d = self["grid"]["dim"]
        lam = float(self["coefficients"]["lambda"])
        pmin = min(self.p_list)
        out = []
        if self.regime == LIPSCHITZ:
            out.append(AssumptionCheck("lambda_positive", lam > 0, value=lam, detail="lambda > 0"))
            out.append(
                AssumptionCheck("p_range", pmin > d + 2, value=pmin, bound=d + 2, detail="min p > d + 2")
            )
        else:
            lam0 = float(self["noise"]["lambda0"])
            rng_ok = 0 < lam < 1.0 / d and 0 < lam0 < 1.0 / d
            out.append(
                AssumptionCheck(
                    "exponent_range",
                    rng_ok,
                    value=max(lam, lam0),
                    bound=1.0 / d,
                    detail=f"lambda={lam:g}, lambda0={lam0:g} must lie in (0, 1/d)",
                )
            )
            kappa = self.kappa
            floor = self.kappa_floor
            out.append(
                AssumptionCheck(
                    "kappa_range",
                    floor < kappa < 1.0,
                    value=kappa,
                    bound=floor,
                    detail="(lambda d) v (lambda0 d) < kappa < 1",
                )
            )
            need = (d + 2) / (1.0 - kappa) if kappa < 1 else math.inf
            out.append(
                AssumptionCheck("p_range", pmin > need, value=pmin, bound=need, detail="min p > (d + 2)/(1 - kappa)")
            )
        u0 = self.initial_field()
        neg = u0 < 0
        witness = None
        if neg.any():
            flat = int(np.argmin(u0))
            idx = [int(i) for i in np.unravel_index(flat, u0.shape)]
            witness = {"index": idx, "x": list(self.grid.index_to_point(tuple(idx))), "value": float(u0.flat[flat])}
        out.append(
            AssumptionCheck(
                "initial_nonnegative",
                not neg.any(),
                value=float(u0.min()),
                bound=0.0,
                witness=witness,
                detail="u0 >= 0 at every lattice point",
            )
        )
        return out


def _value_diagnostics(data, where) -> list[tuple[str, str]]:
    diags = []

    def need(cond, section, key, msg):
        if not cond:
            diags.append((where(section, key), msg))

    g = data["grid"]
    need(g["dim"] in (1, 2), "grid", "dim", "must be 1 or 2")
    n = g["N"]
    need(n >= 8 and n & (n - 1) == 0, "grid", "N", "must be a power of two >= 8")
    need(g["L"] > 0, "grid", "L", "must be positive")
    t = data["time"]
    need(t["dt"] > 0, "time", "dt", "must be positive")
    need(t["T"] > 0, "time", "T", "must be positive")
    if t["dt"] > 0 and t["T"] > 0:
        need(t["T"] >= t["dt"], "time", "T", "must be at least one step")
    need(t["snapshots"] >= 1, "time", "snapshots", "must be >= 1")
    need(t["record_every"] >= 1, "time", "record_every", "must be >= 1")
    c = data["coefficients"]
    need(c["K"] > 0, "coefficients", "K", "must be positive")
    need(0 <= c["modulation_amplitude"] < 1, "coefficients", "modulation_amplitude", "must lie in [0, 1)")
    nz = data["noise"]
    need(nz["regime"] in REGIMES, "noise", "regime", f"must be one of {REGIMES}")
    need(nz["channels"] >= 0, "noise", "channels", "must be >= 0")
    cut = data["cutoff"]
    need(cut["m0"] == "auto" or (not isinstance(cut["m0"], str) and cut["m0"] > 0), "cutoff", "m0", "'auto' or > 0")
    need(cut["growth"] > 1, "cutoff", "growth", "must exceed 1")
    init = data["initial"]
    need(init["preset"] in INITIAL_PRESETS, "initial", "preset", f"must be one of {INITIAL_PRESETS}")
    if init["preset"] == "custom":
        need(init["values"] is not None or init["file"] is not None, "initial", "values", "custom needs values or file")
    e = data["ensemble"]
    need(e["paths"] >= 1, "ensemble", "paths", "must be >= 1")
    need(0 <= e["master_seed"] < 2**64, "ensemble", "master_seed", "must fit in 64 bits")
    o = data["outputs"]
    need(
        len(o["p_list"]) > 0 and all(isinstance(p, _NUM) and p >= 1 for p in o["p_list"]),
        "outputs",
        "p_list",
        "non-empty list of numbers >= 1",
    )
    need(o["psi_k"] == "auto" or (not isinstance(o["psi_k"], str) and o["psi_k"] > 0), "outputs", "psi_k", "'auto' or > 0")
    need(o["probes"] >= 1, "outputs", "probes", "must be >= 1")
    a = data["analysis"]
    if a["checks"] is not None:
        bad = [x for x in a["checks"] if x not in ALL_CHECKS]
        need(not bad, "analysis", "checks", f"unknown checks {bad}")
    for key in ("time_lags", "space_lags"):
        need(all(isinstance(x, int) and x >= 1 for x in a[key]), "analysis", key, "positive integers")
    for key in ("kappa", "q"):
        need(a[key] == "auto" or not isinstance(a[key], str), "analysis", key, "'auto' or a number")
    return diags


INITIAL_PRESETS = ("gaussian-bump", "box", "constant", "custom")


def initial_data(grid: GridSpec, spec: dict[str, Any]) -> np.ndarray:
    """Initial field from an ``[initial]`` table."""
    preset = spec.get("preset", "gaussian-bump")
    amp = float(spec.get("amplitude", 1.0))
    width = float(spec.get("width", 1.0))
    if preset == "gaussian-bump":
        return amp * np.exp(-(grid.radius**2) / (2.0 * width**2))
    if preset == "box":
        inside = np.ones(grid.shape, dtype=bool)
        for x in grid.coords:
            inside &= np.abs(x) <= width
        return np.where(inside, amp, 0.0)
    if preset == "constant":
        return np.full(grid.shape, amp)
    if preset == "custom":
        if spec.get("values") is not None:
            values = np.asarray(spec["values"], dtype=np.float64)
        else:
            path = Path(spec["file"])
            values = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter=",")
        if values.size != grid.size:
            raise ValueError(f"custom initial data has {values.size} values, grid needs {grid.size}")
        return values.reshape(grid.shape).astype(np.float64)
    raise ValueError(f"unknown initial preset {preset!r}")


def probe_indices(grid: GridSpec, count: int) -> np.ndarray:
    """Flat indices of ``count`` lattice points spread over the central quarter of axis 0."""
    n = grid.points_per_dim
    i0 = np.unique(np.linspace(n // 2 - n // 8, n // 2 + n // 8, count).round().astype(int))
    centre = (n // 2,) * (grid.dim - 1)
    return np.array([np.ravel_multi_index((i,) + centre, grid.shape) for i in i0])


def snapshot_steps(n_steps: int, count: int) -> list[int]:
    """Geometric schedule on the step grid: n_steps * 2^-(count-1-i), deduplicated, >= 1."""
    steps = {max(1, int(round(n_steps * 2.0 ** -(count - 1 - i)))) for i in range(count)}
    return sorted(s for s in steps if s <= n_steps)
