"""Norms, regularity-exponent estimation and ensemble statistics over path records."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .grid import GridSpec, bessel_symbol, dft_multiplier


class DegenerateSeriesError(ValueError):
    """All increments vanish; no exponent can be fitted."""


class InsufficientSamplesError(ValueError):
    def __init__(self, lag: int, count: int, needed: int):
        self.lag, self.count, self.needed = lag, count, needed
        super().__init__(f"lag {lag}: {count} increment samples, need {needed}")


class EnsembleTooSmallError(ValueError):
    pass


# norms -----------------------------------------------------------------------


def lp_norm(grid: GridSpec, f: np.ndarray, p: float) -> float:
    """(sum |f|^p h^d)^(1/p); p = inf gives the max norm."""
    if not p >= 1:
        raise ValueError("p must be >= 1")
    a = np.abs(f)
    if math.isinf(p):
        return float(a.max())
    if p == 1:
        return float(a.sum() * grid.cell_volume)
    if p == 2:
        return float(math.sqrt(np.sum(a * a) * grid.cell_volume))
    return float((np.sum(a**p) * grid.cell_volume) ** (1.0 / p))


def bessel_norm(grid: GridSpec, f: np.ndarray, gamma: float, p: float) -> float:
    """|| (1 - Delta)^(gamma/2) f ||_{L_p} with the periodic discrete Fourier transform."""
    if gamma == 0:
        return lp_norm(grid, f, p)
    return lp_norm(grid, dft_multiplier(grid, f, bessel_symbol(gamma)), p)


def bessel_potential_kernel_1d(x, s: float):
    """Kernel of (1 - d^2/dx^2)^(-s/2) on the real line, s > 0.

    G_s(x) = (|x|/2)^((s-1)/2) K_((s-1)/2)(|x|) / (sqrt(pi) Gamma(s/2)).
    """
    r = np.abs(np.asarray(x, dtype=np.float64))
    nu = (s - 1.0) / 2.0
    return (r / 2.0) ** nu * kv(nu, r) / (math.sqrt(math.pi) * gamma_fn(s / 2.0))


def periodic_heat_gaussian(grid: GridSpec, amplitude: float, width: float, t: float, images: int = 3) -> np.ndarray:
    """Exact solution of u_t = Laplace(u) on the torus from a Gaussian bump, by summing images."""
    var = width**2 + 2.0 * t
    period = 2.0 * grid.half_length
    out = np.zeros(grid.shape)
    shifts = np.arange(-images, images + 1)
    for offs in np.array(np.meshgrid(*([shifts] * grid.dim), indexing="ij")).reshape(grid.dim, -1).T:
        r2 = sum((x - period * o) ** 2 for x, o in zip(grid.coords, offs))
        out += np.exp(-r2 / (2.0 * var))
    return amplitude * (width**2 / var) ** (grid.dim / 2.0) * out


# exponent estimation ---------------------------------------------------------


@dataclass
class ExponentEstimate:
    direction: str
    estimate: float
    half_width: float
    lags: list[int]
    r2: float
    table: list[dict[str, float]] = field(default_factory=list)
    count: int = 1

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _increments(series: np.ndarray, lag: int, periodic: bool) -> np.ndarray:
    if periodic:
        return np.abs(np.roll(series, -lag, axis=-1) - series).ravel()
    return np.abs(series[..., lag:] - series[..., :-lag]).ravel()


def _slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    xm = x - x.mean()
    slope = float(np.dot(xm, y - y.mean()) / np.dot(xm, xm))
    resid = y - y.mean() - slope * xm
    ss = float(np.dot(y - y.mean(), y - y.mean()))
    r2 = 1.0 - float(np.dot(resid, resid)) / ss if ss > 0 else 1.0
    return slope, r2


def holder_exponent(
    series,
    lags: Sequence[int],
    *,
    direction: str = "time",
    spacing: float = 1.0,
    periodic: bool = False,
    n_boot: int = 200,
    seed: int = 0,
    min_samples: int = 32,
) -> ExponentEstimate:
    """Log-log slope of the median structure function S(lag) = median |f(t+lag) - f(t)|.

    ``series`` is 1-D, or 2-D with independent lines along the last axis whose
    increments are pooled.  The half-width is the 95% percentile interval of a
    bootstrap over increments (resampled within each lag), floored at 1e-9.
    The estimate is clipped to [0, 1.05].
    """
    f = np.asarray(series, dtype=np.float64)
    lags = sorted({int(x) for x in lags})
    if len(lags) < 2:
        raise ValueError("need at least two lags")
    incs = []
    for lag in lags:
        if lag < 1:
            raise ValueError("lags must be positive")
        inc = _increments(f, lag, periodic) if (periodic or lag < f.shape[-1]) else np.zeros(0)
        if inc.size < min_samples:
            raise InsufficientSamplesError(lag, inc.size, min_samples)
        incs.append(inc)
    if all(not np.any(inc) for inc in incs):
        raise DegenerateSeriesError("constant series: every increment is zero")
    S = np.array([np.median(inc) for inc in incs])
    if np.any(S <= 0):
        raise DegenerateSeriesError("median increment vanishes at some lag")
    x = np.log(np.array(lags, dtype=np.float64) * spacing)
    slope, r2 = _slope(x, np.log(S))

    rng = np.random.default_rng(seed)
    boot = np.empty((n_boot, len(lags)))
    for j, inc in enumerate(incs):
        idx = rng.integers(0, inc.size, size=(n_boot, inc.size))
        boot[:, j] = np.median(inc[idx], axis=1)
    half = 1e-9
    if n_boot > 1 and np.all(boot > 0):
        ly = np.log(boot)
        xm = x - x.mean()
        slopes = (ly - ly.mean(axis=1, keepdims=True)) @ xm / np.dot(xm, xm)
        lo, hi = np.percentile(slopes, [2.5, 97.5])
        half = max(half, float(hi - lo) / 2.0)
    table = [{"lag": int(lag), "delta": float(lag * spacing), "S": float(s), "samples": int(inc.size)}
             for lag, s, inc in zip(lags, S, incs)]
    return ExponentEstimate(
        direction=direction,
        estimate=float(np.clip(slope, 0.0, 1.05)),
        half_width=half,
        lags=lags,
        r2=r2,
        table=table,
    )


def usable_lags(length: int, lags: Sequence[int], min_samples: int = 32, periodic: bool = False) -> list[int]:
    """Lags that leave at least ``min_samples`` increments on a line of ``length``."""
    if periodic:
        return [lag for lag in lags if length >= min_samples and lag < length]
    return [lag for lag in lags if length - lag >= min_samples]


def aggregate_exponents(estimates: Sequence[ExponentEstimate], direction: str) -> ExponentEstimate:
    """Median estimate across lines/paths; half-width is the median individual half-width."""
    if not estimates:
        raise ValueError("no estimates to aggregate")
    vals = np.array([e.estimate for e in estimates])
    lags = estimates[0].lags
    table = []
    for j, lag in enumerate(lags):
        S = [e.table[j]["S"] for e in estimates if len(e.table) > j]
        table.append({"lag": int(lag), "delta": estimates[0].table[j]["delta"], "S": float(np.median(S)), "series": len(S)})
    return ExponentEstimate(
        direction=direction,
        estimate=float(np.median(vals)),
        half_width=float(np.median([e.half_width for e in estimates])),
        lags=list(lags),
        r2=float(np.median([e.r2 for e in estimates])),
        table=table,
        count=len(estimates),
    )


def time_exponents(records, lags: Sequence[int], n_boot: int = 200, min_samples: int = 32) -> list[ExponentEstimate]:
    """One estimate per (path, probe point) from the recorded probe time series."""
    out = []
    for rec in records:
        if rec.terminated:
            continue
        for j in range(rec.probes.shape[1]):
            out.append(
                holder_exponent(
                    rec.probes[:, j],
                    lags,
                    direction="time",
                    spacing=float(rec.times[1] - rec.times[0]),
                    n_boot=n_boot,
                    seed=rec.path_index * 1000 + j,
                    min_samples=min_samples,
                )
            )
    return out


def spatial_lines(snapshot: np.ndarray, max_lines: int = 8) -> list[np.ndarray]:
    """Grid lines of a snapshot: the field itself in 1-D, evenly spaced rows and columns in 2-D."""
    if snapshot.ndim == 1:
        return [snapshot]
    n = snapshot.shape[0]
    picks = np.unique(np.linspace(0, n - 1, max_lines).round().astype(int))
    return [snapshot[i, :] for i in picks] + [snapshot[:, i] for i in picks]


def space_exponents(records, lags: Sequence[int], n_boot: int = 200, min_samples: int = 32) -> list[ExponentEstimate]:
    """One estimate per (path, snapshot, grid line), increments taken periodically."""
    out = []
    for rec in records:
        if rec.terminated:
            continue
        for s, snap in enumerate(rec.snapshots):
            for j, line in enumerate(spatial_lines(snap)):
                out.append(
                    holder_exponent(
                        line,
                        lags,
                        direction="space",
                        spacing=rec.grid.spacing,
                        periodic=True,
                        n_boot=n_boot,
                        seed=(rec.path_index * 1000 + s) * 100 + j,
                        min_samples=min_samples,
                    )
                )
    return out


# ensemble checks -------------------------------------------------------------


def _aligned(records, key: str):
    """Stack ``key`` series of records sharing the longest time grid; returns (times, array, used)."""
    full = max(len(r.times) for r in records)
    used = [r for r in records if len(r.times) == full]
    times = used[0].times
    return times, np.array([r.series[key] for r in used]), used


@dataclass
class MartingaleReport:
    n_paths: int
    K: float
    T: float
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    max_excess: float
    supermartingale_pass: bool
    sup_statistic: float
    sup_bound: float
    excluded: int = 0

    @property
    def sup_margin(self) -> float:
        return self.sup_bound - self.sup_statistic

    @property
    def passed(self) -> bool:
        return self.supermartingale_pass and self.sup_margin >= 0

    def curve_rows(self) -> list[dict[str, float]]:
        return [{"t": float(t), "mean": float(m), "se": float(s)} for t, m, s in zip(self.times, self.mean, self.se)]


def discounted_weighted_mass(records, K: float) -> tuple[np.ndarray, np.ndarray]:
    """(times, M) with M[path, t] = exp(-4Kt) * integral(u psi_k) for full-length records."""
    times, psi_l1, _ = _aligned(records, "psi_l1")
    return times, np.exp(-4.0 * K * times) * psi_l1


def martingale_check(records, K: float, k: float | None = None, min_paths: int = 100) -> MartingaleReport:
    """Discounted weighted-L1 supermartingale test and the sup-norm L1 bound.

    M_t = exp(-4Kt) * integral(u psi_k) per path; the check requires
    mean(M_t - M_0) <= 2 SE(M_t - M_0) at every recorded time, and
    mean_paths sup_t ||u(t)||_1^(1/2) < 3 exp(2KT) mean_paths ||u_0||_1^(1/2).
    The weight parameter k is fixed at record time; ``k`` is informational.
    """
    records = list(records)
    if len(records) < min_paths:
        raise EnsembleTooSmallError(f"martingale check needs >= {min_paths} paths, got {len(records)}")
    times, M = discounted_weighted_mass(records, K)
    n = M.shape[0]
    diff = M - M[:, :1]
    mean_diff = diff.mean(axis=0)
    se_diff = diff.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean_diff)
    tol = 1e-12 * max(float(np.abs(M[:, 0]).mean()), np.finfo(float).tiny)
    excess = mean_diff - 2.0 * se_diff
    max_excess = float(excess.max())
    sup_stat = float(np.mean([np.sqrt(np.max(r.series["l1"])) for r in records]))
    T = float(max(r.T for r in records))
    bound = 3.0 * math.exp(2.0 * K * T) * float(np.mean([math.sqrt(r.series["l1"][0]) for r in records]))
    return MartingaleReport(
        n_paths=n,
        K=K,
        T=T,
        times=times,
        mean=M.mean(axis=0),
        se=M.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(times)),
        max_excess=max_excess,
        supermartingale_pass=max_excess <= tol,
        sup_statistic=sup_stat,
        sup_bound=bound,
        excluded=len(records) - n,
    )


@dataclass
class MomentReport:
    q: float
    n_paths: int
    statistic: float
    se: float
    u0_stat: float
    N_hat: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.statistic) and math.isfinite(self.N_hat)


def lq_moment_check(records, q: float, u0_stat: float | None = None) -> MomentReport:
    """Estimate E int_0^T ||u(t)||_q^q dt and the implied constant N = statistic / E||u_0||_q^q."""
    from .records import lp_key

    records = list(records)
    key = lp_key(q)
    if not records or key not in records[0].series:
        raise KeyError(f"L_{q:g} series not recorded")
    vals = []
    for r in records:
        integrand = r.series[key] ** q
        vals.append(float(trapezoid(integrand, r.times)) if len(r.times) > 1 else 0.0)
    vals = np.array(vals)
    if u0_stat is None:
        u0_stat = float(np.mean([r.series[key][0] ** q for r in records]))
    stat = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    if u0_stat > 0:
        n_hat = stat / u0_stat
    else:
        n_hat = 0.0 if stat == 0 else math.inf
    return MomentReport(q=float(q), n_paths=len(vals), statistic=stat, se=se, u0_stat=u0_stat, N_hat=n_hat)


def moment_stability(base: MomentReport, variants: dict[str, MomentReport], tol: float = 0.2) -> dict[str, Any]:
    """Relative change of the implied constant under each variant (ensemble doubling, dt halving)."""
    rel = {}
    for name, rep in variants.items():
        if base.N_hat == 0:
            rel[name] = 0.0 if rep.N_hat == 0 else math.inf
        else:
            rel[name] = abs(rep.N_hat - base.N_hat) / abs(base.N_hat)
    worst = max(rel.values()) if rel else 0.0
    return {"relative_change": rel, "max_relative_change": worst, "tolerance": tol, "pass": worst <= tol and base.finite}


def guaranteed_exponents(p: float, kappa: float, d: int) -> tuple[float, float]:
    """(time, space) Hölder exponents implied by the embedding condition at (p, kappa, d).

    Time: alpha - 1/p with alpha, beta -> (1 - kappa - d/p)/2; space: 1 - kappa - 2 beta - d/p with beta -> 1/p.
    """
    inv = 0.0 if math.isinf(p) else 1.0 / p
    time = 0.5 * (1.0 - kappa - d * inv) - inv
    space = 1.0 - kappa - (d + 2) * inv
    return time, space


@dataclass
class ConsistencyReport:
    time_estimate: float
    space_estimate: float
    time_guarantee: float
    space_guarantee: float
    delta: float
    feasible: bool

    @property
    def time_margin(self) -> float:
        return self.time_estimate - (self.time_guarantee - self.delta)

    @property
    def space_margin(self) -> float:
        return self.space_estimate - (self.space_guarantee - self.delta)

    @property
    def passed(self) -> bool:
        return self.feasible and self.time_margin >= 0 and self.space_margin >= 0


def embedding_consistency(
    time_est: ExponentEstimate | float,
    space_est: ExponentEstimate | float,
    p: float,
    kappa: float,
    d: int,
    delta: float = 0.1,
) -> ConsistencyReport:
    """One-sided comparison of estimated exponents with the guaranteed pair, with tolerance delta."""
    te = time_est.estimate if isinstance(time_est, ExponentEstimate) else float(time_est)
    se = space_est.estimate if isinstance(space_est, ExponentEstimate) else float(space_est)
    g_time, g_space = guaranteed_exponents(p, kappa, d)
    inv = 0.0 if math.isinf(p) else 1.0 / p
    feasible = inv < 0.5 * (1.0 - kappa - d * inv)
    return ConsistencyReport(te, se, g_time, g_space, float(delta), feasible)
