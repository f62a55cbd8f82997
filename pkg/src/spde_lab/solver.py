"""Semi-implicit Euler-Maruyama integration of the tamed equation with
stopping-time detection and pasting across cut-off levels."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres

from .analysis import bessel_norm, lp_norm
from .coefficients import CoefficientSet, psi_weight
from .config import RunConfig, probe_indices, snapshot_steps
from .cutoff import CutoffSpec, h_cutoff
from .grid import GridSpec, central_gradient, laplacian_like
from .noise import SUPERLINEAR, NoiseModel, RngStream, derive_seed, diffusion_apply, wiener_increments
from .records import (
    BUDGET_EXCEEDED,
    COMPLETED,
    NUMERICAL_BLOWUP,
    SUSPECTED_BLOWUP,
    PathRecord,
    bessel_key,
    lp_key,
)

__all__ = [
    "CutoffSpec",
    "SolverState",
    "StopRecord",
    "h_cutoff",
    "drift_rhs",
    "step",
    "detect_stop",
    "run_path",
    "stability_budget",
]


class StabilityError(ValueError):
    """Requested dt exceeds the explicit-term stability budget."""


class LinearSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class StopRecord:
    t: float
    step: int
    index: tuple[int, ...]
    value: float
    m: float


@dataclass
class SolverState:
    """Solver state for one path.

    ``rng`` is owned and advanced in place by :func:`step`; a returned state
    shares it with its predecessor.
    """

    u: np.ndarray
    t: float
    m: float
    rng: RngStream
    step_index: int = 0
    stopped: bool = False
    reason: str | None = None
    stop: StopRecord | None = None
    solver_tag: str = ""


def nonlinear_flux(u: np.ndarray, lam: float, m: float) -> np.ndarray:
    """u_+^(1+lam) h_m(u), computed pointwise."""
    return np.maximum(u, 0.0) ** (1.0 + lam) * h_cutoff(u, m)


def explicit_drift(u: np.ndarray, coeffs: CoefficientSet, m: float, factor: float = 1.0) -> np.ndarray:
    """b^i u_x^i + c u + sum_i b_bar^i D_i(u_+^(1+lam) h_m(u)), all scaled by ``factor``."""
    grid = coeffs.grid
    out = np.zeros_like(u)
    if coeffs.has_b:
        for i in range(grid.dim):
            out += coeffs.b[i] * central_gradient(grid, u, i)
    if coeffs.has_c:
        out += coeffs.c * u
    if coeffs.has_b_bar:
        flux = nonlinear_flux(u, coeffs.lam, m)
        for i in range(grid.dim):
            out += coeffs.b_bar[i] * central_gradient(grid, flux, i)
    return out if factor == 1.0 else factor * out


def drift_rhs(u: np.ndarray, coeffs: CoefficientSet, m: float, t: float = 0.0) -> np.ndarray:
    """Full drift a^ij u_x^ix^j + b^i u_x^i + c u + b_bar^i (u_+^(1+lam) h_m(u))_x^i.

    The nonlinear factor is formed pointwise before differencing (conservative form).
    """
    f = coeffs.modulation(t)
    out = f * laplacian_like(coeffs.grid, u, coeffs.a) + explicit_drift(u, coeffs, m, f)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite drift (numerical blow-up)")
    return out


def stability_budget(coeffs: CoefficientSet, model: NoiseModel, m: float) -> float:
    """min(h / (2 K (2m)^lam), 1 / (4 K^2 K_ch))."""
    K = coeffs.K
    adv = coeffs.grid.spacing / (2.0 * K * (2.0 * m) ** coeffs.lam)
    noise = 1.0 / (4.0 * K * K * model.channels) if model.channels else math.inf
    return min(adv, noise)


def stencil_symbol(grid: GridSpec, a: np.ndarray, half: bool = True) -> np.ndarray:
    """Fourier symbol of the constant-coefficient a^ij D_ij stencil."""
    h = grid.spacing
    ks = grid.rwavenumbers if half else grid.wavenumbers
    sym = np.zeros(ks[0].shape)
    for i in range(grid.dim):
        sym -= a[i, i] * (2.0 / (h * h)) * (1.0 - np.cos(ks[i] * h))
        for j in range(grid.dim):
            if i != j:
                sym -= a[i, j] * np.sin(ks[i] * h) * np.sin(ks[j] * h) / (h * h)
    return sym


def _periodic_diff_matrices(grid: GridSpec):
    n, h = grid.points_per_dim, grid.spacing
    eye = sp.identity(n, format="csr")
    d1 = sp.diags([1.0, -1.0, 1.0, -1.0], [1, -1, 1 - n, n - 1], shape=(n, n), format="csr") / (2 * h)
    d2 = sp.diags([1.0, 1.0, -2.0, 1.0, 1.0], [1, -1, 0, 1 - n, n - 1], shape=(n, n), format="csr") / (h * h)
    if grid.dim == 1:
        return [d1], [d2]
    first = [sp.kron(d1, eye, format="csr"), sp.kron(eye, d1, format="csr")]
    second = [sp.kron(d2, eye, format="csr"), sp.kron(eye, d2, format="csr")]
    return first, second


class ImplicitSolver:
    """Solves (I - dt * f * A) v = rhs for the a^ij stencil operator A.

    Constant a: exact Fourier-diagonal solve.  Variable a: GMRES to 1e-10
    relative residual, preconditioned by the Fourier solve with the mean of a.
    Factorizations are cached per modulation factor.
    """

    def __init__(self, coeffs: CoefficientSet, dt: float, tol: float = 1e-10):
        self.coeffs = coeffs
        self.grid = coeffs.grid
        self.dt = dt
        self.tol = tol
        self.constant = coeffs.a_is_constant
        self._axes = tuple(range(self.grid.dim))
        a0 = coeffs.a.reshape(self.grid.dim, self.grid.dim, -1)[..., 0] if self.constant else coeffs.a_mean
        self._symbol = stencil_symbol(self.grid, a0)
        self._cache: dict[float, object] = {}
        self._matrix = None if self.constant else self._assemble()

    @property
    def tag(self) -> str:
        return ("fourier" if self.constant else "gmres") + f":dt={self.dt!r}"

    def _assemble(self):
        first, second = _periodic_diff_matrices(self.grid)
        d = self.grid.dim
        A = None
        for i in range(d):
            for j in range(d):
                op = second[i] if i == j else first[i] @ first[j]
                term = sp.diags(self.coeffs.a[i, j].ravel()) @ op
                A = term if A is None else A + term
        return A.tocsr()

    def _fourier(self, factor: float):
        denom = self._cache.get(factor)
        if denom is None:
            denom = 1.0 - self.dt * factor * self._symbol
            self._cache[factor] = denom
        return denom

    def _fourier_solve(self, rhs: np.ndarray, factor: float) -> np.ndarray:
        return np.fft.irfftn(np.fft.rfftn(rhs) / self._fourier(factor), s=self.grid.shape, axes=self._axes)

    def solve(self, rhs: np.ndarray, factor: float = 1.0) -> np.ndarray:
        if self.constant:
            return self._fourier_solve(rhs, factor)
        n = self.grid.size
        M = sp.identity(n, format="csr") - (self.dt * factor) * self._matrix
        shape = self.grid.shape
        pre = LinearOperator((n, n), matvec=lambda v: self._fourier_solve(v.reshape(shape), factor).ravel())
        b = rhs.ravel()
        x0 = pre.matvec(b)
        x, info = gmres(M, b, x0=x0, M=pre, rtol=self.tol, atol=0.0, restart=50, maxiter=200)
        resid = np.linalg.norm(M @ x - b)
        if info != 0 or resid > 10 * self.tol * max(np.linalg.norm(b), np.finfo(float).tiny):
            raise LinearSolveError(f"implicit solve did not converge (info={info}, residual={resid:.3e})")
        return x.reshape(shape)


def step(
    state: SolverState,
    dt: float,
    coeffs: CoefficientSet,
    model: NoiseModel,
    solver: ImplicitSolver | None = None,
    dW: np.ndarray | None = None,
) -> SolverState:
    """One semi-implicit Euler-Maruyama step.

    Solves (I - dt A) u_new = u + dt [explicit drift] + sum_k sigma^k(u) dW^k,
    with A the a^ij stencil at the current time and the explicit drift holding
    b, c and the tamed Burgers term.  ``dW`` defaults to one draw from the
    state's stream (the stream advances exactly once per step).
    """
    if state.stopped:
        raise ValueError("cannot step a stopped state")
    if not dt > 0:
        raise ValueError("dt must be positive")
    budget = stability_budget(coeffs, model, state.m)
    if dt > budget:
        raise StabilityError(f"dt={dt:g} exceeds stability budget {budget:g} at m={state.m:g}")
    if solver is None or solver.dt != dt:
        solver = ImplicitSolver(coeffs, dt)
    if dW is None:
        dW = wiener_increments(state.rng, model.channels, dt)
    u = state.u
    factor = coeffs.modulation(state.t)
    rhs = u + dt * explicit_drift(u, coeffs, state.m, factor)
    if not model.is_zero:
        tame = state.m if model.regime == SUPERLINEAR else None
        rhs = rhs + diffusion_apply(model, u, dW, tame)
    u_new = solver.solve(rhs, factor)
    t_new = (state.step_index + 1) * dt
    nxt = dataclasses.replace(state, u=u_new, t=t_new, step_index=state.step_index + 1, solver_tag=solver.tag)
    if not np.all(np.isfinite(u_new)):
        nxt.stopped, nxt.reason = True, NUMERICAL_BLOWUP
    return nxt


def detect_stop(state: SolverState) -> StopRecord | None:
    """First-hit record if sup|u| >= m at the current step, else None."""
    absu = np.abs(state.u)
    flat = int(np.argmax(absu))
    value = float(absu.flat[flat])
    if value < state.m:
        return None
    idx = tuple(int(i) for i in np.unravel_index(flat, state.u.shape))
    return StopRecord(state.t, state.step_index, idx, value, state.m)


class _Recorder:
    def __init__(self, config: RunConfig, grid: GridSpec, n_steps: int):
        self.grid = grid
        self.every = config["time"]["record_every"]
        self.ps = config.recorded_p
        self.psi = psi_weight(grid, config.psi_k).values
        self.probe_index = probe_indices(grid, config["outputs"]["probes"])
        self.snap_steps = set(snapshot_steps(n_steps, config["time"]["snapshots"]))
        self.gammas = [float(g) for g in config["outputs"]["bessel_gammas"]]
        self.bessel_p = float(config["outputs"]["bessel_p"])
        self.rows: list[tuple] = []
        self.snaps: list[tuple[float, np.ndarray]] = []

    def __call__(self, state: SolverState, force: bool = False):
        n = state.step_index
        u = state.u
        if n % self.every == 0 or force:
            vol = self.grid.cell_volume
            absu = np.abs(u)
            row = (
                state.t,
                float(absu.max()),
                float(u.min()),
                float(absu.sum() * vol),
                float(np.sum(u * self.psi) * vol),
                tuple(lp_norm(self.grid, u, p) for p in self.ps),
                u.ravel()[self.probe_index].copy(),
            )
            if not self.rows or self.rows[-1][0] != state.t:
                self.rows.append(row)
        if n in self.snap_steps:
            self.snaps.append((state.t, u.copy()))

    def build(self, **meta) -> PathRecord:
        rows = self.rows
        times = np.array([r[0] for r in rows])
        series = {
            "sup": np.array([r[1] for r in rows]),
            "min": np.array([r[2] for r in rows]),
            "l1": np.array([r[3] for r in rows]),
            "psi_l1": np.array([r[4] for r in rows]),
        }
        for j, p in enumerate(self.ps):
            series[lp_key(p)] = np.array([r[5][j] for r in rows])
        probes = np.array([r[6] for r in rows]).reshape(len(rows), len(self.probe_index))
        snap_t = np.array([s[0] for s in self.snaps])
        snaps = np.array([s[1] for s in self.snaps]).reshape((len(self.snaps),) + self.grid.shape)
        bessel = {
            bessel_key(g, self.bessel_p): np.array([bessel_norm(self.grid, s, g, self.bessel_p) for s in snaps])
            for g in self.gammas
        }
        return PathRecord(
            times=times,
            series=series,
            probes=probes,
            probe_index=self.probe_index,
            snapshot_times=snap_t,
            snapshots=snaps,
            bessel=bessel,
            **meta,
        )


def run_path(
    config: RunConfig,
    path_index: int,
    *,
    on_step: Callable[[SolverState], None] | None = None,
) -> PathRecord:
    """Integrate one path from u0 to T, pasting across cut-off levels.

    When sup|u| reaches the current level m, the level is multiplied by the
    growth factor and integration continues from the same state.  A level
    beyond ``m_max`` terminates the path as a suspected blow-up.  Failures are
    recorded in the returned record, never raised.
    """
    grid = config.grid
    coeffs = config.coefficients()
    model = config.noise()
    u0 = config.initial_field()
    cut = config.cutoff(u0)
    dt, n_steps = config.dt, config.n_steps
    seed = derive_seed(config["ensemble"]["master_seed"], path_index)
    state = SolverState(u=u0.copy(), t=0.0, m=cut.m0, rng=RngStream(seed))
    solver = ImplicitSolver(coeffs, dt)
    rec = _Recorder(config, grid, n_steps)
    events: list[dict] = []
    status = COMPLETED

    def paste(state: SolverState) -> str | None:
        hit = detect_stop(state)
        while hit is not None:
            new_m = state.m * cut.growth
            events.append(
                {
                    "t": hit.t,
                    "step": hit.step,
                    "index": list(hit.index),
                    "sup": hit.value,
                    "m": hit.m,
                    "m_next": new_m,
                }
            )
            if new_m > cut.m_max:
                state.stopped, state.reason, state.stop = True, SUSPECTED_BLOWUP, hit
                return SUSPECTED_BLOWUP
            state.m = new_m
            hit = detect_stop(state)
        return None

    rec(state)
    if on_step is not None:
        on_step(state)
    failure = paste(state)
    while failure is None and state.step_index < n_steps:
        if dt > stability_budget(coeffs, model, state.m):
            failure = BUDGET_EXCEEDED
            break
        try:
            state = step(state, dt, coeffs, model, solver)
        except (LinearSolveError, FloatingPointError):
            failure = NUMERICAL_BLOWUP
            break
        if state.stopped:
            failure = state.reason
            break
        rec(state)
        if on_step is not None:
            on_step(state)
        failure = paste(state)
    if failure is not None:
        status = failure
    if np.all(np.isfinite(state.u)):
        rec(state, force=True)
    return rec.build(
        fingerprint=config.fingerprint,
        path_index=path_index,
        seed=seed,
        grid=grid,
        dt=dt,
        T=config.T,
        events=events,
        status=status,
        end_time=state.t,
        m_final=state.m,
    )
