"""Multi-channel Wiener increments and the diffusion coefficients sigma^k(u)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import ndtri

from .coefficients import AssumptionCheck
from .cutoff import h_cutoff
from .grid import GridSpec

LIPSCHITZ = "lipschitz"
SUPERLINEAR = "superlinear"
REGIMES = (LIPSCHITZ, SUPERLINEAR)

_BLOCK = 256  # steps of normals generated per refill


def derive_seed(master_seed: int, path_index: int) -> int:
    """64-bit per-path seed from (master seed, path index)."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(path_index),))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class RngStream:
    """Counter-based Gaussian stream.

    The normals consumed at counter value ``c`` depend only on ``(seed, c)``:
    they are read from a Philox block keyed by ``seed`` at a counter offset
    proportional to ``c``, so buffering and restarts never change the values.
    Owned by a single path worker.
    """

    seed: int
    counter: int = 0
    _key: np.ndarray = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF
        self._key = np.random.SeedSequence(self.seed).generate_state(2, np.uint64)

    def _block(self, start: int, count: int, width: int) -> np.ndarray:
        words = 4 * max(1, math.ceil(width / 4))
        bitgen = np.random.Philox(key=self._key, counter=[start * (words // 4), 0, 0, 0])
        raw = bitgen.random_raw(count * words).reshape(count, words)[:, :width]
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return ndtri(u)

    def normals(self, width: int) -> np.ndarray:
        """Standard normals for the current counter; advances the counter by one."""
        c = self.counter
        start, block = self._cache.get(width, (None, None))
        if start is None or not start <= c < start + len(block):
            start, block = c, self._block(c, _BLOCK, width)
            self._cache = {width: (start, block)}
        self.counter = c + 1
        return block[c - start].copy()

    def generator(self) -> np.random.Generator:
        """A numpy Generator determined by the current counter; advances the counter."""
        gen = np.random.Generator(np.random.Philox(key=self._key, counter=[0, self.counter, 1, 0]))
        self.counter += 1
        return gen

    @classmethod
    def for_path(cls, master_seed: int, path_index: int) -> "RngStream":
        return cls(derive_seed(master_seed, path_index))


def wiener_increments(rng: RngStream, channels: int, dt: float) -> np.ndarray:
    """Independent N(0, dt) increments, one per channel."""
    if channels < 0:
        raise ValueError("channels must be nonnegative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if channels == 0:
        rng.counter += 1
        return np.zeros(0)
    return math.sqrt(dt) * rng.normals(channels)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """sigma^k(u) = mu^k(x) u (Lipschitz) or mu^k(x) |u|^(1+lambda0) (super-linear).

    ``mu`` has shape ``(channels, *grid.shape)``.
    """

    grid: GridSpec
    regime: str
    mu: np.ndarray
    K: float
    lambda0: float = 0.0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.mu.ndim != 1 + self.grid.dim or self.mu.shape[1:] != self.grid.shape:
            raise ValueError(f"mu has shape {self.mu.shape}")
        self.mu.setflags(write=False)

    @property
    def channels(self) -> int:
        return self.mu.shape[0]

    @cached_property
    def is_zero(self) -> bool:
        return self.channels == 0 or not np.any(self.mu)

    @cached_property
    def _mu_flat(self) -> np.ndarray:
        return np.ascontiguousarray(self.mu.reshape(self.channels, -1).T)

    def sigma(self, u, index=None) -> np.ndarray:
        """Vector (sigma^1, ..., sigma^K)(u) at lattice points ``index`` (flat)."""
        mu = self.mu.reshape(self.channels, -1)
        if index is not None:
            mu = mu[:, index]
        if self.regime == LIPSCHITZ:
            return mu * u
        return mu * np.abs(u) ** (1.0 + self.lambda0)


def noise_preset(
    grid: GridSpec,
    regime: str,
    channels: int,
    preset: str = "geometric:0.5",
    *,
    scale: float = 1.0,
    K: float = 1.0,
    lambda0: float = 0.0,
) -> NoiseModel:
    """Build mu^k from a preset string.

    ``zero``; ``constant`` (one active channel of height ``scale``);
    ``geometric:r`` (mu^k = scale r^(k-1), spatially constant);
    ``modulated:r`` (mu^k(x) = scale r^(k-1) (1 + sin(k pi x^1/L)/2) / 1.5).
    """
    name, _, arg = preset.partition(":")
    mu = np.zeros((channels,) + grid.shape)
    if name == "zero":
        pass
    elif name == "constant":
        if channels:
            mu[0] = scale
    elif name in ("geometric", "modulated"):
        r = float(arg) if arg else 0.5
        x1 = grid.coords[0]
        for k in range(channels):
            amp = scale * r**k
            if name == "geometric":
                mu[k] = amp
            else:
                mu[k] = amp * (1.0 + 0.5 * np.sin((k + 1) * np.pi * x1 / grid.half_length)) / 1.5
    else:
        raise ValueError(f"unknown mu preset {preset!r}")
    return NoiseModel(grid, regime, mu, float(K), float(lambda0))


def check_noise(model: NoiseModel) -> list[AssumptionCheck]:
    """Structural bounds on mu and lambda0 for the model's regime."""
    mu2 = model.mu.reshape(model.channels, -1) ** 2
    d = model.grid.dim
    if model.regime == LIPSCHITZ:
        value = float(np.sum(np.max(mu2, axis=1))) if model.channels else 0.0
        bound = model.K**2
        return [
            AssumptionCheck(
                "noise_lipschitz_bound",
                value <= bound * (1 + 1e-12),
                value=value,
                bound=bound,
                minimal_K=math.sqrt(value),
                detail="sum_k sup|mu^k|^2 <= K^2",
            )
        ]
    value = float(np.max(np.sum(mu2, axis=0))) if model.channels else 0.0
    checks = [
        AssumptionCheck(
            "noise_superlinear_bound",
            value <= model.K * (1 + 1e-12),
            value=value,
            bound=model.K,
            minimal_K=value,
            detail="sup_x sum_k |mu^k(x)|^2 <= K",
        ),
        AssumptionCheck(
            "lambda0_range",
            0.0 < model.lambda0 < 1.0 / d,
            value=model.lambda0,
            detail=f"0 < lambda0 < 1/d = {1.0 / d:g}",
        ),
    ]
    return checks


def diffusion_apply(model: NoiseModel, u: np.ndarray, dW: np.ndarray, m: float | None = None) -> np.ndarray:
    """sum_k sigma^k(u) dW^k pointwise.

    With ``m`` given, the super-linear coefficient is tamed to
    mu^k u_+^(1+lambda0) h_m(u); the Lipschitz coefficient is never tamed.
    """
    dW = np.asarray(dW, dtype=np.float64)
    if dW.shape != (model.channels,):
        raise ValueError(f"dW has length {dW.size}, model has {model.channels} channels")
    if model.channels == 0:
        return np.zeros_like(u)
    coef = (model._mu_flat @ dW).reshape(u.shape)
    if model.regime == LIPSCHITZ:
        return coef * u
    p = 1.0 + model.lambda0
    if m is None:
        return coef * np.abs(u) ** p
    return coef * (np.maximum(u, 0.0) ** p * h_cutoff(u, m))


@dataclass
class ProbeReport:
    max_ratio: float
    max_growth_ratio: float
    K: float
    samples: int

    @property
    def passed(self) -> bool:
        tol = self.K * (1 + 1e-12)
        return self.max_ratio <= tol and self.max_growth_ratio <= tol

    def to_dict(self) -> dict:
        return {
            "max_ratio": self.max_ratio,
            "max_growth_ratio": self.max_growth_ratio,
            "K": self.K,
            "samples": self.samples,
            "pass": self.passed,
        }


def lipschitz_probe(model: NoiseModel, samples: int, rng: RngStream, amplitude: float = 10.0) -> ProbeReport:
    """Sample random (x, u, v) and report max |sigma(u) - sigma(v)|_l2 / |u - v| and max |sigma(u)|_l2/|u|."""
    if model.regime != LIPSCHITZ:
        raise ValueError("lipschitz_probe applies to the Lipschitz regime only")
    gen = rng.generator()
    idx = gen.integers(0, model.grid.size, samples)
    u = gen.uniform(-amplitude, amplitude, samples)
    v = gen.uniform(-amplitude, amplitude, samples)
    keep = u != v
    idx, u, v = idx[keep], u[keep], v[keep]
    du = np.linalg.norm(model.sigma(u, idx) - model.sigma(v, idx), axis=0)
    ratio = du / np.abs(u - v)
    growth = np.linalg.norm(model.sigma(u, idx), axis=0) / np.abs(u)
    return ProbeReport(
        max_ratio=float(ratio.max(initial=0.0)),
        max_growth_ratio=float(growth.max(initial=0.0)),
        K=model.K,
        samples=int(keep.sum()),
    )
