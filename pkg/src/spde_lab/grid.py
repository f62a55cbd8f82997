"""Periodic lattice on the torus [-L, L)^d with finite-difference and Fourier tools.

Fields are plain float64 arrays of shape ``grid.shape`` (row-major, axis ``i``
is the coordinate ``x^(i+1)``).  All operators wrap around periodically.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np


class ResidueError(ArithmeticError):
    """A Fourier multiplier produced a non-negligible imaginary part."""


@dataclass(frozen=True)
class GridSpec:
    dim: int
    half_length: float
    points_per_dim: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        n = self.points_per_dim
        if n < 8 or n & (n - 1):
            raise ValueError(f"points_per_dim must be a power of two >= 8, got {n}")
        if not self.half_length > 0:
            raise ValueError("half_length must be positive")
        object.__setattr__(self, "half_length", float(self.half_length))

    @property
    def spacing(self) -> float:
        # exact: N is a power of two
        return 2.0 * self.half_length / self.points_per_dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_dim,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_dim**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        """1-D lattice coordinates -L + j h, j = 0..N-1."""
        return -self.half_length + self.spacing * np.arange(self.points_per_dim)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        """Minimal-image distance |x| from the origin on the torus."""
        period = 2.0 * self.half_length
        r2 = np.zeros(self.shape)
        for x in self.coords:
            w = (x + self.half_length) % period - self.half_length
            r2 += w * w
        return np.sqrt(r2)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Discrete frequencies 2*pi*n/(2L) on the full FFT layout, one array per axis."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.points_per_dim, d=self.spacing)
        return tuple(np.meshgrid(*([k] * self.dim), indexing="ij"))

    @cached_property
    def rwavenumbers(self) -> tuple[np.ndarray, ...]:
        """Frequencies matching the ``rfftn`` half-spectrum layout."""
        n, h = self.points_per_dim, self.spacing
        full = 2.0 * np.pi * np.fft.fftfreq(n, d=h)
        half = 2.0 * np.pi * np.fft.rfftfreq(n, d=h)
        axes = [full] * (self.dim - 1) + [half]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def index_to_point(self, index) -> tuple[float, ...]:
        idx = np.unravel_index(index, self.shape) if np.isscalar(index) else index
        return tuple(float(self.axis[i]) for i in idx)


def as_field(grid: GridSpec, values) -> np.ndarray:
    """Validate ``values`` as a field on ``grid`` and return it as float64."""
    f = np.asarray(values, dtype=np.float64)
    if f.size != grid.size:
        raise ValueError(f"field has {f.size} values, grid needs {grid.size}")
    f = f.reshape(grid.shape)
    if not np.all(np.isfinite(f)):
        raise FloatingPointError("field contains NaN or Inf")
    return f


def _check_axis(grid: GridSpec, axis: int):
    if not 0 <= axis < grid.dim:
        raise IndexError(f"axis {axis} out of range for dim {grid.dim}")


def central_gradient(grid: GridSpec, f: np.ndarray, axis: int) -> np.ndarray:
    """(f(x + h e_axis) - f(x - h e_axis)) / 2h with periodic wraparound."""
    _check_axis(grid, axis)
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * grid.spacing)


def second_difference(grid: GridSpec, f: np.ndarray, axis: int) -> np.ndarray:
    _check_axis(grid, axis)
    h = grid.spacing
    return (np.roll(f, -1, axis=axis) - 2.0 * f + np.roll(f, 1, axis=axis)) / (h * h)


def laplacian_like(grid: GridSpec, f: np.ndarray, a: np.ndarray) -> np.ndarray:
    """sum_ij a^ij(x) D_ij f.

    ``a`` has shape ``(dim, dim) + grid.shape`` (or ``(dim, dim)`` for constant
    coefficients).  Diagonal terms use the three-point second difference, mixed
    terms iterated central differences.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape[:2] != (grid.dim, grid.dim):
        raise ValueError(f"coefficient matrix has shape {a.shape[:2]}, expected {(grid.dim,) * 2}")
    out = np.zeros(grid.shape)
    for i in range(grid.dim):
        out += a[i, i] * second_difference(grid, f, i)
    if grid.dim == 2:
        mixed = central_gradient(grid, central_gradient(grid, f, 1), 0)
        out += (a[0, 1] + a[1, 0]) * mixed
    return out


def bump_profile(r: np.ndarray) -> np.ndarray:
    """Unnormalized mollifier profile (1 - r^2)^3 on r < 1, zero outside."""
    r = np.asarray(r, dtype=np.float64)
    return np.where(r < 1.0, (1.0 - np.minimum(r, 1.0) ** 2) ** 3, 0.0)


def mollifier_kernel(grid: GridSpec, eps: float) -> np.ndarray:
    """Lattice samples of zeta_eps centred at the origin, unit mass under sum * h^d.

    The array is laid out with the origin at index 0 (FFT order).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    n, h = grid.points_per_dim, grid.spacing
    offsets = h * np.fft.fftfreq(n, d=1.0 / n)  # signed minimal-image offsets
    r2 = np.zeros(grid.shape)
    for w in np.meshgrid(*([offsets] * grid.dim), indexing="ij"):
        r2 += w * w
    kernel = bump_profile(np.sqrt(r2) / eps)
    return kernel / (kernel.sum() * grid.cell_volume)


def mollify(grid: GridSpec, f: np.ndarray, eps: float) -> np.ndarray:
    """Periodic convolution of ``f`` with the lattice-normalized bump of radius eps.

    For eps <= h the kernel collapses onto the origin and this is the identity.
    """
    kernel = mollifier_kernel(grid, eps)
    spec = np.fft.rfftn(f) * np.fft.rfftn(kernel) * grid.cell_volume
    return np.fft.irfftn(spec, s=grid.shape, axes=tuple(range(grid.dim)))


def dft_multiplier(
    grid: GridSpec,
    f: np.ndarray,
    symbol: Callable[[tuple[np.ndarray, ...]], np.ndarray],
    residue_tol: float = 1e-9,
) -> np.ndarray:
    """Apply the Fourier multiplier ``symbol`` to a real field.

    ``symbol`` receives the tuple of per-axis frequency arrays (full FFT layout)
    and returns real multiplier values.  Raises :class:`ResidueError` if the
    imaginary part of the result exceeds ``residue_tol`` times the real max-norm,
    which indicates a symbol that is not even in the frequency.
    """
    mult = np.asarray(symbol(grid.wavenumbers), dtype=np.float64)
    mult = np.broadcast_to(mult, grid.shape)
    if not np.all(np.isfinite(mult)):
        raise ValueError("symbol is not finite at every discrete frequency")
    out = np.fft.ifftn(np.fft.fftn(f) * mult)
    scale = np.max(np.abs(out.real))
    residue = np.max(np.abs(out.imag))
    if residue > residue_tol * max(scale, np.finfo(float).tiny):
        raise ResidueError(f"imaginary residue {residue:.3e} vs real max {scale:.3e}")
    return out.real


def bessel_symbol(gamma: float) -> Callable[[tuple[np.ndarray, ...]], np.ndarray]:
    """Symbol (1 + |xi|^2)^(gamma/2)."""

    def symbol(xi):
        return (1.0 + sum(k * k for k in xi)) ** (gamma / 2.0)

    return symbol
