"""Coefficient fields of the linear and Burgers-type drift, their numerical
assumption checks, and the cosh-decaying weight used in the L1 estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

from .cutoff import powered_cutoff_max
from .grid import GridSpec, central_gradient, second_difference

# relative slack for floating-point comparisons against K
_REL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Sampled coefficients a^ij, b^i, c, b_bar^i with assumption constant K.

    Arrays are stored at full grid shape: ``a`` is ``(d, d, *shape)``, ``b`` and
    ``b_bar`` are ``(d, *shape)``, ``c`` is ``shape``.  Use :meth:`build` to
    construct from scalars, matrices or reduced arrays.

    An optional scalar time modulation ``1 + amp*cos(2*pi*freq*t)`` multiplies
    every coefficient; assumption checks are run at both modulation extremes.
    """

    grid: GridSpec
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    b_bar: np.ndarray
    K: float
    lam: float
    modulation_amplitude: float = 0.0
    modulation_frequency: float = 0.0

    def __post_init__(self):
        d, shape = self.grid.dim, self.grid.shape
        expected = {"a": (d, d) + shape, "b": (d,) + shape, "c": shape, "b_bar": (d,) + shape}
        for name, shp in expected.items():
            arr = getattr(self, name)
            if arr.shape != shp:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shp}")
            arr.setflags(write=False)
        if not 0 <= self.modulation_amplitude < 1:
            raise ValueError("modulation_amplitude must lie in [0, 1)")

    @classmethod
    def build(cls, grid: GridSpec, *, a=1.0, b=0.0, c=0.0, b_bar=0.0, K=1.0, lam=1.0, **kw):
        """Broadcast scalar/matrix/field inputs to full-shape arrays.

        ``a``: scalar (times identity), ``(d, d)`` matrix, or full array.
        ``b``: scalar, length-d sequence, or ``(d, *shape)`` array.
        ``b_bar``: scalar, or a length-d sequence whose i-th entry is a scalar,
        an array on the complementary grid (coordinate i removed), or a full field.
        """
        d, shape = grid.dim, grid.shape
        a = np.asarray(a, dtype=np.float64)
        if a.ndim == 0:
            a = a * np.eye(d)
        if a.shape == (d, d):
            a = a.reshape((d, d) + (1,) * d)
        a = np.broadcast_to(a, (d, d) + shape).copy()

        b = np.asarray(b, dtype=np.float64)
        if b.ndim <= 1:
            b = np.broadcast_to(b, (d,)).reshape((d,) + (1,) * d)
        b = np.broadcast_to(b, (d,) + shape).copy()

        c = np.broadcast_to(np.asarray(c, dtype=np.float64), shape).copy()

        if not isinstance(b_bar, (list, tuple)) and np.ndim(b_bar) == 0:
            b_bar = [b_bar] * d
        if len(b_bar) != d:
            raise ValueError(f"b_bar needs {d} components")
        b_bar = np.stack([_expand_complement(grid, i, v) for i, v in enumerate(b_bar)])
        return cls(grid, a, b, c, b_bar, float(K), float(lam), **kw)

    def modulation(self, t: float) -> float:
        if self.modulation_amplitude == 0.0:
            return 1.0
        return 1.0 + self.modulation_amplitude * math.cos(2.0 * math.pi * self.modulation_frequency * t)

    @property
    def modulation_extremes(self) -> tuple[float, ...]:
        amp = self.modulation_amplitude
        return (1.0,) if amp == 0.0 else (1.0 - amp, 1.0 + amp)

    @cached_property
    def a_is_constant(self) -> bool:
        flat = self.a.reshape(self.grid.dim, self.grid.dim, -1)
        return bool(np.all(flat == flat[..., :1]))

    @cached_property
    def a_mean(self) -> np.ndarray:
        axes = tuple(range(2, 2 + self.grid.dim))
        return self.a.mean(axis=axes)

    @cached_property
    def has_b(self) -> bool:
        return bool(np.any(self.b))

    @cached_property
    def has_c(self) -> bool:
        return bool(np.any(self.c))

    @cached_property
    def has_b_bar(self) -> bool:
        return bool(np.any(self.b_bar))


def _expand_complement(grid: GridSpec, i: int, value) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64)
    d, shape = grid.dim, grid.shape
    if v.shape == shape:
        return v.copy()
    if v.ndim == 0:
        return np.full(shape, float(v))
    if v.shape == (grid.points_per_dim,) * (d - 1):
        return np.broadcast_to(np.expand_dims(v, axis=i), shape).copy()
    raise ValueError(f"b_bar[{i}] has shape {v.shape}; expected scalar, complement grid or {shape}")


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    value: float | None = None
    bound: float | None = None
    minimal_K: float | None = None
    witness: dict[str, Any] | None = None
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "pass": self.passed,
            "value": self.value,
            "bound": self.bound,
            "minimal_K": self.minimal_K,
            "witness": self.witness,
            "detail": self.detail,
        }


@dataclass
class ValidationReport:
    entries: list[AssumptionCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def minimal_K(self) -> float:
        ks = [e.minimal_K for e in self.entries if e.minimal_K is not None]
        return max(ks) if ks else 0.0

    def __getitem__(self, name: str) -> AssumptionCheck:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {"pass": self.passed, "minimal_K": self.minimal_K, "entries": [e.to_dict() for e in self.entries]}


def _point(grid: GridSpec, flat_index: int) -> dict[str, Any]:
    idx = tuple(int(i) for i in np.unravel_index(flat_index, grid.shape))
    return {"index": list(idx), "x": list(grid.index_to_point(idx))}


def c2_seminorm(grid: GridSpec, f: np.ndarray) -> tuple[float, int]:
    """max of sup|f|, sup|D_i f|, sup|D_i D_j f| and the flat index attaining it."""
    pieces = [np.abs(f)]
    for i in range(grid.dim):
        pieces.append(np.abs(central_gradient(grid, f, i)))
        for j in range(grid.dim):
            if i == j:
                pieces.append(np.abs(second_difference(grid, f, i)))
            else:
                pieces.append(np.abs(central_gradient(grid, central_gradient(grid, f, j), i)))
    stacked = np.max(np.stack(pieces), axis=0)
    flat = int(np.argmax(stacked))
    return float(stacked.flat[flat]), flat


def ellipticity_bounds(coeffs: CoefficientSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-point (min eigenvalue, max eigenvalue, eigenvectors) of the symmetric part of a."""
    d = coeffs.grid.dim
    mats = np.moveaxis(coeffs.a.reshape(d, d, -1), -1, 0)
    mats = 0.5 * (mats + np.swapaxes(mats, 1, 2))
    w, v = np.linalg.eigh(mats)
    return w[:, 0], w[:, -1], v


def _probe_directions(d: int, count: int = 16, seed: int = 0) -> np.ndarray:
    dirs = [np.eye(d)[i] for i in range(d)]
    if d == 2:
        theta = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi, count)
        dirs.extend(np.stack([np.cos(theta), np.sin(theta)], axis=1))
    return np.array(dirs)


def validate_assumptions(coeffs: CoefficientSet, regime: str | None = None) -> ValidationReport:
    """Numerically check ellipticity, C^2-type bounds, the b_bar structure and lambda.

    Failures are recorded as report entries; nothing is raised.  ``regime`` set
    to ``"superlinear"`` adds the constraint lambda < 1/d.
    """
    grid, K = coeffs.grid, coeffs.K
    report = ValidationReport()
    extremes = coeffs.modulation_extremes
    d = grid.dim

    lo, hi, vecs = ellipticity_bounds(coeffs)
    needed, worst_flat, worst_dir = 0.0, 0, None
    for f in extremes:
        with np.errstate(divide="ignore"):
            need = np.maximum(f * hi, np.where(lo > 0, 1.0 / (f * lo), np.inf))
        flat = int(np.argmax(need))
        if need[flat] >= needed:
            needed, worst_flat = float(need[flat]), flat
            column = 0 if (lo[flat] <= 0 or 1.0 / (f * lo[flat]) >= f * hi[flat]) else -1
            worst_dir = vecs[flat][:, column]
    probes = _probe_directions(d)
    mats = np.moveaxis(coeffs.a.reshape(d, d, -1), -1, 0)
    quad = np.einsum("pi,nij,pj->np", probes, mats, probes)
    passed = needed <= K * (1 + _REL_TOL)
    report.entries.append(
        AssumptionCheck(
            "ellipticity",
            passed,
            value=needed,
            bound=K,
            minimal_K=needed,
            witness=None if passed else {**_point(grid, worst_flat), "direction": worst_dir.tolist()},
            detail=(
                f"eigenvalues in [{lo.min():.6g}, {hi.max():.6g}], "
                f"probe quadratic forms in [{quad.min():.6g}, {quad.max():.6g}]"
            ),
        )
    )

    fmax = max(extremes)
    groups = {
        "regularity:a": [coeffs.a[i, j] for i in range(d) for j in range(d)],
        "regularity:b": list(coeffs.b),
        "regularity:c": [coeffs.c],
        "regularity:b_bar": list(coeffs.b_bar),
    }
    for name, fields in groups.items():
        vals = [c2_seminorm(grid, fmax * f) for f in fields]
        value, flat = max(vals, key=lambda t: t[0])
        ok = value <= K * (1 + _REL_TOL)
        report.entries.append(
            AssumptionCheck(name, ok, value=value, bound=K, minimal_K=value, witness=None if ok else _point(grid, flat))
        )

    structural_ok, witness, dev_max = True, None, 0.0
    for i in range(d):
        ref = np.take(coeffs.b_bar[i], [0], axis=i)
        dev = np.abs(coeffs.b_bar[i] - ref)
        if dev.max() > dev_max:
            dev_max = float(dev.max())
        if dev.max() > 0 and structural_ok:
            structural_ok = False
            witness = {**_point(grid, int(np.argmax(dev))), "coordinate": i + 1}
    report.entries.append(
        AssumptionCheck(
            "b_bar_independence",
            structural_ok,
            value=dev_max,
            bound=0.0,
            witness=witness,
            detail="b_bar^i must not vary along coordinate i",
        )
    )

    lam = coeffs.lam
    lam_ok = lam > 0
    detail = "lambda > 0"
    if regime == "superlinear":
        lam_ok = lam_ok and lam < 1.0 / d
        detail = f"0 < lambda < 1/d = {1.0 / d:g}"
    report.entries.append(AssumptionCheck("lambda_range", lam_ok, value=lam, detail=detail))
    return report


@dataclass(frozen=True, eq=False)
class PsiWeight:
    k: float
    grid: GridSpec
    values: np.ndarray


def psi_profile(r, k: float):
    """1 / cosh(r / k)."""
    return 1.0 / np.cosh(np.asarray(r, dtype=np.float64) / k)


def psi_weight(grid: GridSpec, k: float) -> PsiWeight:
    if not k > 0:
        raise ValueError("k must be positive")
    values = psi_profile(grid.radius, k)
    values.setflags(write=False)
    return PsiWeight(float(k), grid, values)


def psi_bracket(k: float, m: float, lam: float) -> float:
    """2/k^2 + (3 + (2m)^lam)/k - 1."""
    return 2.0 / k**2 + (3.0 + (2.0 * m) ** lam) / k - 1.0


def psi_threshold(m: float, lam: float) -> float:
    """Positive root of the bracket in k; the bracket is <= 0 for all larger k."""
    B = 3.0 + (2.0 * m) ** lam
    return (B + math.sqrt(B * B + 8.0)) / 2.0


@dataclass
class InequalityReport:
    passed: bool
    margin: float
    threshold_k: float
    bracket: float
    k: float
    m: float
    witness: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "pass": self.passed,
            "margin": self.margin,
            "threshold_k": self.threshold_k,
            "bracket": self.bracket,
            "k": self.k,
            "m": self.m,
            "witness": self.witness,
        }


def psi_operator_terms(coeffs: CoefficientSet, psi: np.ndarray, factor: float = 1.0):
    """Return (linear part, per-axis psi gradients) of the weighted adjoint operator.

    linear part = D_ij(a^ij psi) - D_i(b^i psi) + (c - 4K) psi, coefficients scaled by ``factor``.
    """
    grid, d = coeffs.grid, coeffs.grid.dim
    a, b, c = factor * coeffs.a, factor * coeffs.b, factor * coeffs.c
    out = (c - 4.0 * coeffs.K) * psi
    for i in range(d):
        out += second_difference(grid, a[i, i] * psi, i)
        out -= central_gradient(grid, b[i] * psi, i)
        for j in range(d):
            if i != j:
                out += central_gradient(grid, central_gradient(grid, a[i, j] * psi, j), i)
    grads = [central_gradient(grid, psi, i) for i in range(d)]
    return out, grads


def verify_psi_inequality(coeffs: CoefficientSet, k: float, m: float) -> InequalityReport:
    """Check the weighted-L1 drift inequality pointwise on the lattice.

    Evaluates  D_ij(a^ij psi_k) - D_i(b^i psi_k) - b_bar^i s psi_k,x^i + (c - 4K) psi_k
    for the worst s = v^lam h_m(v) with 0 <= v <= 2m, and compares it with
    K psi_k [2/k^2 + (3 + (2m)^lam)/k - 1].  The margin is min(rhs - lhs).
    """
    if not (k > 0 and m > 0):
        raise ValueError("k and m must be positive")
    grid = coeffs.grid
    psi = psi_weight(grid, k).values
    bracket = psi_bracket(k, m, coeffs.lam)
    rhs = coeffs.K * psi * bracket
    s_max = powered_cutoff_max(coeffs.lam, m)
    worst = None
    for f in coeffs.modulation_extremes:
        linear, grads = psi_operator_terms(coeffs, psi, f)
        transport = sum(f * coeffs.b_bar[i] * grads[i] for i in range(grid.dim))
        # linear in s, so the extremes s = 0 and s = s_max bound every admissible v
        lhs = np.maximum(linear, linear - s_max * transport)
        worst = lhs if worst is None else np.maximum(worst, lhs)
    gap = rhs - worst
    flat = int(np.argmin(gap))
    margin = float(gap.flat[flat])
    passed = margin >= 0.0
    return InequalityReport(
        passed=passed,
        margin=margin,
        threshold_k=psi_threshold(m, coeffs.lam),
        bracket=bracket,
        k=float(k),
        m=float(m),
        witness=None if passed else _point(grid, flat),
    )


def coefficient_preset(grid: GridSpec, name: str, *, K: float = 1.0, lam: float = 1.0, **overrides) -> CoefficientSet:
    """Named coefficient families.

    ``identity``: a = I, everything else zero.
    ``variable-smooth``: smooth, spatially varying a, b, c and a b_bar that
    respects the axis-independence constraint.  Requires K >= 4/3.
    Keyword overrides (a, b, c, b_bar) replace the preset's fields.
    """
    d, L = grid.dim, grid.half_length
    xs = grid.coords
    if name == "identity":
        fields: dict[str, Any] = dict(a=1.0, b=0.0, c=0.0, b_bar=0.0)
    elif name == "variable-smooth":
        w = np.pi / L
        a = np.zeros((d, d) + grid.shape)
        for i in range(d):
            a[i, i] = 1.0 + 0.25 * np.sin(w * xs[i])
        if d == 2:
            a[0, 1] = a[1, 0] = 0.1 * np.cos(w * xs[0]) * np.cos(w * xs[1])
        b = np.stack([0.2 * np.sin(w * xs[i]) for i in range(d)])
        c = -0.1 * (1.0 + np.cos(w * xs[0]))
        if d == 1:
            b_bar = [0.5]
        else:
            ax = grid.axis
            b_bar = [0.5 * np.cos(w * ax), 0.5 * np.sin(w * ax)]
        fields = dict(a=a, b=b, c=c, b_bar=b_bar)
    else:
        raise ValueError(f"unknown coefficient preset {name!r}")
    fields.update({k: v for k, v in overrides.items() if k in ("a", "b", "c", "b_bar") and v is not None})
    extra = {k: v for k, v in overrides.items() if k in ("modulation_amplitude", "modulation_frequency")}
    return CoefficientSet.build(grid, K=K, lam=lam, **fields, **extra)
