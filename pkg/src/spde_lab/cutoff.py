"""Cut-off function h_m and the level schedule used when pasting local solutions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def h_cutoff(z, m: float):
    """C^1 taming factor: 1 on |z| <= m, 0 on |z| >= 2m, cubic smoothstep between.

    Works elementwise on arrays; returns a float for scalar input.
    """
    if not m > 0:
        raise ValueError("cut-off level m must be positive")
    s = np.clip(np.abs(z) / m - 1.0, 0.0, 1.0)
    out = 1.0 - s * s * (3.0 - 2.0 * s)
    return float(out) if np.ndim(out) == 0 else out


def powered_cutoff_max(lam: float, m: float, samples: int = 8193) -> float:
    """max over v in [0, 2m] of v^lam h_m(v), by dense sampling (bounded by (2m)^lam)."""
    v = np.linspace(0.0, 2.0 * m, samples)
    return float(np.max(v**lam * h_cutoff(v, m)))


@dataclass(frozen=True)
class CutoffSpec:
    m0: float
    growth: float = 2.0
    m_max: float = 1e6

    def __post_init__(self):
        if not self.m0 > 0:
            raise ValueError("m0 must be positive")
        if not self.growth > 1:
            raise ValueError("growth must exceed 1")
        if not self.m0 < self.m_max:
            raise ValueError("m0 must be below m_max")
