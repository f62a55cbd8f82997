"""Per-path records and their on-disk formats.

PathRecord binary layout (all little-endian)::

    8 bytes   magic  b"SPDEPATH"
    uint32    format version (currently 1)
    uint32    header length H in bytes
    H bytes   UTF-8 JSON header, keys sorted, no whitespace:
                fingerprint, path_index, seed, dim, N, L, dt, T, status,
                end_time, m_final, events, probe_index, arrays
              where ``arrays`` is the ordered list of series descriptors
              {"name": str, "shape": [int, ...]}
    ...       float64 payloads, C order, in descriptor order

Field snapshot layout (binary)::

    8 bytes   magic  b"SPDEFLD1"
    uint32    dim,  uint32 N,  float64 L,  float64 t
    N**dim    float64 values, row-major

The CSV variant writes the header row ``dim,N,L,t``, one row with those
values, then one value per line in row-major order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .grid import GridSpec

PATH_MAGIC = b"SPDEPATH"
FIELD_MAGIC = b"SPDEFLD1"
FORMAT_VERSION = 1

# terminal states of a path
COMPLETED = "completed"
SUSPECTED_BLOWUP = "suspected blow-up"
NUMERICAL_BLOWUP = "numerical blow-up"
BUDGET_EXCEEDED = "stability budget exceeded"


class RecordFormatError(ValueError):
    pass


@dataclass(eq=False)
class PathRecord:
    fingerprint: str
    path_index: int
    seed: int
    grid: GridSpec
    dt: float
    T: float
    times: np.ndarray
    series: dict[str, np.ndarray]
    probes: np.ndarray
    probe_index: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    bessel: dict[str, np.ndarray] = field(default_factory=dict)
    events: list[dict[str, Any]] = field(default_factory=list)
    status: str = COMPLETED
    end_time: float = 0.0
    m_final: float = 0.0

    @property
    def terminated(self) -> bool:
        return self.status != COMPLETED

    def lp(self, p: float) -> np.ndarray:
        key = lp_key(p)
        if key not in self.series:
            raise KeyError(f"L_{p:g} series not recorded")
        return self.series[key]

    def _arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [("times", self.times)]
        out += [(f"series/{k}", v) for k, v in sorted(self.series.items())]
        out += [("probes", self.probes), ("snapshot_times", self.snapshot_times), ("snapshots", self.snapshots)]
        out += [(f"bessel/{k}", v) for k, v in sorted(self.bessel.items())]
        return out

    def to_bytes(self) -> bytes:
        arrays = self._arrays()
        header = {
            "fingerprint": self.fingerprint,
            "path_index": int(self.path_index),
            "seed": int(self.seed),
            "dim": self.grid.dim,
            "N": self.grid.points_per_dim,
            "L": self.grid.half_length,
            "dt": float(self.dt),
            "T": float(self.T),
            "status": self.status,
            "end_time": float(self.end_time),
            "m_final": float(self.m_final),
            "events": self.events,
            "probe_index": [int(i) for i in self.probe_index],
            "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        parts = [PATH_MAGIC, struct.pack("<II", FORMAT_VERSION, len(blob)), blob]
        parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PathRecord":
        if data[:8] != PATH_MAGIC:
            raise RecordFormatError("not a path record (bad magic)")
        version, hlen = struct.unpack_from("<II", data, 8)
        if version != FORMAT_VERSION:
            raise RecordFormatError(f"unsupported record version {version}")
        header = json.loads(data[16 : 16 + hlen])
        offset = 16 + hlen
        arrays = {}
        for desc in header["arrays"]:
            shape = tuple(desc["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
            arrays[desc["name"]] = arr.astype(np.float64)
            offset += 8 * count
        if offset != len(data):
            raise RecordFormatError("trailing or missing payload bytes")
        grid = GridSpec(header["dim"], header["L"], header["N"])
        return cls(
            fingerprint=header["fingerprint"],
            path_index=header["path_index"],
            seed=header["seed"],
            grid=grid,
            dt=header["dt"],
            T=header["T"],
            times=arrays["times"],
            series={k[7:]: v for k, v in arrays.items() if k.startswith("series/")},
            probes=arrays["probes"],
            probe_index=np.array(header["probe_index"], dtype=int),
            snapshot_times=arrays["snapshot_times"],
            snapshots=arrays["snapshots"],
            bessel={k[7:]: v for k, v in arrays.items() if k.startswith("bessel/")},
            events=header["events"],
            status=header["status"],
            end_time=header["end_time"],
            m_final=header["m_final"],
        )

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PathRecord":
        return cls.from_bytes(Path(path).read_bytes())


def lp_key(p: float) -> str:
    return f"lp:{float(p):g}"


def bessel_key(gamma: float, p: float) -> str:
    return f"H:{float(gamma):g}:{float(p):g}"


def record_filename(index: int) -> str:
    return f"path_{index}.bin"


def save_field(path, grid: GridSpec, values: np.ndarray, t: float) -> None:
    path = Path(path)
    values = np.asarray(values, dtype=np.float64).reshape(grid.shape)
    if path.suffix == ".csv":
        lines = ["dim,N,L,t", f"{grid.dim},{grid.points_per_dim},{grid.half_length!r},{float(t)!r}"]
        lines += [repr(float(v)) for v in values.ravel()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return
    head = FIELD_MAGIC + struct.pack("<IIdd", grid.dim, grid.points_per_dim, grid.half_length, float(t))
    path.write_bytes(head + np.ascontiguousarray(values, dtype="<f8").tobytes())


def load_field(path) -> tuple[GridSpec, np.ndarray, float]:
    path = Path(path)
    if path.suffix == ".csv":
        rows = path.read_text(encoding="utf-8").split()
        if rows[0] != "dim,N,L,t":
            raise RecordFormatError("missing field CSV header")
        dim, n, L, t = rows[1].split(",")
        grid = GridSpec(int(dim), float(L), int(n))
        values = np.array([float(v) for v in rows[2:]]).reshape(grid.shape)
        return grid, values, float(t)
    data = path.read_bytes()
    if data[:8] != FIELD_MAGIC:
        raise RecordFormatError("not a field snapshot (bad magic)")
    dim, n, L, t = struct.unpack_from("<IIdd", data, 8)
    grid = GridSpec(dim, L, n)
    values = np.frombuffer(data, dtype="<f8", offset=32).reshape(grid.shape).copy()
    return grid, values, t
