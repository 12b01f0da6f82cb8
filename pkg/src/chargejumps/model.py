"""Charge-tomography model: phase evolution, P1 curve, charge wrapping, scan types.

Offset charge is expressed in units of the electron charge ``e`` and phases
in cycles, so one tomography period spans exactly 1.0.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

SCHEMA_VERSION = 1


def wrap_charge(q):
    """Wrap charge onto ``(-0.5, 0.5]``.

    Works element-wise on arrays; returns a float for scalar input.
    """
    q = np.asarray(q, dtype=float)
    out = q - np.ceil(q - 0.5)
    return float(out) if out.ndim == 0 else out


def phase_of_offset_charge(n_g, d):
    """Ramsey phase, in cycles, accumulated at offset charge ``n_g``.

    ``d`` is the charge dispersion times the idle time (0.25 for the
    standard ``t_idle = 1/(4 df01)`` choice).
    """
    n_g = wrap_charge(n_g)
    return d * np.cos(2.0 * np.pi * n_g)


def p1_of_offset_charge(n_g, model: "CurveModel"):
    """Excited-state probability ``B + A sin(2 pi phi)`` at offset charge ``n_g``."""
    phi = phase_of_offset_charge(n_g, model.depth)
    return model.offset + model.contrast * np.sin(2.0 * np.pi * phi)


@dataclass(frozen=True)
class CurveModel:
    """Analytic P1 curve used to seed synthetic data and bootstrap templates."""

    contrast: float = 0.45
    offset: float = 0.5
    depth: float = 0.25

    def __post_init__(self):
        if self.contrast < 0:
            raise ValueError("contrast must be non-negative")
        if self.offset - self.contrast < 0 or self.offset + self.contrast > 1:
            raise ValueError(
                f"curve leaves [0, 1]: offset={self.offset}, contrast={self.contrast}"
            )
        if self.depth <= 0:
            raise ValueError("depth must be positive")

    def __call__(self, n_g):
        return p1_of_offset_charge(n_g, self)


@dataclass(frozen=True)
class QubitConfig:
    id: int
    f01: float  # GHz
    dispersion: float  # MHz
    t_idle: float | None = None  # s; defaults to 1/(4 dispersion)
    averages_per_point: int = 200
    position: tuple[float, float] = (0.0, 0.0)  # um

    def __post_init__(self):
        if self.dispersion <= 0:
            raise ValueError("dispersion must be positive")
        if self.t_idle is None:
            object.__setattr__(self, "t_idle", 1.0 / (4.0 * self.dispersion * 1e6))
        if self.t_idle <= 0:
            raise ValueError("t_idle must be positive")
        if self.averages_per_point < 1:
            raise ValueError("averages_per_point must be >= 1")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))

    @property
    def depth(self) -> float:
        """Phase depth ``d = df01 * t_idle`` in cycles."""
        return self.dispersion * 1e6 * self.t_idle

    def curve(self, contrast=0.45, offset=0.5) -> CurveModel:
        return CurveModel(contrast=contrast, offset=offset, depth=self.depth)


@dataclass(frozen=True)
class ScanSchedule:
    """Bias sweep and timing of one tomography scan across sequentially-read qubits.

    ``averages`` maps qubit id to the number of Ramsey shots averaged per bias
    point.  At each bias value every qubit in ``qubit_order`` is measured in
    turn before the bias steps.
    """

    averages: Mapping[int, int] = field(
        default_factory=lambda: {1: 200, 2: 240, 3: 239, 4: 300}
    )
    qubit_order: tuple[int, ...] = (1, 2, 3, 4)
    n_bias_points: int = 74
    points_per_period: int = 37
    seconds_per_ramsey: float = 0.0049
    bias_start: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "averages", {int(k): int(v) for k, v in self.averages.items()})
        object.__setattr__(self, "qubit_order", tuple(int(q) for q in self.qubit_order))
        if self.points_per_period < 8:
            raise ValueError("points_per_period must be >= 8")
        if self.n_bias_points < 1:
            raise ValueError("n_bias_points must be >= 1")
        if self.seconds_per_ramsey <= 0:
            raise ValueError("seconds_per_ramsey must be positive")
        missing = [q for q in self.qubit_order if q not in self.averages]
        if missing:
            raise ValueError(f"no averages given for qubits {missing}")
        if any(v < 1 for v in self.averages.values()):
            raise ValueError("averages must be >= 1")

    def seconds_per_point(self, qubit_id: int) -> float:
        return self.averages[qubit_id] * self.seconds_per_ramsey

    @property
    def cycle_time(self) -> float:
        """Wall time to measure every qubit at one bias value."""
        return sum(self.seconds_per_point(q) for q in self.qubit_order)

    @property
    def scan_duration(self) -> float:
        return self.n_bias_points * self.cycle_time

    @property
    def bias_step(self) -> float:
        return 1.0 / self.points_per_period

    def bias_grid(self) -> np.ndarray:
        return self.bias_start + self.bias_step * np.arange(self.n_bias_points)

    def timestamps(self, qubit_id: int, start_time: float = 0.0) -> np.ndarray:
        """End time of each averaging window for ``qubit_id``."""
        pos = self.qubit_order.index(qubit_id)
        lead = sum(self.seconds_per_point(q) for q in self.qubit_order[: pos + 1])
        return start_time + self.cycle_time * np.arange(self.n_bias_points) + lead


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ChargeScan:
    """One tomographic sweep of a single qubit."""

    qubit_id: int
    start_time: float
    bias: np.ndarray
    p1: np.ndarray
    t: np.ndarray
    scan_id: str = ""
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        bias, p1, t = _readonly(self.bias), _readonly(self.p1), _readonly(self.t)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "meta", dict(self.meta))
        if not (bias.shape == p1.shape == t.shape) or bias.ndim != 1:
            raise DataError(f"scan {self.scan_id!r}: bias, p1 and t must be equal-length 1-d")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise DataError(f"scan {self.scan_id!r}: timestamps not strictly increasing")
        if np.any((p1 < 0) | (p1 > 1)) or np.any(~np.isfinite(p1)):
            raise DataError(f"scan {self.scan_id!r}: p1 outside [0, 1]")
        if len(bias) > 1:
            db = np.diff(bias)
            if not (np.all(db > 0) or np.all(db < 0)):
                raise DataError(f"scan {self.scan_id!r}: bias grid not monotone")

    def __len__(self):
        return len(self.p1)

    def __eq__(self, other):
        if not isinstance(other, ChargeScan):
            return NotImplemented
        return (
            self.qubit_id == other.qubit_id
            and self.start_time == other.start_time
            and self.scan_id == other.scan_id
            and np.array_equal(self.bias, other.bias)
            and np.array_equal(self.p1, other.p1)
            and np.array_equal(self.t, other.t)
            and dict(self.meta) == dict(other.meta)
        )

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.start_time) if len(self.t) else 0.0

    def with_p1(self, p1, **meta) -> "ChargeScan":
        return ChargeScan(
            self.qubit_id, self.start_time, self.bias, p1, self.t,
            scan_id=self.scan_id, meta={**self.meta, **meta},
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "scan_id": self.scan_id,
            "qubit_id": self.qubit_id,
            "start_time": self.start_time,
            "points": [[float(b), float(p), float(t)] for b, p, t in zip(self.bias, self.p1, self.t)],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ChargeScan":
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise DataError(f"unsupported scan schema_version {version}")
        pts = np.asarray(d["points"], dtype=float).reshape(-1, 3)
        return cls(
            qubit_id=int(d["qubit_id"]),
            start_time=float(d["start_time"]),
            bias=pts[:, 0], p1=pts[:, 1], t=pts[:, 2],
            scan_id=str(d.get("scan_id", "")),
            meta=d.get("meta", {}),
        )


def write_scans_jsonl(scans: Iterable[ChargeScan], path) -> None:
    with open(path, "w") as fh:
        for scan in scans:
            fh.write(json.dumps(scan.to_dict(), sort_keys=True))
            fh.write("\n")


def read_scans_jsonl(path) -> list[ChargeScan]:
    scans = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                scans.append(ChargeScan.from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad scan record ({exc})") from exc
    return scans


CSV_FIELDS = ("scan_id", "qubit_id", "bias_e", "p1", "t_s")


def write_scans_csv(scans: Iterable[ChargeScan], path) -> None:
    """Columnar export; the first line records the schema version."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for s in scans:
            for b, p, t in zip(s.bias, s.p1, s.t):
                w.writerow([s.scan_id, s.qubit_id, repr(float(b)), repr(float(p)), repr(float(t))])


def read_scans_csv(path) -> list[ChargeScan]:
    """Read columnar scans.  ``start_time`` is taken as the first timestamp
    and ``meta`` is empty, since the CSV layout does not carry them."""
    groups: dict[tuple[str, int], list] = {}
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    for row in csv.DictReader(lines):
        key = (row["scan_id"], int(row["qubit_id"]))
        groups.setdefault(key, []).append((float(row["bias_e"]), float(row["p1"]), float(row["t_s"])))
    scans = []
    for (sid, qid), pts in groups.items():
        a = np.array(pts)
        scans.append(ChargeScan(qid, float(a[0, 2]), a[:, 0], a[:, 1], a[:, 2], scan_id=sid))
    return scans


def read_scans(path) -> list[ChargeScan]:
    path = Path(path)
    if path.suffix == ".csv":
        return read_scans_csv(path)
    return read_scans_jsonl(path)


def pair_separation(a: QubitConfig, b: QubitConfig) -> float:
    return math.dist(a.position, b.position)


def group_by_qubit(scans: Sequence[ChargeScan]) -> dict[int, list[ChargeScan]]:
    out: dict[int, list[ChargeScan]] = {}
    for s in scans:
        out.setdefault(s.qubit_id, []).append(s)
    return out
