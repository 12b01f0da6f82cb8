"""Run configuration and dataset manifests.

A run is configured by one YAML file.  Any key may be overridden on the
command line; precedence is flags, then the file, then built-in defaults.

Example::

    output: out/
    seed: 7
    workers: 1
    coincidence_window_s: 44
    magnitude_window_e: [0.1, 0.5]
    pair_efficiency: product
    template_candidates: 30
    lmo_threshold_kev: 150
    a_lmo: [20.0, 1.0]          # used when no spectra are given
    spectra: {SO: so.csv, SC: sc.csv}
    templates: {SC: {1: tpl_q1.json}}
    efficiency: {SO: {1: 0.83}, SC: {1: 0.83}}
    detection:
      1: {chi2_threshold: 2.0, min_segment: 10}
    schedule: {n_bias_points: 74, points_per_period: 37}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import presets
from .errors import ConfigInvalid, DataError
from .jumpfind import DetectionConfig
from .model import ChargeScan, ScanSchedule, read_scans

LIVETIME_TOLERANCE = 0.01


def _int_keys(d):
    return {int(k): v for k, v in dict(d or {}).items()}


@dataclass(frozen=True)
class RunConfig:
    output: Path = Path("out")
    seed: int = 0
    workers: int = 1
    coincidence_window_s: float = presets.COINCIDENCE_WINDOW_S
    magnitude_window_e: tuple[float, float] = presets.MAGNITUDE_WINDOW
    pair_efficiency: str = "product"
    template_candidates: int = 30
    lmo_threshold_kev: float = presets.LMO_THRESHOLD_KEV
    a_lmo: tuple[float, float] = presets.A_LMO
    excess_method: str = "subtraction"
    spectra: Mapping[str, Path] = field(default_factory=dict)
    templates: Mapping[str, Mapping[int, Path]] = field(default_factory=dict)
    efficiency: Mapping[str, Mapping[int, float]] = field(default_factory=dict)
    detection: Mapping[int, DetectionConfig] = field(default_factory=dict)
    schedule: ScanSchedule = field(default_factory=presets.schedule)

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigInvalid("workers must be >= 1")
        if not self.coincidence_window_s > 0:
            raise ConfigInvalid("coincidence_window_s must be positive")
        lo, hi = self.magnitude_window_e
        if not 0 <= lo < hi <= 0.5:
            raise ConfigInvalid("magnitude_window_e must satisfy 0 <= lo < hi <= 0.5")
        if self.pair_efficiency not in ("product", "min"):
            raise ConfigInvalid("pair_efficiency must be 'product' or 'min'")
        if self.excess_method not in ("linear", "subtraction"):
            raise ConfigInvalid("excess_method must be 'linear' or 'subtraction'")
        for tag, p in self.spectra.items():
            if not Path(p).exists():
                raise ConfigInvalid(f"spectrum for {tag} not found: {p}")
        for tag, m in self.templates.items():
            for q, p in m.items():
                if not Path(p).exists():
                    raise ConfigInvalid(f"template for {tag} Q{q} not found: {p}")

    @classmethod
    def from_mapping(cls, d: Mapping[str, Any], base_dir: Path | None = None) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        base = Path(base_dir) if base_dir else Path(".")

        def path(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        kw: dict[str, Any] = {}
        try:
            for k in ("seed", "workers", "template_candidates"):
                if k in d:
                    kw[k] = int(d[k])
            for k in ("coincidence_window_s", "lmo_threshold_kev"):
                if k in d:
                    kw[k] = float(d[k])
            for k in ("magnitude_window_e", "a_lmo"):
                if k in d:
                    kw[k] = tuple(float(x) for x in d[k])
            for k in ("pair_efficiency", "excess_method"):
                if k in d:
                    kw[k] = str(d[k])
            if "output" in d:
                kw["output"] = path(d["output"])
            if "spectra" in d:
                kw["spectra"] = {str(t): path(p) for t, p in d["spectra"].items()}
            if "templates" in d:
                kw["templates"] = {str(t): {int(q): path(p) for q, p in m.items()}
                                   for t, m in d["templates"].items()}
            if "efficiency" in d:
                kw["efficiency"] = {str(t): {int(q): float(e) for q, e in m.items()}
                                    for t, m in d["efficiency"].items()}
            if "detection" in d:
                kw["detection"] = {q: DetectionConfig.from_dict(v) for q, v in _int_keys(d["detection"]).items()}
            if "schedule" in d:
                kw["schedule"] = replace(presets.schedule(), **d["schedule"])
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"bad config value: {exc}") from exc
        return cls(**kw)

    @classmethod
    def load(cls, path, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        """Read YAML at ``path`` (may be None) and apply ``overrides`` on top."""
        d: dict[str, Any] = {}
        base = None
        if path is not None:
            path = Path(path)
            try:
                d = yaml.safe_load(path.read_text()) or {}
            except OSError as exc:
                raise ConfigInvalid(f"{path}: {exc}") from exc
            except yaml.YAMLError as exc:
                raise ConfigInvalid(f"{path}: not valid YAML ({exc})") from exc
            if not isinstance(d, dict):
                raise ConfigInvalid(f"{path}: top level must be a mapping")
            base = path.parent
        d.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(d, base)

    def detection_for(self, qubit_id: int, tag: str) -> DetectionConfig:
        if qubit_id in self.detection:
            return self.detection[qubit_id]
        if (qubit_id, tag) in presets.DETECTION:
            return presets.detection(qubit_id, tag)
        if (qubit_id, "SC") in presets.DETECTION:
            return presets.detection(qubit_id, "SC")
        raise ConfigInvalid(f"no detection config for qubit {qubit_id}")

    def efficiency_for(self, qubit_id: int, tag: str) -> float:
        if qubit_id in self.efficiency.get(tag, {}):
            return self.efficiency[tag][qubit_id]
        if (qubit_id, tag) in presets.EFFICIENCY:
            return presets.EFFICIENCY[(qubit_id, tag)]
        raise ConfigInvalid(f"no efficiency for qubit {qubit_id} in dataset {tag}")


def scans_livetime_hours(scans) -> float:
    """Sum of scan durations, taking each concurrent multi-qubit sweep once."""
    ends: dict[float, float] = {}
    for s in scans:
        if len(s):
            ends[s.start_time] = max(ends.get(s.start_time, s.start_time), float(s.t[-1]))
    return sum(e - t0 for t0, e in ends.items()) / 3600.0


@dataclass(frozen=True)
class DatasetManifest:
    tag: str
    scan_files: tuple[Path, ...]
    livetime_hours: float
    qubit_ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "scan_files", tuple(Path(p) for p in self.scan_files))
        object.__setattr__(self, "qubit_ids", tuple(sorted(int(q) for q in self.qubit_ids)))
        if not self.tag:
            raise DataError("manifest needs a dataset tag")
        if not self.scan_files:
            raise DataError(f"manifest {self.tag}: no scan files")
        if not self.livetime_hours > 0:
            raise DataError(f"manifest {self.tag}: livetime must be positive")

    def to_dict(self, relative_to: Path | None = None) -> dict:
        def rel(p):
            if relative_to is not None:
                try:
                    return str(Path(p).relative_to(relative_to))
                except ValueError:
                    pass
            return str(p)

        return {"schema_version": 1, "tag": self.tag, "scan_files": [rel(p) for p in self.scan_files],
                "livetime_hours": self.livetime_hours, "qubit_ids": list(self.qubit_ids)}

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(path.parent), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except OSError as exc:
            raise DataError(f"{path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from exc
        try:
            files = [p if Path(p).is_absolute() else path.parent / p for p in d["scan_files"]]
            return cls(str(d["tag"]), tuple(files), float(d["livetime_hours"]), tuple(d["qubit_ids"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad manifest ({exc})") from exc

    def read_scans(self) -> list[ChargeScan]:
        """Load every scan file and check qubit ids and livetime accounting."""
        scans = []
        for p in self.scan_files:
            if not p.exists():
                raise DataError(f"manifest {self.tag}: scan file not found: {p}")
            scans.extend(read_scans(p))
        found = {s.qubit_id for s in scans}
        extra = found - set(self.qubit_ids)
        if extra:
            raise DataError(f"manifest {self.tag}: scans for undeclared qubits {sorted(extra)}")
        live = scans_livetime_hours(scans)
        if abs(live - self.livetime_hours) > LIVETIME_TOLERANCE * self.livetime_hours:
            raise DataError(
                f"manifest {self.tag}: declared livetime {self.livetime_hours:.3f} h but scans "
                f"cover {live:.3f} h"
            )
        return scans
