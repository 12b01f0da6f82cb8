"""Data-driven one-period reference curves built from jump-free scans."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, GridMismatch, ScreenFailed, TooFewScans
from .model import ChargeScan, CurveModel, wrap_charge

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_SIGMA_FLOOR = 0.01


@dataclass(frozen=True, eq=False)
class Template:
    """One period of mean P1 and per-point spread versus offset charge.

    ``phase`` is sorted on ``[0, 1)``.  ``noise_sigma`` is the pooled
    per-point residual spread of the source scans, kept with the template so
    synthetic data can reuse the measured noise level.
    """

    qubit_id: int
    phase: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray
    n_source_scans: int
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    shield_config_tag: str = ""
    noise_sigma: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        phase = np.mod(np.asarray(self.phase, dtype=float), 1.0)
        order = np.argsort(phase, kind="stable")
        mean = np.asarray(self.mean, dtype=float)[order]
        sigma = np.maximum(np.asarray(self.sigma, dtype=float)[order], self.sigma_floor)
        phase = phase[order]
        for name, a in (("phase", phase), ("mean", mean), ("sigma", sigma)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (phase.shape == mean.shape == sigma.shape) or phase.size < 2:
            raise DataError("template arrays must be equal length >= 2")
        if np.any(np.diff(phase) <= 0):
            raise DataError("template phases must be distinct")
        if self.sigma_floor <= 0:
            raise DataError("sigma_floor must be positive")
        if self.n_source_scans < 1:
            raise DataError("n_source_scans must be >= 1")
        if np.any((mean < 0) | (mean > 1)):
            raise DataError("template mean outside [0, 1]")

    def __len__(self):
        return self.phase.size

    @classmethod
    def from_model(cls, model: CurveModel, n_points: int = 370, sigma: float = 0.05,
                   qubit_id: int = 0, shield_config_tag: str = "analytic") -> "Template":
        """Dense template sampled from the analytic curve with constant spread."""
        phase = np.arange(n_points) / n_points
        return cls(
            qubit_id=qubit_id, phase=phase, mean=model(phase),
            sigma=np.full(n_points, sigma), n_source_scans=1,
            sigma_floor=min(sigma, DEFAULT_SIGMA_FLOOR) if sigma > 0 else DEFAULT_SIGMA_FLOOR,
            shield_config_tag=shield_config_tag,
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "qubit_id": self.qubit_id,
            "shield_config_tag": self.shield_config_tag,
            "sigma_floor": self.sigma_floor,
            "n_source_scans": self.n_source_scans,
            "noise_sigma": self.noise_sigma,
            "period_points": [
                [float(u), float(m), float(s)] for u, m, s in zip(self.phase, self.mean, self.sigma)
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "Template":
        if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise DataError(f"unsupported template schema_version {d.get('schema_version')}")
        pts = np.asarray(d["period_points"], dtype=float).reshape(-1, 3)
        return cls(
            qubit_id=int(d["qubit_id"]), phase=pts[:, 0], mean=pts[:, 1], sigma=pts[:, 2],
            n_source_scans=int(d.get("n_source_scans", 2)),
            sigma_floor=float(d.get("sigma_floor", DEFAULT_SIGMA_FLOOR)),
            shield_config_tag=str(d.get("shield_config_tag", "")),
            noise_sigma=d.get("noise_sigma"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "Template":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _interp(t: Template, u):
    u = np.mod(u, 1.0)
    return (np.interp(u, t.phase, t.mean, period=1.0),
            np.interp(u, t.phase, t.sigma, period=1.0))


def template_predict(t: Template, theta, grid):
    """Template mean and spread at bias ``grid`` for phase offset ``theta``.

    Linear interpolation between period points, periodic with period 1.
    ``theta`` may be scalar or an array; for an array the result has shape
    ``(len(grid), len(theta))``.
    """
    grid = np.asarray(grid, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0:
        return _interp(t, grid + float(theta))
    return _interp(t, grid[:, None] + theta[None, :])


def prediction_table(t: Template, grid, thetas):
    """Cached ``(pred, weight)`` tables of shape (len(grid), len(thetas)).

    ``weight`` is the inverse variance ``1 / sigma**2``.
    """
    grid = np.ascontiguousarray(grid, dtype=float)
    thetas = np.ascontiguousarray(thetas, dtype=float)
    key = (grid.tobytes(), thetas.tobytes())
    hit = t._cache.get(key)
    if hit is None:
        pred, sig = template_predict(t, thetas, grid)
        pred = np.ascontiguousarray(pred)
        weight = np.ascontiguousarray(1.0 / sig**2)
        pred.setflags(write=False)
        weight.setflags(write=False)
        if len(t._cache) > 32:
            t._cache.clear()
        hit = t._cache[key] = (pred, weight)
    return hit


def stitch_template(t: Template, n_points: int, start: int = 0):
    """Tile the period points to ``n_points`` samples: ``(mean, sigma)``."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    idx = (start + np.arange(n_points)) % len(t)
    return t.mean[idx].copy(), t.sigma[idx].copy()


def _period_slices(scan: ChargeScan, points_per_period: int):
    n_full = len(scan) // points_per_period
    return [slice(k * points_per_period, (k + 1) * points_per_period) for k in range(n_full)]


def _screen(scan, reference, points_per_period, max_internal_jump, theta_step):
    """Fit the phase of half-period chunks; return (theta, reason-or-None)."""
    from .jumpfind import best_fit_phase

    full = best_fit_phase(scan.p1, scan.bias, reference, theta_step=theta_step)
    chunk = max(points_per_period // 2, 4)
    worst = 0.0
    for s in range(0, len(scan) - chunk + 1, chunk):
        part = best_fit_phase(scan.p1[s:s + chunk], scan.bias[s:s + chunk], reference,
                              theta_step=theta_step)
        worst = max(worst, abs(wrap_charge(part.theta_min - full.theta_min)))
    if worst > max_internal_jump:
        return full.theta_min, f"phase wanders by {worst:.3f}e > {max_internal_jump}e"
    return full.theta_min, None


def build_template(
    scans: Sequence[ChargeScan],
    max_internal_jump: float = 0.03,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
    bootstrap: CurveModel | Template | None = None,
    points_per_period: int | None = None,
    shield_config_tag: str = "",
    theta_step: float = 1.0 / 370,
    strict: bool = False,
) -> Template:
    """Average phase-registered jump-free scans into a one-period template.

    Every scan is registered against the same bootstrap reference (the
    analytic curve unless given), so the result does not depend on scan
    order.  The template frame is anchored at the circular mean of the
    registered phases; each full period of each scan contributes one sample
    per template point and ``sigma`` is the sample standard deviation of those
    samples, floored at ``sigma_floor``.

    Scans whose half-period chunks disagree in phase by more than
    ``max_internal_jump`` are dropped (``strict=True`` raises ``ScreenFailed``
    instead).
    """
    scans = list(scans)
    if len(scans) < 2:
        raise TooFewScans(f"need >= 2 scans to build a template, got {len(scans)}")
    qids = {s.qubit_id for s in scans}
    if len(qids) != 1:
        raise DataError(f"template scans mix qubits {sorted(qids)}")
    grid = scans[0].bias
    for s in scans[1:]:
        if s.bias.shape != grid.shape or not np.allclose(s.bias, grid, atol=1e-9):
            raise GridMismatch(f"scan {s.scan_id!r} bias grid differs from {scans[0].scan_id!r}")
    if points_per_period is None:
        step = float(np.median(np.abs(np.diff(grid))))
        points_per_period = int(round(1.0 / step))
    if len(grid) < points_per_period:
        raise GridMismatch("scans shorter than one period")

    if bootstrap is None:
        bootstrap = CurveModel()
    if isinstance(bootstrap, CurveModel):
        bootstrap = Template.from_model(bootstrap, sigma=0.05)

    thetas, rejected = [], {}
    for i, s in enumerate(scans):
        theta, reason = _screen(s, bootstrap, points_per_period, max_internal_jump, theta_step)
        if reason:
            rejected[s.scan_id or f"#{i}"] = reason
        thetas.append(theta)
    keep = [i for i, s in enumerate(scans) if (s.scan_id or f"#{i}") not in rejected]
    if rejected:
        if strict:
            raise ScreenFailed(f"{len(rejected)} scan(s) failed the jump screen", rejected)
        for sid, why in sorted(rejected.items()):
            log.info("template source %s rejected: %s", sid, why)
    if len(keep) < 2:
        raise TooFewScans(f"only {len(keep)} admissible scan(s); rejected: {rejected}")

    kept_theta = np.array([thetas[i] for i in keep])
    angle = 2 * np.pi * np.sort(kept_theta)
    anchor = wrap_charge(np.arctan2(np.sin(angle).sum(), np.cos(angle).sum()) / (2 * np.pi))
    base = grid[:points_per_period] - grid[0]
    samples, shifts = [], []
    for i in keep:
        shift = wrap_charge(thetas[i] - anchor)
        for sl in _period_slices(scans[i], points_per_period):
            samples.append(np.interp(base - shift, base, scans[i].p1[sl], period=1.0))
            shifts.append(shift)
    # column-wise sort makes the reductions independent of scan order
    mean = np.sort(np.array(samples), axis=0).mean(axis=0)

    # Spread from residuals at each scan's own bias points: interpolating the
    # noisy samples onto the template frame would average neighbours and
    # understate the per-point noise.
    sq = np.zeros(points_per_period)
    cnt = np.zeros(points_per_period)
    for i in keep:
        shift = wrap_charge(thetas[i] - anchor)
        for sl in _period_slices(scans[i], points_per_period):
            r = scans[i].p1[sl] - np.interp(base + shift, base, mean, period=1.0)
            j = np.rint(np.mod(base + shift, 1.0) * points_per_period).astype(int) % points_per_period
            np.add.at(sq, j, r**2)
            np.add.at(cnt, j, 1.0)
    n_samples = len(samples)
    dof_scale = n_samples / (n_samples - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        spread = np.sqrt(dof_scale * sq / cnt)
    spread = np.where(cnt > 0, spread, np.sqrt(dof_scale * sq.sum() / cnt.sum()))
    noise = float(np.sqrt(dof_scale * sq.sum() / cnt.sum()))
    return Template(
        qubit_id=scans[0].qubit_id,
        phase=grid[:points_per_period] + anchor,
        mean=np.clip(mean, 0.0, 1.0),
        sigma=spread,
        n_source_scans=len(keep),
        sigma_floor=sigma_floor,
        shield_config_tag=shield_config_tag,
        noise_sigma=noise,
    )
