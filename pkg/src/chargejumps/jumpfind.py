"""Rolling reduced-chi2 charge-jump detector.

A scan is walked point by point.  For every prefix of the current segment the
template is fitted over a grid of phase offsets and the minimum reduced chi2
is tracked.  When it exceeds the per-qubit threshold a jump is declared at
that point, which then opens a new segment.
"""
from __future__ import annotations

import csv
import functools
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import kernels
from .errors import EmptySegment, GridMismatch, TemplateMissing
from .model import ChargeScan, wrap_charge
from .template import Template, prediction_table, template_predict

DEFAULT_THETA_STEP = 1.0 / 370


def theta_grid(step: float = DEFAULT_THETA_STEP) -> np.ndarray:
    """Trial phases on ``(-0.5, 0.5]`` ordered by increasing ``|theta|``.

    Positive offsets precede negative ones of equal size, so taking the first
    minimum breaks ties toward the smallest ``|theta|``.  The returned array
    is shared and read-only.
    """
    return _theta_grid(float(step))


@functools.lru_cache(maxsize=8)
def _theta_grid(step):
    k = int(np.floor(0.5 / step + 1e-9))
    out = [0.0]
    for j in range(1, k + 1):
        out.append(j * step)
        if j * step < 0.5 - 1e-12:
            out.append(-j * step)
    grid = np.array(out)
    grid.setflags(write=False)
    return grid


@dataclass(frozen=True)
class DetectionConfig:
    chi2_threshold: float = 4.0
    theta_step: float = DEFAULT_THETA_STEP
    warmup_points: int = 20
    min_jump: float = 0.1
    max_jump: float = 0.5
    min_segment: int = 3
    refine: bool = True

    def __post_init__(self):
        if not self.chi2_threshold > 1:
            raise ValueError("chi2_threshold must exceed 1")
        if not 0 < self.theta_step <= 0.03:
            raise ValueError("theta_step must be in (0, 0.03]")
        if not 0 < self.min_jump < self.max_jump <= 0.5:
            raise ValueError("need 0 < min_jump < max_jump <= 0.5")
        if self.min_segment < 1:
            raise ValueError("min_segment must be >= 1")

    @classmethod
    def from_dict(cls, d) -> "DetectionConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in dict(d).items() if k in known})


@dataclass(frozen=True)
class SegmentFit:
    start_index: int
    end_index: int  # inclusive
    theta_min: float
    chi2_min: float

    @property
    def n(self) -> int:
        return self.end_index - self.start_index + 1


@dataclass(frozen=True)
class JumpEvent:
    qubit_id: int
    time: float
    delta_q: float
    theta_before: float
    theta_after: float
    point_index: int
    chi2_at_trigger: float
    scan_id: str = ""
    flags: tuple[str, ...] = field(default_factory=tuple)

    @property
    def magnitude(self) -> float:
        return abs(self.delta_q)

    @property
    def in_window(self) -> bool:
        return not ({"below-threshold", "above-ceiling"} & set(self.flags))


def jump_magnitude(theta_before: float, theta_after: float) -> float:
    """Signed jump between two fitted phases, wrapped to ``(-0.5, 0.5]``."""
    return wrap_charge(theta_after - theta_before)


def _chi2_at(x, bias, template, theta):
    pred, sig = template_predict(template, theta, bias)
    return float(np.mean((x - pred) ** 2 * (1.0 / sig**2)))


def best_fit_phase(x, bias, template: Template, theta_step: float = DEFAULT_THETA_STEP,
                   refine: bool = True, start_index: int = 0, table=None) -> SegmentFit:
    """Phase minimising the reduced chi2 of ``x`` against ``template``.

    Grid search over ``theta_grid(theta_step)`` followed, when ``refine``, by
    a bounded scalar minimisation within one grid step that is accepted only
    if it lowers chi2.  ``table`` optionally supplies the ``(pred, weight)``
    rows for ``bias`` from ``prediction_table`` so they are not rebuilt.
    """
    x = np.asarray(x, dtype=float)
    bias = np.asarray(bias, dtype=float)
    if x.size == 0:
        raise EmptySegment("cannot fit an empty segment")
    thetas = theta_grid(theta_step)
    if table is None:
        pred, sig = template_predict(template, thetas, bias)
        weight = 1.0 / sig**2
    else:
        pred, weight = table
    chi = np.mean((x[:, None] - pred) ** 2 * weight, axis=0)
    j = int(np.argmin(chi))
    theta, best = float(thetas[j]), float(chi[j])
    if refine and best > 0:
        res = minimize_scalar(
            lambda t: _chi2_at(x, bias, template, t),
            bounds=(theta - theta_step, theta + theta_step), method="bounded",
            options={"xatol": theta_step * 1e-3},
        )
        if res.fun < best:
            theta, best = wrap_charge(res.x), float(res.fun)
    return SegmentFit(start_index, start_index + x.size - 1, theta, best)


def _check_grid(scan: ChargeScan, template: Template | None):
    if template is None:
        raise TemplateMissing(f"no template for qubit {scan.qubit_id}")
    if len(scan) < 1:
        raise EmptySegment(f"scan {scan.scan_id!r} has no points")
    step = np.diff(scan.bias)
    if step.size:
        period_step = 1.0 / len(template)
        if not np.allclose(np.abs(step), period_step, rtol=1e-6, atol=1e-9):
            raise GridMismatch(
                f"scan {scan.scan_id!r} bias step {np.abs(step).mean():.5f}e does not match "
                f"template period grid {period_step:.5f}e"
            )


@dataclass
class _Segment:
    start: int
    end: int  # inclusive, excludes the trigger point
    chi2: np.ndarray  # per prefix, including the trigger point if any
    argmin: np.ndarray
    trigger_chi2: float | None


def _walk(scan: ChargeScan, template: Template, cfg: DetectionConfig,
          threshold: float | None = None) -> tuple[list[_Segment], np.ndarray]:
    thetas = theta_grid(cfg.theta_step)
    pred, weight = prediction_table(template, scan.bias, thetas)
    thr = cfg.chi2_threshold if threshold is None else threshold
    x = scan.p1
    segs, start = [], 0
    while start < len(x):
        trig, chi, arg = kernels.walk_segment(x, pred, weight, start, thr, cfg.min_segment)
        if trig < 0:
            segs.append(_Segment(start, len(x) - 1, chi, arg, None))
            break
        segs.append(_Segment(start, trig - 1, chi, arg, float(chi[-1])))
        start = trig
    return segs, thetas


def rolling_chi2_scan(scan: ChargeScan, template: Template,
                      cfg: DetectionConfig = DetectionConfig(),
                      reset: bool = True) -> list[list[SegmentFit]]:
    """Prefix fits for every segment of the scan.

    Returns one trajectory per segment; entry ``n-1`` is the grid-minimum fit
    of the first ``n`` points of that segment.  The trajectory of a triggered
    segment ends with the trigger point itself.  With ``reset=False`` the
    whole scan is treated as one segment.
    """
    _check_grid(scan, template)
    segs, thetas = _walk(scan, template, cfg, None if reset else np.inf)
    return [
        [SegmentFit(seg.start, seg.start + k, float(thetas[a]), float(c))
         for k, (c, a) in enumerate(zip(seg.chi2, seg.argmin))]
        for seg in segs
    ]


def find_jumps(scan: ChargeScan, template: Template | None,
               cfg: DetectionConfig = DetectionConfig()) -> list[JumpEvent]:
    """Detect charge jumps in one scan.

    Each trigger point becomes a ``JumpEvent`` stamped with that point's
    timestamp.  ``delta_q`` is the wrapped difference between the refined
    phases of the segments on either side.  Events are always returned; flags
    mark magnitudes outside ``[min_jump, max_jump]`` (``below-threshold``,
    ``above-ceiling``), triggers inside the warm-up region (``warmup``) and
    trailing segments too short to fix the new phase (``short-segment``).
    """
    _check_grid(scan, template)
    segs, thetas = _walk(scan, template, cfg)
    if len(segs) == 1:
        return []
    pred, weight = prediction_table(template, scan.bias, thetas)
    fits = [
        best_fit_phase(scan.p1[s.start:s.end + 1], scan.bias[s.start:s.end + 1], template,
                       theta_step=cfg.theta_step, refine=cfg.refine, start_index=s.start,
                       table=(pred[s.start:s.end + 1], weight[s.start:s.end + 1]))
        for s in segs
    ]
    events = []
    for before, after, seg, nxt in zip(fits, fits[1:], segs, segs[1:]):
        dq = jump_magnitude(before.theta_min, after.theta_min)
        flags = []
        if abs(dq) < cfg.min_jump:
            flags.append("below-threshold")
        if abs(dq) > cfg.max_jump:
            flags.append("above-ceiling")
        if nxt.start < cfg.warmup_points:
            flags.append("warmup")
        if after.n < cfg.min_segment:
            flags.append("short-segment")
        events.append(JumpEvent(
            qubit_id=scan.qubit_id,
            time=float(scan.t[nxt.start]),
            delta_q=dq,
            theta_before=before.theta_min,
            theta_after=after.theta_min,
            point_index=nxt.start,
            chi2_at_trigger=seg.trigger_chi2,
            scan_id=scan.scan_id,
            flags=tuple(flags),
        ))
    return events


def find_jumps_many(scans: Sequence[ChargeScan], templates, cfgs, workers: int = 1) -> list[JumpEvent]:
    """Run ``find_jumps`` over many scans.

    ``templates`` and ``cfgs`` map qubit id to template / config (a single
    ``DetectionConfig`` applies to all qubits).  Results keep scan order, so
    parallel and serial runs agree.
    """
    if isinstance(cfgs, DetectionConfig):
        cfgs = {s.qubit_id: cfgs for s in scans}
    jobs = [(s, templates.get(s.qubit_id), cfgs.get(s.qubit_id, DetectionConfig())) for s in scans]
    if workers <= 1:
        results = [find_jumps(*job) for job in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_find_jumps_job, jobs, chunksize=16))
    return [e for evs in results for e in evs]


def _find_jumps_job(job):
    return find_jumps(*job)


EVENT_FIELDS = ("scan_id", "qubit_id", "t_s", "delta_q_e", "theta_before_e", "theta_after_e",
                "point_index", "chi2_at_trigger", "flags")


def _event_row(e: JumpEvent) -> dict:
    return {
        "scan_id": e.scan_id, "qubit_id": e.qubit_id, "t_s": e.time, "delta_q_e": e.delta_q,
        "theta_before_e": e.theta_before, "theta_after_e": e.theta_after,
        "point_index": e.point_index, "chi2_at_trigger": e.chi2_at_trigger,
        "flags": ";".join(e.flags),
    }


def write_events_csv(events: Iterable[JumpEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=EVENT_FIELDS)
        w.writeheader()
        for e in events:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in _event_row(e).items()})


def write_events_jsonl(events: Iterable[JumpEvent], path) -> None:
    with open(path, "w") as fh:
        for e in events:
            fh.write(json.dumps(_event_row(e), sort_keys=True) + "\n")


def _event_from_row(r) -> JumpEvent:
    flags = r["flags"]
    if isinstance(flags, str):
        flags = tuple(f for f in flags.split(";") if f)
    return JumpEvent(
        qubit_id=int(r["qubit_id"]), time=float(r["t_s"]), delta_q=float(r["delta_q_e"]),
        theta_before=float(r["theta_before_e"]), theta_after=float(r["theta_after_e"]),
        point_index=int(r["point_index"]), chi2_at_trigger=float(r["chi2_at_trigger"]),
        scan_id=str(r["scan_id"]), flags=tuple(flags),
    )


def read_events(path) -> list[JumpEvent]:
    path = str(path)
    with open(path, newline="") as fh:
        if path.endswith(".csv"):
            return [_event_from_row(r) for r in csv.DictReader(fh)]
        return [_event_from_row(json.loads(line)) for line in fh if line.strip()]


def event_as_dict(e: JumpEvent) -> dict:
    return asdict(e)
