"""Synthetic scans, jump injection and the Monte-Carlo efficiency harness."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigInvalid
from .jumpfind import DetectionConfig, find_jumps
from .model import ChargeScan, CurveModel, ScanSchedule, wrap_charge
from .template import Template, template_predict

EFF_WINDOW = (0.1, 0.5)
N_SIZE_BINS = 15
N_REPLICAS = 75


@dataclass(frozen=True)
class NoiseModel:
    sigma_p1: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.sigma_p1 < 0:
            raise ValueError("sigma_p1 must be >= 0")


@dataclass(frozen=True)
class InjectionPlan:
    """Poisson jump injection: ``rate`` in mHz, sizes uniform on ``size_range``."""

    rate: float = 1.1
    size_range: tuple[float, float] = (0.01, 0.5)
    n_scans: int = 1600

    def __post_init__(self):
        lo, hi = self.size_range
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if not 0 < lo <= hi <= 0.5:
            raise ValueError("size_range must lie within (0, 0.5]")
        if self.n_scans < 1:
            raise ValueError("n_scans must be >= 1")

    def draw_sizes(self, rng, n):
        sizes = rng.uniform(*self.size_range, size=n)
        signs = rng.choice((-1.0, 1.0), size=n)
        return sizes * signs


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _clean_curve(reference, bias, phase):
    if isinstance(reference, Template):
        return template_predict(reference, 0.0, np.asarray(bias) + phase)[0]
    return reference(np.asarray(bias) + phase)


def generate_scan(reference: Template | CurveModel, schedule: ScanSchedule, noise: NoiseModel,
                  true_theta: float = 0.0, qubit_id: int | None = None, start_time: float = 0.0,
                  jumps: Sequence[tuple[int, float]] = (), rng=None, scan_id: str = "") -> ChargeScan:
    """Sample a scan from a template or analytic curve.

    The underlying phase starts at ``true_theta`` and steps by ``dq`` at every
    ``(index, dq)`` in ``jumps``.  Gaussian noise of width ``noise.sigma_p1``
    is added and P1 clipped to ``[0, 1]``.  ``rng`` defaults to a generator
    seeded from ``noise.seed``.
    """
    if qubit_id is None:
        if not isinstance(reference, Template):
            raise ConfigInvalid("qubit_id is required with an analytic reference")
        qubit_id = reference.qubit_id
    rng = _rng(noise.seed if rng is None else rng)
    bias = schedule.bias_grid()
    phase = np.full(bias.size, float(true_theta))
    for idx, dq in jumps:
        phase[idx:] += dq
    clean = _clean_curve(reference, bias, phase)
    p1 = clean + rng.normal(0.0, noise.sigma_p1, size=bias.size) if noise.sigma_p1 > 0 else clean
    return ChargeScan(
        qubit_id=qubit_id, start_time=start_time, bias=bias, p1=np.clip(p1, 0.0, 1.0),
        t=schedule.timestamps(qubit_id, start_time), scan_id=scan_id,
        meta={"true_theta": float(true_theta), "sigma_p1": noise.sigma_p1},
    )


def draw_jump_times(rate_mhz: float, t0: float, t1: float, rng) -> np.ndarray:
    """Poisson arrival times in ``(t0, t1]`` for a rate in mHz."""
    n = rng.poisson(rate_mhz * 1e-3 * (t1 - t0))
    return np.sort(t0 + (t1 - t0) * (1.0 - rng.random(n)))


def draw_injections(plan: InjectionPlan, timestamps, rng) -> list[tuple[int, float]]:
    """Jumps over the observable span of one scan as ``(index, dq)``.

    A jump at time ``tau`` shifts every point whose averaging window ends after
    ``tau``.  Jumps landing on the same point are merged so that each entry is
    one discontinuity of the phase track.
    """
    t = np.asarray(timestamps)
    times = draw_jump_times(plan.rate, t[0], t[-1], rng)
    sizes = plan.draw_sizes(rng, times.size)
    merged: dict[int, float] = {}
    for tau, dq in zip(times, sizes):
        idx = int(np.searchsorted(t, tau, side="left"))
        merged[idx] = merged.get(idx, 0.0) + float(dq)
    return sorted(merged.items())


def inject_jumps(scan: ChargeScan, plan: InjectionPlan, seed, reference: Template | CurveModel,
                 true_theta: float | None = None):
    """Add Poisson-timed phase steps to an existing scan.

    The clean curve at the scan's underlying phase (``true_theta``, or the
    ``true_theta`` recorded in ``scan.meta``) is replaced by the stepped
    curve, keeping the scan's noise realisation.  Returns the new scan and
    the injected ``(index, dq)`` list.
    """
    rng = _rng(seed)
    if true_theta is None:
        true_theta = scan.meta.get("true_theta", 0.0)
    injected = draw_injections(plan, scan.t, rng)
    if not injected:
        return scan, []
    base = np.full(len(scan), float(true_theta))
    stepped = base.copy()
    for idx, dq in injected:
        stepped[idx:] += dq
    delta = _clean_curve(reference, scan.bias, stepped) - _clean_curve(reference, scan.bias, base)
    new = scan.with_p1(np.clip(scan.p1 + delta, 0.0, 1.0), injected=[[i, d] for i, d in injected])
    return new, injected


def phase_track(true_theta: float, n_points: int, injected) -> np.ndarray:
    phase = np.full(n_points, float(true_theta))
    for idx, dq in injected:
        phase[idx:] += dq
    return phase


@dataclass
class EfficiencyReport:
    qubit_id: int
    efficiency: float
    stat_error: float
    sys_spread: float
    n_injected: int
    n_found: int
    config_tag: str = ""
    bin_edges: list = field(default_factory=list)
    bin_efficiency: list = field(default_factory=list)
    bin_counts: list = field(default_factory=list)
    spread_raw: float = float("nan")
    dq_bias: float = float("nan")
    n_scans: int = 0
    truth: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency outside [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("truth")
        return d

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def write_truth_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("scan_id", "index", "delta_q_injected_e", "matched"))
            for rec in self.truth:
                w.writerow((rec["scan_id"], rec["index"], repr(rec["delta_q"]), rec["matched"]))


MATCH_EARLY = 2
MATCH_LATE = 8


def match_detections(injected, events, early: int = MATCH_EARLY, late: int = MATCH_LATE,
                     dq_window: float = 0.05):
    """Greedy one-to-one truth matching within one scan.

    Returns a list of matched event (or None) per injection.  An event matches
    when its trigger index lies between ``early`` points before and ``late``
    points after the injected index and its wrapped ``delta_q`` is within
    ``dq_window`` of the injection; the nearest index wins.  The late side is
    wider because the cumulative chi2 can only rise after the step, and slowly
    so while the scan sits on a flat stretch of the curve.
    """
    used = set()
    out = []
    for idx, dq in injected:
        best = None
        for k, e in enumerate(events):
            if k in used:
                continue
            lag = e.point_index - idx
            di = abs(lag)
            if -early <= lag <= late and abs(wrap_charge(e.delta_q - dq)) <= dq_window:
                if best is None or di < best[0]:
                    best = (di, k)
        if best is None:
            out.append(None)
        else:
            used.add(best[1])
            out.append(events[best[1]])
    return out


def _mc_scan(args):
    template, schedule, noise, plan, cfg, qubit_id, k = args
    rng = np.random.default_rng([noise.seed, k])
    theta0 = wrap_charge(rng.uniform(-0.5, 0.5))
    ts = schedule.timestamps(qubit_id, k * schedule.scan_duration)
    injected = draw_injections(plan, ts, rng)
    scan = generate_scan(template, schedule, noise, theta0, qubit_id=qubit_id,
                         start_time=k * schedule.scan_duration, jumps=injected, rng=rng,
                         scan_id=f"mc{k:05d}")
    events = find_jumps(scan, template, cfg)
    matches = match_detections(injected, events)
    return [
        {"scan": k, "scan_id": scan.scan_id, "index": idx, "delta_q": dq, "matched": m is not None,
         "detected_dq": (m.delta_q if m is not None else None)}
        for (idx, dq), m in zip(injected, matches)
    ]


def _systematic_spread(truth, n_scans, window, n_bins=N_SIZE_BINS, n_rep=N_REPLICAS):
    """Size-dependent efficiency spread from a (replica set, size bin) table.

    Injections are tallied in ``n_rep`` consecutive replica sets of scans and
    ``n_bins`` equal-width size bins spanning the efficiency ``window``.  Each bin's efficiency is pooled over the
    replica sets; its sampling variance comes from a delete-one-replica
    jackknife.

    The bin efficiencies are smoothed with a quadratic in size before the
    spread is taken, and the sampling noise that survives the smoothing is
    subtracted in quadrature.  A flat truth then reads near zero while real
    trends in size are kept.  ``raw`` is the plain between-bin standard
    deviation with noise left in.
    """
    edges = np.linspace(window[0], window[1], n_bins + 1)
    rep_size = max(1, round(n_scans / n_rep))
    found = np.zeros((n_rep, n_bins))
    inj = np.zeros((n_rep, n_bins))
    for rec in truth:
        a = abs(wrap_charge(rec["delta_q"]))
        if not window[0] <= a <= window[1]:
            continue
        r = min(rec["scan"] // rep_size, n_rep - 1)
        b = min(int(np.searchsorted(edges, a, side="right")) - 1, n_bins - 1)
        inj[r, b] += 1
        found[r, b] += rec["matched"]
    tot_f, tot_i = found.sum(axis=0), inj.sum(axis=0)
    means = np.full(n_bins, np.nan)
    jk_var = np.full(n_bins, np.nan)
    for b in range(n_bins):
        if tot_i[b] < 2:
            continue
        means[b] = tot_f[b] / tot_i[b]
        rows = np.flatnonzero(inj[:, b] > 0)
        if rows.size < 2:
            continue
        loo = (tot_f[b] - found[rows, b]) / (tot_i[b] - inj[rows, b])
        # replicas without entries leave the estimate unchanged
        dev = np.concatenate([loo - means[b], np.zeros(n_rep - rows.size)])
        jk_var[b] = (n_rep - 1) / n_rep * np.sum((dev - dev.mean()) ** 2)
    ok = np.isfinite(means) & np.isfinite(jk_var)
    counts = [int(c) for c in tot_i]
    if ok.sum() < 2:
        return 0.0, 0.0, edges, means, counts
    raw = float(means[ok].std(ddof=1))
    return _smoothed_spread(0.5 * (edges[:-1] + edges[1:])[ok], means[ok], jk_var[ok]), raw, edges, means, counts


def _smoothed_spread(centres, p, v, degree=2):
    """Noise-corrected std of a polynomial fit to bin efficiencies ``p``."""
    nb = p.size
    mid, half = 0.5 * (centres[0] + centres[-1]), 0.5 * (centres[-1] - centres[0])
    x = np.vander((centres - mid) / (half or 1.0), min(degree, nb - 1) + 1)
    m = (np.eye(nb) - 1.0 / nb) @ x @ np.linalg.pinv(x)
    fit = m @ p
    noise = np.trace(m @ np.diag(v) @ m.T) / (nb - 1)
    return float(math.sqrt(max(fit @ fit / (nb - 1) - noise, 0.0)))


def run_efficiency_mc(template: Template, schedule: ScanSchedule, noise: NoiseModel,
                      plan: InjectionPlan = InjectionPlan(), cfg: DetectionConfig = DetectionConfig(),
                      qubit_id: int | None = None, config_tag: str = "",
                      window: tuple[float, float] = EFF_WINDOW, workers: int = 1) -> EfficiencyReport:
    """Inject Poisson jumps into template-based scans and measure recovery.

    Scan ``k`` draws from ``default_rng([noise.seed, k])`` so the outcome is
    the same for any worker count.
    """
    if template is None:
        raise ConfigInvalid("efficiency MC needs a template")
    if qubit_id is None:
        qubit_id = template.qubit_id
    if qubit_id not in schedule.qubit_order:
        raise ConfigInvalid(f"qubit {qubit_id} not in schedule {schedule.qubit_order}")
    jobs = [(template, schedule, noise, plan, cfg, qubit_id, k) for k in range(plan.n_scans)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_scan = list(pool.map(_mc_scan, jobs, chunksize=32))
    else:
        per_scan = [_mc_scan(j) for j in jobs]
    truth = [rec for recs in per_scan for rec in recs]
    sel = [r for r in truth if window[0] <= abs(wrap_charge(r["delta_q"])) <= window[1]]
    n_inj = len(sel)
    n_found = sum(r["matched"] for r in sel)
    eff = n_found / n_inj if n_inj else 0.0
    stat = math.sqrt(eff * (1 - eff) / n_inj) if n_inj else float("nan")
    spread, raw, edges, bin_eff, counts = _systematic_spread(truth, plan.n_scans, window)
    diffs = [wrap_charge(r["detected_dq"] - r["delta_q"]) for r in sel if r["matched"]]
    return EfficiencyReport(
        qubit_id=qubit_id, efficiency=eff, stat_error=stat, sys_spread=spread,
        n_injected=n_inj, n_found=n_found, config_tag=config_tag,
        bin_edges=[float(e) for e in edges],
        bin_efficiency=[None if not np.isfinite(v) else float(v) for v in bin_eff],
        bin_counts=counts, spread_raw=raw,
        dq_bias=float(np.mean(diffs)) if diffs else float("nan"),
        n_scans=plan.n_scans, truth=truth,
    )


def count_false_jumps(template: Template, schedule: ScanSchedule, noise: NoiseModel,
                      cfg: DetectionConfig, hours: float = 400.0, min_jump: float = 0.1,
                      qubit_id: int | None = None) -> int:
    """Jumps with ``|dq| >= min_jump`` reported on ``hours`` of jump-free scans."""
    qubit_id = template.qubit_id if qubit_id is None else qubit_id
    n_scans = int(math.ceil(hours * 3600.0 / schedule.scan_duration))
    n = 0
    for k in range(n_scans):
        rng = np.random.default_rng([noise.seed, k])
        scan = generate_scan(template, schedule, noise, wrap_charge(rng.uniform(-0.5, 0.5)),
                             qubit_id=qubit_id, rng=rng)
        n += sum(abs(e.delta_q) >= min_jump for e in find_jumps(scan, template, cfg))
    return n


def tune_threshold(template: Template, schedule: ScanSchedule, noise: NoiseModel,
                   cfg: DetectionConfig = DetectionConfig(),
                   candidates: Sequence[float] = (2.0, 2.25, 2.5, 2.75, 3.0, 3.5, 4.0, 5.0, 6.0, 8.0, 12.0),
                   hours: float = 400.0, safety: float = 2.0, min_jump: float = 0.1):
    """Smallest threshold giving no false jump over ``safety * hours`` of jump-free data.

    Returns ``(threshold, {candidate: false_count})``.  Candidates are tried
    in increasing order and the sweep stops at the first clean one.
    """
    counts = {}
    for thr in sorted(candidates):
        trial = replace(cfg, chi2_threshold=thr)
        counts[thr] = count_false_jumps(template, schedule, noise, trial,
                                        hours=hours * safety, min_jump=min_jump)
        if counts[thr] == 0:
            return thr, counts
    raise ConfigInvalid(f"no candidate threshold meets the false-positive budget: {counts}")


def tune_detector(template: Template, schedule: ScanSchedule, noise: NoiseModel,
                  cfg: DetectionConfig = DetectionConfig(),
                  min_segments: Sequence[int] = (3, 6, 10), hours: float = 400.0,
                  safety: float = 2.0, mc_scans: int = 1600, max_spread: float = 0.05,
                  **threshold_kw):
    """Joint choice of minimum segment length and chi2 threshold.

    For each ``min_segment`` the false-positive sweep picks the lowest clean
    threshold.  Among settings whose size-dependent spread on a short Monte
    Carlo stays within ``max_spread`` the most efficient wins; if none does,
    the flattest one is taken.  Returns ``(config, table)`` with one table row
    per candidate.
    """
    rows = []
    for m in min_segments:
        base = replace(cfg, min_segment=m)
        try:
            thr, counts = tune_threshold(template, schedule, noise, base, hours=hours,
                                         safety=safety, **threshold_kw)
        except ConfigInvalid:
            continue
        trial = replace(base, chi2_threshold=thr)
        rep = run_efficiency_mc(template, schedule, replace(noise, seed=noise.seed + 1),
                                InjectionPlan(n_scans=mc_scans), trial)
        rows.append({"min_segment": m, "chi2_threshold": thr, "efficiency": rep.efficiency,
                     "sys_spread": rep.sys_spread, "false_counts": counts})
    if not rows:
        raise ConfigInvalid("no detector setting meets the false-positive budget")
    flat = [r for r in rows if r["sys_spread"] <= max_spread]
    if flat:
        best = max(flat, key=lambda r: (r["efficiency"], -r["min_segment"]))
    else:
        best = min(rows, key=lambda r: (r["sys_spread"], r["min_segment"]))
    return replace(cfg, min_segment=best["min_segment"], chi2_threshold=best["chi2_threshold"]), rows


def estimate_noise(scans: Sequence[ChargeScan], template: Template) -> float:
    """Pooled residual spread of scans fitted to ``template`` (jump-free input)."""
    from .jumpfind import best_fit_phase

    resid = []
    for s in scans:
        fit = best_fit_phase(s.p1, s.bias, template)
        resid.append(s.p1 - template_predict(template, fit.theta_min, s.bias)[0])
    r = np.concatenate(resid)
    return float(np.sqrt(np.mean(r**2)))


def simulate_template_sources(reference: CurveModel | Template, schedule: ScanSchedule,
                              noise: NoiseModel, qubit_id: int, n_scans: int = 20,
                              seed_offset: int = 0) -> list[ChargeScan]:
    """Jump-free scans at random phases, as used for template construction."""
    out = []
    for k in range(n_scans):
        rng = np.random.default_rng([noise.seed, 7_000_000 + seed_offset + k])
        out.append(generate_scan(reference, schedule, noise, wrap_charge(rng.uniform(-0.5, 0.5)),
                                 qubit_id=qubit_id, start_time=k * schedule.scan_duration,
                                 rng=rng, scan_id=f"tpl{qubit_id}-{k:03d}"))
    return out


@dataclass
class TimeSeries:
    """Continuous multi-qubit synthetic dataset with its ground truth."""

    scans: list
    truth: list  # dicts: time, qubits, dq per qubit, kind
    livetime_hours: float


def simulate_timeseries(references: Mapping[int, CurveModel | Template], schedule: ScanSchedule,
                        noise: Mapping[int, NoiseModel], n_scans: int, seed: int,
                        single_rates: Mapping[int, float] | None = None,
                        pair_rates: Mapping[tuple[int, int], float] | None = None,
                        size_range: tuple[float, float] = (0.01, 0.5), tag: str = "") -> TimeSeries:
    """Back-to-back scans of all qubits with persistent offset-charge phases.

    Uncorrelated jumps arrive per qubit at ``single_rates`` (mHz); correlated
    bursts at ``pair_rates`` step both qubits of the pair at the same instant
    with independent sizes.  A jump shifts every later point of that qubit,
    including subsequent scans.
    """
    rng = np.random.default_rng([seed, 11])
    single_rates = dict(single_rates or {})
    pair_rates = dict(pair_rates or {})
    total = n_scans * schedule.scan_duration
    qubits = list(schedule.qubit_order)
    plan = InjectionPlan(rate=1.0, size_range=size_range)
    bursts = []  # (time, {qid: dq})
    for q in qubits:
        r = single_rates.get(q, 0.0)
        if r > 0:
            for tau in draw_jump_times(r, 0.0, total, rng):
                bursts.append((float(tau), {q: float(plan.draw_sizes(rng, 1)[0])}))
    for (a, b), r in sorted(pair_rates.items()):
        if r > 0:
            for tau in draw_jump_times(r, 0.0, total, rng):
                dqs = plan.draw_sizes(rng, 2)
                bursts.append((float(tau), {a: float(dqs[0]), b: float(dqs[1])}))
    bursts.sort(key=lambda x: x[0])
    theta0 = {q: wrap_charge(rng.uniform(-0.5, 0.5)) for q in qubits}

    scans = []
    for q in qubits:
        ts_all = np.concatenate([schedule.timestamps(q, k * schedule.scan_duration) for k in range(n_scans)])
        phase = np.full(ts_all.size, theta0[q])
        for tau, step in bursts:
            if q in step:
                phase[np.searchsorted(ts_all, tau, side="left"):] += step[q]
        nrng = np.random.default_rng([seed, 101, q])
        for k in range(n_scans):
            sl = slice(k * schedule.n_bias_points, (k + 1) * schedule.n_bias_points)
            ph = phase[sl]
            base = ph[0]
            jumps = [(int(i), float(d)) for i, d in enumerate(np.diff(ph), 1) if d != 0]
            scans.append(generate_scan(
                references[q], schedule, noise[q], wrap_charge(base), qubit_id=q,
                start_time=k * schedule.scan_duration, jumps=jumps, rng=nrng,
                scan_id=f"{tag}{k:05d}"))
    scans.sort(key=lambda s: (s.start_time, schedule.qubit_order.index(s.qubit_id)))
    truth = [{"time": tau, "steps": step} for tau, step in bursts]
    return TimeSeries(scans=scans, truth=truth, livetime_hours=total / 3600.0)
