"""Efficiency-corrected Poisson rates, coincidences, flux ratio and excess-rate solve.

Rates are in mHz, livetimes in hours, times in seconds.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import chi2

from .errors import BadEfficiency, BinningMismatch, DataError, DegenerateRatio, EmptyAboveThreshold

ONE_SIGMA = 0.6827


def poisson_interval(n_events: int, coverage: float = ONE_SIGMA) -> tuple[float, float]:
    """Central Garwood interval for a Poisson count, in counts."""
    if n_events < 0:
        raise ValueError("n_events must be >= 0")
    if not 0 < coverage < 1:
        raise ValueError("coverage must be in (0, 1)")
    alpha = 1.0 - coverage
    low = 0.0 if n_events == 0 else 0.5 * chi2.ppf(alpha / 2, 2 * n_events)
    high = 0.5 * chi2.ppf(1 - alpha / 2, 2 * n_events + 2)
    return float(low), float(high)


@dataclass(frozen=True)
class RateEstimate:
    label: str
    rate: float
    ci_low: float
    ci_high: float
    n_events: int
    livetime: float  # hours
    efficiency: float

    @property
    def err_up(self) -> float:
        return self.ci_high - self.rate

    @property
    def err_down(self) -> float:
        return self.rate - self.ci_low

    @property
    def sigma(self) -> float:
        """Symmetrised one-sigma error."""
        return 0.5 * (self.ci_high - self.ci_low)

    def format(self, digits: int = 2) -> str:
        if self.n_events == 0:
            return f"< {self.ci_high:.{digits}f}"
        return f"{self.rate:.{digits}f} +{self.err_up:.{digits}f}/-{self.err_down:.{digits}f}"


def _exposure_seconds(livetime_h: float, efficiency: float) -> float:
    if not 0 < efficiency <= 1:
        raise BadEfficiency(f"efficiency must be in (0, 1], got {efficiency}")
    if not livetime_h > 0:
        raise DataError(f"livetime must be positive, got {livetime_h}")
    return efficiency * livetime_h * 3600.0


def corrected_rate(n_events: int, livetime: float, efficiency: float,
                   coverage: float = ONE_SIGMA, label: str = "") -> RateEstimate:
    """``n / (efficiency * livetime)`` in mHz with a Garwood interval."""
    exposure = _exposure_seconds(livetime, efficiency)
    lo, hi = poisson_interval(n_events, coverage)
    k = 1e3 / exposure
    return RateEstimate(label, n_events * k, lo * k, hi * k, int(n_events), livetime, efficiency)


def pooled_rate(parts: Sequence[tuple[int, float, float]], coverage: float = ONE_SIGMA,
                label: str = "average") -> RateEstimate:
    """Rate from summed counts over summed efficiency-weighted exposure.

    ``parts`` holds ``(n_events, livetime_h, efficiency)`` per contributor.
    The reported livetime and efficiency are the totals and the
    exposure-weighted mean efficiency.
    """
    if not parts:
        raise DataError("nothing to pool")
    n = sum(int(p[0]) for p in parts)
    exposure = sum(_exposure_seconds(p[1], p[2]) for p in parts)
    livetime = sum(p[1] for p in parts)
    lo, hi = poisson_interval(n, coverage)
    k = 1e3 / exposure
    eff = exposure / (livetime * 3600.0)
    return RateEstimate(label, n * k, lo * k, hi * k, n, livetime, eff)


def pair_rate(n_pairs: int, livetime: float, eff_a: float, eff_b: float,
              coverage: float = ONE_SIGMA, label: str = "", mode: str = "product") -> RateEstimate:
    """Correlated-pair rate corrected by the pair efficiency.

    ``mode="product"`` uses ``eff_a * eff_b``; ``mode="min"`` the smaller of
    the two.
    """
    if mode == "product":
        eff = eff_a * eff_b
    elif mode == "min":
        eff = min(eff_a, eff_b)
    else:
        raise ValueError(f"unknown pair efficiency mode {mode!r}")
    return corrected_rate(n_pairs, livetime, eff, coverage, label)


@dataclass(frozen=True)
class CoincidencePair:
    qubit_a: int
    qubit_b: int
    t_a: float
    t_b: float
    dq_a: float
    dq_b: float
    separation: float = float("nan")
    scan_a: str = ""
    scan_b: str = ""

    @property
    def dt(self) -> float:
        return self.t_b - self.t_a


def _candidates(ev_a, ev_b, window):
    """All (|dt|, t_a, t_b, i, j) with |t_a - t_b| <= window; inputs time-sorted."""
    out = []
    tb = np.array([e.time for e in ev_b])
    for i, ea in enumerate(ev_a):
        lo = np.searchsorted(tb, ea.time - window, side="left")
        hi = np.searchsorted(tb, ea.time + window, side="right")
        for j in range(lo, hi):
            d = abs(ea.time - tb[j])
            if d <= window:
                out.append((d, ea.time, tb[j], i, j))
    return out


def pair_coincidences(events: Iterable, window: float = 44.0,
                      mag_window: tuple[float, float] = (0.1, 0.5),
                      positions: Mapping[int, Sequence[float]] | None = None) -> list[CoincidencePair]:
    """Pair jumps on different qubits that fall within ``window`` seconds.

    Only events with ``mag_window[0] <= |dq| <= mag_window[1]`` take part.
    Within each qubit pair matching is one-to-one: candidates are accepted in
    order of increasing ``|dt|`` (then earlier ``t_a``, earlier ``t_b``), so an
    event pairs with its nearest free partner on each other qubit.  The
    window boundary is inclusive.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    lo_m, hi_m = mag_window
    by_q: dict[int, list] = {}
    for e in events:
        if lo_m <= abs(e.delta_q) <= hi_m:
            by_q.setdefault(e.qubit_id, []).append(e)
    for q in by_q:
        by_q[q].sort(key=lambda e: (e.time, e.scan_id, e.point_index))
    pairs = []
    for qa, qb in combinations(sorted(by_q), 2):
        ev_a, ev_b = by_q[qa], by_q[qb]
        used_a, used_b = set(), set()
        sep = float("nan")
        if positions and qa in positions and qb in positions:
            sep = math.dist(positions[qa], positions[qb])
        for _, _, _, i, j in sorted(_candidates(ev_a, ev_b, window)):
            if i in used_a or j in used_b:
                continue
            used_a.add(i)
            used_b.add(j)
            a, b = ev_a[i], ev_b[j]
            pairs.append(CoincidencePair(qa, qb, a.time, b.time, a.delta_q, b.delta_q, sep,
                                         a.scan_id, b.scan_id))
    pairs.sort(key=lambda p: (p.qubit_a, p.qubit_b, p.t_a, p.t_b))
    return pairs


def stochastic_coincidence_rate(r_a: float, r_b: float, window: float) -> float:
    """Accidental coincidence rate ``2 r_a r_b W`` (rates in mHz, W in s) in mHz."""
    if r_a < 0 or r_b < 0 or window < 0:
        raise ValueError("rates and window must be non-negative")
    return 2.0 * (r_a * 1e-3) * (r_b * 1e-3) * window * 1e3


@dataclass(frozen=True)
class SpectrumHistogram:
    bin_edges: np.ndarray  # keV
    counts: np.ndarray
    livetime: float  # hours
    tag: str = ""

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        counts = np.asarray(self.counts)
        if edges.ndim != 1 or counts.ndim != 1 or edges.size != counts.size + 1:
            raise DataError("need len(bin_edges) == len(counts) + 1")
        if np.any(np.diff(edges) <= 0):
            raise DataError("bin edges must be strictly increasing")
        if np.any(counts < 0):
            raise DataError("counts must be non-negative")
        if not self.livetime > 0:
            raise DataError("livetime must be positive")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    def counts_above(self, threshold: float) -> float:
        return float(self.counts[self.bin_edges[:-1] >= threshold].sum())

    def rebin(self, factor: int) -> "SpectrumHistogram":
        """Merge ``factor`` adjacent bins (trailing partial group dropped)."""
        n = (self.counts.size // factor) * factor
        counts = self.counts[:n].reshape(-1, factor).sum(axis=1)
        return SpectrumHistogram(self.bin_edges[: n + 1: factor], counts, self.livetime, self.tag)


def read_spectrum(path) -> SpectrumHistogram:
    """CSV ``bin_low_keV,bin_high_keV,counts`` plus sidecar ``<name>.json``
    holding ``livetime_hours`` and ``tag``."""
    path = Path(path)
    lows, highs, counts = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(ln for ln in fh if not ln.startswith("#")):
            lows.append(float(row["bin_low_keV"]))
            highs.append(float(row["bin_high_keV"]))
            counts.append(float(row["counts"]))
    if not lows:
        raise DataError(f"{path}: empty spectrum")
    if not np.allclose(lows[1:], highs[:-1]):
        raise DataError(f"{path}: bins are not contiguous")
    side = path.with_suffix(".json")
    if not side.exists():
        raise DataError(f"{path}: missing sidecar {side.name}")
    meta = json.loads(side.read_text())
    return SpectrumHistogram(np.array(lows + [highs[-1]]), np.array(counts),
                             float(meta["livetime_hours"]), str(meta.get("tag", "")))


def write_spectrum(h: SpectrumHistogram, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("bin_low_keV", "bin_high_keV", "counts"))
        for lo, hi, c in zip(h.bin_edges[:-1], h.bin_edges[1:], h.counts):
            w.writerow((repr(float(lo)), repr(float(hi)), int(c) if float(c).is_integer() else c))
    path.with_suffix(".json").write_text(json.dumps({"livetime_hours": h.livetime, "tag": h.tag}))


def lmo_flux_ratio(so: SpectrumHistogram, sc: SpectrumHistogram,
                   threshold: float = 150.0) -> tuple[float, float]:
    """Livetime-normalised ratio of counts above ``threshold`` keV (SO over SC).

    Bins count when their lower edge is at or above the threshold.  The error
    is Poisson: ``ratio * sqrt(1/N_so + 1/N_sc)``.
    """
    if so.bin_edges.shape != sc.bin_edges.shape or not np.allclose(so.bin_edges, sc.bin_edges):
        raise BinningMismatch("spectra have different binning")
    n_so, n_sc = so.counts_above(threshold), sc.counts_above(threshold)
    if n_so <= 0 or n_sc <= 0:
        raise EmptyAboveThreshold(f"no counts above {threshold} keV (SO={n_so}, SC={n_sc})")
    ratio = (n_so / so.livetime) / (n_sc / sc.livetime)
    return ratio, ratio * math.sqrt(1.0 / n_so + 1.0 / n_sc)


@dataclass(frozen=True)
class Quantity:
    value: float
    err_down: float
    err_up: float

    @property
    def sigma(self) -> float:
        return 0.5 * (self.err_down + self.err_up)

    def format(self, digits: int = 2) -> str:
        return f"{self.value:.{digits}f} +{self.err_up:.{digits}f}/-{self.err_down:.{digits}f}"


@dataclass(frozen=True)
class ExcessSolution:
    r_so_gamma: Quantity
    r_sc_gamma: Quantity
    r_excess: Quantity
    a_lmo: float
    a_lmo_err: float
    method: str = "subtraction"

    @property
    def excess_negative(self) -> bool:
        return self.r_excess.value < 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["excess_negative"] = self.excess_negative
        return d


def _propagate(grad, err_down, err_up):
    """Asymmetric first-order errors: each input contributes its upper error
    to the output's upper error when the derivative is positive, its lower
    error otherwise."""
    up = math.sqrt(sum((g * (eu if g > 0 else ed)) ** 2 for g, ed, eu in zip(grad, err_down, err_up)))
    down = math.sqrt(sum((g * (ed if g > 0 else eu)) ** 2 for g, ed, eu in zip(grad, err_down, err_up)))
    return down, up


def solve_excess_rate(r_so: RateEstimate, r_sc: RateEstimate, a_lmo: float, a_lmo_err: float = 0.0,
                      method: str = "subtraction") -> ExcessSolution:
    """Split measured rates into gamma-induced parts and a common excess.

    Solves ``R_so = R_so_g + R_x``, ``R_sc = R_sc_g + R_x`` and
    ``R_so_g = A * R_sc_g``.  The excess always carries the errors of the
    full linear solution.  With the default ``method="subtraction"`` each
    gamma rate is then ``R - R_x`` with the two errors added in quadrature,
    which follows the published table.  ``method="linear"`` propagates the
    inputs through the linear solution for the gamma rates too; the
    shield-closed gamma error then shrinks by roughly ``1 / (A - 1)``.
    """
    if a_lmo <= 1.0 + 1e-9:
        raise DegenerateRatio(f"flux ratio {a_lmo} must exceed 1")
    S, C, a = r_so.rate, r_sc.rate, a_lmo
    k = a - 1.0
    sc_g = (S - C) / k
    so_g = a * sc_g
    ex = C - sc_g
    ed = (r_so.err_down, r_sc.err_down, a_lmo_err)
    eu = (r_so.err_up, r_sc.err_up, a_lmo_err)
    g_sc = (1 / k, -1 / k, -(S - C) / k**2)
    g_so = (a / k, -a / k, -(S - C) / k**2)
    g_ex = (-1 / k, a / k, (S - C) / k**2)
    ex_q = Quantity(ex, *_propagate(g_ex, ed, eu))
    if method == "linear":
        so_q = Quantity(so_g, *_propagate(g_so, ed, eu))
        sc_q = Quantity(sc_g, *_propagate(g_sc, ed, eu))
    elif method == "subtraction":
        so_q = Quantity(so_g, math.hypot(r_so.err_down, ex_q.err_up), math.hypot(r_so.err_up, ex_q.err_down))
        sc_q = Quantity(sc_g, math.hypot(r_sc.err_down, ex_q.err_up), math.hypot(r_sc.err_up, ex_q.err_down))
    else:
        raise ValueError(f"unknown method {method!r}")
    return ExcessSolution(so_q, sc_q, ex_q, a_lmo, a_lmo_err, method)


def count_in_window(events: Iterable, qubit_id: int, mag_window=(0.1, 0.5)) -> int:
    lo, hi = mag_window
    return sum(1 for e in events if e.qubit_id == qubit_id and lo <= abs(e.delta_q) <= hi)


RATE_FIELDS = ("label", "n_events", "livetime_h", "efficiency", "rate_mhz", "ci_low_mhz", "ci_high_mhz")


def write_rates_csv(rates: Iterable[RateEstimate], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RATE_FIELDS)
        for r in rates:
            w.writerow((r.label, r.n_events, r.livetime, r.efficiency, r.rate, r.ci_low, r.ci_high))


def write_pairs_csv(pairs: Iterable[CoincidencePair], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("qubit_a", "qubit_b", "t_a_s", "t_b_s", "dq_a_e", "dq_b_e", "separation_um",
                    "scan_a", "scan_b"))
        for p in pairs:
            w.writerow((p.qubit_a, p.qubit_b, p.t_a, p.t_b, p.dq_a, p.dq_b, p.separation,
                        p.scan_a, p.scan_b))


def format_table(columns: Sequence[str], rows: Sequence[tuple], units: str = "mHz") -> str:
    """Aligned plain-text table.

    Each row is ``(label, cells)`` or ``(label, cells, units)``; ``units``
    fills the last column when a row does not give its own.
    """
    header = [""] + list(columns) + ["Units"]
    body = [[r[0]] + list(r[1]) + [r[2] if len(r) > 2 else units] for r in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) if i == 0 else c.center(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()
             for r in [header] + body]
    rule = "-" * max(len(x) for x in lines)
    return "\n".join([rule, lines[0], rule] + lines[1:] + [rule])
