import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.stats import poisson

from chargejumps.errors import BadEfficiency, BinningMismatch, DegenerateRatio, EmptyAboveThreshold
from chargejumps.jumpfind import JumpEvent
from chargejumps.rates import (
    RateEstimate, SpectrumHistogram, corrected_rate, format_table, lmo_flux_ratio, pair_coincidences,
    pair_rate, poisson_interval, pooled_rate, read_spectrum, solve_excess_rate,
    stochastic_coincidence_rate, write_spectrum,
)


def garwood_oracle(n, cl=0.6827):
    """Invert the Poisson CDF numerically: P(X >= n | lo) = P(X <= n | hi) = (1 - cl) / 2."""
    a = (1 - cl) / 2
    hi = brentq(lambda mu: poisson.cdf(n, mu) - a, 1e-9, 10 * n + 50)
    lo = 0.0 if n == 0 else brentq(lambda mu: poisson.sf(n - 1, mu) - a, 1e-12, n)
    return lo, hi


@pytest.mark.parametrize("n", [0, 1, 2, 5, 9, 16, 30, 41, 140])
def test_poisson_interval_matches_oracle(n):
    np.testing.assert_allclose(poisson_interval(n), garwood_oracle(n), rtol=1e-7)


def test_poisson_interval_examples():
    lo, hi = poisson_interval(0)
    assert lo == 0 and hi == pytest.approx(1.84, abs=0.01)
    lo, hi = poisson_interval(16)
    assert lo < 16 < hi and hi - 16 > 16 - lo
    lo, hi = poisson_interval(10_000)
    assert lo == pytest.approx(9900, rel=0.02) and hi == pytest.approx(10100, rel=0.02)


def test_poisson_interval_validation():
    with pytest.raises(ValueError):
        poisson_interval(-1)
    with pytest.raises(ValueError):
        poisson_interval(3, 1.0)


@given(st.integers(0, 500), st.floats(0.1, 0.99))
def test_poisson_interval_brackets(n, cl):
    lo, hi = poisson_interval(n, cl)
    assert 0 <= lo <= n <= hi


def test_corrected_rate_example():
    r = corrected_rate(30, 23.949, 0.83)
    assert round(r.rate, 2) == 0.42
    assert r.rate == pytest.approx(30 / (0.83 * 23.949 * 3600) * 1e3)


def test_zero_events():
    r = corrected_rate(0, 10.0, 0.5)
    assert r.rate == 0 and r.ci_low == 0 and r.ci_high > 0
    assert r.format().startswith("<")


@given(st.integers(0, 200), st.floats(0.5, 100), st.floats(0.02, 1.0))
def test_halving_efficiency_doubles_everything(n, T, eff):
    a, b = corrected_rate(n, T, eff), corrected_rate(n, T, eff / 2)
    assert b.rate == pytest.approx(2 * a.rate, rel=1e-12, abs=1e-15)
    assert b.ci_low == pytest.approx(2 * a.ci_low, rel=1e-12, abs=1e-15)
    assert b.ci_high == pytest.approx(2 * a.ci_high, rel=1e-12)


@pytest.mark.parametrize("eff", [0.0, -0.1, 1.2])
def test_bad_efficiency(eff):
    with pytest.raises(BadEfficiency):
        corrected_rate(3, 1.0, eff)


def test_pooled_rate_is_sum_over_exposure():
    parts = [(13, 22.075, 0.83), (12, 22.075, 0.79), (13, 22.075, 0.87), (9, 22.075, 0.72)]
    r = pooled_rate(parts)
    expo = sum(T * e * 3600 for _, T, e in parts)
    assert r.rate == pytest.approx(47 / expo * 1e3)
    lo, hi = garwood_oracle(47)
    assert r.ci_low == pytest.approx(lo / expo * 1e3, rel=1e-6)


def test_pair_rate_modes():
    a = pair_rate(5, 20.0, 0.8, 0.7)
    b = corrected_rate(5, 20.0, 0.56)
    assert a.rate == pytest.approx(b.rate)
    assert pair_rate(5, 20.0, 0.8, 0.7, mode="min").efficiency == 0.7
    with pytest.raises(ValueError):
        pair_rate(5, 20.0, 0.8, 0.7, mode="mean")


def _ev(q, t, dq=0.2, i=0):
    return JumpEvent(qubit_id=q, time=float(t), delta_q=dq, theta_before=0.0, theta_after=dq,
                     point_index=i, chi2_at_trigger=5.0, scan_id=f"s{q}")


def test_window_boundary_inclusive():
    assert len(pair_coincidences([_ev(1, 0), _ev(2, 44)], 44)) == 1
    assert len(pair_coincidences([_ev(1, 0), _ev(2, 45)], 44)) == 0


def test_magnitude_filter():
    assert pair_coincidences([_ev(1, 0, 0.05), _ev(2, 1)], 44) == []
    assert pair_coincidences([_ev(1, 0, -0.3), _ev(2, 1, 0.5)], 44)[0].dq_a == -0.3


def test_nearest_partner_wins():
    pairs = pair_coincidences([_ev(1, 0), _ev(2, 30), _ev(2, 10)], 44)
    assert len(pairs) == 1 and pairs[0].t_b == 10


def test_event_pairs_with_each_other_qubit():
    pairs = pair_coincidences([_ev(1, 0), _ev(2, 5), _ev(3, 6)], 44, positions={1: (0, 0), 2: (3, 4), 3: (0, 1)})
    assert {(p.qubit_a, p.qubit_b) for p in pairs} == {(1, 2), (1, 3), (2, 3)}
    assert [p.separation for p in pairs if (p.qubit_a, p.qubit_b) == (1, 2)] == [5.0]


def brute_pairs(events, window, mag=(0.1, 0.5)):
    """Reference: enumerate every cross-qubit pair, then accept nearest-first, one per partner qubit."""
    ev = [e for e in events if mag[0] <= abs(e.delta_q) <= mag[1]]
    cands = []
    for x, y in combinations(range(len(ev)), 2):
        a, b = ev[x], ev[y]
        if a.qubit_id == b.qubit_id:
            continue
        if a.qubit_id > b.qubit_id:
            a, b, x, y = b, a, y, x
        if abs(a.time - b.time) <= window:
            cands.append((abs(a.time - b.time), a.time, b.time, x, y))
    cands.sort()
    used = set()
    out = []
    for _, _, _, x, y in cands:
        qa, qb = ev[x].qubit_id, ev[y].qubit_id
        if (x, qb) in used or (y, qa) in used:
            continue
        used.add((x, qb))
        used.add((y, qa))
        out.append((qa, qb, ev[x].time, ev[y].time))
    return sorted(out)


event_lists = st.lists(
    st.tuples(st.integers(1, 4), st.integers(0, 400).map(lambda t: t * 0.5),
              st.floats(-0.5, 0.5, allow_nan=False)),
    max_size=60,
)


@settings(max_examples=300)
@given(event_lists, st.sampled_from([1.0, 10.0, 44.0]))
def test_pairing_matches_brute_force(raw, window):
    # integer-and-half times hit the window boundary exactly and create ties
    events = [_ev(q, t, dq, i) for i, (q, t, dq) in enumerate(raw)]
    got = sorted((p.qubit_a, p.qubit_b, p.t_a, p.t_b) for p in pair_coincidences(events, window))
    assert got == brute_pairs(events, window)
    for p in pair_coincidences(events, window):
        assert abs(p.t_a - p.t_b) <= window
        assert 0.1 <= abs(p.dq_a) <= 0.5 and 0.1 <= abs(p.dq_b) <= 0.5


def test_stochastic_rate():
    assert stochastic_coincidence_rate(0.42, 0.60, 44) == pytest.approx(2 * 0.42e-3 * 0.60e-3 * 44 * 1e3)
    assert stochastic_coincidence_rate(0.42, 0.60, 44) == pytest.approx(0.0222, abs=5e-5)
    assert stochastic_coincidence_rate(0, 0.5, 44) == 0
    assert stochastic_coincidence_rate(0.5, 0.5, 0) == 0


def _spectrum(counts, live=10.0, edges=None):
    edges = np.arange(len(counts) + 1) * 50.0 if edges is None else edges
    return SpectrumHistogram(edges, np.asarray(counts), live)


def test_lmo_ratio_identical():
    r, e = lmo_flux_ratio(_spectrum([5, 5, 5, 5, 5]), _spectrum([5, 5, 5, 5, 5]))
    assert r == 1.0 and e == pytest.approx(math.sqrt(2 / 10))


def test_lmo_ratio_example():
    so = _spectrum([999, 999, 999, 1000, 1000])
    sc = _spectrum([7, 7, 7, 50, 50])
    r, e = lmo_flux_ratio(so, sc, 150.0)
    assert r == pytest.approx(20.0)
    assert e == pytest.approx(20 * math.sqrt(1 / 2000 + 1 / 100), rel=1e-12)
    assert round(e, 2) == 2.05


def test_lmo_ratio_livetime_normalised():
    r, _ = lmo_flux_ratio(_spectrum([0, 0, 0, 100], live=5.0), _spectrum([0, 0, 0, 100], live=10.0))
    assert r == pytest.approx(2.0)


def test_lmo_ratio_errors():
    with pytest.raises(BinningMismatch):
        lmo_flux_ratio(_spectrum([1, 1, 1]), _spectrum([1, 1, 1, 1]))
    with pytest.raises(EmptyAboveThreshold):
        lmo_flux_ratio(_spectrum([5, 5, 5, 0]), _spectrum([5, 5, 5, 3]))


@given(st.lists(st.integers(1, 500), min_size=12, max_size=12), st.lists(st.integers(1, 500), min_size=12, max_size=12),
       st.sampled_from([2, 3, 6]))
def test_lmo_ratio_rebin_invariant(a, b, factor):
    so, sc = _spectrum(a, 3.0), _spectrum(b, 2.0)
    thr = 300.0  # a multiple of every merged bin width
    r1 = lmo_flux_ratio(so, sc, thr)
    r2 = lmo_flux_ratio(so.rebin(factor), sc.rebin(factor), thr)
    np.testing.assert_allclose(r1, r2, rtol=1e-12)


def test_spectrum_io(tmp_path):
    h = SpectrumHistogram(np.array([0.0, 100.0, 150.0, 300.0]), np.array([4, 5, 6]), 23.949, "SO")
    write_spectrum(h, tmp_path / "so.csv")
    back = read_spectrum(tmp_path / "so.csv")
    np.testing.assert_array_equal(back.bin_edges, h.bin_edges)
    np.testing.assert_array_equal(back.counts, h.counts)
    assert back.livetime == 23.949 and back.tag == "SO"


def _rate(r, lo=None, hi=None):
    return RateEstimate("x", r, r - 0.04 if lo is None else lo, r + 0.05 if hi is None else hi, 1, 1.0, 1.0)


def test_excess_example():
    s = solve_excess_rate(_rate(0.51), _rate(0.19), 20.0, 1.0)
    assert round(s.r_so_gamma.value, 2) == 0.34
    assert round(s.r_sc_gamma.value, 2) == 0.02
    assert round(s.r_excess.value, 2) == 0.17
    assert s.r_so_gamma.value == pytest.approx(20 * s.r_sc_gamma.value)


def test_excess_equal_rates():
    s = solve_excess_rate(_rate(0.3), _rate(0.3), 20.0)
    assert s.r_sc_gamma.value == 0 and s.r_excess.value == pytest.approx(0.3)


def test_excess_degenerate():
    with pytest.raises(DegenerateRatio):
        solve_excess_rate(_rate(0.5), _rate(0.2), 1.0)
    with pytest.raises(DegenerateRatio):
        solve_excess_rate(_rate(0.5), _rate(0.2), 0.5)


def test_excess_negative_flag():
    s = solve_excess_rate(_rate(0.51), _rate(0.01), 20.0)
    assert s.excess_negative


@given(st.floats(0, 5), st.floats(0, 5), st.floats(1.01, 100))
def test_excess_round_trip(so, sc, a):
    s = solve_excess_rate(_rate(so, so, so), _rate(sc, sc, sc), a)
    assert a * s.r_sc_gamma.value + s.r_excess.value == pytest.approx(so, abs=1e-12)
    assert s.r_sc_gamma.value + s.r_excess.value == pytest.approx(sc, abs=1e-12)


def test_excess_linear_errors_match_finite_differences():
    so, sc = _rate(0.51, 0.47, 0.56), _rate(0.19, 0.16, 0.23)
    s = solve_excess_rate(so, sc, 20.0, 1.0)

    def ex(S, C, A):
        return C - (S - C) / (A - 1)

    h = 1e-6
    g = [(ex(0.51 + h, 0.19, 20) - ex(0.51 - h, 0.19, 20)) / (2 * h),
         (ex(0.51, 0.19 + h, 20) - ex(0.51, 0.19 - h, 20)) / (2 * h),
         (ex(0.51, 0.19, 20 + h) - ex(0.51, 0.19, 20 - h)) / (2 * h)]
    # dR_x/dS < 0, dR_x/dC > 0, dR_x/dA > 0
    up = math.sqrt((g[0] * 0.04) ** 2 + (g[1] * 0.04) ** 2 + (g[2] * 1.0) ** 2)
    down = math.sqrt((g[0] * 0.05) ** 2 + (g[1] * 0.03) ** 2 + (g[2] * 1.0) ** 2)
    assert s.r_excess.err_up == pytest.approx(up, rel=1e-6)
    assert s.r_excess.err_down == pytest.approx(down, rel=1e-6)


def test_excess_subtraction_method():
    so, sc = _rate(0.51, 0.47, 0.56), _rate(0.19, 0.16, 0.23)
    s = solve_excess_rate(so, sc, 20.0, 1.0, method="subtraction")
    lin = solve_excess_rate(so, sc, 20.0, 1.0, method="linear")
    assert solve_excess_rate(so, sc, 20.0, 1.0) == s
    assert s.r_excess == lin.r_excess
    # the linear solve shrinks the shield-closed gamma error by about 1 / (A - 1)
    assert lin.r_sc_gamma.err_up < s.r_sc_gamma.err_up / 5
    assert s.r_sc_gamma.err_up == pytest.approx(math.hypot(0.04, lin.r_excess.err_down))
    with pytest.raises(ValueError):
        solve_excess_rate(so, sc, 20.0, method="bogus")


def test_format_table():
    out = format_table(["SO", "SC"], [("Q1 Rate", ["0.42", "0.20"]), ("Livetime", ["23.9", "22.1"], "h")])
    lines = out.splitlines()
    assert "Units" in lines[1] and lines[-2].rstrip().endswith("h")
    assert len({len(l) for l in lines if l and not l.startswith("-")}) <= 3
