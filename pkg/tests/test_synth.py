import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chargejumps.jumpfind import DetectionConfig, JumpEvent
from chargejumps.model import CurveModel, ScanSchedule, wrap_charge
from chargejumps.synth import (
    InjectionPlan, NoiseModel, _systematic_spread, count_false_jumps, draw_injections, draw_jump_times,
    estimate_noise, generate_scan, inject_jumps, match_detections, phase_track, run_efficiency_mc,
    simulate_template_sources, simulate_timeseries,
)
from chargejumps.template import stitch_template


def test_zero_noise_equals_stitched_template(analytic_template, schedule):
    s = generate_scan(analytic_template, schedule, NoiseModel(0.0), 0.0)
    mean, _ = stitch_template(analytic_template, schedule.n_bias_points)
    np.testing.assert_allclose(s.p1, mean, atol=1e-12)
    assert s.qubit_id == 1


def test_noise_moment():
    sched = ScanSchedule(averages={1: 200}, qubit_order=(1,), n_bias_points=10_000)
    m = CurveModel(contrast=0.2, offset=0.5)
    s = generate_scan(m, sched, NoiseModel(0.05, seed=11), 0.0, qubit_id=1)
    resid = s.p1 - m(sched.bias_grid())
    assert resid.std() == pytest.approx(0.05, abs=0.002)


def test_generate_is_deterministic(model, schedule):
    a = generate_scan(model, schedule, NoiseModel(0.03, seed=9), 0.1, qubit_id=2)
    b = generate_scan(model, schedule, NoiseModel(0.03, seed=9), 0.1, qubit_id=2)
    assert a == b


def test_generate_requires_qubit_for_analytic(model, schedule):
    from chargejumps.errors import ConfigInvalid

    with pytest.raises(ConfigInvalid):
        generate_scan(model, schedule, NoiseModel(0.0), 0.0)


def test_draw_jump_times_rate():
    rng = np.random.default_rng(0)
    t = draw_jump_times(1.1, 0.0, 1e7, rng)
    assert len(t) == pytest.approx(11_000, rel=0.05)
    assert np.all(np.diff(t) >= 0) and t.min() > 0 and t.max() <= 1e7


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_draw_injections_in_range(seed):
    ts = np.linspace(1, 355, 74)
    inj = draw_injections(InjectionPlan(rate=20.0), ts, np.random.default_rng(seed))
    idx = [i for i, _ in inj]
    assert idx == sorted(set(idx))
    assert all(1 <= i <= 73 for i in idx)
    # merged opposite-sign draws may cancel below the minimum size
    assert all(abs(d) <= 1.0 for _, d in inj)


def test_inject_jumps_changes_only_after_step(model, schedule):
    clean = generate_scan(model, schedule, NoiseModel(0.0), 0.1, qubit_id=1)
    new, inj = inject_jumps(clean, InjectionPlan(rate=20.0), 3, model)
    assert inj
    first = inj[0][0]
    np.testing.assert_array_equal(new.p1[:first], clean.p1[:first])
    ref = generate_scan(model, schedule, NoiseModel(0.0), 0.1, qubit_id=1, jumps=inj)
    np.testing.assert_allclose(new.p1, ref.p1, atol=1e-12)


def test_phase_track():
    tr = phase_track(0.1, 5, [(2, 0.2), (4, -0.1)])
    np.testing.assert_allclose(tr, [0.1, 0.1, 0.3, 0.3, 0.2])


def _ev(i, dq):
    return JumpEvent(1, float(i), dq, 0.0, dq, i, 5.0)


def test_match_window():
    inj = [(30, 0.2)]
    assert match_detections(inj, [_ev(28, 0.2)])[0] is not None
    assert match_detections(inj, [_ev(27, 0.2)])[0] is None
    assert match_detections(inj, [_ev(38, 0.2)])[0] is not None
    assert match_detections(inj, [_ev(39, 0.2)])[0] is None
    assert match_detections(inj, [_ev(30, 0.26)])[0] is None
    assert match_detections([(30, 0.49)], [_ev(31, -0.49)])[0] is not None


def test_match_one_to_one():
    out = match_detections([(30, 0.2), (31, 0.2)], [_ev(31, 0.2)])
    assert sum(m is not None for m in out) == 1


def test_spread_zero_for_flat_truth():
    truth = [{"scan": k, "delta_q": 0.1 + 0.4 * (j + 0.5) / 30, "matched": (k + j) % 5 != 0}
             for k in range(1500) for j in range(30)]
    spread, raw, edges, means, counts = _systematic_spread(truth, 1500, (0.1, 0.5))
    assert len(edges) == 16 and edges[0] == 0.1 and edges[-1] == 0.5
    assert spread == pytest.approx(0.0, abs=0.01)


def test_spread_detects_size_trend():
    rng = np.random.default_rng(0)
    truth = []
    for k in range(1500):
        for _ in range(20):
            dq = rng.uniform(0.1, 0.5)
            truth.append({"scan": k, "delta_q": dq, "matched": rng.random() < 0.5 + dq})
    spread, raw, *_ = _systematic_spread(truth, 1500, (0.1, 0.5))
    centres = 0.1 + 0.4 * (np.arange(15) + 0.5) / 15
    assert spread == pytest.approx(np.std(0.5 + centres, ddof=1), rel=0.15)
    assert raw >= spread


def test_efficiency_mc_small(analytic_template, schedule):
    rep = run_efficiency_mc(analytic_template, schedule, NoiseModel(0.02, seed=1),
                            InjectionPlan(n_scans=60), DetectionConfig())
    assert rep.n_injected > 5
    assert 0.5 < rep.efficiency <= 1.0
    assert rep.n_found == sum(r["matched"] for r in rep.truth if 0.1 <= abs(r["delta_q"]) <= 0.5)
    again = run_efficiency_mc(analytic_template, schedule, NoiseModel(0.02, seed=1),
                              InjectionPlan(n_scans=60), DetectionConfig(), workers=2)
    assert again.to_dict() == rep.to_dict()


def test_efficiency_report_io(tmp_path, analytic_template, schedule):
    rep = run_efficiency_mc(analytic_template, schedule, NoiseModel(0.02, seed=2), InjectionPlan(n_scans=20))
    rep.save(tmp_path / "r.json")
    rep.write_truth_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "scan_id,index,delta_q_injected_e,matched"
    assert len(lines) == 1 + len(rep.truth)


def test_no_false_jumps_noiseless(analytic_template, schedule):
    assert count_false_jumps(analytic_template, schedule, NoiseModel(0.0), DetectionConfig(), hours=2) == 0


def test_estimate_noise(model, schedule, analytic_template):
    src = simulate_template_sources(model, schedule, NoiseModel(0.03, seed=4), 1, n_scans=10)
    assert estimate_noise(src, analytic_template) == pytest.approx(0.03, rel=0.1)


def test_timeseries_truth_and_continuity(small_schedule, model):
    refs = {1: model, 2: model}
    noise = {1: NoiseModel(0.0), 2: NoiseModel(0.0)}
    ts = simulate_timeseries(refs, small_schedule, noise, n_scans=30, seed=5,
                             single_rates={1: 0.5}, pair_rates={(1, 2): 0.5})
    assert len(ts.scans) == 60
    assert ts.livetime_hours == pytest.approx(30 * small_schedule.scan_duration / 3600)
    pairs = [b for b in ts.truth if len(b["steps"]) == 2]
    assert pairs and all(set(b["steps"]) == {1, 2} for b in pairs)
    again = simulate_timeseries(refs, small_schedule, noise, n_scans=30, seed=5,
                                single_rates={1: 0.5}, pair_rates={(1, 2): 0.5})
    assert all(a == b for a, b in zip(ts.scans, again.scans))
    # phase carries over between scans: each scan starts at the end phase of the previous one
    q1 = [s for s in ts.scans if s.qubit_id == 1]
    total = sum(d for b in ts.truth for q, d in b["steps"].items() if q == 1)
    end_phase = q1[0].meta["true_theta"] + total
    assert wrap_charge(end_phase - q1[-1].meta["true_theta"]) == pytest.approx(
        wrap_charge(sum(d for b in ts.truth for q, d in b["steps"].items()
                        if q == 1 and b["time"] > q1[-1].start_time)), abs=1e-9)
