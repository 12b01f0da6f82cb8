import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chargejumps.errors import DataError
from chargejumps.model import (
    ChargeScan, CurveModel, QubitConfig, ScanSchedule, p1_of_offset_charge, phase_of_offset_charge,
    read_scans, wrap_charge, write_scans_csv, write_scans_jsonl,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


@pytest.mark.parametrize("q, expected", [(0.0, 0.0), (0.5, 0.5), (-0.5, 0.5), (0.87, -0.13),
                                         (1.0, 0.0), (-0.13, -0.13), (2.25, 0.25)])
def test_wrap_charge_examples(q, expected):
    assert wrap_charge(q) == pytest.approx(expected, abs=1e-12)


@given(finite)
def test_wrap_charge_range_and_congruence(q):
    w = wrap_charge(q)
    assert -0.5 < w <= 0.5
    assert abs((q - w) - round(q - w)) < 1e-9


@given(finite)
def test_wrap_charge_idempotent(q):
    assert wrap_charge(wrap_charge(q)) == pytest.approx(wrap_charge(q), abs=1e-12)


def test_wrap_charge_array():
    out = wrap_charge(np.array([0.87, -0.6, 0.5]))
    np.testing.assert_allclose(out, [-0.13, 0.4, 0.5], atol=1e-12)


def test_phase_examples():
    assert phase_of_offset_charge(0.0, 0.25) == pytest.approx(0.25)
    assert phase_of_offset_charge(0.25, 0.25) == pytest.approx(0.0, abs=1e-12)
    assert phase_of_offset_charge(0.5, 0.25) == pytest.approx(-0.25)


@given(finite, st.integers(-5, 5))
def test_phase_periodic_in_charge(n_g, k):
    d = 0.25
    assert phase_of_offset_charge(n_g + k, d) == pytest.approx(phase_of_offset_charge(n_g, d), abs=1e-9)


def test_p1_examples(model):
    # sin form: phase 0 at n_g = 0.25 gives the offset, n_g = 0 gives a maximum
    assert p1_of_offset_charge(0.25, model) == pytest.approx(0.5)
    assert p1_of_offset_charge(0.0, CurveModel(contrast=0.5, offset=0.5, depth=0.25)) == pytest.approx(1.0)


@given(st.floats(-2, 2, allow_nan=False))
def test_p1_bounded(n_g):
    m = CurveModel(contrast=0.45, offset=0.5, depth=0.25)
    assert 0.05 - 1e-12 <= m(n_g) <= 0.95 + 1e-12


def test_half_period_shift_is_not_degenerate(model):
    u = np.linspace(0, 1, 400, endpoint=False)
    assert np.max(np.abs(model(u + 0.5) - model(u))) > 0.5


def test_curve_model_validation():
    with pytest.raises(ValueError):
        CurveModel(contrast=0.6, offset=0.5)
    with pytest.raises(ValueError):
        CurveModel(depth=0)


def test_qubit_default_idle_time():
    q = QubitConfig(1, f01=4.8, dispersion=2.5, averages_per_point=200)
    assert q.t_idle == pytest.approx(1 / (4 * 2.5e6))
    assert q.depth == pytest.approx(0.25)


def test_qubit_validation():
    with pytest.raises(ValueError):
        QubitConfig(1, f01=4.8, dispersion=0.0, averages_per_point=200)
    with pytest.raises(ValueError):
        QubitConfig(1, f01=4.8, dispersion=2.5, averages_per_point=0)


def test_schedule_published_timing(schedule):
    assert schedule.scan_duration == pytest.approx(355, rel=0.01)
    assert schedule.seconds_per_point(1) == pytest.approx(200 * 0.0049)
    n = schedule.n_bias_points * sum(schedule.seconds_per_point(q) for q in schedule.qubit_order)
    assert schedule.scan_duration == pytest.approx(n, rel=0.01)


def test_schedule_timestamps_sequential(schedule):
    t = {q: schedule.timestamps(q, 100.0) for q in schedule.qubit_order}
    for a, b in zip(schedule.qubit_order, schedule.qubit_order[1:]):
        assert np.all(t[a] < t[b])
    assert t[4][-1] == pytest.approx(100.0 + schedule.scan_duration)


def test_schedule_validation():
    with pytest.raises(ValueError):
        ScanSchedule(points_per_period=4)
    with pytest.raises(ValueError):
        ScanSchedule(averages={1: 200}, qubit_order=(1, 2))


def _scan(**kw):
    d = dict(qubit_id=1, start_time=0.0, bias=[0.0, 0.1, 0.2], p1=[0.1, 0.5, 0.9], t=[1.0, 2.0, 3.0])
    d.update(kw)
    return ChargeScan(**d)


def test_scan_validation():
    with pytest.raises(DataError):
        _scan(t=[1.0, 1.0, 2.0])
    with pytest.raises(DataError):
        _scan(p1=[0.1, 1.2, 0.3])
    with pytest.raises(DataError):
        _scan(bias=[0.0, 0.2, 0.1])
    with pytest.raises(DataError):
        _scan(p1=[0.1, 0.2])


def test_scan_arrays_read_only():
    s = _scan()
    with pytest.raises(ValueError):
        s.p1[0] = 0.3


@pytest.mark.parametrize("suffix", [".jsonl", ".csv"])
def test_scan_io_roundtrip(tmp_path, suffix):
    scans = [_scan(scan_id="a", start_time=1.0), _scan(scan_id="b", qubit_id=2, start_time=1.0)]
    path = tmp_path / f"s{suffix}"
    (write_scans_csv if suffix == ".csv" else write_scans_jsonl)(scans, path)
    back = read_scans(path)
    assert [s.scan_id for s in back] == ["a", "b"]
    for a, b in zip(scans, back):
        np.testing.assert_array_equal(a.p1, b.p1)
        np.testing.assert_array_equal(a.t, b.t)
        np.testing.assert_array_equal(a.bias, b.bias)
    if suffix == ".jsonl":
        assert back == scans


def test_bad_jsonl_line_reports_location(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"qubit_id": 1}\n')
    with pytest.raises(DataError, match="bad.jsonl:1"):
        read_scans(p)
