import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chargejumps import kernels

needs_cython = pytest.mark.skipif(kernels.walk_segment_cython is None, reason="extension not built")


def _brute(x, pred, weight, start, threshold, min_len):
    """Direct double loop over prefixes and trial phases."""
    chis, args = [], []
    for end in range(start, len(x)):
        n = end - start + 1
        best, arg = np.inf, -1
        for j in range(pred.shape[1]):
            s = 0.0
            for i in range(start, end + 1):
                r = x[i] - pred[i, j]
                s += r * r * weight[i, j]
            if s < best:
                best, arg = s, j
        chis.append(best / n)
        args.append(arg)
        if n > min_len and best / n > threshold:
            return end, np.array(chis), np.array(args)
    return -1, np.array(chis), np.array(args)


@st.composite
def problems(draw):
    n = draw(st.integers(1, 25))
    m = draw(st.integers(1, 9))
    unit = st.floats(0, 1, allow_nan=False, width=64)
    x = draw(arrays(np.float64, n, elements=unit))
    pred = draw(arrays(np.float64, (n, m), elements=unit))
    weight = draw(arrays(np.float64, (n, m), elements=st.floats(1, 1e4, allow_nan=False)))
    start = draw(st.integers(0, n - 1))
    thr = draw(st.sampled_from([np.inf, 1.0, 10.0, 100.0, 1e3]))
    min_len = draw(st.integers(0, 5))
    return x, pred, weight, start, thr, min_len


@settings(max_examples=300)
@given(problems())
def test_numpy_matches_brute_force(p):
    trig, chi, arg = kernels.walk_segment_numpy(*p)
    btrig, bchi, barg = _brute(*p)
    assert trig == btrig
    np.testing.assert_allclose(chi, bchi, rtol=1e-10, atol=1e-12)
    # ties may resolve differently only when the chi2 values are equal
    x, pred, weight, start = p[:4]
    for k, (a, b) in enumerate(zip(arg, barg)):
        if a != b:
            ra = ((x[start:start + k + 1] - pred[start:start + k + 1, a]) ** 2 * weight[start:start + k + 1, a]).sum()
            rb = ((x[start:start + k + 1] - pred[start:start + k + 1, b]) ** 2 * weight[start:start + k + 1, b]).sum()
            assert ra == pytest.approx(rb, rel=1e-12)


@needs_cython
@settings(max_examples=500)
@given(problems())
def test_backends_agree(p):
    a = kernels.walk_segment_numpy(*p)
    b = kernels.walk_segment_cython(*p)
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_array_equal(a[2], b[2])


@needs_cython
def test_backends_agree_on_scan(analytic_template, model, schedule):
    from chargejumps.jumpfind import theta_grid
    from chargejumps.synth import NoiseModel, generate_scan
    from chargejumps.template import prediction_table

    scan = generate_scan(model, schedule, NoiseModel(0.03, seed=1), 0.2, qubit_id=1, jumps=[(30, 0.3)])
    pred, w = prediction_table(analytic_template, scan.bias, theta_grid())
    for start in (0, 10, 31):
        a = kernels.walk_segment_numpy(scan.p1, pred, w, start, 4.0, 3)
        b = kernels.walk_segment_cython(scan.p1, pred, w, start, 4.0, 3)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])
        np.testing.assert_array_equal(a[2], b[2])


def test_start_out_of_range():
    x = np.zeros(3)
    p = np.zeros((3, 2))
    with pytest.raises(ValueError):
        kernels.walk_segment_numpy(x, p, p + 1, 3, 1.0, 0)


def test_backend_env_override():
    code = "from chargejumps import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"CHARGEJUMPS_BACKEND": "numpy", "PATH": ""}, check=True)
    assert out.stdout.strip() == "numpy"


@needs_cython
def test_default_backend_is_compiled():
    assert kernels.BACKEND == "cython" or __import__("os").environ.get("CHARGEJUMPS_BACKEND") == "numpy"
