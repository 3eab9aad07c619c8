import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm as scipy_expm

from petzlab.expm import expm

finite = st.floats(-4, 4, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (2, 5, 5), elements=finite))
def test_matches_scipy(parts):
    a = parts[0] + 1j * parts[1]
    ref = scipy_expm(a)
    assert np.max(np.abs(expm(a) - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


@pytest.mark.parametrize("scale", [1e-8, 1e-2, 1.0, 30.0, 300.0])
def test_scaling_and_squaring_range(scale):
    rng = np.random.default_rng(0)
    a = scale * (rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))) / 6
    a = a - 1.1 * np.abs(np.linalg.eigvals(a).real).max() * np.eye(6)   # keep entries bounded
    ref = scipy_expm(a)
    assert np.allclose(expm(a), ref, rtol=1e-10, atol=1e-14 * np.max(np.abs(ref)))


def test_batched_equals_loop():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(7, 4, 4)) + 1j * rng.normal(size=(7, 4, 4))
    out = expm(a)
    for k in range(7):
        assert np.allclose(out[k], scipy_expm(a[k]), atol=1e-11)


def test_zero_and_diagonal():
    assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))
    d = np.diag([1.0, -2.0, 0.5j])
    assert np.allclose(expm(d), np.diag(np.exp(np.diag(d))), atol=1e-15)


def test_nonfinite_rejected():
    with pytest.raises(FloatingPointError):
        expm(np.array([[np.nan, 0], [0, 1.0]]))
