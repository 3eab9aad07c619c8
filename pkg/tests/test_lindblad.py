import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm as scipy_expm

from petzlab.linalg import SM, SX, SZ, ket, projector, purity
from petzlab.lindblad import (IntegrationError, Lindbladian, apply_generator, channel_from,
                              choi_matrix, dissipator_superop, generator_superop, is_cptp,
                              kraus_superop, propagate, purity_rate, sandwich, trace_defect,
                              unvec, vec)


def _rand(rng, d):
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 31))
def test_column_stacking_identity(d, seed):
    rng = np.random.default_rng(seed)
    a, x, b = _rand(rng, d), _rand(rng, d), _rand(rng, d)
    assert np.allclose(sandwich(a, b) @ vec(x), vec(a @ x @ b))
    assert np.allclose(unvec(vec(x)), x)
    assert np.allclose(sandwich(a) @ vec(x), vec(a @ x @ a.conj().T))


def test_decay_dissipator_example():
    # L = s- = |1><0|:  D(|0><0|) = |1><1| - |0><0|
    rho = projector(ket("0"))
    out = unvec(dissipator_superop([SM]) @ vec(rho))
    assert np.allclose(out, projector(ket("1")) - rho)


def test_superop_matches_action():
    rng = np.random.default_rng(2)
    h = _rand(rng, 3)
    h = h + h.conj().T
    jumps = [_rand(rng, 3), _rand(rng, 3)]
    lind = Lindbladian(h, tuple(jumps))
    rho = _rand(rng, 3)
    assert np.allclose(generator_superop(h, jumps) @ vec(rho), vec(apply_generator(lind, rho)))


def test_amplitude_damping_against_kraus():
    g, t = 0.7, 1.3
    p = 1 - np.exp(-g ** 2 * t)
    kraus = [np.array([[np.sqrt(1 - p), 0], [0, 1]]),
             np.sqrt(p) * SM]
    oracle = kraus_superop(kraus)
    lind = Lindbladian(np.zeros((2, 2)), (g * SM,))
    assert np.max(np.abs(channel_from(lind, 0.0, t) - oracle)) < 1e-12
    rho = propagate(lind, projector(ket("0")), 0.0, t, 50).final
    assert np.allclose(rho, unvec(oracle @ vec(projector(ket("0")))), atol=1e-12)


def test_generated_channel_is_cptp():
    rng = np.random.default_rng(3)
    h = _rand(rng, 2)
    lind = Lindbladian(h + h.conj().T, (_rand(rng, 2),))
    s = channel_from(lind, 0.0, 0.7, 10)
    assert is_cptp(s)
    assert trace_defect(s) < 1e-12
    assert np.min(np.linalg.eigvalsh(choi_matrix(s))) > -1e-12


def test_time_dependent_interpolation_and_exactness():
    """Piecewise-linear samples of H(t) = t sz: midpoint steps are exact for commuting nodes."""
    times = np.linspace(0, 1, 11)
    h = times[:, None, None] * SZ
    lind = Lindbladian(h, (), times)
    assert np.allclose(lind.superoperator(0.35), generator_superop(0.35 * SZ))
    psi = (ket("0") + ket("1")) / np.sqrt(2)
    out = propagate(lind, projector(psi), 0.0, 1.0, 20).final
    u = scipy_expm(-0.5j * SZ)               # integral of t dt = 1/2
    assert np.allclose(out, u @ projector(psi) @ u.conj().T, atol=1e-12)
    with pytest.raises(ValueError):
        lind.superoperator(1.5)


def test_constructor_validation():
    with pytest.raises(ValueError):
        Lindbladian(np.zeros((2, 2)), (np.zeros((3, 3)),))
    with pytest.raises(ValueError):
        Lindbladian(np.zeros((4, 2, 2)), ())            # sampled without a grid
    with pytest.raises(ValueError):
        Lindbladian(SX, (), np.array([0.0, 0.0]))


def test_purity_rate_matches_finite_difference():
    rng = np.random.default_rng(4)
    a = _rand(rng, 3)
    rho = a @ a.conj().T
    rho /= np.trace(rho).real
    h = _rand(rng, 3)
    lind = Lindbladian(h + h.conj().T, (_rand(rng, 3) * 0.4,))
    s = lind.superoperator()
    dt = 1e-5
    num = (purity(unvec(scipy_expm(dt * s) @ vec(rho))) - purity(unvec(scipy_expm(-dt * s) @ vec(rho)))) / (2 * dt)
    assert abs(num - purity_rate(lind, rho)) < 1e-6
    assert purity_rate(Lindbladian(h + h.conj().T), rho) == 0.0


def test_store_every_and_trace():
    lind = Lindbladian(SX, (0.3 * SM,))
    traj = propagate(lind, projector(ket("0")), 0.0, 2.0, 100, store_every=10)
    assert len(traj) == 11
    assert np.allclose(np.trace(traj.states, axis1=1, axis2=2), 1.0)
    assert traj.trace_defect < 1e-12


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_reports_last_good_time():
    lind = Lindbladian(np.zeros((2, 2)), (1e200 * SM,))
    with pytest.raises(IntegrationError) as info:
        propagate(lind, projector(ket("0")), 0.0, 1.0, 10)
    assert info.value.last_good_time == 0.0
