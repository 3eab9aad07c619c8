import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm as scipy_expm

from petzlab.linalg import SM, SX, SZ, ket, projector, uhlmann_fidelity
from petzlab.lindblad import (Lindbladian, apply_generator, identity_superop, is_cptp,
                              kraus_superop, propagate, unvec, vec)
from petzlab.petz import (ForwardSpec, build_dissipation_only_reverse, build_reverse_generator,
                          correction_hamiltonian, correction_matrix, petz_channel,
                          reversal_experiment, reverse_hamiltonian_derivative_form, reverse_jumps,
                          spectral_shift)


def _state(rng, d, rank=None):
    rank = rank or d
    a = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    r = a @ a.conj().T
    return r / np.trace(r).real


def _channel(rng, d, k=3):
    g = rng.normal(size=(k * d, d)) + 1j * rng.normal(size=(k * d, d))
    q, _ = np.linalg.qr(g)
    return kraus_superop([q[i * d:(i + 1) * d] for i in range(k)])


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2, 3, 4]), st.integers(0, 2 ** 31))
def test_petz_recovers_reference(d, seed):
    rng = np.random.default_rng(seed)
    sigma, chan = _state(rng, d), _channel(rng, d)
    rec = petz_channel(chan, sigma)
    assert np.linalg.norm(unvec(rec @ chan @ vec(sigma)) - sigma) < 1e-8
    assert is_cptp(rec, 1e-7)


def test_petz_of_identity_is_identity_on_support():
    rng = np.random.default_rng(1)
    sigma = _state(rng, 3)
    assert np.allclose(petz_channel(identity_superop(3), sigma), identity_superop(3), atol=1e-10)


def test_petz_channel_rejects_mismatch_and_warns():
    with pytest.raises(ValueError):
        petz_channel(identity_superop(2), np.eye(3) / 3)
    with pytest.warns(RuntimeWarning):
        petz_channel(2 * identity_superop(2), np.eye(2) / 2)


def test_spectral_shift_weights():
    w = spectral_shift(np.array([0.0, 0.25, 1.0]))
    assert w[1, 2] == pytest.approx((0.5 - 1) / 1.5)
    assert w[2, 0] == 1.0 and w[0, 2] == -1.0
    assert np.allclose(w, -w.T)
    assert np.all(np.diag(w) == 0)


def test_reverse_jump_definition():
    rng = np.random.default_rng(2)
    gamma = _state(rng, 3)
    ell = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    w, v = np.linalg.eigh(gamma)
    root = (v * np.sqrt(w)) @ v.conj().T
    lb = reverse_jumps(gamma, [ell])[0]
    assert np.allclose(lb, root @ ell.conj().T @ np.linalg.inv(root))


def test_correction_forms_agree():
    rng = np.random.default_rng(3)
    gamma = _state(rng, 4)
    jumps = [rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)) for _ in range(2)]
    a = correction_hamiltonian(gamma, jumps, form="direct")
    b = correction_hamiltonian(gamma, jumps, form="reverse")
    assert np.allclose(a, b, atol=1e-10)
    assert np.allclose(a, a.conj().T)
    m = correction_matrix(gamma, jumps)
    assert np.allclose(m, m.conj().T)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2 ** 31))
def test_derivative_form_equals_correction_form(d, seed):
    rng = np.random.default_rng(seed)
    gamma = _state(rng, d)
    h = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    h = h + h.conj().T
    jumps = (0.5 * (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))),)
    gdot = apply_generator(Lindbladian(h, jumps), gamma)
    hd = reverse_hamiltonian_derivative_form(gamma, gdot, h, jumps)
    assert np.max(np.abs(hd - (-h + correction_hamiltonian(gamma, jumps)))) < 1e-8


def test_reverse_generator_undoes_generator_instantaneously():
    """L_B(gamma) = -L_F(gamma): the backward flow retraces the forward one."""
    rng = np.random.default_rng(4)
    gamma = _state(rng, 3)
    h = rng.normal(size=(3, 3))
    h = h + h.T
    jumps = (rng.normal(size=(3, 3)) * 0.4,)
    fwd = apply_generator(Lindbladian(h, jumps), gamma)
    hb = -h + correction_hamiltonian(gamma, jumps)
    back = apply_generator(Lindbladian(hb, tuple(reverse_jumps(gamma, jumps))), gamma)
    assert np.allclose(back, -fwd, atol=1e-10)


def test_reverse_grid_and_validation():
    spec = ForwardSpec(SX, (0.4 * SM,), np.eye(2) / 2 + 0.3 * SZ / 2, 1.0, 20)
    fwd = spec.run()
    rev = build_reverse_generator(fwd, spec.hamiltonian, spec.jumps)
    assert np.allclose(rev.times, fwd.times)
    assert rev.h_b.shape == (21, 2, 2)
    with pytest.raises(ValueError):
        build_reverse_generator(type(fwd)(fwd.times[:1], fwd.states[:1], 0.1), SX, ())


def test_mixed_state_reversal_converges():
    rho0 = 0.5 * (np.eye(2) + 0.6 * SX + 0.2 * SZ)
    spec = ForwardSpec(0.3 * SX + SZ, (0.4 * SM,), rho0, 5.0, 1000)
    a = reversal_experiment(spec, steps=500)
    b = reversal_experiment(spec, steps=1000)
    assert a.min_fidelity > 1 - 1e-6
    assert b.deficit < a.deficit / 2


def test_full_rank_reversal_needs_no_grading():
    rho0 = 0.5 * (np.eye(2) + 0.5 * SZ)
    spec = ForwardSpec(SX, (0.5 * SM,), rho0, 2.0, 400)
    report = reversal_experiment(spec)
    assert len(report.backward) == 401
    assert report.endpoint_trace_distance < 1e-6


def test_pure_start_uses_graded_window():
    spec = ForwardSpec.qubit_example(2000)
    report = reversal_experiment(spec, eps=1e-14)
    assert report.deficit < 1e-9
    assert report.endpoint_fidelity > 1 - 1e-9
    assert report.backward_choi_min > -1e-9


def test_hamiltonian_only_falls_short():
    spec = ForwardSpec.qubit_example(1000)
    full = reversal_experiment(spec, eps=1e-14)
    ham = reversal_experiment(spec, eps=1e-14, mode="hamiltonian_only")
    assert ham.endpoint_fidelity < full.endpoint_fidelity - 0.1


def test_dissipation_only_lands_on_unitary_image():
    spec = ForwardSpec.qubit_example(1000)
    report = reversal_experiment(spec, mode="dissipation_only")
    u = scipy_expm(-1j * spec.tau * spec.hamiltonian)
    assert uhlmann_fidelity(report.endpoint, u @ spec.rho0 @ u.conj().T) > 1 - 1e-8
    rev = build_dissipation_only_reverse(spec.run(50), spec.hamiltonian, spec.jumps)
    assert rev.kind == "dissipation_only"


def test_unknown_mode():
    with pytest.raises(ValueError):
        reversal_experiment(ForwardSpec.qubit_example(10), mode="sideways")


def test_graded_run_contains_uniform_nodes():
    spec = ForwardSpec.qubit_example(100)
    traj, idx = spec.graded_run()
    assert np.allclose(traj.times[idx], np.linspace(0, 10, 101))
    assert traj.times[1] < 1e-6 and len(traj) > 101
    ref = propagate(spec.lindbladian(), spec.rho0, 0.0, spec.tau, 100)
    assert np.allclose(traj.states[idx], ref.states, atol=1e-12)
