import numpy as np
import pytest

from petzlab.hardware import (AncillaAssembly, apply_rescaling, build_hardware_lindbladian,
                              build_interaction, hardware_run, hardware_sweep,
                              ideal_effective_lindbladian, lift_system)
from petzlab.linalg import SM, SP, SX, SZ, partial_trace
from petzlab.lindblad import Lindbladian, propagate
from petzlab.petz import ForwardSpec, build_reverse_generator


def _rev(steps=200):
    rho0 = 0.5 * (np.eye(2) + 0.5 * SZ + 0.3 * SX)
    spec = ForwardSpec(0.3 * SX + SZ, (0.4 * SM,), rho0, 2.0, steps)
    fwd = spec.run()
    return spec, build_reverse_generator(fwd, spec.hamiltonian, spec.jumps)


def test_assembly_validation_and_ground():
    a = AncillaAssembly(2, 2, 5.0)
    assert a.dims == [2, 2, 2] and a.total_dim == 8
    g = a.ground()
    assert g[3, 3] == 1 and np.trace(g) == 1
    for op in (np.kron(SM, np.eye(2)), np.kron(np.eye(2), SM)):
        assert np.allclose(op @ g, 0)             # annihilated by every lowering operator
    for bad in [dict(system_dim=0, n_ancillas=1, gamma=1.0), dict(system_dim=2, n_ancillas=1, gamma=0.0),
                dict(system_dim=2, n_ancillas=1, gamma=1.0, xi=0.5)]:
        with pytest.raises(ValueError):
            AncillaAssembly(**bad)


def test_interaction_is_hermitian_and_local():
    a = AncillaAssembly(2, 2, 1.0)
    lb = np.array([[0.1, 0.4j], [0.2, -0.3]])
    h = build_interaction(lb, 1, a)
    assert np.allclose(h, h.conj().T)
    ref = 0.5 * (np.kron(lb.conj().T, np.kron(np.eye(2), SM)) + np.kron(lb, np.kron(np.eye(2), SP)))
    assert np.allclose(h, ref)
    with pytest.raises(IndexError):
        build_interaction(lb, 2, a)
    with pytest.raises(ValueError):
        build_interaction(np.eye(3), 0, a)


def test_lift_and_partial_trace():
    a = AncillaAssembly(2, 1, 1.0)
    assert np.allclose(partial_trace(lift_system(SX, a) @ np.kron(np.eye(2) / 2, a.ground()),
                                     a.dims, [0]), SX / 2)


def test_full_model_shape_and_mismatch():
    _, rev = _rev(20)
    a = AncillaAssembly(2, 1, 10.0)
    lind = build_hardware_lindbladian(rev, a)
    assert lind.dim == 4 and len(lind.jumps) == 1
    with pytest.raises(ValueError):
        build_hardware_lindbladian(rev, AncillaAssembly(2, 2, 10.0))
    res = Lindbladian(np.zeros((2, 2)), (0.4 * SM,))
    assert len(build_hardware_lindbladian(rev, a, res).jumps) == 2


def test_rescaling():
    _, rev = _rev(20)
    r2, a2 = apply_rescaling(rev, AncillaAssembly(2, 1, 10.0), 4.0)
    assert a2.xi == 4.0
    assert np.allclose(r2.times, rev.times / 4)
    assert np.allclose(r2.h_b, 4 * rev.h_b)
    assert np.allclose(r2.jumps_b[0], 2 * rev.jumps_b[0])
    with pytest.raises(ValueError):
        apply_rescaling(rev, AncillaAssembly(2, 1, 10.0), 0.5)


def test_large_gamma_approaches_effective_dynamics():
    """Reduced hardware state converges to the ideal reverse flow as Gamma grows."""
    spec, rev = _rev(200)
    ideal = propagate(ideal_effective_lindbladian(rev), spec.run().final, 0.0, rev.times[-1], 200)
    errs = []
    for gamma in (20.0, 200.0, 2000.0):
        run = hardware_run(rev, AncillaAssembly(2, 1, gamma))
        errs.append(np.max(np.abs(run.reduced[0] - ideal.final)))
        assert run.trace_defect < 1e-10
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


def test_run_diagnostics():
    _, rev = _rev(50)
    run = hardware_run(rev, AncillaAssembly(2, 1, 100.0))
    assert run.substeps == int(np.ceil((2.0 / 50) * 100 / 0.1 - 1e-9))
    assert run.adiabatic_ratio > 10
    assert np.all(run.ancilla_excitation < 0.05)
    assert run.min_fidelity <= run.fidelity_t0 or run.min_fidelity == pytest.approx(run.fidelity_t0)
    with pytest.raises(ValueError):
        hardware_run(rev, AncillaAssembly(2, 1, 100.0), nodes=np.array([0, 1, 3]))


def test_sweep_threads_match_serial():
    spec = ForwardSpec.qubit_example(100)
    a = hardware_sweep(spec, [50.0], [1.0, 2.0], residual=True, eps=1e-12)
    b = hardware_sweep(spec, [50.0], [1.0, 2.0], residual=True, eps=1e-12, workers=2)
    assert list(a.rows()) == list(b.rows())
    s = a.summary()["50"]
    assert s["argmax_xi"] in (1.0, 2.0) and set(s["fidelity_t0"]) == {"1", "2"}
