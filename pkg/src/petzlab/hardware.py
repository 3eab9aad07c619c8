"""Engineered reverse jumps via strongly decaying ancilla qubits.

Each reverse jump ``L_B,k`` gets one ancilla. The full system+ancilla model is

    H_sa(t~) = H_B(t~) (x) 1 + sqrt(Gamma) sum_k H_int^(k)(t~)
    H_int^(k) = (L_B,k^dag (x) s-^(k) + L_B,k (x) s+^(k)) / 2

with ancilla decay jumps ``sqrt(Gamma) s-^(k)`` and optional residual
(uncontrollable) dissipation acting on the system factor. For large
``Gamma`` the ancillas can be eliminated and the system sees the jump
``L_B,k`` itself. Tensor order is system first, then ancillas ``0..K-1``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .linalg import SM, SP, SUPPORT_EPS, dag, partial_trace, tensor, uhlmann_fidelity
from .lindblad import Lindbladian, _kron, propagate
from .petz import ForwardSpec, ReverseGenerator, build_reverse_generator

logger = logging.getLogger(__name__)

STEP_PER_DECAY = 0.1     # hardware step <= STEP_PER_DECAY / Gamma


@dataclass(frozen=True)
class AncillaAssembly:
    system_dim: int
    n_ancillas: int
    gamma: float
    xi: float = 1.0

    def __post_init__(self):
        if self.system_dim < 1 or self.n_ancillas < 0:
            raise ValueError("invalid assembly dimensions")
        if not self.gamma > 0:
            raise ValueError("ancilla decay rate must be positive")
        if self.xi < 1:
            raise ValueError("xi must be >= 1")

    @property
    def dims(self) -> list[int]:
        return [self.system_dim] + [2] * self.n_ancillas

    @property
    def total_dim(self) -> int:
        return self.system_dim * 2 ** self.n_ancillas

    def ground(self) -> np.ndarray:
        """Ancilla ground state ``|1..1><1..1|`` (annihilated by every ``s-``)."""
        g = np.zeros((2 ** self.n_ancillas,) * 2, dtype=complex)
        g[-1, -1] = 1.0
        return g


def _ancilla_factor(op2: np.ndarray, k: int, n: int) -> np.ndarray:
    return tensor(*([np.eye(2)] * k + [op2] + [np.eye(2)] * (n - k - 1)))


def lift_system(op: np.ndarray, assembly: AncillaAssembly) -> np.ndarray:
    """``op (x) 1_ancillas``; ``op`` may be a stack of operators."""
    return _kron(op, np.eye(2 ** assembly.n_ancillas))


def build_interaction(l_bk: np.ndarray, k: int, assembly: AncillaAssembly) -> np.ndarray:
    """``(L^dag (x) s-^(k) + L (x) s+^(k)) / 2`` on the full space (stacks allowed)."""
    if not 0 <= k < assembly.n_ancillas:
        raise IndexError(f"ancilla index {k} out of range for {assembly.n_ancillas} ancillas")
    l_bk = np.asarray(l_bk, dtype=complex)
    if l_bk.shape[-1] != assembly.system_dim:
        raise ValueError("jump operator does not act on the system space")
    n = assembly.n_ancillas
    lower = _ancilla_factor(SM, k, n)
    raise_ = _ancilla_factor(SP, k, n)
    return 0.5 * (_kron(dag(l_bk), lower) + _kron(l_bk, raise_))


def build_hardware_lindbladian(rev: ReverseGenerator, assembly: AncillaAssembly,
                               residual: Lindbladian | None = None) -> Lindbladian:
    """Full-space generator with ancilla decay and lifted residual jumps."""
    if rev.dim != assembly.system_dim or len(rev.jumps_b) != assembly.n_ancillas:
        raise ValueError("reverse generator does not match the ancilla assembly")
    h = np.asarray(rev.h_b)
    if h.ndim == 3 and h.shape[0] != len(rev.times):
        raise ValueError("Hamiltonian schedule does not match the backward grid")
    for lb in rev.jumps_b:
        if np.asarray(lb).ndim == 3 and len(lb) != len(rev.times):
            raise ValueError("jump schedule does not match the backward grid")
    root = math.sqrt(assembly.gamma)
    h_sa = lift_system(h, assembly)
    for k, lb in enumerate(rev.jumps_b):
        h_sa = h_sa + root * build_interaction(lb, k, assembly)
    jumps = [root * tensor(np.eye(assembly.system_dim), _ancilla_factor(SM, k, assembly.n_ancillas))
             for k in range(assembly.n_ancillas)]
    if residual is not None:
        if residual.dim != assembly.system_dim or not residual.is_constant:
            raise ValueError("residual dissipation must be a constant system Lindbladian")
        jumps += [lift_system(ell, assembly) for ell in residual.jumps]
    return Lindbladian(h_sa, tuple(jumps), rev.times)


def apply_rescaling(rev: ReverseGenerator, assembly: AncillaAssembly, xi: float):
    """Compress the schedule to ``tau / xi`` with ``H_B -> xi H_B`` and ``L_B -> sqrt(xi) L_B``.

    Node ``j`` keeps its operators (scaled) and moves to ``t~_j / xi``; the
    ideal effective generator becomes ``xi * L_B``.
    """
    if xi < 1:
        raise ValueError("xi must be >= 1")
    if xi == 1:
        return rev, replace(assembly, xi=1.0)
    root = math.sqrt(xi)
    scaled = ReverseGenerator(rev.times / xi, xi * rev.h_b,
                              tuple(root * lb for lb in rev.jumps_b), rev.source, rev.kind)
    return scaled, replace(assembly, xi=float(xi))


def ideal_effective_lindbladian(rev: ReverseGenerator,
                                residual: Lindbladian | None = None) -> Lindbladian:
    """System-only generator ``D_diss + L_B`` that the hardware approximates."""
    jumps = list(rev.jumps_b)
    if residual is not None:
        jumps += list(residual.jumps)
    return Lindbladian(rev.h_b, tuple(jumps), rev.times)


@dataclass
class HardwareRun:
    times: np.ndarray            # forward times t; node j compares to the backward state at tau - t
    fidelity: np.ndarray
    reduced: np.ndarray          # reduced system states ordered like ``times``
    ancilla_excitation: np.ndarray
    gamma: float
    xi: float
    substeps: int
    trace_defect: float
    adiabatic_ratio: float       # Gamma / max(||xi H_B||, ||sqrt(xi) H_int||)

    @property
    def fidelity_t0(self) -> float:
        return float(self.fidelity[0])

    @property
    def min_fidelity(self) -> float:
        return float(np.min(self.fidelity))


def _adiabatic_ratio(rev: ReverseGenerator, assembly: AncillaAssembly) -> float:
    hb = float(np.max(np.linalg.norm(rev.h_b, ord=2, axis=(-2, -1))))
    hint = 0.0
    for lb in rev.jumps_b:
        hint = max(hint, float(np.max(np.linalg.norm(np.asarray(lb), ord=2, axis=(-2, -1)))) / 2)
    scale = max(hb, math.sqrt(assembly.gamma) * hint, 1e-300)
    return assembly.gamma / scale


def hardware_run(rev: ReverseGenerator, assembly: AncillaAssembly,
                 residual: Lindbladian | None = None,
                 step_per_decay: float = STEP_PER_DECAY,
                 nodes: np.ndarray | None = None) -> HardwareRun:
    """Propagate the full model from ``gamma_tau (x) |g><g|`` (ancillas in ground)
    and compare reduced states with the forward trajectory.

    ``nodes`` selects the forward nodes to compare at (they must be evenly
    spaced); by default every node of a uniform schedule.
    """
    lind = build_hardware_lindbladian(rev, assembly, residual)
    ratio = _adiabatic_ratio(rev, assembly)
    if ratio < 10:
        logger.info("weak adiabatic separation: Gamma / coupling = %.3g", ratio)
    forward = rev.source
    nodes = np.arange(len(forward)) if nodes is None else np.asarray(nodes)
    t_out = forward.times[nodes]
    gaps = np.diff(t_out)
    if len(gaps) == 0 or np.ptp(gaps) > 1e-9 * gaps[0]:
        raise ValueError("comparison nodes must be evenly spaced")
    m = len(nodes) - 1
    dt_rev = float(rev.times[-1] - rev.times[0]) / m
    sub = max(1, math.ceil(dt_rev * assembly.gamma / step_per_decay - 1e-9))
    rho0 = np.kron(forward.final, assembly.ground())
    traj = propagate(lind, rho0, float(rev.times[0]), float(rev.times[-1]), m * sub, store_every=sub)
    reduced = np.array([partial_trace(s, assembly.dims, [0]) for s in traj.states])
    if assembly.n_ancillas:
        g0 = np.kron(np.eye(assembly.system_dim), assembly.ground())
        excitation = 1.0 - np.real(np.einsum("ij,nji->n", g0, traj.states))
    else:
        excitation = np.zeros(len(traj))
    back_at_t = reduced[::-1]
    targets = forward.states[nodes]
    fid = np.array([uhlmann_fidelity(targets[j], back_at_t[j]) for j in range(m + 1)])
    return HardwareRun(t_out, fid, back_at_t, excitation[::-1], assembly.gamma,
                       assembly.xi, sub, traj.trace_defect, ratio)


@dataclass
class SweepResult:
    runs: list = field(default_factory=list)

    def rows(self) -> Iterable[tuple]:
        for run in self.runs:
            for t, f in zip(run.times, run.fidelity):
                yield run.gamma, run.xi, t, f

    def summary(self) -> dict:
        out = {}
        for g in sorted({r.gamma for r in self.runs}):
            runs = sorted((r for r in self.runs if r.gamma == g), key=lambda r: r.xi)
            best = max(runs, key=lambda r: r.fidelity_t0)
            out[f"{g:g}"] = {
                "argmax_xi": best.xi,
                "fidelity_t0": {f"{r.xi:g}": r.fidelity_t0 for r in runs},
                "min_fidelity": {f"{r.xi:g}": r.min_fidelity for r in runs},
            }
        return out


def hardware_sweep(spec: ForwardSpec, gammas: Sequence[float], xis: Sequence[float] = (1.0,),
                   residual: bool = False, eps: float = SUPPORT_EPS, workers: int = 1,
                   step_per_decay: float = STEP_PER_DECAY) -> SweepResult:
    """Fidelity curves for every ``(Gamma, xi)``; residual dissipation is the forward one."""
    forward, nodes = spec.graded_run()
    rev = build_reverse_generator(forward, spec.hamiltonian, spec.jumps, eps)
    res = Lindbladian(np.zeros_like(spec.hamiltonian), tuple(spec.jumps)) if residual else None

    def one(point):
        gamma, xi = point
        assembly = AncillaAssembly(rev.dim, len(rev.jumps_b), float(gamma))
        r, a = apply_rescaling(rev, assembly, float(xi))
        return hardware_run(r, a, res, step_per_decay, nodes)

    points = [(g, x) for g in gammas for x in xis]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(one, points))
    else:
        runs = [one(p) for p in points]
    return SweepResult(runs)
