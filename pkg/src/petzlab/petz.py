"""Petz recovery: the channel form and the continuous-time reverse generator.

The reverse generator of a forward trajectory ``gamma_t`` is

    H_B(tau - t) = -H_F + H_C(gamma_t)
    L_B,k(tau - t) = gamma_t^{1/2} L_F,k^dag gamma_t^{-1/2}

restricted to the support of ``gamma_t``. ``H_C`` is the spectral-shift
weighted correction built from

    M_t = sum_k L^dag L + gamma^{-1/2} L gamma L^dag gamma^{-1/2}.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expm import expm
from .linalg import (SUPPORT_EPS, SM, SX, SZ, dag, hermitian_part, herm_eig,
                     is_density_matrix, projector, purity, sqrt_on_support,
                     support_cutoff, trace_distance, uhlmann_fidelity)
from .lindblad import (Lindbladian, Trajectory, choi_min_eigenvalue, generator_superop,
                       propagate, sandwich, trace_defect, unvec, vec)

logger = logging.getLogger(__name__)

DEGENERATE_TOL = 1e-12
MIXED_PAIR_TOL = 1e-12


# ---------------------------------------------------------------------------
# channel form


def petz_channel(channel: np.ndarray, sigma: np.ndarray, eps: float = SUPPORT_EPS,
                 cp_tol: float = 1e-8) -> np.ndarray:
    """Superoperator of ``J_sigma^{1/2} o N^dag o J_{N(sigma)}^{-1/2}``.

    ``N^dag`` is the Hilbert-Schmidt adjoint, i.e. the conjugate transpose of
    the column-stacked matrix. Square roots are taken on the ``eps``-support.
    A channel that is not CPTP within ``cp_tol`` triggers a warning only.
    """
    channel = np.asarray(channel, dtype=complex)
    d = sigma.shape[0]
    if channel.shape != (d * d, d * d):
        raise ValueError("channel and reference state dimensions differ")
    if trace_defect(channel) > cp_tol or choi_min_eigenvalue(channel) < -cp_tol:
        warnings.warn("petz_channel: input map is not CPTP within tolerance", RuntimeWarning)
    root, _, _ = sqrt_on_support(sigma, eps)
    n_sigma = unvec(channel @ vec(sigma), d)
    _, inv_root, _ = sqrt_on_support(hermitian_part(n_sigma), eps)
    return sandwich(root, root) @ channel.conj().T @ sandwich(inv_root, inv_root)


# ---------------------------------------------------------------------------
# reverse generator pieces


def spectral_shift(values: np.ndarray, eps: float = SUPPORT_EPS) -> np.ndarray:
    """Weights ``(sqrt(l) - sqrt(l')) / (sqrt(l) + sqrt(l'))`` on eigenvalue pairs.

    Eigenvalues at or below the support cutoff count as zero, so a pair with
    exactly one of them gives +-1. Degenerate pairs and pairs outside the
    support get 0.
    """
    values = np.asarray(values, dtype=float)
    lam = np.where(values > support_cutoff(values, eps), values, 0.0)
    s = np.sqrt(lam)
    num = s[:, None] - s[None, :]
    den = s[:, None] + s[None, :]
    w = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    w[np.abs(lam[:, None] - lam[None, :]) < DEGENERATE_TOL] = 0.0
    return w


def _as_list(jumps) -> list[np.ndarray]:
    return [np.asarray(ell, dtype=complex) for ell in jumps]


def reverse_jumps(gamma: np.ndarray, forward_jumps: Sequence[np.ndarray],
                  eps: float = SUPPORT_EPS) -> list[np.ndarray]:
    """``Pi gamma^{1/2} L^dag gamma^{-1/2} Pi`` for each forward jump ``L``."""
    root, inv_root, proj = sqrt_on_support(gamma, eps)
    return [proj @ root @ dag(ell) @ inv_root @ proj for ell in _as_list(forward_jumps)]


def correction_matrix(gamma: np.ndarray, forward_jumps: Sequence[np.ndarray],
                      eps: float = SUPPORT_EPS, form: str = "direct") -> np.ndarray:
    """The Hermitian matrix ``M_t`` that feeds the correction Hamiltonian.

    ``form="direct"`` uses ``gamma^{-1/2} L gamma L^dag gamma^{-1/2}``;
    ``form="reverse"`` uses the equivalent ``L_B^dag L_B``.
    """
    d = gamma.shape[0]
    jumps = _as_list(forward_jumps)
    m = np.zeros((d, d), dtype=complex)
    if not jumps:
        return m
    if form == "direct":
        _, inv_root, _ = sqrt_on_support(gamma, eps)
        for ell in jumps:
            m += dag(ell) @ ell + inv_root @ ell @ gamma @ dag(ell) @ inv_root
    elif form == "reverse":
        for ell, lb in zip(jumps, reverse_jumps(gamma, jumps, eps)):
            m += dag(ell) @ ell + dag(lb) @ lb
    else:
        raise ValueError(f"unknown form {form!r}")
    return hermitian_part(m)


def correction_hamiltonian(gamma: np.ndarray, forward_jumps: Sequence[np.ndarray],
                           eps: float = SUPPORT_EPS, form: str = "direct") -> np.ndarray:
    """``H_C = -(i/2) sum W(l, l') <l|M|l'> |l><l'|`` in the eigenbasis of ``gamma``."""
    d = gamma.shape[0]
    if len(forward_jumps) == 0:
        return np.zeros((d, d), dtype=complex)
    w, v = herm_eig(gamma)
    weights = spectral_shift(w, eps)
    m = v.conj().T @ correction_matrix(gamma, forward_jumps, eps, form) @ v
    cut = support_cutoff(w, eps)
    below = w <= cut
    mixed = below[:, None] ^ below[None, :]
    weights = np.where(mixed & (np.abs(m) <= MIXED_PAIR_TOL), 0.0, weights)
    hc = v @ (-0.5j * weights * m) @ v.conj().T
    return hermitian_part(hc)


def sqrt_derivative(gamma: np.ndarray, gamma_dot: np.ndarray,
                    eps: float = SUPPORT_EPS) -> np.ndarray:
    """``d/dt gamma^{1/2}`` from ``d/dt gamma`` via ``<l|gdot|l'> / (sqrt l + sqrt l')``."""
    w, v = herm_eig(gamma)
    lam = np.where(w > support_cutoff(w, eps), w, 0.0)
    s = np.sqrt(lam)
    den = s[:, None] + s[None, :]
    g = v.conj().T @ gamma_dot @ v
    out = np.divide(g, den, out=np.zeros_like(g), where=den > 0)
    return v @ out @ v.conj().T


def reverse_hamiltonian_derivative_form(gamma: np.ndarray, gamma_dot: np.ndarray,
                                        h_forward: np.ndarray,
                                        forward_jumps: Sequence[np.ndarray],
                                        eps: float = SUPPORT_EPS) -> np.ndarray:
    """``-1/2 gamma^{-1/2} (K_F - i d/dt) gamma^{1/2} + h.c.`` with
    ``K_F = H_F - (i/2) sum L^dag L``."""
    jumps = _as_list(forward_jumps)
    k = np.asarray(h_forward, dtype=complex).copy()
    for ell in jumps:
        k = k - 0.5j * dag(ell) @ ell
    root, inv_root, _ = sqrt_on_support(gamma, eps)
    droot = sqrt_derivative(gamma, gamma_dot, eps)
    x = -0.5 * inv_root @ (k @ root - 1j * droot)
    return x + dag(x)


# ---------------------------------------------------------------------------
# reverse generator along a trajectory


def _at(schedule, j: int) -> np.ndarray:
    op = np.asarray(schedule, dtype=complex)
    return op if op.ndim == 2 else op[j]


def _jumps_at(schedules, j: int) -> list[np.ndarray]:
    return [_at(s, j) for s in schedules]


@dataclass(frozen=True)
class ReverseGenerator:
    """Backward Hamiltonian and jump schedules on the reversed forward grid.

    Node ``j`` of ``times`` (``t~_j = tau - t_{M-j}``) holds the operators
    built from forward state ``M - j``.
    """

    times: np.ndarray
    h_b: np.ndarray
    jumps_b: tuple
    source: Trajectory = field(repr=False)
    kind: str = "full"

    @property
    def dim(self) -> int:
        return self.h_b.shape[-1]

    def lindbladian(self, with_jumps: bool = True) -> Lindbladian:
        return Lindbladian(self.h_b, self.jumps_b if with_jumps else (), self.times)


def _validate_forward(forward: Trajectory, tol: float = 1e-6):
    if len(forward) < 2:
        raise ValueError("forward trajectory needs at least two nodes")
    for k, s in enumerate(forward.states):
        if not is_density_matrix(s, tol):
            raise ValueError(f"forward trajectory node {k} (t={forward.times[k]:.6g}) "
                             "is not a valid density matrix")


def _forward_generator(h_forward, jump_schedules, times) -> Lindbladian:
    sampled = np.asarray(h_forward).ndim == 3 or any(np.asarray(s).ndim == 3 for s in jump_schedules)
    return Lindbladian(h_forward, tuple(jump_schedules), times if sampled else None)


def build_reverse_generator(forward: Trajectory, h_forward, forward_jumps,
                            eps: float = SUPPORT_EPS) -> ReverseGenerator:
    """Reverse generator node-for-node along ``forward``.

    ``h_forward`` and each entry of ``forward_jumps`` are constant ``(d, d)``
    operators or ``(len(forward), d, d)`` samples on the forward grid.
    """
    _validate_forward(forward)
    m = len(forward) - 1
    d = forward.dim
    k_jumps = len(forward_jumps)
    h_b = np.empty((m + 1, d, d), dtype=complex)
    l_b = np.empty((k_jumps, m + 1, d, d), dtype=complex)
    for j in range(m + 1):
        gamma = forward.states[j]
        jumps = _jumps_at(forward_jumps, j)
        hc = correction_hamiltonian(gamma, jumps, eps) if jumps else 0.0
        h_b[m - j] = -_at(h_forward, j) + hc
        for k, lb in enumerate(reverse_jumps(gamma, jumps, eps)):
            l_b[k, m - j] = lb
    times = forward.times[-1] - forward.times[::-1]
    return ReverseGenerator(times, h_b, tuple(l_b), forward, "full")


def unitary_path(h_forward, times: np.ndarray) -> np.ndarray:
    """``U_t = T exp(-i int_0^t H_F)`` on ``times``, stepped with midpoint exponentials."""
    times = np.asarray(times, dtype=float)
    h = np.asarray(h_forward, dtype=complex)
    d = h.shape[-1]
    dts = np.diff(times)
    if h.ndim == 2:
        mids = np.broadcast_to(h, (len(dts), d, d))
    else:
        mids = 0.5 * (h[:-1] + h[1:])
    steps = expm(-1j * dts[:, None, None] * mids)
    out = np.empty((len(times), d, d), dtype=complex)
    out[0] = np.eye(d)
    for k, p in enumerate(steps):
        out[k + 1] = p @ out[k]
    return out


def build_dissipation_only_reverse(forward: Trajectory, h_forward, forward_jumps,
                                   eps: float = SUPPORT_EPS) -> ReverseGenerator:
    """Reverse generator that removes only the dissipation.

    At backward time ``t~`` the full-reversal correction ``H_C`` and jumps are
    conjugated by ``U_{t~}``; the Hamiltonian ``-H_F`` is dropped. Running it
    from ``gamma_tau`` for ``tau`` ends at ``U_tau gamma_0 U_tau^dag``.
    """
    _validate_forward(forward)
    m = len(forward) - 1
    d = forward.dim
    k_jumps = len(forward_jumps)
    u = unitary_path(h_forward, forward.times - forward.times[0])
    h_b = np.empty((m + 1, d, d), dtype=complex)
    l_b = np.empty((k_jumps, m + 1, d, d), dtype=complex)
    for j in range(m + 1):
        gamma = forward.states[j]
        jumps = _jumps_at(forward_jumps, j)
        uj = u[m - j]
        hc = correction_hamiltonian(gamma, jumps, eps) if jumps else np.zeros((d, d))
        h_b[m - j] = hermitian_part(uj @ hc @ dag(uj))
        for k, lb in enumerate(reverse_jumps(gamma, jumps, eps)):
            l_b[k, m - j] = uj @ lb @ dag(uj)
    times = forward.times[-1] - forward.times[::-1]
    return ReverseGenerator(times, h_b, tuple(l_b), forward, "dissipation_only")


TAIL_LEVELS = 40


def _window_edges(h: float, steps: int, alpha: float, levels: int):
    """Descending forward times for the graded window and the positions of grid nodes.

    Interval ``[k h, (k+1) h]`` is cut into ``ceil(1 / (alpha k))`` equal pieces;
    ``[0, h]`` is cut geometrically with ratio ``1 / (1 + alpha)`` down to
    about ``h / 2**levels``, then a last piece to 0.
    """
    kmax = max(1, min(steps, math.ceil(1.0 / alpha)))
    edges = [kmax * h]
    nodes = []
    for k in range(kmax - 1, 0, -1):
        s = math.ceil(1.0 / (alpha * k))
        edges.extend(k * h + h * np.arange(s - 1, -1, -1) / s)
        nodes.append(len(edges) - 1)
    n_geo = math.ceil(levels * math.log(2.0) / math.log1p(alpha))
    edges.extend(h * (1.0 + alpha) ** -np.arange(1.0, n_geo + 1))
    edges.append(0.0)
    nodes.append(len(edges) - 1)
    return kmax, np.array(edges), nodes


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ForwardSpec:
    """Forward Lindblad run: constant ``hamiltonian`` and ``jumps`` from ``rho0``
    over ``[0, tau]`` in ``steps`` steps."""

    hamiltonian: np.ndarray
    jumps: tuple
    rho0: np.ndarray
    tau: float
    steps: int

    @classmethod
    def qubit_example(cls, steps: int = 10_000) -> "ForwardSpec":
        """``H_F = 0.3 sx + sz``, ``L_F = 0.4 s-``, ``tau = 10`` from ``|0>``."""
        return cls(0.3 * SX + SZ, (0.4 * SM,), projector([1, 0]), 10.0, steps)

    def lindbladian(self) -> Lindbladian:
        return Lindbladian(self.hamiltonian, tuple(self.jumps))

    def run(self, steps: int | None = None) -> Trajectory:
        return propagate(self.lindbladian(), self.rho0, 0.0, self.tau, steps or self.steps)

    def states_at(self, times) -> np.ndarray:
        """Exact forward states ``exp(t L) rho0`` at arbitrary ``times``."""
        times = np.asarray(times, dtype=float)
        d = self.rho0.shape[0]
        sf = self.lindbladian().superoperator(0.0)
        states = hermitian_part(unvec(expm(times[:, None, None] * sf) @ vec(self.rho0), d))
        return states / np.real(np.trace(states, axis1=1, axis2=2))[:, None, None]

    def graded_run(self, steps: int | None = None, levels: int = TAIL_LEVELS):
        """Forward states on the uniform grid plus graded points near ``t = 0``.

        Returns the trajectory and the indices of the uniform nodes. Used to
        sample reverse schedules finely where ``rho0`` is rank deficient.
        """
        steps = steps or self.steps
        h = self.tau / steps
        uniform = np.linspace(0.0, self.tau, steps + 1)
        _, edges, _ = _window_edges(h, steps, min(0.5, math.sqrt(h / self.tau)), levels)
        near = np.min(np.abs(edges[:, None] - uniform[None, :]), axis=1) <= 1e-9 * h
        times = np.union1d(uniform, edges[~near])
        idx = np.searchsorted(times, uniform)
        return Trajectory(times, self.states_at(times), h), idx


@dataclass
class ReversalReport:
    times: np.ndarray                # forward times t
    fidelity: np.ndarray             # F(target_t, backward state at t~ = tau - t)
    purity_forward: np.ndarray
    purity_backward: np.ndarray
    endpoint_trace_distance: float   # backward endpoint vs target at t = 0
    endpoint_fidelity: float
    endpoint: np.ndarray
    target0: np.ndarray
    mode: str
    backward_choi_min: float
    forward: Trajectory = field(repr=False)
    backward: Trajectory = field(repr=False)

    @property
    def min_fidelity(self) -> float:
        return float(np.min(self.fidelity))

    @property
    def deficit(self) -> float:
        return 1.0 - self.min_fidelity

    def rows(self):
        return zip(self.times, self.fidelity, self.purity_forward, self.purity_backward)

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "min_fidelity": self.min_fidelity,
            "endpoint_fidelity": self.endpoint_fidelity,
            "endpoint_trace_distance": self.endpoint_trace_distance,
            "endpoint_purity": purity(self.endpoint),
            "backward_choi_min": self.backward_choi_min,
            "forward_trace_defect": self.forward.trace_defect,
            "backward_trace_defect": self.backward.trace_defect,
            "backward_min_eigenvalue": self.backward.min_eigenvalue,
            "nodes": len(self.times),
        }


def _sampled_choi_min(lind: Lindbladian, dt: float, samples: int = 16) -> float:
    idx = np.unique(np.linspace(0, len(lind.times) - 2, samples).astype(int))
    mids = lind.times[idx] + 0.5 * dt
    props = expm(dt * lind.superoperator(mids))
    return float(min(choi_min_eigenvalue(p) for p in props))


def _graded_window(spec: ForwardSpec, rho: np.ndarray, h: float, steps: int, eps: float,
                   mode: str, levels: int = TAIL_LEVELS):
    """Backward steps across the forward window ``[0, kmax h]`` on a graded mesh.

    A rank-deficient ``rho0`` makes ``L_B`` blow up like ``lambda_min^(-1/2)``
    near ``t = 0``; uniform midpoint steps there are only first-order accurate.
    Local steps are kept below ``alpha t`` with ``alpha = sqrt(h / tau)``, and
    every piece uses the generator of the exact forward state at its midpoint.
    Returns ``kmax``, the states at forward nodes ``(kmax-1) h, ..., 0`` and the
    worst trace defect.
    """
    d = spec.rho0.shape[0]
    alpha = min(0.5, math.sqrt(h / spec.tau))
    kmax, edges, nodes = _window_edges(h, steps, alpha, levels)
    mids = 0.5 * (edges[:-1] + edges[1:])
    states = spec.states_at(mids)
    gens = np.empty((len(mids), d * d, d * d), dtype=complex)
    for n, (t, gamma) in enumerate(zip(mids, states)):
        hc = correction_hamiltonian(gamma, spec.jumps, eps) if spec.jumps else np.zeros((d, d))
        lbs = reverse_jumps(gamma, spec.jumps, eps)
        if mode == "dissipation_only":
            u = expm(-1j * (spec.tau - t) * spec.hamiltonian)
            hb = hermitian_part(u @ hc @ dag(u))
            lbs = [u @ lb @ dag(u) for lb in lbs]
        else:
            hb = -spec.hamiltonian + hc
        gens[n] = generator_superop(hb, lbs if mode != "hamiltonian_only" else ())
    props = expm(-np.diff(edges)[:, None, None] * gens)
    worst = 0.0
    v = vec(rho)
    out = []
    wanted = set(nodes)
    for n, p in enumerate(props):
        r = unvec(p @ v, d)
        tr = np.trace(r)
        worst = max(worst, abs(tr - 1.0))
        r = hermitian_part(r) / tr.real
        v = vec(r)
        if n + 1 in wanted:
            out.append(r)
    return kmax, np.array(out), worst


def reversal_experiment(spec: ForwardSpec, eps: float = SUPPORT_EPS, steps: int | None = None,
                        mode: str = "full", exact_midpoint: bool = True,
                        tail_levels: int = TAIL_LEVELS) -> ReversalReport:
    """Run forward, build the reverse generator, run backward, compare node-for-node.

    ``mode`` is ``"full"``, ``"hamiltonian_only"`` (full reverse Hamiltonian,
    jumps dropped) or ``"dissipation_only"``.

    With ``exact_midpoint`` the forward run uses ``2 * steps`` steps so every
    backward step evaluates the generator from the forward state at its true
    midpoint. If ``rho0`` is rank deficient the backward steps near ``t = 0``
    are refined on a graded mesh reaching down to about ``h / 2**tail_levels``
    (0 disables).
    """
    steps = steps or spec.steps
    refine = 2 if exact_midpoint else 1
    fine = spec.run(refine * steps)
    if mode in ("full", "hamiltonian_only"):
        rev = build_reverse_generator(fine, spec.hamiltonian, spec.jumps, eps)
    elif mode == "dissipation_only":
        rev = build_dissipation_only_reverse(fine, spec.hamiltonian, spec.jumps, eps)
    else:
        raise ValueError(f"unknown reversal mode {mode!r}")
    forward = Trajectory(fine.times[::refine], fine.states[::refine], fine.step * refine,
                         fine.trace_defect, fine.min_eigenvalue)
    lind_b = rev.lindbladian(with_jumps=(mode != "hamiltonian_only"))
    w = np.linalg.eigvalsh(hermitian_part(spec.rho0))
    graded = exact_midpoint and tail_levels > 0 and w[0] <= support_cutoff(w, eps)
    if graded:
        h = spec.tau / steps
        alpha = min(0.5, math.sqrt(h / spec.tau))
        kmax = max(1, min(steps, math.ceil(1.0 / alpha)))
        if kmax < steps:
            head = propagate(lind_b, forward.final, 0.0, spec.tau - kmax * h, steps - kmax)
            head_times, head_states = head.times, head.states
            head_defect, head_min = head.trace_defect, head.min_eigenvalue
        else:
            head_times, head_states = np.zeros(1), forward.final[None]
            head_defect, head_min = 0.0, 0.0
        _, tail, worst = _graded_window(spec, head_states[-1], h, steps, eps, mode, tail_levels)
        backward = Trajectory(
            np.append(head_times, spec.tau - h * np.arange(kmax - 1, -1, -1)),
            np.concatenate([head_states, tail]), h, max(head_defect, worst),
            min(head_min, float(np.min(np.linalg.eigvalsh(tail)))))
    else:
        backward = propagate(lind_b, forward.final, 0.0, spec.tau, steps)

    m = len(forward) - 1
    targets = forward.states
    if mode == "dissipation_only":
        u = unitary_path(spec.hamiltonian, forward.times)
        # backward node j should sit at U_{t~_j} gamma_{M-j} U_{t~_j}^dag
        targets = np.array([u[m - j] @ forward.states[j] @ dag(u[m - j]) for j in range(m + 1)])
    back_at_t = backward.states[::-1]       # index j -> backward state at t~ = tau - t_j
    fid = np.array([uhlmann_fidelity(targets[j], back_at_t[j]) for j in range(m + 1)])
    endpoint = backward.final
    target0 = targets[0]
    choi_min = _sampled_choi_min(lind_b, backward.step) if lind_b.jumps else 0.0
    return ReversalReport(
        times=forward.times,
        fidelity=fid,
        purity_forward=forward.purities(),
        purity_backward=np.real(np.einsum("nij,nji->n", back_at_t, back_at_t)),
        endpoint_trace_distance=trace_distance(endpoint, target0),
        endpoint_fidelity=uhlmann_fidelity(target0, endpoint),
        endpoint=endpoint,
        target0=target0,
        mode=mode,
        backward_choi_min=choi_min,
        forward=forward,
        backward=backward,
    )
