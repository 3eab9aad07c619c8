"""Lindblad generators, their column-stacked superoperators, and propagation.

Vectorization stacks columns: ``vec(A X B) = (B^T kron A) vec(X)``. A
superoperator is a ``(d*d, d*d)`` matrix acting on ``vec``'d operators.

Time-dependent generators are given as operator samples on a uniform grid.
Between nodes the generator is interpolated linearly (at the level of the
generator, so superoperator and direct action agree everywhere). A step of
``propagate`` applies ``exp(dt * S(t_mid))`` with ``S`` sampled at the step
midpoint.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.sparse.linalg import expm_multiply

from .expm import expm
from .linalg import check_hermitian, dag, hermitian_part

logger = logging.getLogger(__name__)

# Above this superoperator size, time-dependent steps use the action of the
# exponential on the state instead of forming the full propagator.
_DENSE_PROPAGATOR_MAX = 256


class IntegrationError(FloatingPointError):
    """Non-finite values appeared while propagating."""

    def __init__(self, message: str, last_good_time: float):
        super().__init__(f"{message} (last good t = {last_good_time:.17g})")
        self.last_good_time = last_good_time


# ---------------------------------------------------------------------------
# vectorization helpers


def vec(a: np.ndarray) -> np.ndarray:
    """Column-stack a matrix (or the last two axes of a stack)."""
    a = np.asarray(a)
    return np.swapaxes(a, -1, -2).reshape(a.shape[:-2] + (-1,))


def unvec(v: np.ndarray, d: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if d is None:
        d = int(round(np.sqrt(v.shape[-1])))
    return np.swapaxes(v.reshape(v.shape[:-1] + (d, d)), -1, -2)


def _kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched Kronecker product over leading axes."""
    a = np.asarray(a)
    b = np.asarray(b)
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    out = np.einsum("...ij,...kl->...ikjl", a, b)
    return out.reshape(lead + (a.shape[-2] * b.shape[-2], a.shape[-1] * b.shape[-1]))


def spre(a: np.ndarray) -> np.ndarray:
    """Superoperator of ``X -> a X``."""
    d = a.shape[-1]
    return _kron(np.eye(d), a)


def spost(b: np.ndarray) -> np.ndarray:
    """Superoperator of ``X -> X b``."""
    d = b.shape[-1]
    return _kron(np.swapaxes(b, -1, -2), np.eye(d))


def sandwich(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Superoperator of ``X -> a X b`` (``b`` defaults to ``a^dag``)."""
    if b is None:
        b = dag(a)
    return _kron(np.swapaxes(b, -1, -2), a)


def apply_superop(s: np.ndarray, rho: np.ndarray) -> np.ndarray:
    d = rho.shape[-1]
    return unvec(s @ vec(rho), d)


def identity_superop(d: int) -> np.ndarray:
    return np.eye(d * d, dtype=complex)


def hamiltonian_superop(h: np.ndarray) -> np.ndarray:
    return -1j * (spre(h) - spost(h))


def dissipator_superop(jumps: Sequence[np.ndarray], d: int | None = None) -> np.ndarray:
    if len(jumps) == 0:
        if d is None:
            raise ValueError("dimension required for an empty jump list")
        return np.zeros((d * d, d * d), dtype=complex)
    out = 0
    for ell in jumps:
        ldl = dag(ell) @ ell
        out = out + sandwich(ell) - 0.5 * spre(ldl) - 0.5 * spost(ldl)
    return out


def generator_superop(h: np.ndarray, jumps: Sequence[np.ndarray] = ()) -> np.ndarray:
    """Superoperator of ``-i[h, .] + D(.)``; broadcasts over leading axes."""
    s = hamiltonian_superop(h)
    if len(jumps):
        s = s + dissipator_superop(jumps)
    return s


def kraus_superop(kraus: Sequence[np.ndarray]) -> np.ndarray:
    return sum(sandwich(k) for k in kraus)


def choi_matrix(s: np.ndarray) -> np.ndarray:
    """Choi matrix ``sum_ij |i><j| (x) N(|i><j|)`` (input factor first)."""
    d = int(round(np.sqrt(s.shape[0])))
    # s[r + c*d, i + j*d] = N(|i><j|)[r, c]  ->  reshape gives [c, r, j, i]
    return np.asarray(s).reshape(d, d, d, d).transpose(3, 1, 2, 0).reshape(d * d, d * d)


def trace_defect(s: np.ndarray) -> float:
    """Max deviation of ``vec(I)^dag s`` from ``vec(I)^dag`` (0 for trace preserving)."""
    d = int(round(np.sqrt(s.shape[0])))
    t = vec(np.eye(d)).conj()
    return float(np.max(np.abs(t @ s - t)))


def choi_min_eigenvalue(s: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(hermitian_part(choi_matrix(s)))[0])


def is_cptp(s: np.ndarray, tol: float = 1e-8) -> bool:
    return trace_defect(s) <= tol and choi_min_eigenvalue(s) >= -tol


# ---------------------------------------------------------------------------
# Lindbladian


@dataclass(frozen=True)
class Lindbladian:
    """Hamiltonian plus jump operators, constant or sampled on a time grid.

    Each operator is either ``(d, d)`` (constant) or ``(len(times), d, d)``
    (sampled on ``times``). Samples of the Hamiltonian must be Hermitian.
    """

    hamiltonian: np.ndarray
    jumps: tuple = ()
    times: np.ndarray | None = None
    dim: int = field(init=False)

    def __post_init__(self):
        h = np.asarray(self.hamiltonian, dtype=complex)
        times = None if self.times is None else np.asarray(self.times, dtype=float)
        d = h.shape[-1]
        n_nodes = None if times is None else len(times)

        def _check(op, what):
            op = np.asarray(op, dtype=complex)
            if op.shape[-2:] != (d, d):
                raise ValueError(f"{what} has shape {op.shape}, expected (..., {d}, {d})")
            if op.ndim == 3:
                if n_nodes is None:
                    raise ValueError(f"{what} is sampled but no time grid was given")
                if op.shape[0] != n_nodes:
                    raise ValueError(f"{what} has {op.shape[0]} samples for {n_nodes} grid nodes")
            elif op.ndim != 2:
                raise ValueError(f"{what} must be (d, d) or (nodes, d, d)")
            return op

        h = check_hermitian(_check(h, "hamiltonian"))
        jumps = tuple(_check(ell, f"jump {k}") for k, ell in enumerate(self.jumps))
        if times is not None:
            if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
                raise ValueError("time grid must be strictly increasing with >= 2 nodes")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "dim", d)

    @classmethod
    def zero(cls, d: int) -> "Lindbladian":
        return cls(np.zeros((d, d), dtype=complex))

    @property
    def is_constant(self) -> bool:
        return self.hamiltonian.ndim == 2 and all(ell.ndim == 2 for ell in self.jumps)

    def _node_ops(self, j: int):
        h = self.hamiltonian if self.hamiltonian.ndim == 2 else self.hamiltonian[j]
        ls = [ell if ell.ndim == 2 else ell[j] for ell in self.jumps]
        return h, ls

    def _locate(self, t):
        """Interval index and linear weight for time(s) ``t`` on the grid."""
        grid = self.times
        t = np.asarray(t, dtype=float)
        span = grid[-1] - grid[0]
        if np.any(t < grid[0] - 1e-9 * span) or np.any(t > grid[-1] + 1e-9 * span):
            raise ValueError(f"time outside the schedule grid [{grid[0]}, {grid[-1]}]")
        j = np.clip(np.searchsorted(grid, t, side="right") - 1, 0, len(grid) - 2)
        w = np.clip((t - grid[j]) / (grid[j + 1] - grid[j]), 0.0, 1.0)
        return j, w

    @cached_property
    def node_superops(self) -> np.ndarray:
        """Superoperator at each grid node, ``(nodes, d*d, d*d)``; constant case ``(d*d, d*d)``."""
        if self.is_constant:
            return generator_superop(self.hamiltonian, self.jumps)
        n = len(self.times)
        h = np.broadcast_to(self.hamiltonian, (n, self.dim, self.dim))
        jumps = [np.broadcast_to(ell, (n, self.dim, self.dim)) for ell in self.jumps]
        s = generator_superop(h, jumps)
        s.setflags(write=False)
        return s

    def superoperator(self, t: float | np.ndarray = 0.0) -> np.ndarray:
        """Generator superoperator at time(s) ``t``."""
        if self.is_constant:
            s = self.node_superops
            t = np.asarray(t)
            return s if t.ndim == 0 else np.broadcast_to(s, t.shape + s.shape)
        j, w = self._locate(t)
        nodes = self.node_superops
        w = np.asarray(w)[..., None, None]
        return (1 - w) * nodes[j] + w * nodes[j + 1]

    def apply(self, rho: np.ndarray, t: float = 0.0) -> np.ndarray:
        if self.is_constant:
            return _generator_action(self.hamiltonian, self.jumps, rho)
        j, w = self._locate(t)
        j, w = int(j), float(w)
        out = (1 - w) * _generator_action(*self._node_ops(j), rho)
        if w > 0:
            out = out + w * _generator_action(*self._node_ops(j + 1), rho)
        return out

    def dissipator_apply(self, rho: np.ndarray, t: float = 0.0) -> np.ndarray:
        zero = np.zeros((self.dim, self.dim), dtype=complex)
        if self.is_constant:
            return _generator_action(zero, self.jumps, rho)
        j, w = self._locate(t)
        j, w = int(j), float(w)
        out = (1 - w) * _generator_action(zero, self._node_ops(j)[1], rho)
        if w > 0:
            out = out + w * _generator_action(zero, self._node_ops(j + 1)[1], rho)
        return out

    def scaled(self, factor: float) -> "Lindbladian":
        """Generator multiplied by ``factor >= 0`` (jumps scale by its square root)."""
        if factor < 0:
            raise ValueError("factor must be non-negative")
        r = np.sqrt(factor)
        return Lindbladian(factor * self.hamiltonian, tuple(r * ell for ell in self.jumps), self.times)

    def negated_hamiltonian(self) -> "Lindbladian":
        return Lindbladian(-self.hamiltonian, self.jumps, self.times)


def _generator_action(h, jumps, rho):
    out = -1j * (h @ rho - rho @ h)
    for ell in jumps:
        ld = ell.conj().T
        ldl = ld @ ell
        out = out + ell @ rho @ ld - 0.5 * (ldl @ rho + rho @ ldl)
    return out


def _check_dim(lind: Lindbladian, rho: np.ndarray):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (lind.dim, lind.dim):
        raise ValueError(f"state shape {rho.shape} does not match generator dimension {lind.dim}")
    return rho


def apply_generator(lind: Lindbladian, rho: np.ndarray, t: float = 0.0) -> np.ndarray:
    """``-i[H(t), rho] + sum_k (L_k rho L_k^dag - {L_k^dag L_k, rho}/2)``."""
    return lind.apply(_check_dim(lind, rho), t)


def to_superoperator(lind: Lindbladian, t: float = 0.0) -> np.ndarray:
    return np.array(lind.superoperator(t))


def purity_rate(lind: Lindbladian, rho: np.ndarray, t: float = 0.0) -> float:
    """Rate of change of ``Tr rho^2``: ``2 Tr[D(rho) rho]``; the Hamiltonian drops out."""
    rho = _check_dim(lind, rho)
    if not lind.jumps:
        return 0.0
    return float(2.0 * np.real(np.vdot(rho.conj().T, lind.dissipator_apply(rho, t))))


# ---------------------------------------------------------------------------
# propagation


@dataclass
class Trajectory:
    """States on a uniform grid. ``trace_defect`` is the largest pre-renormalization
    trace error seen at any step; ``min_eigenvalue`` is monitored, never clipped."""

    times: np.ndarray
    states: np.ndarray
    step: float
    trace_defect: float = 0.0
    min_eigenvalue: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=complex)
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.states.shape[-1]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def purities(self) -> np.ndarray:
        return np.real(np.einsum("nij,nji->n", self.states, self.states))

    def to_csv(self, path) -> None:
        from .io import write_trajectory_csv

        write_trajectory_csv(path, self)


def _step_times(t0, t1, steps):
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    dt = (t1 - t0) / steps
    return dt, t0 + (np.arange(steps) + 0.5) * dt


def _propagator_chunks(lind: Lindbladian, dt: float, mids: np.ndarray):
    """Yield per-step propagators (or generators, for large dims) in time order."""
    d2 = lind.dim ** 2
    if lind.is_constant:
        p = expm(dt * lind.node_superops) if d2 <= _DENSE_PROPAGATOR_MAX * 4 else None
        gen = lind.node_superops
        for _ in range(len(mids)):
            yield ("dense", p) if p is not None else ("action", dt * gen)
        return
    chunk = max(1, int(2_000_000 // max(d2 * d2, 1)))
    for start in range(0, len(mids), chunk):
        s = lind.superoperator(mids[start:start + chunk]) * dt
        if d2 <= _DENSE_PROPAGATOR_MAX:
            for p in expm(s):
                yield "dense", p
        else:
            for g in s:
                yield "action", g


def propagate(lind: Lindbladian, rho0: np.ndarray, t0: float, t1: float, steps: int,
              store_every: int = 1) -> Trajectory:
    """Evolve ``rho0`` from ``t0`` to ``t1`` in ``steps`` midpoint-exponential steps.

    After each step the state is symmetrized and its trace renormalized;
    negative eigenvalues are left in place and reported. States are stored at
    every ``store_every``-th step (and always at both ends).
    """
    rho = _check_dim(lind, rho0)
    dt, mids = _step_times(t0, t1, steps)
    d = lind.dim
    keep = [0]
    stored = [hermitian_part(rho)]
    worst_trace = 0.0
    v = vec(stored[0])
    t_last = t0
    try:
        for k, (kind, op) in enumerate(_propagator_chunks(lind, dt, mids)):
            v = op @ v if kind == "dense" else expm_multiply(op, v)
            if not np.all(np.isfinite(v)):
                raise IntegrationError(f"non-finite state at step {k + 1}", t_last)
            r = unvec(v, d)
            tr = np.trace(r)
            worst_trace = max(worst_trace, abs(tr - 1.0))
            r = hermitian_part(r) / tr.real
            v = vec(r)
            t_last = t0 + (k + 1) * dt
            if (k + 1) % store_every == 0 or k + 1 == steps:
                keep.append(k + 1)
                stored.append(r)
    except IntegrationError:
        raise
    except FloatingPointError as exc:
        raise IntegrationError(str(exc), t_last) from exc
    states = np.array(stored)
    min_eig = float(np.min(np.linalg.eigvalsh(states)))
    if min_eig < -1e-8:
        logger.warning("propagated state has negative eigenvalue %.3e", min_eig)
    times = t0 + np.asarray(keep) * dt
    return Trajectory(times, states, dt * store_every, worst_trace, min_eig)


def channel_from(lind: Lindbladian, t0: float, t1: float, steps: int = 1) -> np.ndarray:
    """Superoperator ``P_{n-1} ... P_1 P_0`` of the per-step midpoint exponentials."""
    d2 = lind.dim ** 2
    if t1 == t0:
        return identity_superop(lind.dim)
    dt, mids = _step_times(t0, t1, steps)
    if lind.is_constant:
        out = np.linalg.matrix_power(expm(dt * lind.node_superops), steps)
    else:
        out = np.eye(d2, dtype=complex)
        chunk = max(1, int(2_000_000 // max(d2 * d2, 1)))
        for start in range(0, steps, chunk):
            for p in expm(lind.superoperator(mids[start:start + chunk]) * dt):
                out = p @ out
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite channel", t0)
    return out
