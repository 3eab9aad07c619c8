"""Logical-state recovery on small multi-qubit codes.

A code basis is a set of ``d`` orthonormal vectors in the ``2**N``-dimensional
physical space, stored as the columns of ``vectors``. The reference state of
the recovery is the maximally mixed code state ``pi = P / d``.

Fidelities here use the squared-overlap convention ``<psi|E(psi)|psi>`` for
pure inputs, for which ``F_avg = (d F_e + 1) / (d + 1)`` holds exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.linalg import expm_multiply

from .expm import expm
from .linalg import (SM, SP, SZ, SUPPORT_EPS, embed, hermitian_part, n_qubits, pauli_basis,
                     pauli_string, projector, support_cutoff, uhlmann_fidelity)
from .lindblad import (Lindbladian, hamiltonian_superop, identity_superop, sandwich,
                       to_superoperator, unvec, vec)
from .petz import ForwardSpec, build_reverse_generator, petz_channel

logger = logging.getLogger(__name__)

MAX_NOISE_QUBITS = 6
MAX_OPT_QUBITS = 5
NOISE_KINDS = ("amplitude_damping", "dephasing", "correlated", "composite")


# ---------------------------------------------------------------------------
# code bases and logical operators


@dataclass(frozen=True)
class CodeBasis:
    vectors: np.ndarray          # (2**N, d), columns are |i>_L
    name: str = ""

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=complex)
        if v.ndim != 2 or v.shape[1] < 1 or v.shape[1] > v.shape[0]:
            raise ValueError(f"code vectors must be (2**N, d) with d <= 2**N, got {v.shape}")
        n_qubits(v.shape[0])
        gram = v.conj().T @ v
        err = float(np.max(np.abs(gram - np.eye(v.shape[1]))))
        if err > 1e-10:
            raise ValueError(f"code vectors are not orthonormal (Gram error {err:.2e})")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def n_physical(self) -> int:
        return n_qubits(self.vectors.shape[0])

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def projector(self) -> np.ndarray:
        return self.vectors @ self.vectors.conj().T

    @property
    def pi(self) -> np.ndarray:
        return self.projector / self.d

    def lift(self, op: np.ndarray) -> np.ndarray:
        """``V op V^dag`` for a ``d x d`` logical operator."""
        return self.vectors @ np.asarray(op) @ self.vectors.conj().T

    def encode(self, psi: np.ndarray) -> np.ndarray:
        return self.vectors @ np.asarray(psi, dtype=complex)

    @classmethod
    def computational(cls, n_physical: int, d: int = 2) -> "CodeBasis":
        """The first ``d`` computational basis states ``|0..0>, |0..01>, ...``."""
        return cls(np.eye(2 ** n_physical, d, dtype=complex), f"computational-{n_physical}")

    @classmethod
    def from_unitary(cls, u: np.ndarray, d: int, name: str = "") -> "CodeBasis":
        return cls(np.asarray(u)[:, :d], name)


def _stabilizer_state(stabilizers: Sequence[str], seed: np.ndarray) -> np.ndarray:
    n = len(stabilizers[0])
    proj = np.eye(2 ** n, dtype=complex)
    for s in stabilizers:
        proj = proj @ (np.eye(2 ** n) + pauli_string(s)) / 2
    v = proj @ seed
    return v / np.linalg.norm(v)


def five_qubit_code() -> CodeBasis:
    """The perfect [[5,1,3]] code with stabilizers generated by cyclic shifts of XZZXI."""
    gens = ["XZZXI", "IXZZX", "XIXZZ", "ZXIXZ"]
    zero = _stabilizer_state(gens, np.eye(32)[0])
    one = pauli_string("XXXXX") @ zero
    return CodeBasis(np.stack([zero, one], axis=1), "five-qubit")


def repetition_code(n: int = 3) -> CodeBasis:
    """``|0..0>, |1..1>``; corrects any single bit flip."""
    v = np.zeros((2 ** n, 2), dtype=complex)
    v[0, 0] = v[-1, 1] = 1.0
    return CodeBasis(v, f"repetition-{n}")


def logical_pauli(code: CodeBasis, label: str) -> np.ndarray:
    """Physical operator of a logical Pauli string (``"I"`` gives the code projector)."""
    k = n_qubits(code.d)
    if len(label) != k:
        raise ValueError(f"logical label {label!r} needs {k} letters")
    return code.lift(pauli_string(label) if k else np.ones((1, 1)))


def logical_labels(code: CodeBasis) -> tuple[str, ...]:
    return pauli_basis(n_qubits(code.d))[0]


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseModel:
    kind: str
    g1: float
    g2: float
    n_physical: int
    both_orderings: bool = True

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.g1 < 0 or self.g2 < 0:
            raise ValueError("noise strengths must be non-negative")
        if not 1 <= self.n_physical <= MAX_NOISE_QUBITS:
            raise ValueError(f"n_physical must be in 1..{MAX_NOISE_QUBITS}")


def noise_jumps(model: NoiseModel) -> list[np.ndarray]:
    """Jump operators on a nearest-neighbour chain; zero-strength terms are omitted."""
    n = model.n_physical
    dims = [2] * n
    jumps = []
    single = {"amplitude_damping": SM, "composite": SM, "dephasing": SZ}.get(model.kind)
    if single is not None and model.g1 > 0:
        jumps += [model.g1 * embed(single, q, dims) for q in range(n)]
    if model.kind in ("correlated", "composite", "dephasing") and model.g2 > 0:
        pairs = [(SM, SP), (SP, SM)] if model.both_orderings else [(SM, SP)]
        for q in range(n - 1):
            for a, b in pairs:
                jumps.append(model.g2 * embed(np.kron(a, b), [q, q + 1], dims))
    return jumps


def build_noise(model: NoiseModel) -> Lindbladian:
    d = 2 ** model.n_physical
    return Lindbladian(np.zeros((d, d), dtype=complex), tuple(noise_jumps(model)))


def noise_channel(model: NoiseModel, dt: float) -> np.ndarray:
    """Superoperator ``exp(dt D)`` of the noise over ``dt``."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    lind = build_noise(model)
    if dt == 0 or not lind.jumps:
        return identity_superop(lind.dim)
    return expm(dt * to_superoperator(lind))


# ---------------------------------------------------------------------------
# fidelities


def _pair_columns(code: CodeBasis) -> np.ndarray:
    """Columns ``vec(|i><k|)`` for all ``(i, k)``; ``vec(a b^dag) = conj(b) (x) a``."""
    v = code.vectors
    return np.kron(v.conj(), v)


def entanglement_fidelity(channel: np.ndarray, code: CodeBasis) -> float:
    """``(1/d^2) sum_ik <i|E(|i><k|)|k>`` for the map ``E`` on the code."""
    w = _pair_columns(code)
    val = np.trace(w.conj().T @ (channel @ w)).real / code.d ** 2
    return float(val)


def petz_entanglement_fidelity(noise: np.ndarray, code: CodeBasis,
                               eps: float = SUPPORT_EPS) -> float:
    """Closed form of ``F_e(R o N)`` with ``R`` the Petz map of ``pi``:

    ``(1/d^3) sum_ik Tr[N(|k><i|) N(pi)^{-1/2} N(|i><k|) N(pi)^{-1/2}]``.
    """
    d = code.d
    ys = _images(noise, code.vectors)
    omega = _inv_sqrt_support(ys, d, eps)[0]
    z = omega @ ys @ omega
    val = np.einsum("kiab,ikba->", ys, z).real / d ** 3
    return float(val)


def average_fidelity(fe: float, d: int) -> float:
    """``(d F_e + 1) / (d + 1)``; valid when the map is trace preserving on the code."""
    return (d * fe + 1.0) / (d + 1.0)


def haar_fidelity_estimate(channel: np.ndarray, code: CodeBasis, samples: int = 10_000,
                           rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Monte-Carlo mean of ``<psi|E(psi)|psi>`` over Haar-random code states and its standard error."""
    rng = np.random.default_rng() if rng is None else rng
    d = code.d
    z = rng.normal(size=(samples, d)) + 1j * rng.normal(size=(samples, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    psi = z @ code.vectors.T
    rho = np.einsum("si,sj->sij", psi, psi.conj())
    out = unvec(vec(rho) @ channel.T, code.dim)
    vals = np.einsum("si,sij,sj->s", psi.conj(), out, psi).real
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))


def _images(channel: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``Y[i, k] = N(|v_i><v_k|)``, shape ``(d, d, D, D)``."""
    dim, d = v.shape
    x = np.einsum("ai,bk->ikab", v, v.conj())
    return unvec(vec(x) @ channel.T, dim)


def _inv_sqrt_support(ys: np.ndarray, d: int, eps: float):
    """``N(pi)^{-1/2}`` on its support plus its eigensystem and mask."""
    n_pi = hermitian_part(np.einsum("iiab->ab", ys) / d)
    lam, w = np.linalg.eigh(n_pi)
    mask = lam > support_cutoff(lam, eps)
    inv = np.zeros_like(lam)
    inv[mask] = lam[mask] ** -0.5
    return (w * inv) @ w.conj().T, lam, w, mask


# ---------------------------------------------------------------------------
# recovery channels


def petz_code_channel(noise: np.ndarray, code: CodeBasis, eps: float = SUPPORT_EPS) -> np.ndarray:
    """Channel-form Petz recovery of ``noise`` with reference ``pi``."""
    return petz_channel(noise, code.pi, eps)


def _channel_on_grid(lind: Lindbladian, times: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Ordered product of midpoint exponentials over an arbitrary increasing grid."""
    d2 = lind.dim ** 2
    out = np.eye(d2, dtype=complex)
    dts = np.diff(times)
    mids = 0.5 * (times[:-1] + times[1:])
    for start in range(0, len(dts), chunk):
        props = expm(lind.superoperator(mids[start:start + chunk]) * dts[start:start + chunk, None, None])
        for p in props:
            out = p @ out
    return out


def petz_code_channel_continuous(model: NoiseModel, dt: float, code: CodeBasis,
                                 eps: float = SUPPORT_EPS, steps: int = 200) -> np.ndarray:
    """Recovery by integrating the reverse generator along ``pi``'s noise trajectory.

    The forward grid is graded near ``t = 0`` where ``pi`` is rank deficient.
    """
    if dt == 0:
        return identity_superop(code.dim)
    jumps = tuple(noise_jumps(model))
    if not jumps:
        return petz_channel(identity_superop(code.dim), code.pi, eps)
    zero = np.zeros((code.dim, code.dim), dtype=complex)
    spec = ForwardSpec(zero, jumps, code.pi, dt, steps)
    forward, _ = spec.graded_run()
    rev = build_reverse_generator(forward, zero, jumps, eps)
    channel = _channel_on_grid(rev.lindbladian(), rev.times)
    # the flow leaves the support of pi only through roundoff
    proj = code.projector
    return sandwich(proj, proj) @ channel


# ---------------------------------------------------------------------------
# code optimization


class CodeObjective:
    """``1 - F_e(R_pi o N)`` over ``U = exp(i sum_c x_c P_c)`` and its analytic gradient."""

    def __init__(self, channel: np.ndarray, n_physical: int, d: int, eps: float = SUPPORT_EPS):
        self.channel = np.asarray(channel, dtype=complex)
        self.adjoint = self.channel.conj().T
        self.n = n_physical
        self.dim = 2 ** n_physical
        self.d = d
        self.eps = eps
        self.paulis = pauli_basis(n_physical)[1]
        self.evaluations = 0

    @property
    def n_params(self) -> int:
        return 4 ** self.n

    def unitary(self, x: np.ndarray):
        a = np.tensordot(np.asarray(x, dtype=float), self.paulis, axes=1)
        ev, w = np.linalg.eigh(hermitian_part(a))
        return (w * np.exp(1j * ev)) @ w.conj().T, ev, w

    def code(self, x: np.ndarray, name: str = "optimized") -> CodeBasis:
        return CodeBasis.from_unitary(self.unitary(x)[0], self.d, name)

    def value(self, x: np.ndarray) -> float:
        return self.value_and_grad(x, grad=False)[0]

    def value_and_grad(self, x: np.ndarray, grad: bool = True):
        self.evaluations += 1
        d = self.d
        u, ev, w = self.unitary(x)
        v = u[:, :d]
        ys = _images(self.channel, v)
        omega, lam, wn, mask = _inv_sqrt_support(ys, d, self.eps)
        z = omega @ ys @ omega                                   # Omega Y_ik Omega
        fe = float(np.einsum("kiab,ikba->", ys, z).real / d ** 3)
        if not grad:
            return 1.0 - fe, None
        dim = self.dim
        t = unvec(vec(z) @ self.adjoint.T, dim)                  # N^dag(Omega Y_ik Omega)
        g = (2 / d ** 3) * np.einsum("ikab,bk->ai", t, v)
        q = np.einsum("ikab,bc,kicd->ad", ys, omega, ys)
        s = np.where(mask, np.sqrt(np.where(mask, lam, 1.0)), 0.0)
        both = mask[:, None] & mask[None, :]
        den = s[:, None] * s[None, :] * (s[:, None] + s[None, :])
        f1 = np.where(both, -1.0 / np.where(both, den, 1.0), 0.0)
        r = wn @ (f1 * (wn.conj().T @ q @ wn)) @ wn.conj().T
        phi = unvec(self.adjoint @ vec(r), dim)
        g = g + (2 / d ** 4) * (phi @ v)
        g_full = np.zeros((dim, dim), dtype=complex)
        g_full[:, :d] = g
        gt = w.conj().T @ g_full @ w
        diff = 0.5 * (ev[:, None] - ev[None, :])
        dd = 1j * np.exp(0.5j * (ev[:, None] + ev[None, :])) * np.sinc(diff / np.pi)
        zz = w @ (np.conj(gt) * dd).T @ w.conj().T
        grad_fe = 2.0 * np.einsum("ij,cji->c", zz, self.paulis).real
        return 1.0 - fe, -grad_fe

    def central_difference(self, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for c in range(len(x)):
            e = np.zeros_like(x)
            e[c] = h
            out[c] = (self.value(x + e) - self.value(x - e)) / (2 * h)
        return out


@dataclass
class OptimizerConfig:
    seed: int
    restarts: int = 4
    iters: int = 400
    max_evaluations: int = 20_000
    init_scale: float = 0.3
    method: str = "lbfgs"          # "lbfgs" or "nelder-mead"
    gradient: str = "analytic"     # "analytic" or "central"

    def __post_init__(self):
        if self.method not in ("lbfgs", "nelder-mead"):
            raise ValueError(f"unknown optimizer method {self.method!r}")
        if self.gradient not in ("analytic", "central"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")
        if self.restarts < 1 or self.iters < 1 or self.max_evaluations < 1:
            raise ValueError("optimizer budget must be positive")


@dataclass
class OptimizationResult:
    code: CodeBasis
    params: np.ndarray
    fe: float
    seed_fe: float
    evaluations: int
    budget_exhausted: bool
    restarts_run: int
    history: list = field(default_factory=list)   # best infidelity after each restart

    @property
    def f_avg(self) -> float:
        return average_fidelity(self.fe, self.code.d)

    @property
    def seed_f_avg(self) -> float:
        return average_fidelity(self.seed_fe, self.code.d)

    def summary(self, config: OptimizerConfig) -> dict:
        return {
            "F_e_opt": self.fe,
            "F_avg_opt": self.f_avg,
            "infidelity_opt": 1.0 - self.f_avg,
            "F_avg_seed": self.seed_f_avg,
            "evaluations": self.evaluations,
            "budget_exhausted": self.budget_exhausted,
            "restarts_run": self.restarts_run,
            "history": self.history,
            "seed": config.seed,
            "budget": {"restarts": config.restarts, "iters": config.iters,
                       "max_evaluations": config.max_evaluations},
            "method": config.method,
            "gradient": config.gradient,
            "code_basis": self.code.vectors,
        }


class _Budget(Exception):
    pass


def optimize_code(model: NoiseModel, dt: float, d: int, config: OptimizerConfig,
                  eps: float = SUPPORT_EPS, channel: np.ndarray | None = None) -> OptimizationResult:
    """Maximize ``F_e`` of Petz recovery over code bases ``{U|i>}``.

    Restart 0 starts from the computational basis (``U = 1``); later restarts
    from random Pauli coefficients. Returns the best basis seen.
    """
    n = model.n_physical
    if n > MAX_OPT_QUBITS:
        raise ValueError(f"code optimization supports at most {MAX_OPT_QUBITS} physical qubits")
    if not 1 <= d <= 2 ** n:
        raise ValueError("logical dimension out of range")
    channel = noise_channel(model, dt) if channel is None else channel
    obj = CodeObjective(channel, n, d, eps)
    x0 = np.zeros(obj.n_params)
    seed_val = obj.value(x0)
    best = {"x": x0.copy(), "val": seed_val}
    if not noise_jumps(model) or dt == 0 or seed_val <= 1e-15:
        return OptimizationResult(obj.code(x0, "computational"), x0, 1.0 - seed_val,
                                  1.0 - seed_val, obj.evaluations, False, 0, [seed_val])
    rng = np.random.default_rng(config.seed)

    def track(x, val):
        if val < best["val"]:
            best["x"], best["val"] = np.array(x, dtype=float), val
        if obj.evaluations >= config.max_evaluations:
            raise _Budget

    def fun_grad(x):
        if config.gradient == "analytic":
            val, g = obj.value_and_grad(x)
        else:
            val = obj.value(x)
            g = obj.central_difference(x)
        track(x, val)
        return val, g

    def fun(x):
        val = obj.value(x)
        track(x, val)
        return val

    history = []
    exhausted = False
    runs = 0
    for r in range(config.restarts):
        start = x0 if r == 0 else rng.normal(scale=config.init_scale, size=obj.n_params)
        runs += 1
        try:
            if config.method == "nelder-mead":
                minimize(fun, start, method="Nelder-Mead",
                         options={"maxiter": config.iters, "xatol": 1e-10, "fatol": 1e-14})
                minimize(fun_grad, best["x"], jac=True, method="L-BFGS-B",
                         options={"maxiter": config.iters, "ftol": 1e-15, "gtol": 1e-12})
            else:
                minimize(fun_grad, start, jac=True, method="L-BFGS-B",
                         options={"maxiter": config.iters, "ftol": 1e-15, "gtol": 1e-12})
        except _Budget:
            exhausted = True
        history.append(best["val"])
        logger.info("restart %d: best infidelity (F_e) %.6e after %d evaluations",
                    r, best["val"], obj.evaluations)
        if exhausted:
            break
    return OptimizationResult(obj.code(best["x"]), best["x"], 1.0 - best["val"], 1.0 - seed_val,
                              obj.evaluations, exhausted, runs, history)


# ---------------------------------------------------------------------------
# stroboscopic recovery


@dataclass(frozen=True)
class DriveTerm:
    coeff: float
    freq: float
    kind: str          # "sin" or "cos"
    pauli: str         # logical Pauli string

    def __post_init__(self):
        if self.kind not in ("sin", "cos"):
            raise ValueError(f"drive kind must be 'sin' or 'cos', got {self.kind!r}")
        if not self.pauli or any(c not in "IXYZ" for c in self.pauli.upper()):
            raise ValueError(f"invalid logical Pauli string {self.pauli!r}")

    def value(self, t):
        f = np.sin if self.kind == "sin" else np.cos
        return self.coeff * f(self.freq * np.asarray(t, dtype=float))


def single_logical_drive() -> list[DriveTerm]:
    """``3 sin(5t) X_L + 6 cos(2t) Z_L``."""
    return [DriveTerm(3.0, 5.0, "sin", "X"), DriveTerm(6.0, 2.0, "cos", "Z")]


def two_logical_drive() -> list[DriveTerm]:
    """``2 sin(7t) XX + 1.4 sin(3t) ZZ + 2 cos(10t) XI + IZ``."""
    return [DriveTerm(2.0, 7.0, "sin", "XX"), DriveTerm(1.4, 3.0, "sin", "ZZ"),
            DriveTerm(2.0, 10.0, "cos", "XI"), DriveTerm(1.0, 0.0, "cos", "IZ")]


VARIANTS = ("noise-free", "noisy", "recovered")


@dataclass
class StrobeResult:
    times: np.ndarray
    labels: tuple
    values: dict          # variant -> (n_times, n_labels) real expectation values
    fidelity: dict        # variant -> (n_times,) fidelity to the noise-free state

    def rows(self):
        for variant in VARIANTS:
            vals = self.values[variant]
            for j, t in enumerate(self.times):
                for k, lab in enumerate(self.labels):
                    yield t, lab, vals[j, k], variant

    def fidelity_rows(self):
        for j, t in enumerate(self.times):
            yield (t,) + tuple(self.fidelity[v][j] for v in VARIANTS)

    def observable(self, label: str, variant: str) -> np.ndarray:
        return self.values[variant][:, self.labels.index(label)]

    def rms_deviation(self, label: str, variant: str) -> float:
        diff = self.observable(label, variant) - self.observable(label, "noise-free")
        return float(np.sqrt(np.mean(diff ** 2)))

    def dominance(self) -> bool:
        """Recovered fidelity above the no-recovery fidelity at every node after t = 0."""
        return bool(np.all(self.fidelity["recovered"][1:] > self.fidelity["noisy"][1:]))

    def summary(self) -> dict:
        z = "Z" + "I" * (len(self.labels[0]) - 1)
        return {
            "dominance": self.dominance(),
            "min_fidelity": {v: float(np.min(self.fidelity[v])) for v in VARIANTS},
            "final_fidelity": {v: float(self.fidelity[v][-1]) for v in VARIANTS},
            f"rms_{z}_recovered": self.rms_deviation(z, "recovered"),
            f"rms_{z}_noisy": self.rms_deviation(z, "noisy"),
            "nodes": len(self.times),
        }


def strobe_run(code: CodeBasis, drive: Sequence[DriveTerm], model: NoiseModel, dt: float,
               t_final: float, eps: float = SUPPORT_EPS, substeps: int = 10,
               recovery: np.ndarray | None = None) -> StrobeResult:
    """Alternate driven noisy evolution over ``dt`` with the Petz recovery channel.

    Each interval is integrated with ``substeps`` midpoint-exponential steps of
    the generator ``-i[H(t), .] + D``. The initial state is ``|0..0>_L``.
    """
    if model.n_physical != code.n_physical:
        raise ValueError("noise model and code act on different numbers of qubits")
    k = n_qubits(code.d)
    for term in drive:
        if len(term.pauli) != k:
            raise ValueError(f"drive term {term.pauli!r} does not act on {k} logical qubits")
    n_strobe = int(round(t_final / dt))
    if n_strobe < 1 or abs(n_strobe * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError("dt must divide the total time into a whole number of intervals")
    dim = code.dim
    noise = build_noise(model)
    s_noise = to_superoperator(noise)
    h_logical = [pauli_string(term.pauli) for term in drive]
    s_terms = [hamiltonian_superop(code.lift(p)) for p in h_logical]
    if recovery is None:
        recovery = petz_code_channel(noise_channel(model, dt), code, eps)

    labels = logical_labels(code)
    obs = np.array([logical_pauli(code, lab) for lab in labels])
    psi = np.zeros(code.d, dtype=complex)
    psi[0] = 1.0
    rho0 = projector(code.encode(psi))
    h = dt / substeps

    def driven(v, t0):
        # v holds one column per noisy variant; all share the generator
        for s in range(substeps):
            tm = t0 + (s + 0.5) * h
            gen = s_noise + sum(term.value(tm) * st for term, st in zip(drive, s_terms))
            v = expm_multiply(h * gen, v) if dim > 8 else expm(h * gen) @ v
        return v

    def logical_step(phi, t0):
        for s in range(substeps):
            tm = t0 + (s + 0.5) * h
            hl = sum(term.value(tm) * p for term, p in zip(drive, h_logical))
            phi = expm(-1j * h * hl) @ phi
        return phi

    times = dt * np.arange(n_strobe + 1)
    states = {v: [rho0] for v in VARIANTS}
    cols = np.stack([vec(rho0), vec(rho0)], axis=1)     # noisy, recovered
    phi = psi
    for j in range(n_strobe):
        t0 = times[j]
        phi = logical_step(phi, t0)
        states["noise-free"].append(projector(code.encode(phi)))
        cols = driven(cols, t0)
        cols[:, 1] = recovery @ cols[:, 1]
        for c, var in enumerate(("noisy", "recovered")):
            r = unvec(cols[:, c], dim)
            r = hermitian_part(r) / np.trace(r).real
            cols[:, c] = vec(r)
            states[var].append(r)
    values = {}
    fidelity = {}
    ref = np.array(states["noise-free"])
    for var in VARIANTS:
        st = np.array(states[var])
        values[var] = np.einsum("lab,nba->nl", obs, st).real
        fidelity[var] = np.array([uhlmann_fidelity(a, b) for a, b in zip(ref, st)])
    return StrobeResult(times, labels, values, fidelity)
