"""Dense complex linear algebra on operators.

Operators are plain ``numpy`` arrays of shape ``(d, d)``. Multi-qubit
operators follow the convention that the leftmost tensor factor is the most
significant index, so ``tensor(A, B)[i*dB + k, j*dB + l] == A[i, j] * B[k, l]``.
"""
from __future__ import annotations

import itertools
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

HERMITIAN_TOL = 1e-9
SUPPORT_EPS = 1e-10

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
# sigma_- = (sigma_x - i sigma_y)/2 = |1><0|. |0> is the +1 eigenstate of
# sigma_z and decays under sigma_-; |1> is the ground state.
SM = np.array([[0, 0], [1, 0]], dtype=complex)
SP = SM.conj().T

PAULIS = {"I": I2, "X": SX, "Y": SY, "Z": SZ}


class EigenSystem(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.conj().T


class NotHermitianError(ValueError):
    pass


def dag(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(np.conj(a), -1, -2)


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dag(a))


def check_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Return the symmetrized ``(a + a^dag)/2`` after checking the defect.

    The defect is measured in max-norm relative to ``max(1, max|a|)``.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    defect = float(np.max(np.abs(a - dag(a)))) if a.size else 0.0
    if defect > tol * scale:
        raise NotHermitianError(f"operator is not Hermitian (defect {defect:.3e})")
    return hermitian_part(a)


def herm_eig(a: np.ndarray, tol: float = HERMITIAN_TOL) -> EigenSystem:
    """Eigendecomposition of a Hermitian operator, eigenvalues ascending."""
    w, v = np.linalg.eigh(check_hermitian(a, tol))
    return EigenSystem(w, v)


def support_cutoff(values: np.ndarray, eps: float = SUPPORT_EPS) -> float:
    """Absolute eigenvalue threshold: ``eps`` times the largest eigenvalue."""
    top = float(np.max(values)) if np.size(values) else 0.0
    return eps * max(top, 0.0)


def _support(rho: np.ndarray, eps: float):
    w, v = herm_eig(rho)
    mask = w > support_cutoff(w, eps)
    w = np.where(mask, w, 0.0)
    return w, v, mask


def sqrt_on_support(rho: np.ndarray, eps: float = SUPPORT_EPS):
    """Square root, inverse square root and support projector of a PSD operator.

    Eigenvalues at or below ``eps * lambda_max`` count as exactly zero: they
    contribute nothing to the root, the inverse root or the projector.

    Returns ``(root, inv_root, projector)``.
    """
    w, v, mask = _support(rho, eps)
    s = np.sqrt(w)
    inv = np.zeros_like(s)
    inv[mask] = 1.0 / s[mask]
    vh = v.conj().T
    root = (v * s) @ vh
    inv_root = (v * inv) @ vh
    proj = (v * mask) @ vh
    return root, inv_root, proj


def tensor(*ops: np.ndarray) -> np.ndarray:
    """Kronecker product, leftmost factor most significant."""
    if not ops:
        return np.ones((1, 1), dtype=complex)
    out = np.asarray(ops[0])
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def partial_trace(a: np.ndarray, dims: Sequence[int], keep) -> np.ndarray:
    """Trace out every subsystem not listed in ``keep``.

    ``dims`` lists subsystem dimensions in tensor order; the kept factors are
    returned in their original relative order.
    """
    a = np.asarray(a)
    dims = [int(x) for x in dims]
    if any(x < 1 for x in dims) or int(np.prod(dims)) != a.shape[0] or a.shape[0] != a.shape[1]:
        raise ValueError(f"dims {dims} inconsistent with operator of shape {a.shape}")
    keep = sorted({int(k) for k in keep})
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ValueError(f"keep indices {keep} out of range for {len(dims)} subsystems")
    n = len(dims)
    t = a.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    if 2 * n > 26:
        raise ValueError("too many subsystems")
    rows = list(letters[:n])
    cols = list(letters[n:2 * n])
    for j in range(n):
        if j not in keep:
            cols[j] = rows[j]
    out = "".join(rows[k] for k in keep) + "".join(cols[k] for k in keep)
    res = np.einsum("".join(rows) + "".join(cols) + "->" + out, t)
    dk = int(np.prod([dims[k] for k in keep])) if keep else 1
    return res.reshape(dk, dk)


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(hermitian_part(np.asarray(a, dtype=complex)))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def uhlmann_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Root fidelity ``Tr sqrt(sqrt(sigma) rho sqrt(sigma))``, clipped to [0, 1].

    Evaluated as the nuclear norm of ``sqrt(rho) sqrt(sigma)``, which keeps
    small deficits ``1 - F`` accurate for nearly pure states.
    """
    s = np.linalg.svd(_psd_sqrt(rho) @ _psd_sqrt(sigma), compute_uv=False)
    return min(max(float(np.sum(s)), 0.0), 1.0)


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    w = np.linalg.eigvalsh(hermitian_part(np.asarray(rho) - np.asarray(sigma)))
    return 0.5 * float(np.sum(np.abs(w)))


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.vdot(rho, rho)))


def is_density_matrix(rho: np.ndarray, tol: float = 1e-8) -> bool:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or not np.all(np.isfinite(rho)):
        return False
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        return False
    if abs(np.trace(rho) - 1) > tol:
        return False
    return bool(np.linalg.eigvalsh(hermitian_part(rho))[0] >= -tol)


def ket(bits: str | Sequence[int], dim: int = 2) -> np.ndarray:
    """Computational basis vector, e.g. ``ket("01")``."""
    idx = [int(b) for b in bits]
    v = np.zeros(dim ** len(idx), dtype=complex)
    v[int(np.ravel_multi_index(idx, [dim] * len(idx))) if idx else 0] = 1.0
    return v


def projector(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def n_qubits(dim: int) -> int:
    n = int(round(np.log2(dim))) if dim > 0 else -1
    if n < 0 or 2 ** n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def pauli_string(label: str) -> np.ndarray:
    """Operator for a Pauli string such as ``"XZI"`` (first letter = qubit 0)."""
    return tensor(*(PAULIS[c] for c in label.upper()))


@lru_cache(maxsize=8)
def pauli_basis(n: int) -> tuple[tuple[str, ...], np.ndarray]:
    """All ``4**n`` Pauli strings and their matrices, stacked ``(4**n, 2**n, 2**n)``."""
    labels = tuple("".join(p) for p in itertools.product("IXYZ", repeat=n))
    mats = np.empty((4 ** n, 2 ** n, 2 ** n), dtype=complex)
    for i, lab in enumerate(labels):
        mats[i] = pauli_string(lab) if n else np.ones((1, 1))
    mats.setflags(write=False)
    return labels, mats


def pauli_coefficients(a: np.ndarray) -> np.ndarray:
    """Vector ``c_P = Tr(P a) / 2**n`` over ``pauli_basis(n)`` ordering."""
    a = np.asarray(a, dtype=complex)
    n = n_qubits(a.shape[0])
    _, mats = pauli_basis(n)
    # Tr(P a) = sum_ij P_ij a_ji
    return np.einsum("cij,ji->c", mats, a) / 2 ** n


def pauli_decompose(a: np.ndarray, tol: float = 0.0) -> dict[str, complex | float]:
    """Coefficient table ``{pauli_string: c}`` with ``a = sum c P``.

    Hermitian input yields real coefficients. Entries with ``|c| <= tol`` are
    omitted.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square operator")
    n = n_qubits(a.shape[0])
    labels, _ = pauli_basis(n)
    c = pauli_coefficients(a)
    real = np.allclose(a, a.conj().T, atol=1e-12)
    out: dict[str, complex | float] = {}
    for lab, val in zip(labels, c):
        if abs(val) > tol:
            out[lab] = float(val.real) if real else complex(val)
    return out


def pauli_reconstruct(coeffs: dict[str, complex]) -> np.ndarray:
    items = list(coeffs.items())
    if not items:
        raise ValueError("empty coefficient table")
    n = len(items[0][0])
    out = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for lab, c in items:
        out += c * pauli_string(lab)
    return out


def embed(op: np.ndarray, site: int | Sequence[int], dims: Sequence[int]) -> np.ndarray:
    """Place ``op`` on consecutive subsystems starting at ``site``; identity elsewhere."""
    sites = [site] if isinstance(site, (int, np.integer)) else list(site)
    first = sites[0]
    span = int(np.prod([dims[s] for s in sites]))
    if op.shape != (span, span) or sites != list(range(first, first + len(sites))):
        raise ValueError("operator does not match the requested sites")
    left = int(np.prod(dims[:first]))
    right = int(np.prod(dims[first + len(sites):]))
    return tensor(np.eye(left), op, np.eye(right))
