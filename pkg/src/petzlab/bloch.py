"""Closed-form single-qubit reverse dynamics in Bloch-vector form.

States are ``gamma = (1 + r.sigma) / 2``; Hamiltonians ``h.sigma`` with real
``h`` and jumps ``l.sigma`` with complex ``l``. Writing ``x = artanh |r|`` the
reverse jump is

    l_B = l* - c [r x (r x l*)] + i cosh(x) [r x l*],   c = cosh^2 x / (2 cosh^2 (x/2))

and the reverse Hamiltonian vector is

    h_B = -h_F + c sum_k ( Re[(r.l)(r x l*)] - sinh^2(x/2)/cosh(x) [r x (i l* x l)] ).

For nearly pure states the hyperbolics diverge; ``|r|`` is clamped to
``1 - PURE_CLAMP`` and the general support-projected construction should be
preferred there.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .linalg import I2, SX, SY, SZ

PURE_CLAMP = 1e-8
SIGMA = np.stack([SX, SY, SZ])


def rho_from_bloch(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.linalg.norm(r) > 1 + 1e-9:
        raise ValueError(f"Bloch vector longer than 1: |r| = {np.linalg.norm(r):.12g}")
    return 0.5 * (I2 + np.einsum("i,ijk->jk", r, SIGMA))


def bloch_from_rho(rho: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("ijk,kj->i", SIGMA, rho))


def vector_from_operator(op: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Complex 3-vector ``v`` with ``op = v.sigma``; ``op`` must be traceless."""
    op = np.asarray(op, dtype=complex)
    if abs(np.trace(op)) > tol * max(1.0, float(np.max(np.abs(op)))):
        raise ValueError("operator has an identity component")
    return 0.5 * np.einsum("ijk,kj->i", SIGMA, op)


def operator_from_vector(v) -> np.ndarray:
    return np.einsum("i,ijk->jk", np.asarray(v, dtype=complex), SIGMA)


def bch_conjugate(x: float, n, v) -> np.ndarray:
    """Vector of ``exp(-x n.sigma/2) (v.sigma) exp(x n.sigma/2)``.

    Equals ``v - 2 sinh^2(x/2) n x (n x v) - i sinh(x) n x v``.
    """
    n = np.asarray(n, dtype=float)
    v = np.asarray(v, dtype=complex)
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError(f"n must be a unit vector (|n| = {np.linalg.norm(n):.12g})")
    nv = np.cross(n, v)
    return v - 2 * np.sinh(x / 2) ** 2 * np.cross(n, nv) - 1j * np.sinh(x) * nv


def _clamped(r):
    r = np.asarray(r, dtype=float)
    norm = np.linalg.norm(r)
    if norm > 1 + 1e-9:
        raise ValueError(f"Bloch vector longer than 1: |r| = {norm:.12g}")
    limit = 1.0 - PURE_CLAMP
    if norm > limit:
        r = r * (limit / norm)
        norm = limit
    return r, np.arctanh(norm)


def qubit_reverse_jump(r, l_forward) -> np.ndarray:
    r, x = _clamped(r)
    lc = np.conj(np.asarray(l_forward, dtype=complex))
    c = np.cosh(x) ** 2 / (2 * np.cosh(x / 2) ** 2)
    return lc - c * np.cross(r, np.cross(r, lc)) + 1j * np.cosh(x) * np.cross(r, lc)


def qubit_reverse_hamiltonian(r, h_forward, l_forward_list: Sequence) -> np.ndarray:
    r, x = _clamped(r)
    h_b = -np.asarray(h_forward, dtype=float).copy()
    c = np.cosh(x) ** 2 / (2 * np.cosh(x / 2) ** 2)
    s = np.sinh(x / 2) ** 2 / np.cosh(x)
    for l in l_forward_list:
        l = np.asarray(l, dtype=complex)
        lc = np.conj(l)
        term = np.real(np.dot(r, l) * np.cross(r, lc)) - s * np.real(np.cross(r, 1j * np.cross(lc, l)))
        h_b = h_b + c * term
    return h_b


def fig_rows(times, states, h_forward, l_forward_list):
    """Rows ``t, hB_x, hB_y, hB_z, re/im lB components`` along a trajectory."""
    rows = []
    for t, rho in zip(times, states):
        r = bloch_from_rho(rho)
        hb = qubit_reverse_hamiltonian(r, h_forward, l_forward_list)
        row = [t, *hb]
        for l in l_forward_list:
            lb = qubit_reverse_jump(r, l)
            for z in lb:
                row += [z.real, z.imag]
        rows.append(row)
    return rows


def fig_header(n_jumps: int) -> list[str]:
    cols = ["t", "hB_x", "hB_y", "hB_z"]
    for k in range(n_jumps):
        for ax in "xyz":
            cols += [f"re(lB{k}_{ax})", f"im(lB{k}_{ax})"]
    return cols
