"""Batched matrix exponential by scaling and squaring with Pade approximants.

Degree selection and the theta thresholds follow Higham (2005), "The scaling
and squaring method for the matrix exponential revisited". Stacks of matrices
``(..., n, n)`` are handled in one pass; each matrix gets its own number of
squarings.
"""
from __future__ import annotations

import numpy as np

_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}
_THETA = {3: 1.495585217958292e-2, 5: 2.539398330063230e-1,
          7: 9.504178996162932e-1, 9: 2.097847961257068, 13: 5.371920351148152}


def _pade_low(a, m):
    b = _PADE[m]
    eye = np.broadcast_to(np.eye(a.shape[-1], dtype=a.dtype), a.shape)
    a2 = a @ a
    powers = [eye, a2]
    for _ in range(2, (m + 1) // 2):
        powers.append(powers[-1] @ a2)
    u = sum(b[2 * k + 1] * powers[k] for k in range(len(powers)))
    v = sum(b[2 * k] * powers[k] for k in range(len(powers)))
    return a @ u, v


def _pade13(a):
    b = _PADE[13]
    eye = np.broadcast_to(np.eye(a.shape[-1], dtype=a.dtype), a.shape)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * eye)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * eye)
    return u, v


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of a square matrix or a stack of them."""
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expm expects (..., n, n), got {a.shape}")
    if not np.iscomplexobj(a):
        a = a.astype(float)
    if a.shape[-1] == 0 or a.size == 0:
        return np.zeros_like(a)
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("non-finite entries in expm argument")
    batch_shape = a.shape[:-2]
    n = a.shape[-1]
    flat = a.reshape((-1, n, n))
    norms = np.max(np.sum(np.abs(flat), axis=-2), axis=-1)
    top = float(np.max(norms))

    for m in (3, 5, 7, 9):
        if top <= _THETA[m]:
            u, v = _pade_low(flat, m)
            return np.linalg.solve(v - u, v + u).reshape(a.shape)

    s = np.maximum(0, np.ceil(np.log2(np.maximum(norms, 1e-300) / _THETA[13]))).astype(int)
    scaled = flat / (2.0 ** s)[:, None, None]
    u, v = _pade13(scaled)
    r = np.linalg.solve(v - u, v + u)
    for k in range(1, int(s.max()) + 1 if s.size else 1):
        sel = s >= k
        if np.all(sel):
            r = r @ r
        else:
            r[sel] = r[sel] @ r[sel]
    return r.reshape(batch_shape + (n, n))
