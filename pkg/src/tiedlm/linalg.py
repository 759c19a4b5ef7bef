"""Dense real linear algebra used throughout the package.

Matrices are plain ``numpy.ndarray`` objects.  Matrix products go through
numpy; the QR factorization (Householder) and the singular value routine
(one-sided Jacobi) are implemented here so the subspace metric does not depend
on LAPACK behaviour for rank detection or ordering.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np


class ContractError(ValueError):
    """An argument violates an operation's precondition."""


class RankDeficiencyError(ContractError):
    """A matrix expected to have full column rank does not."""


RANK_TOL = 1e-10


def _as_matrix(x, name="x"):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b):
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_with_temperature(logits, tau=1.0, axis=-1):
    """Softmax of ``logits / tau`` along ``axis``.

    The maximum is subtracted before exponentiating, so large logits at small
    temperatures do not overflow.  ``tau=1`` is the ordinary softmax.
    """
    if not tau > 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    if not np.all(np.isfinite(z)):
        raise ContractError("logits must be finite")
    z -= z.max(axis=axis, keepdims=True)
    e = np.exp(z, out=z)
    e /= e.sum(axis=axis, keepdims=True)
    return e


def log_softmax(logits, tau=1.0, axis=-1):
    if not tau > 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    z -= z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    z -= np.log(e.sum(axis=axis, keepdims=True))
    return z


def householder_qr(x):
    """Householder factorization ``x = Q R`` of a tall matrix.

    Returns the list of unit reflector vectors and the upper-triangular ``R``
    (n x n).  Reflector ``k`` acts on rows ``k:``.
    """
    a = np.array(_as_matrix(x), copy=True)
    m, n = a.shape
    if m < n:
        raise ContractError(f"need rows >= cols, got {a.shape}")
    vs = []
    for k in range(n):
        col = a[k:, k]
        alpha = np.linalg.norm(col)
        v = col.copy()
        if alpha == 0.0:
            vs.append(None)
            continue
        v[0] += np.copysign(alpha, col[0])
        v /= np.linalg.norm(v)
        a[k:, k:] -= 2.0 * np.outer(v, v @ a[k:, k:])
        vs.append(v)
    return vs, np.triu(a[:n, :])


def qr_orthonormalize(x, tol=RANK_TOL):
    """Orthonormal basis for the column space of ``x``.

    Raises :class:`RankDeficiencyError` when some ``|R[k, k]|`` falls below
    ``tol`` times the largest column norm of ``x``; columns are never dropped.
    """
    x = _as_matrix(x)
    if not np.all(np.isfinite(x)):
        raise ContractError("x must be finite")
    m, n = x.shape
    if m < n:
        raise ContractError(f"need rows >= cols, got {x.shape}")
    big = np.abs(x).max() if x.size else 0.0
    if big > 0.0:
        x = x / big  # the span is unchanged and squared norms cannot overflow
    scale = np.linalg.norm(x, axis=0).max() if n else 0.0
    vs, r = householder_qr(x)
    diag = np.abs(np.diag(r))
    if n and (scale == 0.0 or diag.min() <= tol * scale):
        k = int(np.argmin(diag)) if scale else 0
        raise RankDeficiencyError(
            f"matrix of shape {x.shape} is rank deficient at column {k} "
            f"(|R_kk| = {diag[k] if scale else 0.0:.3e}, scale {scale:.3e})"
        )
    q = np.eye(m, n)
    for k in reversed(range(n)):
        v = vs[k]
        q[k:, :] -= 2.0 * np.outer(v, v @ q[k:, :])
    return q


def _round_robin(n):
    """Pairings covering every index pair once, in n-1 rounds (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        rounds.append((np.array(players[:half]), np.array(players[half:][::-1])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def singular_values(x, tol=1e-15, max_sweeps=60):
    """Singular values of ``x`` in descending order (one-sided Jacobi).

    Columns are orthogonalized pairwise by plane rotations until every pair
    is orthogonal to relative precision ``tol``; the singular values are the
    final column norms.  Disjoint pairs are rotated together each round.
    """
    a = _as_matrix(x)
    if not np.all(np.isfinite(a)):
        raise ContractError("x must be finite")
    if a.shape[0] < a.shape[1]:
        a = a.T
    a = np.array(a, copy=True)
    n = a.shape[1]
    if n == 0:
        return np.zeros(0)
    if n % 2:
        a = np.hstack([a, np.zeros((a.shape[0], 1))])
    rounds = _round_robin(a.shape[1])
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            ap, aq = a[:, p], a[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            ap, aq = a[:, p], a[:, q]
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
        if not rotated:
            break
    sv = np.linalg.norm(a, axis=0)
    return np.sort(sv)[::-1][:n]


def frobenius_norm_sq(x):
    a = np.asarray(x, dtype=np.float64)
    return float(np.sum(a * a))


def global_norm(tensors: Iterable) -> float:
    """Square root of the summed squared entries of every tensor."""
    return float(np.sqrt(sum(frobenius_norm_sq(t) for t in tensors)))
