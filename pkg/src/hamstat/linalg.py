"""Batched cyclic Jacobi eigen-decomposition for small symmetric matrices."""

from __future__ import annotations

import itertools

import numpy as np

JACOBI_TOL = 1e-13
MAX_SWEEPS = 50


def sym_eig(a: np.ndarray, tol: float = JACOBI_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and eigenvectors of a stack of symmetric matrices.

    ``a`` has shape ``(..., n, n)`` with ``n <= 3``.  Returns ``(lam, V)`` with
    ``a = V diag(lam) V^T``; the columns of ``V`` are the eigenvectors.  Sweeps
    stop once every off-diagonal Frobenius norm is below ``tol`` times the
    matrix norm.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    batch = a.shape[:-2]
    A = a.reshape(-1, n, n)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    offdiag = 1.0 - np.eye(n)
    scale = np.sqrt(np.einsum("bij,bij->b", A, A))
    thresh = tol * np.where(scale > 0, scale, 1.0)

    for _ in range(MAX_SWEEPS):
        off = np.sqrt(np.einsum("bij,bij->b", A * offdiag, A))
        active = off > thresh
        if not np.any(active):
            break
        for p, q in itertools.combinations(range(n), 2):
            apq = np.where(active, A[:, p, q], 0.0)
            nz = apq != 0.0
            if not np.any(nz):
                continue
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                theta = (A[:, q, q] - A[:, p, p]) / (2.0 * apq)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            t = np.where(nz & np.isfinite(t), t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            A[:, p, p] -= t * apq
            A[:, q, q] += t * apq
            A[:, p, q] = np.where(nz, 0.0, A[:, p, q])
            A[:, q, p] = A[:, p, q]
            for r in range(n):
                if r in (p, q):
                    continue
                arp, arq = A[:, r, p].copy(), A[:, r, q].copy()
                A[:, r, p] = A[:, p, r] = c * arp - s * arq
                A[:, r, q] = A[:, q, r] = s * arp + c * arq
            vp, vq = V[:, :, p].copy(), V[:, :, q].copy()
            V[:, :, p] = c[:, None] * vp - s[:, None] * vq
            V[:, :, q] = s[:, None] * vp + c[:, None] * vq

    lam = np.einsum("bii->bi", A).copy()
    order = np.argsort(lam, axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    V = np.take_along_axis(V, order[:, None, :], axis=-1)
    return lam.reshape(*batch, n), V.reshape(*batch, n, n)


def sym_eigvals(a: np.ndarray) -> np.ndarray:
    return sym_eig(a)[0]


def sym_apply(fn, lam: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Assemble ``V diag(fn(lam)) V^T`` for a stack of decompositions."""
    return np.einsum("...ik,...k,...jk->...ij", V, fn(lam), V)


def small_det(a: np.ndarray) -> np.ndarray:
    """Closed-form determinant of a stack of 1x1, 2x2 or 3x3 matrices."""
    n = a.shape[-1]
    if n == 1:
        return a[..., 0, 0].copy()
    if n == 2:
        return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return np.einsum("...i,...i->...", a[..., 0, :], _cofactor_row0(a))


def _cofactor_row0(a: np.ndarray) -> np.ndarray:
    return np.stack([
        a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1],
        a[..., 1, 2] * a[..., 2, 0] - a[..., 1, 0] * a[..., 2, 2],
        a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0],
    ], axis=-1)


def small_inv(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(inverse, determinant)`` by the adjugate formula, for ``n <= 3``."""
    n = a.shape[-1]
    det = small_det(a)
    adj = np.empty_like(a)
    if n == 1:
        adj[..., 0, 0] = 1.0
    elif n == 2:
        adj[..., 0, 0] = a[..., 1, 1]
        adj[..., 1, 1] = a[..., 0, 0]
        adj[..., 0, 1] = -a[..., 0, 1]
        adj[..., 1, 0] = -a[..., 1, 0]
    else:
        for i in range(3):
            for j in range(3):
                r = [k for k in range(3) if k != j]
                c = [k for k in range(3) if k != i]
                minor = (a[..., r[0], c[0]] * a[..., r[1], c[1]]
                         - a[..., r[0], c[1]] * a[..., r[1], c[0]])
                adj[..., i, j] = minor if (i + j) % 2 == 0 else -minor
    return adj / det[..., None, None], det
