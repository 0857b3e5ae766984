"""Coefficient tensor of the fourth-order equation and its ellipticity margins.

In divergence form the equation reads ``d_kl (a^{ijkl}(D^2u) u_ij) = 0`` with
``a^{ijkl} = sqrt(g) g^{ij} delta^{kl}``.  The W^{3,2} estimate needs the
quadratic form::

    Q(W) = da^{ijkl}/du_pq (M*) M'_ik W_pq W_jl + a^{ijkl}(M) W_ik W_jl

to stay above ``beta |W|^2`` for all ``M, M*, M'`` in a sup-norm ball of
radius ``c``.  :func:`condition4_margin` estimates the worst normalised value
by sampling and :func:`find_c_n` bisects for the largest admissible radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import small_inv, sym_eigvals

CHUNK = 20_000


@dataclass(frozen=True, eq=False)
class CoefficientTensor:
    n: int
    a: np.ndarray  # (n, n, n, n)

    def form(self, W: np.ndarray) -> float:
        """``a^{ijkl} W_ik W_jl``."""
        return float(np.einsum("ijkl,ik,jl->", self.a, W, W))


@dataclass
class SampledMargin:
    n: int
    c: float
    margin: float
    samples: int
    seed: int

    def to_dict(self) -> dict:
        return {"n": self.n, "c": self.c, "margin": self.margin,
                "samples": self.samples, "seed": self.seed}


def _as_symmetric(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return 0.5 * (M + M.T)


def _metric(M: np.ndarray) -> tuple[np.ndarray, float]:
    g = np.eye(M.shape[0]) + M.T @ M
    return np.linalg.inv(g), math.sqrt(np.linalg.det(g))


def coefficient_tensor(M) -> CoefficientTensor:
    """``a^{ijkl} = sqrt(det g) g^{ij} delta^{kl}`` with ``g = I + M^T M``."""
    M = _as_symmetric(M)
    n = M.shape[0]
    g_inv, root = _metric(M)
    a = np.einsum("ij,kl->ijkl", root * g_inv, np.eye(n))
    return CoefficientTensor(n, a)


def symmetric_unit(n: int, m: int, p: int) -> np.ndarray:
    """``du/du_mp``: the symmetrised matrix unit ``(e_m e_p^T + e_p e_m^T) / 2``."""
    E = np.zeros((n, n))
    E[m, p] += 0.5
    E[p, m] += 0.5
    return E


def coefficient_derivative(M) -> np.ndarray:
    """Exact ``d a^{ijkl} / d u_mp`` as an array indexed ``[i, j, k, l, m, p]``.

    ``(g^{ab} g^{ij} / 2 - g^{ia} g^{bj}) delta^{kl} sqrt(g) dg_ab/du_mp`` with
    ``dg/du_mp = E M + M E`` for the symmetrised unit ``E``.
    """
    M = _as_symmetric(M)
    n = M.shape[0]
    g_inv, root = _metric(M)
    out = np.zeros((n,) * 6)
    eye = np.eye(n)
    for m in range(n):
        for p in range(n):
            E = symmetric_unit(n, m, p)
            dg = E @ M + M @ E
            half_trace = 0.5 * float(np.sum(g_inv * dg))
            dG = root * (half_trace * g_inv - g_inv @ dg @ g_inv)
            out[..., m, p] = np.einsum("ij,kl->ijkl", dG, eye)
    return out


def ellipticity_lower_bound(M) -> float:
    """``min_i sqrt(det g) / (1 + lam_i^2)`` over the eigenvalues of ``M``."""
    M = _as_symmetric(M)
    lam = sym_eigvals(M)
    root = float(np.prod(np.sqrt(1.0 + lam * lam)))
    return float(np.min(root / (1.0 + lam * lam)))


def derivative_growth_constant(n: int, c: float, samples: int, seed: int) -> float:
    """Largest sampled ``max|da/du| / (c (1 + c^2)^{n/2})`` over sup-norm-``c`` matrices."""
    if not c > 0:
        raise ValueError("c must be positive")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n)
    best = 0.0
    for _ in range(samples):
        M = np.zeros((n, n))
        M[iu] = rng.uniform(-1.0, 1.0, len(iu[0]))
        M = M + np.triu(M, 1).T
        M *= c / np.max(np.abs(M))
        best = max(best, float(np.max(np.abs(coefficient_derivative(M)))))
    return best / (c * (1.0 + c * c) ** (n / 2))


# ---------------------------------------------------------------------------
# sampled margin of the ellipticity condition


def _basis(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric matrix units (entries 1) and their squared HS norms."""
    mats, norms = [], []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            mats.append(E)
            norms.append(1.0 if i == j else 2.0)
    return np.array(mats), np.array(norms)


def _unit_draws(n: int, samples: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded draws in the unit sup-norm ball, shape ``(samples, n, n)`` each.

    ``M'`` is drawn from the vertices (the form is linear in it); ``M`` and
    ``M*`` are vertices or uniform points with equal probability.
    """
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n)
    k = len(iu[0])

    def symmetric(entries: np.ndarray) -> np.ndarray:
        out = np.zeros((samples, n, n))
        out[:, iu[0], iu[1]] = entries
        out[:, iu[1], iu[0]] = entries
        return out

    def mixed() -> np.ndarray:
        uniform = rng.uniform(-1.0, 1.0, (samples, k))
        vertex = rng.choice([-1.0, 1.0], (samples, k))
        pick = rng.random(samples) < 0.5
        return symmetric(np.where(pick[:, None], vertex, uniform))

    M = mixed()
    Ms = mixed()
    Mp = symmetric(rng.choice([-1.0, 1.0], (samples, k)))
    return M, Ms, Mp


def _batch_metric(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = M.shape[-1]
    g_inv, det = small_inv(np.eye(n) + np.swapaxes(M, -1, -2) @ M)
    return g_inv, np.sqrt(det)


def condition_forms(M: np.ndarray, Ms: np.ndarray, Mp: np.ndarray) -> np.ndarray:
    """Gram-normalised matrices of ``Q`` on symmetric ``W``, shape ``(S, d, d)``.

    Entry ``(a, b)`` is the symmetrised bilinear form on the matrix units
    ``E_a, E_b`` divided by ``|E_a| |E_b|``; its smallest eigenvalue is the
    minimum of ``Q(W) / |W|^2``.  The derivative term is contracted along
    ``W`` directly: ``sum_pq W_pq da/du_pq`` is the derivative of ``a`` in
    the direction ``W``.
    """
    n = M.shape[-1]
    S = M.shape[0]
    E, norms = _basis(n)
    d = len(E)
    flatE = E.reshape(d, n * n)
    g_inv, root = _batch_metric(M)
    gs_inv, root_s = _batch_metric(Ms)

    # a(M) term: sqrt(g) tr(g^{-1} E_a E_b^T)
    EE = np.einsum("aik,bjk->abij", E, E)
    second = root[:, None, None] * (g_inv.reshape(S, n * n) @ EE.reshape(d * d, n * n).T).reshape(S, d, d)

    # derivative term: sqrt(g*) <K(E_a) M', E_b>
    dg = E[None] @ Ms[:, None]
    dg = dg + np.swapaxes(dg, -1, -2)
    half_tr = 0.5 * np.sum(gs_inv[:, None] * dg, axis=(-2, -1))  # dg is symmetric
    K = half_tr[..., None, None] * gs_inv[:, None] - gs_inv[:, None] @ dg @ gs_inv[:, None]
    KM = K @ Mp[:, None]
    first = root_s[:, None, None] * (KM.reshape(S, d, n * n) @ flatE.T)

    Q = first + second
    Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    scale = 1.0 / np.sqrt(np.multiply.outer(norms, norms))
    return Q * scale


def _sampled_minimum(draws, c: float, stop_below: float = -math.inf) -> float:
    M, Ms, Mp = draws
    best = math.inf
    for a in range(0, len(M), CHUNK):
        sl = slice(a, a + CHUNK)
        forms = condition_forms(c * M[sl], c * Ms[sl], c * Mp[sl])
        best = min(best, float(np.min(np.linalg.eigvalsh(forms)[:, 0])))
        if best < stop_below:
            break
    return best


def condition4_margin(n: int, c: float, samples: int = 10_000, seed: int = 0) -> SampledMargin:
    """Sampled minimum of ``Q(W) / |W|_HS^2`` over the ball ``|M|_inf <= c``.

    ``W`` is minimised exactly (smallest eigenvalue); ``M, M*, M'`` are drawn
    as ``c`` times seeded unit draws, so every ``c`` sees the same schedule.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not (c >= 0 and math.isfinite(c)):
        raise ValueError(f"radius c must be nonnegative, got {c}")
    if samples <= 0:
        raise ValueError("samples must be positive")
    best = _sampled_minimum(_unit_draws(n, samples, seed), c)
    return SampledMargin(n, float(c), best, samples, seed)


def find_c_n(n: int, tol: float = 1e-2, samples: int = 10_000, seed: int = 0,
             width: float = 1e-3) -> float:
    """Largest ``c`` in ``[0, 1]`` with sampled margin at least ``tol``, by bisection.

    Returns the lower end of the final bracket (width below ``width``).  Uses
    the same draws as :func:`condition4_margin`; a radius is rejected as soon
    as one chunk of draws falls below ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    condition4_margin(n, 0.0, 1, seed)  # argument checks
    draws = _unit_draws(n, samples, seed)

    def admissible(c: float) -> bool:
        return _sampled_minimum(draws, c, stop_below=tol) >= tol

    if not admissible(0.0):
        raise RuntimeError("margin below tol at c = 0; the sampler is broken")
    lo, hi = 0.0, 1.0
    if admissible(hi):
        return hi
    while hi - lo >= width:
        mid = 0.5 * (lo + hi)
        if admissible(mid):
            lo = mid
        else:
            hi = mid
    return lo
