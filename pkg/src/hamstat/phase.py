"""Geometry of the gradient graph ``{(x, Du(x))}``.

The induced metric is ``g = I + M^T M`` for ``M = D^2 u``; it shares
eigenvectors with ``M`` and has eigenvalues ``1 + lam_i^2``.  The Lagrangian
phase is ``theta = sum_i arctan(lam_i)``, and the mean curvature has length
``|grad theta|_g``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    DEFAULT_PLAN,
    Grid,
    SamplingPlan,
    ScalarField,
    SymmetricMatrixField,
    gradient,
    hessian,
    integrate,
    k_convexity_margin,
)
from .linalg import sym_apply, sym_eig


@dataclass(frozen=True, eq=False)
class MetricField:
    grid: Grid
    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det_g: np.ndarray

    def sqrt_det_field(self) -> ScalarField:
        return ScalarField(self.grid, self.sqrt_det_g)


@dataclass(frozen=True, eq=False)
class PhaseField:
    grid: Grid
    theta: np.ndarray
    eigenvalues: np.ndarray

    def field(self) -> ScalarField:
        return ScalarField(self.grid, self.theta)


def metric_arrays(M: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(g, g_inv, sqrt_det_g)`` for a stack of symmetric matrices."""
    n = M.shape[-1]
    lam, V = sym_eig(M)
    g = np.eye(n) + np.einsum("...ki,...kj->...ij", M, M)
    g_inv = sym_apply(lambda l: 1.0 / (1.0 + l * l), lam, V)
    sqrt_det = np.prod(np.sqrt(1.0 + lam * lam), axis=-1)
    return g, g_inv, sqrt_det


def induced_metric(M: SymmetricMatrixField) -> MetricField:
    g, g_inv, sqrt_det = metric_arrays(M.values)
    return MetricField(M.grid, g, g_inv, sqrt_det)


def phase_values(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lam = sym_eig(M)[0]
    return np.sum(np.arctan(lam), axis=-1), lam


def phase(M: SymmetricMatrixField) -> PhaseField:
    """Phase ``sum arctan(lam_i)`` per node; each term lies in (-pi/2, pi/2)."""
    theta, lam = phase_values(M.values)
    return PhaseField(M.grid, theta, lam)


class BranchError(ValueError):
    """The principal branch of ``Im log det`` does not determine the phase."""


def phase_via_complex_det(M: np.ndarray) -> float:
    """``Im log det(I + iM)`` on the principal branch.

    Only meaningful while the true phase stays inside (-pi, pi); outside that
    window the logarithm is ambiguous by multiples of 2*pi and we refuse.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    window = float(np.sum(np.arctan(np.linalg.eigvalsh(M))))
    if abs(window) >= np.pi:
        raise BranchError(f"phase {window} is outside the principal window (-pi, pi)")
    return float(np.angle(np.linalg.det(np.eye(n) + 1j * M)))


def volume(u: ScalarField) -> float:
    """Discrete volume of the gradient graph, ``int sqrt(det(I + (D^2u)^2)) dx``."""
    g = induced_metric(hessian(u))
    return integrate(g.sqrt_det_field())


def mean_curvature_norm(u: ScalarField) -> ScalarField:
    """Pointwise ``sqrt(g^{ij} theta_i theta_j)``; zero iff the phase is constant."""
    M = hessian(u)
    metric = induced_metric(M)
    dtheta = gradient(phase(M).field()).values
    q = np.einsum("...i,...ij,...j->...", dtheta, metric.g_inv, dtheta)
    return ScalarField(u.grid, np.sqrt(np.clip(q, 0.0, None)))


@dataclass
class SpreadReport:
    spread: float
    sup_hessian_norm: float
    n_pairs: int
    worst: tuple | None = None

    def to_dict(self) -> dict:
        out = {"spread": self.spread, "sup_hessian_norm": self.sup_hessian_norm,
               "n_pairs": self.n_pairs}
        if self.worst is not None:
            out["worst"] = [list(map(float, p)) for p in self.worst]
        return out


def tangent_bases(M: np.ndarray) -> np.ndarray:
    """Orthonormal bases ``[I; M] (I + M^2)^{-1/2}`` of the tangent planes, shape ``(..., 2n, n)``."""
    n = M.shape[-1]
    lam, V = sym_eig(M)
    inv_root = sym_apply(lambda l: 1.0 / np.sqrt(1.0 + l * l), lam, V)
    frame = np.concatenate([np.broadcast_to(np.eye(n), M.shape), M], axis=-2)
    return frame @ inv_root


def principal_angles(Q0: np.ndarray, Q1: np.ndarray) -> np.ndarray:
    cosines = np.linalg.svd(np.swapaxes(Q0, -1, -2) @ Q1, compute_uv=False)
    return np.arccos(np.clip(cosines, -1.0, 1.0))


def grassmannian_spread(u: ScalarField, plan: SamplingPlan = DEFAULT_PLAN) -> SpreadReport:
    """Largest sampled geodesic distance between tangent planes of the graph.

    The distance between two planes is the root-sum-square of their principal
    angles.  Also reports the largest operator norm of the Hessian.
    """
    grid = u.grid
    M = hessian(u).values.reshape(-1, grid.n, grid.n)
    Q = tangent_bases(M)
    i0, i1 = plan.pairs(grid)
    dist = np.zeros(len(i0))
    chunk = 200_000
    for a in range(0, len(i0), chunk):
        ang = principal_angles(Q[i0[a:a + chunk]], Q[i1[a:a + chunk]])
        dist[a:a + chunk] = np.sqrt(np.sum(ang * ang, axis=-1))
    k = int(np.argmax(dist))
    x = grid.coords().reshape(-1, grid.n)
    sup = float(np.max(np.abs(sym_eig(M)[0]))) if M.size else 0.0
    return SpreadReport(float(dist[k]), sup, len(i0), (x[i0[k]], x[i1[k]]))


def regularity_hypotheses(u: ScalarField, delta: float,
                          plan: SamplingPlan = DEFAULT_PLAN) -> dict[str, bool | float]:
    """Check the three alternative smallness/convexity conditions on a sampled potential.

    * ``phase_lower``: ``theta >= delta + (n - 2) pi / 2`` at every node,
    * ``uniformly_convex``: ``u - delta |x|^2/2`` convex on the sample,
    * ``hessian_small``: sup operator norm of ``D^2u`` at most ``1 - delta``.
    """
    M = hessian(u)
    n = u.grid.n
    theta = phase(M).theta
    phase_min = float(theta.min())
    convex = k_convexity_margin(u, delta, plan).value
    sup = float(np.max(np.abs(sym_eig(M.values)[0])))
    return {
        "phase_min": phase_min,
        "phase_lower": phase_min >= delta + 0.5 * np.pi * (n - 2),
        "convexity_margin": convex,
        "uniformly_convex": convex >= 0.0,
        "sup_hessian_norm": sup,
        "hessian_small": sup <= 1.0 - delta,
    }
