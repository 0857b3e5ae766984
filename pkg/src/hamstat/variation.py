"""First variation of the discrete volume functional and a descent driver.

The discrete functional is ``F_h(u) = sum_x w(x) sqrt(det g(H_h u))(x)`` with
trapezoidal weights ``w`` and the discrete Hessian ``H_h``.  Its first
variation in the direction ``eta`` is the double-divergence form
``sum w (sqrt(g) g^{-1} H_h u) : H_h eta``, and :func:`volume_gradient` is the
exact gradient of ``F_h`` (the adjoint Hessian applied to that flux).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import (
    Grid,
    ScalarField,
    gradient,
    hessian,
    hessian_adjoint,
    hessian_values,
    quadrature_weights,
    stencil_family,
)
from .fields import _transposed
from .fieldio import fmt
from .linalg import small_det
from .phase import metric_arrays, phase_values

FROZEN_LAYERS = 3


class SupportError(ValueError):
    """A test function does not vanish on the frozen boundary layers."""


class DescentAborted(RuntimeError):
    def __init__(self, message: str, trace: "DescentTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True, eq=False)
class BoundaryMask:
    grid: Grid
    frozen: np.ndarray

    def __post_init__(self):
        frozen = np.asarray(self.frozen, dtype=bool).reshape(self.grid.shape)
        ring = layer_mask(self.grid, 2)
        if np.any(ring & ~frozen):
            raise ValueError("the two outermost node layers must be frozen")
        object.__setattr__(self, "frozen", frozen)

    @classmethod
    def layers(cls, grid: Grid, width: int = FROZEN_LAYERS) -> "BoundaryMask":
        return cls(grid, layer_mask(grid, width))

    @property
    def free(self) -> np.ndarray:
        return ~self.frozen


def layer_mask(grid: Grid, width: int) -> np.ndarray:
    """Boolean array marking nodes within ``width`` layers of the boundary."""
    mask = np.zeros(grid.shape, dtype=bool)
    for axis, m in enumerate(grid.shape):
        idx = np.arange(m)
        edge = (idx < width) | (idx >= m - width)
        shape = [1] * grid.n
        shape[axis] = m
        mask |= edge.reshape(shape)
    return mask


def _density(M: np.ndarray, with_flux: bool = True) -> tuple[np.ndarray | None, np.ndarray]:
    """``sqrt(det(I + M^2)) = |det(I + iM)|`` and its derivative in ``M``.

    Uses ``det(I + iM) = sum_k i^k sigma_k(M)`` with the elementary symmetric
    functions ``sigma_k`` of the eigenvalues, which are polynomial in the
    entries, so no factorisation is needed.
    """
    n = M.shape[-1]
    if n == 1:
        m = M[..., 0, 0]
        root = np.sqrt(1.0 + m * m)
        return ((m / root)[..., None, None] if with_flux else None), root
    tr = np.trace(M, axis1=-2, axis2=-1)
    eye = np.eye(n)
    if n == 2:
        det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
        re, im = 1.0 - det, tr
        root = np.sqrt(re * re + im * im)
        if not with_flux:
            return None, root
        cof = tr[..., None, None] * eye - M  # d det / dM for symmetric M
        flux = (-re[..., None, None] * cof + im[..., None, None] * eye) / root[..., None, None]
        return flux, root
    MM = M @ M
    s2 = 0.5 * (tr * tr - np.trace(MM, axis1=-2, axis2=-1))
    det = small_det(M)
    re, im = 1.0 - s2, tr - det
    root = np.sqrt(re * re + im * im)
    if not with_flux:
        return None, root
    ds2 = tr[..., None, None] * eye - M
    cof = MM - tr[..., None, None] * M + s2[..., None, None] * eye  # Cayley-Hamilton
    flux = (-re[..., None, None] * ds2 + im[..., None, None] * (eye - cof)) / root[..., None, None]
    return flux, root


def flux_values(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(sqrt(g) g^{-1} M, sqrt(g))`` per node; the first is ``d sqrt(det g) / dM``."""
    return _density(M)


def _family_hessians(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Hessians for every member of the stencil family, shape ``(P, N, n, n)``.

    The diagonal stencils are shared by all members and applied once.
    """
    family = stencil_family(grid)
    n = grid.n
    flat = np.asarray(values, dtype=float).reshape(-1)
    out = np.empty((len(family), grid.size, n, n))
    for j in range(n):
        out[:, :, j, j] = family[0][(j, j)] @ flat
    for p, ops in enumerate(family):
        for j in range(n):
            for k in range(j + 1, n):
                out[p, :, j, k] = out[p, :, k, j] = ops[(j, k)] @ flat
    return out


def _family_adjoint(grid: Grid, flux: np.ndarray) -> np.ndarray:
    """Mean over the family of ``H_p^T flux_p``, as a flat array."""
    P = flux.shape[0]
    n = grid.n
    out = np.zeros(grid.size)
    for j in range(n):
        out += _transposed(grid, 0)[(j, j)] @ flux[:, :, j, j].sum(axis=0)
    for p in range(P):
        ops = _transposed(grid, p)
        for j in range(n):
            for k in range(j + 1, n):
                out += ops[(j, k)] @ (flux[p, :, j, k] + flux[p, :, k, j])
    return out / P


def discrete_volume(grid: Grid, values: np.ndarray) -> float:
    """``F_h``: the quadrature of ``sqrt(det g)`` averaged over the stencil family.

    Each family member turns ``sum w det`` of every 2x2 Hessian minor into a
    quantity fixed by boundary data, so the discrete calibration inequality
    holds and special Lagrangian states minimise ``F_h``.  The average agrees
    with the centred-stencil quadrature to second order and exactly on
    quadratics.
    """
    w = quadrature_weights(grid).reshape(-1)
    _, root = _density(_family_hessians(grid, values), False)
    return float(np.sum(root @ w)) / root.shape[0]


def _check_support(eta: ScalarField, mask: BoundaryMask) -> None:
    if eta.grid != mask.grid:
        raise ValueError("test function and mask live on different grids")
    if np.any(eta.values[mask.frozen] != 0.0):
        raise SupportError("test function must vanish on frozen nodes")


def first_variation_divergence(u: ScalarField, eta: ScalarField, mask: BoundaryMask) -> float:
    """``sum w sqrt(g) g^{ij} u_ik eta_jk`` with discrete Hessians of ``u`` and ``eta``.

    Averaged over the stencil family, so this is the exact derivative of
    ``F_h`` in the direction ``eta``.
    """
    _check_support(eta, mask)
    hessian(u)
    grid = u.grid
    w = quadrature_weights(grid)
    family = stencil_family(grid)
    total = 0.0
    for p in range(len(family)):
        flux, _ = flux_values(hessian_values(grid, u.values, p))
        d2eta = hessian_values(grid, eta.values, p)
        total += float(np.sum(w * np.einsum("...ij,...ij->...", flux, d2eta)))
    return total / len(family)


def first_variation_phase(u: ScalarField, eta: ScalarField, mask: BoundaryMask) -> float:
    """Phase form of the first variation, ``-sum w sqrt(g) g^{ij} theta_i eta_j``.

    Integrating the double-divergence form by parts once gives this, because
    ``d_k(sqrt(g) g^{-1} D^2u)_{jk} = sqrt(g) g^{ij} theta_i``.
    """
    _check_support(eta, mask)
    M = hessian(u).values
    _, g_inv, sqrt_det = metric_arrays(M)
    theta, _ = phase_values(M)
    dtheta = gradient(ScalarField(u.grid, theta)).values
    deta = gradient(eta).values
    integrand = sqrt_det * np.einsum("...i,...ij,...j->...", dtheta, g_inv, deta)
    return -float(np.sum(quadrature_weights(u.grid) * integrand))


def harmonicity_residual(u: ScalarField, mask: BoundaryMask | None = None) -> ScalarField:
    """``(1/sqrt g) d_i(sqrt(g) g^{ij} d_j theta)`` by nested central differences.

    Zero on the frozen nodes of ``mask`` (by default the two outer layers).
    """
    grid = u.grid
    M = hessian(u).values
    _, g_inv, sqrt_det = metric_arrays(M)
    theta, _ = phase_values(M)
    dtheta = gradient(ScalarField(grid, theta)).values
    flux = sqrt_det[..., None] * np.einsum("...ij,...j->...i", g_inv, dtheta)
    div = np.zeros(grid.shape)
    for i in range(grid.n):
        div += np.gradient(flux[..., i], grid.spacing[i], axis=i, edge_order=2)
    res = div / sqrt_det
    frozen = mask.frozen if mask is not None else layer_mask(grid, 2)
    res[frozen] = 0.0
    return ScalarField(grid, res)


def residual_l2(res: ScalarField, mask: BoundaryMask) -> float:
    """Weighted L2 norm over the free nodes."""
    w = quadrature_weights(res.grid)
    return float(np.sqrt(np.sum((w * res.values ** 2)[mask.free])))


def _volume_gradient_values(grid: Grid, values: np.ndarray, frozen: np.ndarray) -> np.ndarray:
    w = quadrature_weights(grid).reshape(1, -1, 1, 1)
    flux, _ = _density(_family_hessians(grid, values))
    grad = _family_adjoint(grid, w * flux).reshape(grid.shape)
    grad[frozen] = 0.0
    return grad


def volume_gradient(u: ScalarField, mask: BoundaryMask) -> ScalarField:
    """Exact gradient of ``F_h`` with respect to the free nodal values (zero on frozen nodes)."""
    hessian(u)  # size check
    return ScalarField(u.grid, _volume_gradient_values(u.grid, u.values, mask.frozen))


# ---------------------------------------------------------------------------
# descent


@dataclass
class DescentParams:
    step: float | None = None   # default 0.1 * h_min**4
    max_iters: int = 5000
    target: float = 1e-9        # stop when max free-node |grad F_h| falls below this
    armijo: float = 1e-4
    max_halvings: int = 60

    def __post_init__(self):
        if self.step is not None and not (self.step > 0 and math.isfinite(self.step)):
            raise ValueError(f"step must be positive, got {self.step}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if not self.target > 0:
            raise ValueError("target must be positive")


@dataclass
class DescentRecord:
    iter: int
    F: float
    max_grad: float
    residual_l2: float
    step: float


@dataclass
class DescentTrace:
    records: list[DescentRecord] = field(default_factory=list)

    def append(self, rec: DescentRecord) -> None:
        if self.records and rec.iter <= self.records[-1].iter:
            raise ValueError("trace records must be appended in iteration order")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, k):
        return self.records[k]

    @property
    def iterations(self) -> int:
        return self.records[-1].iter if self.records else 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iter", "F", "max_grad", "residual_l2", "step"])
        for r in self.records:
            writer.writerow([r.iter, fmt(r.F), fmt(r.max_grad), fmt(r.residual_l2), fmt(r.step)])
        return buf.getvalue()


def descend(u0: ScalarField, mask: BoundaryMask,
            params: DescentParams | None = None) -> tuple[ScalarField, DescentTrace]:
    """Gradient descent on ``F_h`` with Armijo backtracking.

    The search direction is the weighted (L2) gradient ``grad F_h / w``.  Each
    iteration starts from twice the previously accepted step and halves it
    until ``F(u - t p) <= F(u) - armijo * t * <grad F_h, p>``.  Record 0 holds
    the initial state; the run stops after ``max_iters`` steps or once the
    largest free-node gradient entry drops below ``target``.
    """
    params = params or DescentParams()
    grid = u0.grid
    hessian(u0)
    frozen = mask.frozen
    w = quadrature_weights(grid)
    step = params.step if params.step is not None else 0.1 * min(grid.spacing) ** 4

    u = u0.values.copy()
    F = discrete_volume(grid, u)
    grad = _volume_gradient_values(grid, u, frozen)
    trace = DescentTrace()

    def record(it: int, used: float) -> None:
        res = residual_l2(harmonicity_residual(ScalarField(grid, u), mask), mask)
        trace.append(DescentRecord(it, F, float(np.max(np.abs(grad))), res, used))

    record(0, 0.0)
    if not math.isfinite(F):
        raise DescentAborted("initial functional value is not finite", trace)

    for it in range(1, params.max_iters + 1):
        if np.max(np.abs(grad)) < params.target:
            break
        direction = grad / w
        slope = float(np.sum(grad * direction))
        t = 2.0 * step if it > 1 else step
        for _ in range(params.max_halvings):
            trial = u - t * direction
            F_trial = discrete_volume(grid, trial)
            if not math.isfinite(F_trial):
                raise DescentAborted(f"non-finite functional at iteration {it}", trace)
            if F_trial <= F - params.armijo * t * slope:
                break
            t *= 0.5
        else:
            break  # no admissible step: stationary to working precision
        u, F, step = trial, F_trial, t
        grad = _volume_gradient_values(grid, u, frozen)
        record(it, t)

    return ScalarField(grid, u), trace
