"""Lewy-Yuan rotation of sampled gradient graphs.

Rotating ``C^n`` by ``e^{-i sigma}`` sends the graph ``{(x, Du(x))}`` to
``{(xbar, ybar)}`` with::

    xbar =  cos(s) x + sin(s) Du(x)
    ybar = -sin(s) x + cos(s) Du(x)

and, when ``x -> xbar`` is invertible, ``ybar = D ubar(xbar)`` for the rotated
potential ``ubar = u + sin cos (|Du|^2 - |x|^2)/2 - sin^2 Du.x``.  Each
eigenvalue of the Hessian moves as ``lam -> tan(arctan(lam) - sigma)``.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial import cKDTree

from .fields import (
    DEFAULT_PLAN,
    Grid,
    MarginReport,
    SamplingPlan,
    ScalarField,
    gradient,
    hessian,
    k_convexity_margin,
    pairwise_margin,
)
from .fieldio import fmt
from .linalg import sym_eigvals

HYPOTHESIS_TOL = 1e-10
INVERSION_RTOL = 1e-10
INVERSION_MAX_STEPS = 10_000


class HypothesisError(ValueError):
    """A convexity hypothesis fails; ``pair`` holds the violating points."""

    def __init__(self, message: str, pair=None, margin: float | None = None):
        super().__init__(message)
        self.pair = pair
        self.margin = margin


class InversionError(RuntimeError):
    """The coordinate change could not be inverted at some target nodes."""

    def __init__(self, message: str, failures: list):
        super().__init__(message)
        self.failures = failures


@dataclass(frozen=True)
class RotationParams:
    sigma: float
    eps_margin: float = 0.1

    def __post_init__(self):
        s = float(self.sigma)
        if not (math.isfinite(s) and abs(s) < 0.5 * math.pi):
            raise ValueError(f"sigma must lie in (-pi/2, pi/2), got {self.sigma}")
        if math.sin(s) == 0.0:
            raise ValueError("sigma = 0 is the trivial rotation")
        if not (self.eps_margin > 0 and math.isfinite(self.eps_margin)):
            raise ValueError(f"eps_margin must be positive, got {self.eps_margin}")

    @property
    def cs(self) -> tuple[float, float]:
        return math.cos(self.sigma), math.sin(self.sigma)

    @property
    def modulus(self) -> float:
        """Guaranteed strong-monotonicity constant ``|sin(sigma)| eps``."""
        return abs(math.sin(self.sigma)) * self.eps_margin

    def reversed(self) -> "RotationParams":
        return RotationParams(-self.sigma, self.eps_margin)


@dataclass(frozen=True, eq=False)
class RotatedGraph:
    """Scattered samples of the rotated graph, one per source node."""

    grid: Grid
    x: np.ndarray        # (N, n) source nodes
    xbar: np.ndarray     # (N, n)
    ybar: np.ndarray     # (N, n)
    ubar: np.ndarray     # (N,)
    params: RotationParams
    certificate: MarginReport
    hessian_sup: float   # largest |eigenvalue| of the discrete Hessian of u

    @property
    def sigma(self) -> float:
        return self.params.sigma

    def du(self) -> np.ndarray:
        """``Du`` at the source nodes, recovered as ``sin xbar + cos ybar``."""
        c, s = self.params.cs
        return s * self.xbar + c * self.ybar

    def to_csv(self) -> str:
        n = self.grid.n
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(n)] + [f"xbar{i}" for i in range(n)]
                        + [f"ybar{i}" for i in range(n)] + ["ubar"])
        for k in range(len(self.ubar)):
            row = list(self.x[k]) + list(self.xbar[k]) + list(self.ybar[k]) + [self.ubar[k]]
            writer.writerow([fmt(v) for v in row])
        return buf.getvalue()


def rotation_formulas(x: np.ndarray, u: np.ndarray, du: np.ndarray,
                      sigma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pointwise ``(xbar, ybar, ubar)`` for samples of ``u`` and ``Du``."""
    c, s = math.cos(sigma), math.sin(sigma)
    xbar = c * x + s * du
    ybar = -s * x + c * du
    ubar = (u + s * c * 0.5 * (np.sum(du * du, axis=-1) - np.sum(x * x, axis=-1))
            - s * s * np.sum(du * x, axis=-1))
    return xbar, ybar, ubar


def _hessian_sup(u: ScalarField) -> float:
    """Sup of ``|D^2u|``; on grids too small for the Hessian stencil, a
    Frobenius bound built from lattice differences of ``Du``."""
    grid = u.grid
    if min(grid.shape) >= 5:
        return float(np.max(np.abs(sym_eigvals(hessian(u).values))))
    du = gradient(u).values
    total = 0.0
    for a, h in enumerate(grid.spacing):
        jump = np.diff(du, axis=a) / h
        total += float(np.max(np.sum(jump * jump, axis=-1)))
    return math.sqrt(total)


def semiconvexity_margin(u: ScalarField, params: RotationParams,
                         plan: SamplingPlan = DEFAULT_PLAN) -> MarginReport:
    """Sampled slack in the hypothesis that makes ``x -> xbar`` strongly monotone.

    For ``sigma > 0`` this is ``u + (cot(sigma) - eps)|x|^2/2`` convex; for an
    upward rotation the mirror statement for ``-u``.
    """
    s = params.sigma
    K = -1.0 / math.tan(abs(s)) + params.eps_margin
    target = u if s > 0 else -u
    return k_convexity_margin(target, K, plan)


def rotate_graph(u: ScalarField, params: RotationParams,
                 plan: SamplingPlan = DEFAULT_PLAN) -> RotatedGraph:
    """Rotate the sampled gradient graph of ``u`` by ``sigma``.

    Refuses with :class:`HypothesisError` when the semi-convexity hypothesis
    fails on the sampled pairs.  The returned certificate is the monotonicity
    slack ``min <dxbar, dx>/|dx|^2 - |sin(sigma)| eps`` on the same pairs.
    """
    grid = u.grid
    hyp = semiconvexity_margin(u, params, plan)
    if hyp.value < -HYPOTHESIS_TOL:
        raise HypothesisError(
            f"semi-convexity fails for sigma={params.sigma}, eps={params.eps_margin}: "
            f"margin {hyp.value:.6g}", hyp.worst, hyp.value)
    x = grid.coords().reshape(-1, grid.n)
    du = gradient(u).values.reshape(-1, grid.n)
    xbar, ybar, ubar = rotation_formulas(x, u.values.reshape(-1), du, params.sigma)

    i0, i1 = plan.pairs(grid)
    value, k = pairwise_margin(x, xbar, params.modulus, i0, i1)
    cert = MarginReport("monotonicity", value, len(i0), plan.seed,
                        worst=(x[i0[k]], x[i1[k]]),
                        extra={"modulus": params.modulus, "hypothesis_margin": hyp.value})
    return RotatedGraph(grid, x, xbar, ybar, ubar, params, cert, _hessian_sup(u))


# ---------------------------------------------------------------------------
# checks on the scattered samples


def _neighbour_offsets(n: int) -> list[tuple[int, ...]]:
    return [o for o in itertools.product((-1, 0, 1), repeat=n) if any(o)]


def rotated_gradient_check(u: ScalarField, params: RotationParams,
                           plan: SamplingPlan = DEFAULT_PLAN) -> MarginReport:
    """Largest gap between ``ybar`` and a fitted ``D ubar`` at the rotated nodes.

    At each source node with a full ring of lattice neighbours, a plane
    through ``(xbar_i, ubar_i)`` is fitted to the neighbours' images by
    least squares with weights ``1/|dxbar|^2``; its slope estimates
    ``D ubar(xbar_i)``.  The ring is centrally symmetric, so the fit is exact
    when ``ubar`` is quadratic.  Nodes without such a ring, or whose image
    ring is degenerate, are skipped and counted.
    """
    rg = rotate_graph(u, params, plan)
    grid = rg.grid
    n = grid.n
    shape = grid.shape
    xb = rg.xbar.reshape(*shape, n)
    ub = rg.ubar.reshape(shape)
    yb = rg.ybar.reshape(*shape, n)
    inner = tuple(slice(1, m - 1) for m in shape)
    centre_x = xb[inner].reshape(-1, n)
    centre_u = ub[inner].reshape(-1)

    normal = np.zeros((len(centre_u), n, n))
    rhs = np.zeros((len(centre_u), n))
    for off in _neighbour_offsets(n):
        sl = tuple(slice(1 + o, m - 1 + o) for o, m in zip(off, shape))
        d = xb[sl].reshape(-1, n) - centre_x
        du = ub[sl].reshape(-1) - centre_u
        d2 = np.einsum("ij,ij->i", d, d)
        w = np.where(d2 > 0, 1.0 / np.where(d2 > 0, d2, 1.0), 0.0)
        normal += w[:, None, None] * d[:, :, None] * d[:, None, :]
        rhs += (w * du)[:, None] * d

    cond = np.linalg.cond(normal)
    good = np.isfinite(cond) & (cond < 1e12)
    slope = np.full_like(rhs, np.nan)
    if np.any(good):
        slope[good] = np.linalg.solve(normal[good], rhs[good][..., None])[..., 0]
    claimed = yb[inner].reshape(-1, n)
    err = np.linalg.norm(slope - claimed, axis=-1)
    skipped = grid.size - int(np.sum(good))
    if not np.any(good):
        raise ValueError("no node has a usable neighbour ring")
    k = int(np.nanargmax(np.where(good, err, -np.inf)))
    xs = grid.coords()[inner].reshape(-1, n)
    return MarginReport("rotated_gradient", float(err[k]), int(np.sum(good)), plan.seed,
                        worst=(xs[k],), extra={"skipped": skipped})


def lipschitz_ratio(rg: RotatedGraph, plan: SamplingPlan = DEFAULT_PLAN) -> MarginReport:
    """Largest sampled ``|dybar| / |dxbar|`` on the rotated graph."""
    i0, i1 = plan.pairs(rg.grid)
    dx = rg.xbar[i1] - rg.xbar[i0]
    dy = rg.ybar[i1] - rg.ybar[i0]
    nx = np.linalg.norm(dx, axis=-1)
    keep = nx > 0
    ratio = np.zeros(len(nx))
    ratio[keep] = np.linalg.norm(dy[keep], axis=-1) / nx[keep]
    k = int(np.argmax(ratio))
    return MarginReport("lipschitz_ratio", float(ratio[k]), len(i0), plan.seed,
                        worst=(rg.x[i0[k]], rg.x[i1[k]]))


def convexity_propagation_check(u: ScalarField, kappa: float, params: RotationParams,
                                plan: SamplingPlan = DEFAULT_PLAN) -> MarginReport:
    """Sampled slack in the claim that ``ubar`` is ``tan(kappa - sigma)``-convex.

    Uses the pairs ``(xbar, ybar)`` directly, so no resampling enters.
    """
    sigma = params.sigma
    for name, angle in (("kappa", kappa), ("kappa - sigma", kappa - sigma)):
        if not abs(angle) < 0.5 * math.pi:
            raise ValueError(f"{name} must lie in (-pi/2, pi/2), got {angle}")
    pre = k_convexity_margin(u, math.tan(kappa), plan)
    if pre.value < -HYPOTHESIS_TOL:
        raise HypothesisError(f"u is not tan(kappa)-convex: margin {pre.value:.6g}",
                              pre.worst, pre.value)
    rg = rotate_graph(u, params, plan)
    i0, i1 = plan.pairs(rg.grid)
    K = math.tan(kappa - sigma)
    value, k = pairwise_margin(rg.xbar, rg.ybar, K, i0, i1)
    return MarginReport("convexity_propagation", value, len(i0), plan.seed,
                        worst=(rg.x[i0[k]], rg.x[i1[k]]), extra={"K": K})


def c11_bound(params: RotationParams) -> float:
    """Lipschitz bound for ``D ubar``: the larger of the two case estimates."""
    s = params.sigma
    if not 0.0 < s < 0.5 * math.pi:
        raise ValueError("c11_bound needs sigma in (0, pi/2)")
    # (cos^2 + 1) = (3 + cos 2s)/2, sin^2 = (1 - cos 2s)/2, sin cos = sin 2s / 2
    c2 = math.cos(2.0 * s)
    case1 = (3.0 + c2) / ((1.0 - c2) * params.eps_margin)
    case2 = (3.0 + c2) / math.sin(2.0 * s)
    return max(case1, case2)


# ---------------------------------------------------------------------------
# inversion and resampling


def image_box(rg: RotatedGraph, shape=None, shrink: float = 0.02) -> Grid:
    """An axis-aligned target grid inside the image of the source box.

    Per axis, the lower end is the largest ``xbar`` coordinate over the source
    face on that side and the upper end the smallest over the opposite face;
    the box is then shrunk by ``shrink`` of its width on each side.
    """
    grid = rg.grid
    n = grid.n
    xb = rg.xbar.reshape(*grid.shape, n)
    lo, hi = np.empty(n), np.empty(n)
    for a in range(n):
        low_face = np.take(xb[..., a], 0, axis=a)
        high_face = np.take(xb[..., a], grid.shape[a] - 1, axis=a)
        if np.mean(high_face) < np.mean(low_face):
            low_face, high_face = high_face, low_face
        lo[a], hi[a] = np.max(low_face), np.min(high_face)
    if np.any(hi <= lo):
        raise InversionError("the image of the source box contains no axis-aligned box", [])
    pad = shrink * (hi - lo)
    return Grid.box(lo + pad, hi - pad, shape or grid.shape)


def _gauge(values: np.ndarray, grid: Grid) -> np.ndarray:
    return values - values[grid.center_index()]


def _interpolant(rg: RotatedGraph):
    """Multilinear interpolant of ``Du`` on the source lattice, vectorised over points."""
    grid = rg.grid
    comps = [np.ascontiguousarray(c) for c in np.moveaxis(rg.du().reshape(*grid.shape, grid.n), -1, 0)]
    lo = grid.lower
    h = np.asarray(grid.spacing)

    def evaluate(points: np.ndarray) -> np.ndarray:
        idx = ((points - lo) / h).T
        return np.stack([map_coordinates(c, idx, order=1, mode="nearest") for c in comps], axis=-1)

    return evaluate


def _fixed_point(rg: RotatedGraph, targets: np.ndarray, interp) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised damped iteration; returns ``(x, residual, unconverged indices)``."""
    grid = rg.grid
    c, s = rg.params.cs
    _, nearest = cKDTree(rg.xbar).query(targets)
    x = rg.x[nearest].copy()
    L = abs(c) + abs(s) * rg.hessian_sup
    mu = max(rg.params.modulus, rg.params.modulus + rg.certificate.value)
    tau = mu / (L * L)
    tol = INVERSION_RTOL * grid.diameter
    lo, hi = grid.lower, grid.upper

    active = np.arange(len(targets))
    resid = np.full(len(targets), np.inf)
    for _ in range(INVERSION_MAX_STEPS + 1):
        xa = x[active]
        r = c * xa + s * interp(xa) - targets[active]
        norm = np.linalg.norm(r, axis=-1)
        resid[active] = norm
        done = norm < tol
        active, xa, r = active[~done], xa[~done], r[~done]
        if active.size == 0:
            break
        x[active] = np.clip(xa - tau * r, lo, hi)
    return x, resid, active


def invert_coordinates(rg: RotatedGraph, target: Grid, gauge: bool = True) -> ScalarField:
    """Resample ``ubar`` onto ``target`` by inverting ``x -> xbar``.

    Each target node ``xbar*`` is solved for by the damped fixed point
    ``x <- x - tau (xbar(x) - xbar*)`` with ``Du`` interpolated multilinearly,
    started from the source node with the nearest image.  ``tau = mu / L^2``
    with ``L = |cos| + |sin| Lip(Du)`` and ``mu`` the larger of the guaranteed
    modulus and the sampled certificate.  The value is carried from the
    nearest source node with the trapezoid rule along ``D ubar = ybar``.
    """
    grid = rg.grid
    n = grid.n
    c, s = rg.params.cs
    interp = _interpolant(rg)
    targets = target.coords().reshape(-1, n)
    x, resid, active = _fixed_point(rg, targets, interp)
    if active.size:
        failures = [(tuple(int(v) for v in np.unravel_index(i, target.shape)),
                     targets[i].tolist(), float(resid[i])) for i in active]
        raise InversionError(f"{len(failures)} target nodes did not converge", failures)

    # value transport from the source node nearest the solved preimage
    idx = np.rint((x - grid.lower) / np.asarray(grid.spacing)).astype(int)
    idx = np.clip(idx, 0, np.asarray(grid.shape) - 1)
    j = np.ravel_multi_index(tuple(idx.T), grid.shape)
    y_here = -s * x + c * interp(x)
    values = rg.ubar[j] + 0.5 * np.einsum("ij,ij->i", rg.ybar[j] + y_here, targets - rg.xbar[j])
    values = values.reshape(target.shape)
    return ScalarField(target, _gauge(values, target) if gauge else values)


def solve_preimages(rg: RotatedGraph, points: np.ndarray) -> np.ndarray:
    """Preimages ``x`` with ``xbar(x) = points``, by the resampler's iteration."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, resid, active = _fixed_point(rg, pts, _interpolant(rg))
    if active.size:
        raise InversionError(f"{active.size} preimages did not converge",
                             [(int(i), pts[i].tolist(), float(resid[i])) for i in active])
    return x


def rotate_to_grid(u: ScalarField, params: RotationParams, target: Grid | None = None,
                   plan: SamplingPlan = DEFAULT_PLAN) -> ScalarField:
    """``ubar`` sampled on a regular grid (by default :func:`image_box`).

    Normalised to vanish at the target node nearest the centre.
    """
    rg = rotate_graph(u, params, plan)
    return invert_coordinates(rg, target if target is not None else image_box(rg))


def inverse_rotate(ubar: ScalarField, params: RotationParams, target: Grid | None = None,
                   plan: SamplingPlan = DEFAULT_PLAN) -> ScalarField:
    """Undo :func:`rotate_to_grid` by conjugation: ``u = -U_sigma(-ubar)``.

    The mirror hypothesis (``ubar`` semi-concave) is checked by the forward
    rotation of ``-ubar``.  The result vanishes at the target centre node.
    """
    try:
        rotated = rotate_to_grid(-ubar, params, target, plan)
    except HypothesisError as exc:
        raise HypothesisError(f"mirror hypothesis fails: {exc}", exc.pair, exc.margin) from exc
    return -rotated


def rotated_hessian_eigenvalues(ubar: ScalarField, margin: int = 2) -> np.ndarray:
    """Eigenvalues of the discrete Hessian of a resampled potential, away from its edges."""
    M = hessian(ubar).values
    inner = tuple(slice(margin, m - margin) for m in ubar.grid.shape)
    return sym_eigvals(M[inner])
