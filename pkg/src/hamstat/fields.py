"""Structured-grid fields and the finite-difference calculus built on them.

Every other module consumes the types and operators defined here:

* :class:`Grid` -- an axis-aligned box lattice with uniform spacing per axis,
* :class:`ScalarField`, :class:`VectorField`, :class:`SymmetricMatrixField`,
* :func:`gradient`, :func:`hessian` (plus the exact adjoint
  :func:`hessian_adjoint`), :func:`difference_quotient`, :func:`mollify`,
  :func:`integrate` and :func:`k_convexity_margin`.

Values are stored as numpy arrays whose leading axes are the grid shape, in
row-major (C) order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class GridError(ValueError):
    """Raised when a grid is malformed or too small for an operation."""


@dataclass(frozen=True)
class Grid:
    """Uniform box lattice in 1 to 3 dimensions.

    The node with multi-index ``i`` sits at ``origin + i * spacing``.
    """

    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        spacing = tuple(float(v) for v in self.spacing)
        shape = tuple(int(v) for v in self.shape)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "shape", shape)
        n = len(shape)
        if not 1 <= n <= 3:
            raise GridError(f"dimension must be 1, 2 or 3, got {n}")
        if len(origin) != n or len(spacing) != n:
            raise GridError("origin, spacing and shape must have equal length")
        if not all(np.isfinite(origin)) or not all(h > 0 and np.isfinite(h) for h in spacing):
            raise GridError(f"spacing must be positive and finite, got {spacing}")
        if min(shape) < 2:
            raise GridError(f"every axis needs at least 2 nodes, got {shape}")

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float], shape: Sequence[int]) -> "Grid":
        """Grid with ``shape`` nodes spanning ``[lo, hi]`` (endpoints included)."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if np.any(hi <= lo):
            raise GridError("box upper corner must exceed lower corner")
        if min(shape) < 2:
            raise GridError(f"every axis needs at least 2 nodes, got {shape}")
        spacing = (hi - lo) / (np.asarray(shape) - 1)
        return cls(tuple(lo), tuple(spacing), shape)

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(self.shape) - 1) * np.asarray(self.spacing)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(m) for o, h, m in zip(self.origin, self.spacing, self.shape)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, n)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def center_index(self) -> tuple[int, ...]:
        """Multi-index of the node nearest the box center (ties round down)."""
        return tuple((m - 1) // 2 for m in self.shape)

    def subgrid(self, start: Sequence[int], stop: Sequence[int]) -> "Grid":
        """Sub-lattice of nodes with ``start <= i < stop`` per axis."""
        start = np.asarray(start, dtype=int)
        stop = np.asarray(stop, dtype=int)
        origin = np.asarray(self.origin) + start * np.asarray(self.spacing)
        return Grid(tuple(origin), self.spacing, tuple(stop - start))

    def to_header(self) -> dict:
        return {
            "n": self.n,
            "shape": list(self.shape),
            "origin": list(self.origin),
            "spacing": list(self.spacing),
        }


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {v.size}")
        v = v.reshape(self.grid.shape)
        _check_finite(v, "scalar field")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, func) -> "ScalarField":
        """Sample ``func`` (taking an ``(..., n)`` coordinate array) on ``grid``."""
        return cls(grid, func(grid.coords()))

    def __add__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - other)

    def __mul__(self, scalar: float):
        return ScalarField(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(*self.grid.shape, self.grid.n)
        _check_finite(v, "vector field")
        object.__setattr__(self, "values", v)

    def component(self, m: int) -> ScalarField:
        return ScalarField(self.grid, self.values[..., m])


@dataclass(frozen=True, eq=False)
class SymmetricMatrixField:
    """Per-node symmetric ``n x n`` matrices.

    The full matrix is kept for vectorised linear algebra; construction
    averages with the transpose so symmetry holds exactly.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        v = np.asarray(self.values, dtype=float).reshape(*self.grid.shape, n, n)
        _check_finite(v, "matrix field")
        v = 0.5 * (v + np.swapaxes(v, -1, -2))
        object.__setattr__(self, "values", v)

    def upper_triangle(self) -> np.ndarray:
        iu = np.triu_indices(self.grid.n)
        return self.values[..., iu[0], iu[1]]


# ---------------------------------------------------------------------------
# differentiation


def _require_nodes(grid: Grid, minimum: int, what: str) -> None:
    if min(grid.shape) < minimum:
        raise GridError(f"{what} needs at least {minimum} nodes per axis, got {grid.shape}")


def gradient(f: ScalarField) -> VectorField:
    """Second-order gradient: central in the interior, one-sided at the edges."""
    grid = f.grid
    _require_nodes(grid, 3, "gradient")
    parts = np.gradient(f.values, *grid.spacing, edge_order=2)
    if grid.n == 1:
        parts = [parts]
    return VectorField(grid, np.stack(parts, axis=-1))


def _one_sided_1d(m: int, h: float, forward: bool) -> sp.csr_matrix:
    """Forward (or backward) difference; the row that would leave the axis flips direction."""
    rows, cols, vals = [], [], []
    for i in range(m):
        fwd = (forward and i < m - 1) or (not forward and i == 0)
        a, b = (i, i + 1) if fwd else (i - 1, i)
        rows += [i, i]
        cols += [a, b]
        vals += [-1.0 / h, 1.0 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def _second_derivative_1d(m: int, h: float) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    c = 1.0 / (h * h)
    for i in range(m):
        j = min(max(i, 1), m - 2)  # boundary rows reuse the neighbouring interior stencil
        rows += [i, i, i]
        cols += [j - 1, j, j + 1]
        vals += [c, -2.0 * c, c]
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def _along_axis(op: sp.spmatrix, shape: tuple[int, ...], axis: int) -> sp.csr_matrix:
    before = int(np.prod(shape[:axis])) if axis > 0 else 1
    after = int(np.prod(shape[axis + 1:])) if axis + 1 < len(shape) else 1
    return sp.kron(sp.kron(sp.identity(before), op), sp.identity(after)).tocsr()


Stencils = dict[tuple[int, int], sp.csr_matrix]


@lru_cache(maxsize=32)
def stencil_family(grid: Grid) -> tuple[Stencils, ...]:
    """One discrete Hessian per sign pattern ``s`` in ``{+,-}^n``.

    Every member uses the three-point second difference on the diagonal and
    the one-cell product ``D^{s_j}_j D^{s_k}_k`` of one-sided differences off
    it.  Each member makes the 2x2 minors exact discrete null Lagrangians;
    their average is the centred four-point cross stencil.  Keys are ``(j, k)``
    with ``j <= k``.
    """
    _require_nodes(grid, 3, "hessian")
    second = [_along_axis(_second_derivative_1d(m, h), grid.shape, a)
              for a, (m, h) in enumerate(zip(grid.shape, grid.spacing))]
    sided = {(a, fwd): _along_axis(_one_sided_1d(m, h, fwd), grid.shape, a)
             for a, (m, h) in enumerate(zip(grid.shape, grid.spacing)) for fwd in (True, False)}
    family = []
    for signs in itertools.product((True, False), repeat=grid.n):
        ops = {}
        for j in range(grid.n):
            ops[(j, j)] = second[j]
            for k in range(j + 1, grid.n):
                ops[(j, k)] = (sided[(j, signs[j])] @ sided[(k, signs[k])]).tocsr()
        family.append(ops)
    return tuple(family)


@lru_cache(maxsize=32)
def hessian_operators(grid: Grid) -> Stencils:
    """Centred Hessian: the mean of :func:`stencil_family`."""
    family = stencil_family(grid)
    return {key: (sum(ops[key] for ops in family) / len(family)).tocsr() for key in family[0]}


def _apply(ops: Stencils, grid: Grid, values: np.ndarray) -> np.ndarray:
    flat = np.asarray(values, dtype=float).reshape(-1)
    n = grid.n
    out = np.empty((grid.size, n, n))
    for (j, k), op in ops.items():
        out[:, j, k] = op @ flat
        out[:, k, j] = out[:, j, k]
    return out.reshape(*grid.shape, n, n)


def hessian_values(grid: Grid, values: np.ndarray, pattern: int | None = None) -> np.ndarray:
    """Array-level Hessian, shape ``(*grid.shape, n, n)``.

    ``pattern=None`` gives the centred stencil; an integer selects a member of
    :func:`stencil_family`.
    """
    ops = hessian_operators(grid) if pattern is None else stencil_family(grid)[pattern]
    return _apply(ops, grid, values)


def hessian(f: ScalarField) -> SymmetricMatrixField:
    """Discrete Hessian with standard second-order stencils.

    Three-point second differences on the diagonal, the centred four-point
    stencil for mixed derivatives.  Boundary rows fall back to one-sided
    (first-order) versions.  Exact on quadratic polynomials at every node.
    """
    _require_nodes(f.grid, 5, "hessian")
    return SymmetricMatrixField(f.grid, hessian_values(f.grid, f.values))


@lru_cache(maxsize=64)
def _transposed(grid: Grid, pattern: int | None) -> Stencils:
    ops = hessian_operators(grid) if pattern is None else stencil_family(grid)[pattern]
    return {key: op.T.tocsr() for key, op in ops.items()}


def hessian_adjoint(grid: Grid, flux: np.ndarray, pattern: int | None = None) -> np.ndarray:
    """Apply the transpose of a discrete Hessian to a matrix field.

    Returns ``sum_{j,k} H[j,k]^T flux[..., j, k]`` with grid shape, so that
    ``sum(flux * hessian_values(grid, v, p)) == sum(hessian_adjoint(grid, flux, p) * v)``.
    """
    ops = _transposed(grid, pattern)
    n = grid.n
    flux = np.asarray(flux, dtype=float).reshape(grid.size, n, n)
    out = np.zeros(grid.size)
    for (j, k), op in ops.items():
        weight = flux[:, j, k] if j == k else flux[:, j, k] + flux[:, k, j]
        out += op @ weight
    return out.reshape(grid.shape)


def difference_quotient(f: ScalarField, m: int, h: float) -> ScalarField:
    """Forward difference quotient ``(f(x + h e_m) - f(x)) / h``.

    ``h`` may be negative but must be a nonzero multiple of the spacing along
    axis ``m``.  The result lives on the sub-lattice where ``x + h e_m`` is
    still a node.
    """
    grid = f.grid
    if not 0 <= m < grid.n:
        raise GridError(f"axis {m} out of range for n={grid.n}")
    if h == 0:
        raise ValueError("difference quotient step must be nonzero")
    ratio = h / grid.spacing[m]
    steps = int(round(ratio))
    if abs(ratio - steps) > 1e-9 * max(1.0, abs(ratio)):
        raise ValueError(f"step {h} is not a multiple of spacing {grid.spacing[m]}")
    if abs(steps) >= grid.shape[m] - 1:
        raise GridError("difference quotient step leaves no nodes")
    size = grid.shape[m] - abs(steps)
    base = [slice(None)] * grid.n
    shifted = [slice(None)] * grid.n
    start = [0] * grid.n
    stop = list(grid.shape)
    if steps > 0:
        base[m] = slice(0, size)
        shifted[m] = slice(steps, steps + size)
    else:
        base[m] = slice(-steps, -steps + size)
        shifted[m] = slice(0, size)
        start[m] = -steps
    stop[m] = start[m] + size
    vals = (f.values[tuple(shifted)] - f.values[tuple(base)]) / h
    return ScalarField(grid.subgrid(start, stop), vals)


# ---------------------------------------------------------------------------
# mollification and quadrature


def interior_index_range(grid: Grid, eps: float) -> tuple[list[int], list[int]]:
    """Index bounds of the nodes at distance greater than ``eps`` from the box boundary."""
    start, stop = [], []
    for h, m in zip(grid.spacing, grid.shape):
        k = int(np.floor(eps / h + 1e-9)) + 1  # smallest i with i*h > eps
        start.append(k)
        stop.append(m - k)
    return start, stop


def mollify(f: ScalarField, eps: float) -> ScalarField:
    """Convolve with the lattice-sampled quartic bump ``(1 - r^2/eps^2)^2``.

    The kernel is renormalised to unit mass.  The output is defined on the
    nodes whose distance to the boundary exceeds ``eps``, where the kernel
    support stays inside the box.
    """
    grid = f.grid
    if eps < max(grid.spacing) * (1 - 1e-12):
        raise ValueError(f"eps={eps} is below the grid resolution {max(grid.spacing)}")
    start, stop = interior_index_range(grid, eps)
    if any(b - a < 1 for a, b in zip(start, stop)):
        raise GridError(f"eps={eps} leaves no interior nodes")

    reach = [int(np.floor(eps / h)) for h in grid.spacing]
    offsets, weights = [], []
    for off in itertools.product(*(range(-r, r + 1) for r in reach)):
        r2 = sum((o * h) ** 2 for o, h in zip(off, grid.spacing))
        if r2 < eps * eps:
            offsets.append(off)
            weights.append((1.0 - r2 / (eps * eps)) ** 2)
    weights = np.asarray(weights) / np.sum(weights)

    out = np.zeros(tuple(b - a for a, b in zip(start, stop)))
    for off, w in zip(offsets, weights):
        idx = tuple(slice(a + o, b + o) for a, b, o in zip(start, stop, off))
        out += w * f.values[idx]
    return ScalarField(grid.subgrid(start, stop), out)


def quadrature_weights(grid: Grid) -> np.ndarray:
    """Tensor-product trapezoidal weights, shape ``grid.shape``."""
    w = np.ones(())
    for h, m in zip(grid.spacing, grid.shape):
        w1 = np.full(m, h)
        w1[0] = w1[-1] = 0.5 * h
        w = np.multiply.outer(w, w1)
    return w


def integrate(f: ScalarField) -> float:
    return float(np.sum(quadrature_weights(f.grid) * f.values))


# ---------------------------------------------------------------------------
# pair sampling and convexity margins


@dataclass(frozen=True)
class SamplingPlan:
    """Which node pairs a pairwise certificate inspects.

    Small grids (at most ``exhaustive_limit`` nodes) use every pair.  Larger
    grids use all pairs within ``radius`` lattice steps, all pairs of box
    corners, and ``n_random`` long-range pairs drawn with ``seed``.
    """

    radius: int = 2
    n_random: int = 4000
    seed: int = 0
    exhaustive_limit: int = 600

    def pairs(self, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        N = grid.size
        if N <= self.exhaustive_limit:
            i0, i1 = np.triu_indices(N, k=1)
            return i0.astype(np.int64), i1.astype(np.int64)

        index = np.arange(N).reshape(grid.shape)
        first, second = [], []
        r = self.radius
        for off in itertools.product(range(-r, r + 1), repeat=grid.n):
            if off <= (0,) * grid.n:  # keep one of each +/- offset, drop zero
                continue
            src = tuple(slice(max(0, -o), m - max(0, o)) for o, m in zip(off, grid.shape))
            dst = tuple(slice(max(0, o), m - max(0, -o)) for o, m in zip(off, grid.shape))
            first.append(index[src].ravel())
            second.append(index[dst].ravel())

        corners = [index[c] for c in itertools.product(*((0, m - 1) for m in grid.shape))]
        for a, b in itertools.combinations(corners, 2):
            first.append(np.array([a]))
            second.append(np.array([b]))

        if self.n_random > 0:
            rng = np.random.default_rng(self.seed)
            draw = rng.integers(0, N, size=(self.n_random, 2))
            keep = draw[:, 0] != draw[:, 1]
            first.append(draw[keep, 0])
            second.append(draw[keep, 1])
        return np.concatenate(first).astype(np.int64), np.concatenate(second).astype(np.int64)


DEFAULT_PLAN = SamplingPlan()


@dataclass
class MarginReport:
    """A scalar certificate together with the sampling that produced it."""

    kind: str
    value: float
    n_pairs: int = 0
    seed: int | None = None
    worst: tuple | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.value >= 0.0

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "value": self.value, "n_pairs": self.n_pairs, "seed": self.seed}
        if self.worst is not None:
            out["worst"] = [list(map(float, np.ravel(p))) for p in self.worst]
        out.update(self.extra)
        return out


def pairwise_margin(points: np.ndarray, images: np.ndarray, K: float,
                    i0: np.ndarray, i1: np.ndarray) -> tuple[float, int]:
    """Min over pairs of ``(<dY, dX> - K |dX|^2) / |dX|^2``; returns (value, argmin)."""
    dx = points[i1] - points[i0]
    dy = images[i1] - images[i0]
    d2 = np.einsum("ij,ij->i", dx, dx)
    keep = d2 > 0
    if not np.any(keep):
        raise ValueError("sampling plan has no non-degenerate pairs")
    ratio = np.full(d2.shape, np.inf)
    ratio[keep] = np.einsum("ij,ij->i", dy[keep], dx[keep]) / d2[keep] - K
    k = int(np.argmin(ratio))
    return float(ratio[k]), k


def k_convexity_margin(u: ScalarField, K: float, plan: SamplingPlan = DEFAULT_PLAN) -> MarginReport:
    """Sampled certificate that ``u - K|x|^2/2`` is convex.

    Checks ``<Du(x1) - Du(x0), x1 - x0> >= K |x1 - x0|^2`` on the pairs of
    ``plan`` and reports the smallest normalised slack; a nonnegative value
    certifies discrete ``K``-convexity on the sample.
    """
    grid = u.grid
    x = grid.coords().reshape(-1, grid.n)
    du = gradient(u).values.reshape(-1, grid.n)
    i0, i1 = plan.pairs(grid)
    value, k = pairwise_margin(x, du, K, i0, i1)
    return MarginReport("k_convexity", value, len(i0), plan.seed,
                        worst=(x[i0[k]], x[i1[k]]), extra={"K": float(K)})
