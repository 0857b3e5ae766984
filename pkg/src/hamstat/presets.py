"""Closed-form potentials used by the CLI and the test-suite.

Preset grammar (terms may be summed with ``+``)::

    zero                   u = 0
    quad:l1,...,ln         u = sum_i l_i x_i^2 / 2        (n = number of l's)
    harmonic2d             u = x1^2 - x2^2                 (n = 2)
    cubic1d                u = x^3 / 6                      (n = 1)
    bump:amp               u = amp * smooth radial bump, compactly supported

e.g. ``harmonic2d+bump:0.05``.
"""

from __future__ import annotations

import numpy as np

from .fields import Grid, ScalarField

BUMP_RADIUS = 0.4  # support radius as a fraction of the shortest box side


class PresetError(ValueError):
    pass


def bump_values(grid: Grid, amplitude: float = 1.0) -> np.ndarray:
    """``amp * exp(1 - 1/(1 - rho^2))`` for ``rho < 1``, centred in the box.

    ``rho`` is the distance to the box centre over ``0.4 * min side``, so the
    support stays clear of the boundary layers on reasonably fine grids.
    """
    lo, hi = grid.lower, grid.upper
    center = 0.5 * (lo + hi)
    radius = BUMP_RADIUS * float(np.min(hi - lo))
    rho2 = np.sum(((grid.coords() - center) / radius) ** 2, axis=-1)
    out = np.zeros(grid.shape)
    inside = rho2 < 1.0
    out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
    return out


def _term_dimension(term: str) -> int | None:
    name, _, _ = term.partition(":")
    if name == "quad":
        return len(_numbers(term))
    if name == "harmonic2d":
        return 2
    if name == "cubic1d":
        return 1
    return None


def _numbers(term: str) -> list[float]:
    _, _, arg = term.partition(":")
    try:
        vals = [float(v) for v in arg.split(",") if v.strip()]
    except ValueError as exc:
        raise PresetError(f"bad numbers in preset {term!r}") from exc
    if not vals or not all(np.isfinite(vals)):
        raise PresetError(f"preset {term!r} needs finite numeric arguments")
    return vals


def preset_dimension(spec: str) -> int | None:
    dims = {d for d in (_term_dimension(t) for t in spec.split("+")) if d is not None}
    if len(dims) > 1:
        raise PresetError(f"preset {spec!r} mixes dimensions {sorted(dims)}")
    return dims.pop() if dims else None


def default_grid(spec: str, n: int | None = None) -> Grid:
    """The grid a preset is evaluated on when none is given."""
    dim = preset_dimension(spec) or n or 2
    names = {t.partition(":")[0] for t in spec.split("+")}
    if "cubic1d" in names:
        return Grid.box([0.0], [1.0], [1024])
    if "harmonic2d" in names:
        return Grid.box([-1.0, -1.0], [1.0, 1.0], [64, 64])
    if names <= {"bump"}:
        return Grid.box([-1.0] * dim, [1.0] * dim, [64] * dim)
    return Grid.box([0.0] * dim, [1.0] * dim, [64] * dim)


def _term_values(term: str, grid: Grid) -> np.ndarray:
    name = term.partition(":")[0]
    x = grid.coords()
    dim = _term_dimension(term)
    if dim is not None and dim != grid.n:
        raise PresetError(f"preset term {term!r} needs n={dim}, grid has n={grid.n}")
    if name == "zero":
        return np.zeros(grid.shape)
    if name == "quad":
        lam = np.asarray(_numbers(term))
        return 0.5 * np.sum(lam * x * x, axis=-1)
    if name == "harmonic2d":
        return x[..., 0] ** 2 - x[..., 1] ** 2
    if name == "cubic1d":
        return x[..., 0] ** 3 / 6.0
    if name == "bump":
        amp = _numbers(term)
        if len(amp) != 1:
            raise PresetError("bump takes one amplitude")
        return bump_values(grid, amp[0])
    raise PresetError(f"unknown preset {term!r}")


def make_preset(spec: str, grid: Grid | None = None) -> ScalarField:
    grid = grid or default_grid(spec)
    total = np.zeros(grid.shape)
    for term in spec.split("+"):
        total = total + _term_values(term.strip(), grid)
    return ScalarField(grid, total)
