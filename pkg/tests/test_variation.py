from __future__ import annotations

import numpy as np
import pytest

from hamstat.fields import Grid, ScalarField
from hamstat.phase import volume
from hamstat.presets import make_preset
from hamstat.variation import (
    BoundaryMask,
    DescentParams,
    DescentTrace,
    DescentRecord,
    SupportError,
    descend,
    discrete_volume,
    first_variation_divergence,
    first_variation_phase,
    harmonicity_residual,
    residual_l2,
    volume_gradient,
)

SQUARE = ([-1.0, -1.0], [1.0, 1.0])


def grid2(m):
    return Grid.box(*SQUARE, [m, m])


def test_mask_requires_two_frozen_layers():
    g = grid2(9)
    with pytest.raises(ValueError):
        BoundaryMask(g, np.zeros(g.shape, dtype=bool))
    assert BoundaryMask.layers(g).free.sum() == 9


def test_test_function_must_vanish_on_frozen_nodes():
    g = grid2(17)
    u = make_preset("quad:1,1", g)
    eta = ScalarField(g, np.ones(g.shape))
    with pytest.raises(SupportError):
        first_variation_divergence(u, eta, BoundaryMask.layers(g))
    with pytest.raises(SupportError):
        first_variation_phase(u, eta, BoundaryMask.layers(g))


@pytest.mark.parametrize("spec", ["quad:1,1", "quad:2,-0.5", "harmonic2d"])
def test_stationary_families(spec):
    g = grid2(64)
    u, eta, mask = make_preset(spec, g), make_preset("bump:1", g), BoundaryMask.layers(g)
    assert abs(first_variation_divergence(u, eta, mask)) < 1e-8
    assert abs(first_variation_phase(u, eta, mask)) < 1e-8
    assert np.max(np.abs(harmonicity_residual(u, mask).values)) < 1e-8


def test_discrete_volume_agrees_with_centred_quadrature():
    g = grid2(33)
    for spec in ("quad:1,3", "zero", "harmonic2d"):
        u = make_preset(spec, g)
        assert discrete_volume(g, u.values) == pytest.approx(volume(u), rel=1e-13)
    gaps = []
    for m in (65, 129):
        g = grid2(m)
        u = make_preset("harmonic2d+bump:0.2", g)
        gaps.append(abs(discrete_volume(g, u.values) - volume(u)) / volume(u))
    assert gaps[1] < 3e-3 and gaps[1] < gaps[0] / 2.5


def test_discrete_calibration():
    # special Lagrangian states minimise F_h among perturbations with the same frozen layers
    g = grid2(17)
    rng = np.random.default_rng(0)
    mask = BoundaryMask.layers(g)
    for spec in ("harmonic2d", "quad:1,1"):
        u = make_preset(spec, g).values
        F = discrete_volume(g, u)
        for _ in range(20):
            v = u.copy()
            v[mask.free] += 0.05 * rng.normal(size=mask.free.sum())
            assert discrete_volume(g, v) >= F - 1e-13


@pytest.mark.parametrize("spec", ["harmonic2d+bump:0.3", "bump:1"])
def test_volume_gradient_matches_finite_differences(spec):
    g = grid2(9)
    u, mask = make_preset(spec, g), BoundaryMask.layers(g)
    G = volume_gradient(u, mask).values
    assert np.all(G[mask.frozen] == 0.0)
    t = 1e-6
    for idx in zip(*np.nonzero(mask.free)):
        e = np.zeros(g.shape)
        e[idx] = 1.0
        fd = (discrete_volume(g, u.values + t * e) - discrete_volume(g, u.values - t * e)) / (2 * t)
        assert G[idx] == pytest.approx(fd, rel=1e-5)


def test_divergence_form_is_directional_derivative():
    g = grid2(21)
    u, eta, mask = make_preset("harmonic2d+bump:0.3", g), make_preset("bump:1", g), BoundaryMask.layers(g)
    t = 1e-6
    fd = (discrete_volume(g, u.values + t * eta.values) - discrete_volume(g, u.values - t * eta.values)) / (2 * t)
    assert first_variation_divergence(u, eta, mask) == pytest.approx(fd, rel=1e-7)
    grad = volume_gradient(u, mask).values
    assert first_variation_divergence(u, eta, mask) == pytest.approx(np.sum(grad * eta.values), rel=1e-10)


def test_forms_agree_under_refinement_in_1d():
    gaps = []
    for m in (129, 257):
        g = Grid.box([0.0], [1.0], [m])
        u, eta, mask = make_preset("cubic1d", g), make_preset("bump:1", g), BoundaryMask.layers(g)
        d, p = first_variation_divergence(u, eta, mask), first_variation_phase(u, eta, mask)
        gaps.append(abs(d - p) / abs(d))
    assert gaps[0] / gaps[1] > 3.5


def test_variation_is_odd_in_eta():
    g = grid2(21)
    u, eta, mask = make_preset("harmonic2d+bump:0.3", g), make_preset("bump:1", g), BoundaryMask.layers(g)
    neg = ScalarField(g, -eta.values)
    assert first_variation_divergence(u, neg, mask) == pytest.approx(-first_variation_divergence(u, eta, mask))
    assert first_variation_phase(u, neg, mask) == pytest.approx(-first_variation_phase(u, eta, mask))


def test_descent_small_run_is_monotone():
    g = grid2(21)
    u0, mask = make_preset("harmonic2d+bump:0.05", g), BoundaryMask.layers(g)
    u, trace = descend(u0, mask, DescentParams(max_iters=200))
    F = trace.column("F")
    assert np.all(np.diff(F) <= 0)
    assert trace[-1].residual_l2 < trace[0].residual_l2
    assert np.array_equal(u.values[mask.frozen], u0.values[mask.frozen])
    assert trace.to_csv().splitlines()[0] == "iter,F,max_grad,residual_l2,step"


def test_descent_zero_iterations_when_already_stationary():
    g = grid2(21)
    u0, mask = make_preset("harmonic2d", g), BoundaryMask.layers(g)
    u, trace = descend(u0, mask, DescentParams(target=1e-6))
    assert trace.iterations == 0 and len(trace) == 1
    assert np.array_equal(u.values, u0.values)


def test_descent_params_validation():
    with pytest.raises(ValueError):
        DescentParams(step=0.0)
    with pytest.raises(ValueError):
        DescentParams(max_iters=-1)
    tr = DescentTrace()
    tr.append(DescentRecord(0, 1.0, 1.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        tr.append(DescentRecord(0, 1.0, 1.0, 1.0, 0.0))


def test_residual_norm_zero_for_harmonic():
    g = grid2(33)
    mask = BoundaryMask.layers(g)
    assert residual_l2(harmonicity_residual(make_preset("harmonic2d", g), mask), mask) < 1e-10
    assert residual_l2(harmonicity_residual(make_preset("harmonic2d+bump:0.05", g), mask), mask) > 1e-3
