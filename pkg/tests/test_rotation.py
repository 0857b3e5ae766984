from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hamstat.fields import Grid, ScalarField, SamplingPlan
from hamstat.presets import make_preset
from hamstat.rotation import (
    HypothesisError,
    InversionError,
    RotationParams,
    c11_bound,
    convexity_propagation_check,
    image_box,
    invert_coordinates,
    inverse_rotate,
    lipschitz_ratio,
    rotate_graph,
    rotate_to_grid,
    rotated_gradient_check,
    rotated_hessian_eigenvalues,
    rotation_formulas,
    semiconvexity_margin,
    solve_preimages,
)

SQUARE = ([-1.0, -1.0], [1.0, 1.0])


def square(m):
    return Grid.box(*SQUARE, [m, m])


def cubic_harmonic(grid):
    return ScalarField.from_function(grid, lambda x: (x[..., 0] ** 3 - 3 * x[..., 0] * x[..., 1] ** 2) / 6)


def test_params_validation():
    for bad in (0.0, math.pi / 2, -2.0, math.nan):
        with pytest.raises(ValueError):
            RotationParams(bad)
    with pytest.raises(ValueError):
        RotationParams(0.3, eps_margin=0.0)
    p = RotationParams(0.3, 0.2)
    assert p.reversed().sigma == -0.3
    assert p.modulus == pytest.approx(math.sin(0.3) * 0.2)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-1.4, 1.4).filter(lambda s: abs(s) > 1e-3))
def test_quadratic_rotates_by_tangent_subtraction(lam, sigma):
    # u = lam x^2/2 rotates to ubar = mu xbar^2/2 with mu = tan(arctan(lam) - sigma)
    if abs(math.cos(sigma) + math.sin(sigma) * lam) < 1e-2:
        return
    x = np.linspace(-1, 1, 7)[:, None]
    xbar, ybar, ubar = rotation_formulas(x, 0.5 * lam * x[:, 0] ** 2, lam * x, sigma)
    mu = math.tan(math.atan(lam) - sigma)
    assert np.allclose(ybar, mu * xbar, atol=1e-9 * (1 + abs(mu)))
    assert np.allclose(ubar, 0.5 * mu * xbar[:, 0] ** 2, atol=1e-9 * (1 + abs(mu)))


def test_derivative_identity_on_scattered_samples():
    # d ubar = ybar . d xbar along any pair of nearby samples (second-order check)
    g = Grid.box([-1.0], [1.0], [2001])
    x = g.coords().reshape(-1, 1)
    u = np.cos(x[:, 0]) + x[:, 0] ** 3 / 6
    du = (-np.sin(x[:, 0]) + x[:, 0] ** 2 / 2)[:, None]
    xbar, ybar, ubar = rotation_formulas(x, u, du, 0.4)
    lhs = np.diff(ubar)
    rhs = 0.5 * (ybar[1:, 0] + ybar[:-1, 0]) * np.diff(xbar[:, 0])
    assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_quad_quarter_turn_eigenvalues():
    g = square(33)
    ubar = rotate_to_grid(make_preset("quad:2,2", g), RotationParams(math.pi / 4))
    lam = rotated_hessian_eigenvalues(ubar)
    assert np.max(np.abs(lam - 1 / 3)) < 1e-8


def test_hypothesis_failure_reports_pair():
    g = square(17)
    with pytest.raises(HypothesisError) as info:
        rotate_graph(make_preset("quad:-3,-3", g), RotationParams(math.pi / 4))
    assert info.value.pair is not None and info.value.margin < 0
    # the mirror statement holds for sigma < 0
    rg = rotate_graph(make_preset("quad:-3,-3", g), RotationParams(-math.pi / 4))
    assert rg.certificate.value > 0


def test_semiconvexity_margin_equality_case():
    g = square(17)
    # u = -|x|^2/2 and sigma = pi/4: semi-convexity exactly at the threshold -cot(sigma)
    m = semiconvexity_margin(make_preset("quad:-1,-1", g), RotationParams(math.pi / 4, 1e-6))
    assert abs(m.value) < 1e-5


def test_monotonicity_certificate_holds_on_presets():
    for spec, sigma in (("quad:2,2", math.pi / 4), ("harmonic2d", 0.3), ("quad:1,3", math.pi / 4)):
        rg = rotate_graph(make_preset(spec, square(33)), RotationParams(sigma))
        assert rg.certificate.value >= 0
        assert rg.certificate.n_pairs > 0


def test_rotated_gradient_matches_ybar():
    params = RotationParams(0.3)
    errs = []
    for m in (17, 33):
        rep = rotated_gradient_check(cubic_harmonic(square(m)), params)
        errs.append(rep.value)
    assert errs[1] < errs[0] and errs[1] < 1e-2
    rep = rotated_gradient_check(make_preset("quad:1,2", square(17)), params)
    assert rep.value < 1e-10


def test_graph_csv_and_du():
    rg = rotate_graph(make_preset("quad:1,1", square(5)), RotationParams(0.2))
    assert np.allclose(rg.du(), rg.x, atol=1e-12)
    lines = rg.to_csv().splitlines()
    assert lines[0] == "x0,x1,xbar0,xbar1,ybar0,ybar1,ubar"
    assert len(lines) == 26


def test_preimages_recover_source_nodes():
    rg = rotate_graph(cubic_harmonic(square(33)), RotationParams(0.3))
    inner = np.abs(rg.x).max(axis=1) < 0.7
    x = solve_preimages(rg, rg.xbar[inner])
    assert np.max(np.abs(x - rg.x[inner])) < 1e-3


def test_inversion_refuses_targets_outside_image():
    rg = rotate_graph(make_preset("quad:1,1", square(17)), RotationParams(0.3))
    far = Grid.box([5.0, 5.0], [6.0, 6.0], [5, 5])
    with pytest.raises(InversionError) as info:
        invert_coordinates(rg, far)
    assert len(info.value.failures) == 25


def test_image_box_lies_inside_image():
    rg = rotate_graph(make_preset("harmonic2d", square(33)), RotationParams(0.3))
    box = image_box(rg)
    assert box.shape == (33, 33)
    ubar = invert_coordinates(rg, box)
    assert ubar.values[box.center_index()] == 0.0


def test_round_trip_quadratic_and_harmonic():
    params = RotationParams(0.3)
    u = make_preset("harmonic2d", square(33))
    ubar = rotate_to_grid(u, params)
    back = inverse_rotate(ubar, params)
    exact = make_preset("harmonic2d", back.grid).values
    exact -= exact[back.grid.center_index()]
    assert np.max(np.abs(back.values - exact)) < 1e-9


def test_round_trip_cubic_harmonic_second_order():
    params = RotationParams(0.3)
    errs, hs = [], []
    for m in (33, 65):
        ubar = rotate_to_grid(cubic_harmonic(square(m)), params)
        back = inverse_rotate(ubar, params)
        exact = cubic_harmonic(back.grid).values
        exact -= exact[back.grid.center_index()]
        errs.append(np.max(np.abs(back.values - exact)))
        hs.append(max(back.grid.spacing))
        assert errs[-1] <= hs[-1] ** 2
    assert errs[0] / errs[1] > 3.0


def test_conjugate_rotations_compose():
    g = square(33)
    u = make_preset("quad:1,3", g)
    a, b = 0.2, 0.3
    once = rotated_hessian_eigenvalues(rotate_to_grid(u, RotationParams(a + b)))
    twice = rotated_hessian_eigenvalues(rotate_to_grid(rotate_to_grid(u, RotationParams(a)), RotationParams(b)))
    assert np.allclose(once, twice, atol=1e-8)
    expected = sorted(math.tan(math.atan(l) - a - b) for l in (1, 3))
    assert np.allclose(once.reshape(-1, 2), expected, atol=1e-8)


def test_convexity_propagation_equality_and_slack():
    u = make_preset("quad:1,1", square(17))
    params = RotationParams(math.pi / 8)
    tight = convexity_propagation_check(u, math.pi / 4, params)
    assert abs(tight.value) < 1e-10
    loose = convexity_propagation_check(u, math.pi / 6, params)
    assert loose.value == pytest.approx(math.tan(math.pi / 8) - math.tan(math.pi / 6 - math.pi / 8), abs=1e-10)
    with pytest.raises(HypothesisError):
        convexity_propagation_check(u, math.pi / 3, params)


def test_c11_bound_values():
    assert c11_bound(RotationParams(math.pi / 4, 1.0)) == pytest.approx(3.0, rel=4 * 2.0 ** -52)
    assert c11_bound(RotationParams(math.pi / 4, 0.5)) == pytest.approx(6.0, rel=4 * 2.0 ** -52)
    with pytest.raises(ValueError):
        c11_bound(RotationParams(-0.3))


@pytest.mark.parametrize("spec, sigma", [("quad:2,2", math.pi / 4), ("quad:1,3", math.pi / 4),
                                         ("harmonic2d", 0.3), ("harmonic2d+bump:0.05", 0.3)])
def test_lipschitz_ratio_below_c11_bound(spec, sigma):
    params = RotationParams(sigma, 0.1)
    rg = rotate_graph(make_preset(spec, square(33)), params, SamplingPlan(seed=1))
    assert lipschitz_ratio(rg, SamplingPlan(seed=1)).value <= c11_bound(params)
