import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roughflow.engine import IntegratorConfig
from roughflow.fields import LimitField, constant_field
from roughflow.flows import flow_limit
from roughflow.geometry import ApproxParams
from roughflow.transport import (
    Bump,
    GridField,
    SpaceTimeBump,
    ball_grid,
    ball_volume_grid,
    default_datum,
    l1_loc_distance,
    midpoint_times,
    radial_datum,
    solve_eps,
    solve_exact,
    weak_form_residual,
    weak_star_pairing,
)

U0 = default_datum()


def test_default_datum_bounds():
    pts = ball_grid(2.0, 40)[0]
    vals = U0(pts)
    assert np.max(np.abs(vals)) <= U0.sup
    assert U0.sup == pytest.approx(1 / math.sqrt(2 * math.e))
    rng = np.random.default_rng(0)
    a, b = rng.uniform(-2, 2, (2, 2000, 3))
    quot = np.abs(U0(a) - U0(b)) / np.linalg.norm(a - b, axis=-1)
    assert np.max(quot) <= U0.lip


def test_solve_exact_examples():
    p = np.array([0.0, 0.4, -1.8])
    assert solve_exact(1.0, U0, 0.0, p) == U0(p)
    r = radial_datum()
    P = ball_grid(2.0, 12)[0]
    np.testing.assert_allclose(solve_exact(math.pi / 2, r, 1.0, P), solve_exact(math.pi, r, 1.0, P), atol=1e-15)
    a = solve_exact(math.pi / 2, U0, 1.0, p)
    b = solve_exact(math.pi, U0, 1.0, p)
    assert abs(a - b) > 1e-3


def test_solve_exact_hand_composition():
    # p lies on the lower paraboloid; at t = 1 it came from the upper one, rotated back by -theta
    p = np.array([0.0, 0.4, -1.8])
    theta = math.pi / 2
    q = 1.8**2 - 4.0
    foot_r = 0.4 * abs(q) ** 0.25 / math.sqrt(1.8)
    foot = np.array([foot_r, 0.0, math.sqrt(abs(q))])  # (0, r) rotated by -pi/2 is (r, 0)
    assert solve_exact(theta, U0, 1.0, p) == pytest.approx(float(U0(foot)), rel=1e-12)
    np.testing.assert_allclose(flow_limit(theta, 1.0, foot), p, atol=1e-12)


def test_maximum_principle():
    P = ball_grid(2.0, 24)[0]
    vals = solve_exact(math.pi / 2, U0, 1.0, P)
    assert np.max(np.abs(vals)) <= U0.sup


def test_solve_eps_exterior_and_early_times():
    params = ApproxParams(0.05, math.pi / 2)
    p = np.array([1.5, 0.3, 0.2])
    for t in (0.0, 0.5, 2.0):
        assert solve_eps(params, U0, t, p) == U0(p)
    q = np.array([0.2, 0.1, -1.2])
    assert solve_eps(params, U0, 0.1, q) == pytest.approx(solve_exact(params.theta, U0, 0.1, q), rel=1e-13)


def test_solve_eps_engine_matches_closed():
    params = ApproxParams(0.05, math.pi / 2)
    P = np.array([[0.1, 0.2, -0.6], [0.05, -0.1, 0.3], [0.0, 0.01, 0.0], [0.3, 0.2, -1.0]])
    cfg = IntegratorConfig(rtol=1e-11, atol=1e-12)
    a = solve_eps(params, U0, 0.5, P, cfg, method="engine")
    b = solve_eps(params, U0, 0.5, P)
    np.testing.assert_allclose(a, b, atol=1e-8)
    with pytest.raises(ValueError):
        solve_eps(params, U0, 0.5, P, method="bogus")


def test_solve_eps_converges_like_sqrt_eps():
    P = ball_grid(2.0, 24)[0]
    eps = [0.2, 0.1, 0.05, 0.025]
    exact = solve_exact(math.pi / 2, U0, 1.0, P)
    errs = [np.max(np.abs(solve_eps(ApproxParams(e, math.pi / 2), U0, 1.0, P) - exact)) for e in eps]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    slope = np.polyfit(np.log(eps), np.log(errs), 1)[0]
    assert slope >= 0.4


# -- grid metrics -------------------------------------------------------------------------

def test_l1_distance_examples():
    f = GridField.sample(2.0, 32, [1.0], lambda t, p: np.ones(len(p)))
    g = GridField.sample(2.0, 32, [1.0], lambda t, p: np.zeros(len(p)))
    assert l1_loc_distance(f, f) == 0.0
    assert l1_loc_distance(f, g) == pytest.approx(4 / 3 * math.pi * 8, rel=0.01)
    assert ball_volume_grid(2.0, 32) == pytest.approx(l1_loc_distance(f, g))
    h = GridField.sample(2.0, 16, [1.0], lambda t, p: np.zeros(len(p)))
    with pytest.raises(ValueError):
        l1_loc_distance(f, h)


def test_distance_between_limits_stable_under_refinement():
    D = {}
    for n in (48, 64):
        a = GridField.sample(2.0, n, [1.0], lambda t, p: solve_exact(math.pi / 2, U0, t, p))
        b = GridField.sample(2.0, n, [1.0], lambda t, p: solve_exact(math.pi, U0, t, p))
        D[n] = l1_loc_distance(a, b)
    assert D[64] > 0.1
    assert abs(D[64] - D[48]) / D[64] <= 0.05


def test_distance_zero_for_equal_angles_or_radial_data():
    a = GridField.sample(2.0, 24, [1.0], lambda t, p: solve_exact(math.pi, U0, t, p))
    assert l1_loc_distance(a, a) == 0.0
    r = radial_datum()
    b = GridField.sample(2.0, 24, [1.0], lambda t, p: solve_exact(math.pi / 2, r, t, p))
    c = GridField.sample(2.0, 24, [1.0], lambda t, p: solve_exact(math.pi, r, t, p))
    assert l1_loc_distance(b, c) <= 1e-13


def test_pairing_examples():
    bump = Bump((0.0, 0.4, -1.2), 0.5)
    z = GridField.sample(2.0, 24, [1.0], lambda t, p: np.zeros(len(p)))
    assert weak_star_pairing(z, bump) == 0.0
    u = GridField.sample(2.0, 24, [1.0], lambda t, p: solve_exact(math.pi / 2, U0, t, p))
    assert weak_star_pairing(u, lambda p: np.zeros(len(p))) == 0.0


def test_pairings_converge_monotonically():
    bumps = [Bump((0.0, 0.4, -1.2), 0.5), Bump((0.4, 0.0, -1.0), 0.5), Bump((-0.3, 0.3, -0.8), 0.5)]
    u = GridField.sample(2.0, 48, [1.0], lambda t, p: solve_exact(math.pi / 2, U0, t, p))
    ref = np.array([weak_star_pairing(u, b) for b in bumps])
    errs = []
    for e in (0.2, 0.1, 0.05):
        params = ApproxParams(e, math.pi / 2)
        ue = GridField.sample(2.0, 48, [1.0], lambda t, p: solve_eps(params, U0, t, p))
        errs.append(np.max(np.abs([weak_star_pairing(ue, b) for b in bumps] - ref)))
    assert errs[0] > errs[1] > errs[2]


def test_grid_csv_roundtrip(tmp_path):
    times = [0.25, 0.75]
    g = GridField.sample(1.0, 8, times, lambda t, p: t * U0(p), initial=U0)
    path = tmp_path / "g.csv"
    g.save_csv(path)
    h = GridField.load_csv(path)
    assert h.R == g.R and h.n == g.n
    np.testing.assert_array_equal(h.times, g.times)
    np.testing.assert_array_equal(h.values, g.values)
    np.testing.assert_array_equal(h.initial, g.initial)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridField(1.0, 8, [0.0], np.zeros((1, 3)))
    pts = ball_grid(1.0, 8)[0]
    with pytest.raises(ValueError):
        GridField(1.0, 8, [0.0], np.full((1, len(pts)), np.nan))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 3.0), st.integers(4, 20))
def test_ball_grid_cells_inside(R, n):
    pts, idx, vol = ball_grid(R, n)
    assert np.all(np.linalg.norm(pts, axis=-1) <= R + 1e-12)
    assert vol == pytest.approx((2 * R / n) ** 3)
    assert idx.min() >= 0 and idx.max() < n


# -- weak form ---------------------------------------------------------------------------

BUMP = SpaceTimeBump(Bump((0.5, 0.0, -2.0), 0.8), 0.1, 0.09)
R, T = 3.0, 0.2


def _exact_grid(n, theta=math.pi / 2):
    times = midpoint_times(T, n)
    return GridField.sample(R, n, times, lambda t, p: solve_exact(theta, U0, t, p), initial=U0)


def test_weak_form_residual_refines():
    res = [weak_form_residual(_exact_grid(n), LimitField(), BUMP, T) for n in (16, 32, 64)]
    for a, b in zip(res, res[1:]):
        assert a / b >= 2.0


def test_weak_form_constant_solution():
    res = []
    for n in (16, 32, 64):
        times = midpoint_times(T, n)
        u = GridField.sample(R, n, times, lambda t, p: np.ones(len(p)), initial=lambda p: np.ones(len(p)))
        res.append(weak_form_residual(u, LimitField(), BUMP, T))
    # only quadrature error is left, and it shrinks with the grid
    assert res[0] > res[1] > res[2]
    assert res[2] <= 1e-3
    assert weak_form_residual(u, constant_field([0.0, 0.0, 0.0]), BUMP, T) <= 1e-10


def test_weak_form_frozen_solution_fails():
    n = 32
    times = midpoint_times(T, n)
    frozen = GridField.sample(R, n, times, lambda t, p: U0(p), initial=U0)
    good = weak_form_residual(_exact_grid(n), LimitField(), BUMP, T)
    bad = weak_form_residual(frozen, LimitField(), BUMP, T)
    assert bad > 20 * good


def test_weak_form_input_checks():
    u = GridField.sample(R, 8, [0.05, 0.15], lambda t, p: U0(p))
    with pytest.raises(ValueError):
        weak_form_residual(u, LimitField(), BUMP, T)
    u = GridField.sample(R, 8, midpoint_times(T, 4), lambda t, p: U0(p))
    with pytest.raises(ValueError):
        weak_form_residual(u, LimitField(), BUMP, T)
    wide = SpaceTimeBump(Bump((0.0, 0.0, -2.5), 1.0), 0.1, 0.09)
    u = GridField.sample(R, 8, midpoint_times(T, 4), lambda t, p: U0(p), initial=U0)
    with pytest.raises(ValueError):
        weak_form_residual(u, LimitField(), wide, T)


def test_bump_gradient_matches_finite_differences():
    b = Bump((0.1, -0.2, 0.3), 0.7)
    p = np.array([0.3, 0.0, 0.1])
    h = 1e-6
    fd = np.array([(b(p + h * e) - b(p - h * e)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(b.grad(p), fd, rtol=1e-6)
