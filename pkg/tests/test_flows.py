import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from roughflow.fields import eval_b_dpl2d, eval_b_eps
from roughflow.flows import (
    breakpoints,
    conserved_ratio,
    dpl2d_flows,
    exit_delay,
    flow_eps_closed,
    flow_eps_inverse,
    flow_eps_piecewise,
    flow_limit,
    flow_limit_inverse,
    net_rotation,
    read_trajectory_csv,
    theta0_half_angle,
    time_shift,
    transition_state,
    write_trajectory_csv,
)
from roughflow.geometry import EPS_STACK, ApproxParams, Region, sample_region

HALF_PI = ApproxParams(0.05, math.pi / 2)


def _ivp(params, p, t1, rtol=1e-12):
    """Independent oracle: scipy's DOP853 on the pointwise field, dense in time."""
    sol = solve_ivp(lambda t, x: eval_b_eps(params, x), (0.0, t1), p, method="DOP853",
                    rtol=rtol, atol=1e-14, dense_output=True, max_step=params.eps**2 / 20)
    return sol


# -- limit flows ---------------------------------------------------------------------

def test_flow_limit_examples():
    for t in (0.0, 0.3, 5.0):
        np.testing.assert_array_equal(flow_limit(1.0, t, (1, 0, 0.5)), [1, 0, 0.5])
    np.testing.assert_allclose(flow_limit(1.0, 0.25, (0, 0, 1)), [0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(flow_limit(math.pi / 2, 0.5, (0.5, 0, 1)), [0, 0.5, -1], atol=1e-15)


def test_flow_limit_origin_and_negative_time():
    np.testing.assert_allclose(flow_limit(1.0, 1.0, (0, 0, 0)), [0, 0, -2])
    with pytest.raises(ValueError):
        flow_limit(1.0, -0.1, (0, 0, 1))


def test_flow_limit_inverse_examples():
    np.testing.assert_allclose(flow_limit_inverse(1.0, 2.0, (0, 0, 1)), [0, 0, 3])
    np.testing.assert_allclose(flow_limit_inverse(math.pi, 0.5, (0, 1, -1)), [0, -1, 1], atol=1e-15)
    np.testing.assert_array_equal(flow_limit_inverse(1.0, 0.7, (2, 0, 0.1)), [2, 0, 0.1])


def test_flow_limit_continuous_at_origin_time():
    p = np.array([0.3, 0.1, 0.8])
    tc = p[2] ** 2 / 4
    # Hoelder-1/4 continuity: the gap closes like (4 dt)^(1/4)
    for dt in (1e-4, 1e-8, 1e-12):
        a = flow_limit(2.0, tc - dt, p)
        b = flow_limit(2.0, tc + dt, p)
        assert np.linalg.norm(a - b) <= 3.0 * (4 * dt) ** 0.25


paraboloid_points = st.tuples(
    st.floats(0.05, 1.5), st.floats(0.0, 0.95), st.floats(0.0, 2 * math.pi), st.booleans()
).map(lambda a: np.array([math.sqrt(a[0] * a[1]) * math.cos(a[2]),
                          math.sqrt(a[0] * a[1]) * math.sin(a[2]),
                          a[0] if a[3] else -a[0]]))


@settings(max_examples=200)
@given(paraboloid_points, st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.1, 2 * math.pi))
def test_semigroup(p, t, s, theta):
    z2 = p[2] ** 2 / 4
    if p[2] > 0:
        # compose only on one side of the origin time
        assume(t + s <= z2 - 1e-9 or t >= z2 + 1e-9)
    lhs = flow_limit(theta, s, flow_limit(theta, t, p))
    rhs = flow_limit(theta, s + t, p)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(1, np.abs(rhs).max()))


@settings(max_examples=200)
@given(paraboloid_points, st.floats(0.0, 2.0), st.floats(0.1, 2 * math.pi))
def test_inverse_identity(p, t, theta):
    back = flow_limit_inverse(theta, t, p)
    np.testing.assert_allclose(flow_limit(theta, t, back), p, atol=1e-12 * max(1, np.abs(p).max()))


def test_conserved_ratio_examples():
    assert conserved_ratio((0, 0, 1)) == 0.0
    p = np.array([0.5, 0.0, 1.0])
    assert conserved_ratio(p) == 0.25
    for t in (0.1, 0.5, 2.0):
        assert conserved_ratio(flow_limit(1.0, t, p)) == pytest.approx(0.25, rel=1e-14)
    assert conserved_ratio((0.3, 0.4, 2.0)) == conserved_ratio((0.5, 0.0, 2.0))
    with pytest.raises(ValueError):
        conserved_ratio((1, 0, 0))


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_theta0_agrees_with_atan2_mod_2pi(x, y):
    assume(math.hypot(x, y) > 1e-6)
    d = (theta0_half_angle(x, y) - math.atan2(y, x)) % (2 * math.pi)
    assert min(d, 2 * math.pi - d) <= 1e-12
    assert theta0_half_angle(-1.0, 0.0) == math.pi


# -- breakpoints ------------------------------------------------------------------------------

def test_breakpoints_examples():
    params = ApproxParams(0.01, math.pi)
    bp = breakpoints(params, 1.0)
    assert bp.t1 == pytest.approx((1 - params.alpha**2 * 1e-4) / 4, rel=1e-15)
    assert bp.t1 == pytest.approx(0.24988, abs=1e-5)
    with pytest.raises(ValueError):
        breakpoints(params, 0.5 * params.z_top)


@settings(max_examples=100)
@given(st.floats(0.01, 0.3), st.floats(0.05, 2 * math.pi), st.floats(0.0, 1.0))
def test_breakpoint_structure(eps, theta, frac):
    params = ApproxParams(eps, theta)
    z = params.z_top + frac
    bp = breakpoints(params, z)
    # both transition durations are the same closed-form value; the
    # differences of the accumulated times agree up to rounding of t4
    assert abs((bp.t2 - bp.t1) - (bp.t4 - bp.t3)) <= 4 * math.ulp(bp.t4)
    assert bp.t2 - bp.t1 == pytest.approx(8 * params.beta**2 * eps**2 / 27 * math.log(2), rel=1e-15)
    assert abs((bp.t3 - bp.t2) - theta * eps**2) <= 1e-12
    # the two forms of the exit time agree
    alt = z * z / 4 + 16 / 27 * params.beta**2 * eps**2 * math.log(2) + 20 / 27 * params.beta**2 * eps**2
    assert bp.t4 == pytest.approx(alt, rel=1e-14)
    assert bp.t4 - z * z / 4 == pytest.approx(exit_delay(params), rel=1e-9)


# -- closed-form approximate flow ------------------------------------------------------------

P0 = np.array([0.3, 0.0, 1.0])


def test_closed_form_matches_limit_before_t1():
    bp = breakpoints(HALF_PI, P0[2])
    ts = np.linspace(0, bp.t1, 7)
    np.testing.assert_allclose(flow_eps_closed(HALF_PI, ts, P0), flow_limit(HALF_PI.theta, ts, P0),
                               rtol=1e-14, atol=1e-15)


def test_closed_form_heights_at_breakpoints():
    bp = breakpoints(HALF_PI, P0[2])
    X = flow_eps_closed(HALF_PI, np.array(bp.as_tuple()), P0)
    be = HALF_PI.beta * HALF_PI.eps
    np.testing.assert_allclose(X[:, 2], [HALF_PI.z_top, be, -be, -4 / 3 * be], rtol=1e-12)


def test_closed_form_continuity():
    bp = breakpoints(HALF_PI, P0[2])
    for tb in bp.as_tuple():
        a = flow_eps_closed(HALF_PI, tb * (1 - 1e-15), P0)
        b = flow_eps_closed(HALF_PI, tb * (1 + 1e-15), P0)
        assert np.linalg.norm(a - b) <= 1e-10


@pytest.mark.parametrize("theta", [math.pi / 2, math.pi, 2 * math.pi])
@pytest.mark.parametrize("eps", [0.1, 0.05])
def test_net_rotation_is_theta(theta, eps):
    params = ApproxParams(eps, theta)
    assert net_rotation(params) == pytest.approx(theta, abs=1e-12)
    bp = breakpoints(params, 0.8)
    a = transition_state(params, bp.t1, (0.2, 0.1, 0.8))
    b = transition_state(params, bp.t4, (0.2, 0.1, 0.8))
    assert b.phi - a.theta == pytest.approx(theta, abs=1e-12)


def test_transition_rotation_against_ivp():
    params = HALF_PI
    bp = breakpoints(params, P0[2])
    sol = _ivp(params, P0, bp.t4)
    ts = np.linspace(bp.t1, bp.t4, 4001)
    X = sol.sol(ts).T
    ang = np.unwrap(np.arctan2(X[:, 1], X[:, 0]))
    # azimuth gained in T+ and in total, by an independent integrator
    k2 = np.searchsorted(ts, bp.t2)
    st_ = transition_state(params, bp.t2, P0)
    assert ang[-1] - ang[0] == pytest.approx(params.theta, abs=1e-6)
    assert st_.theta - float(theta0_half_angle(P0[0], P0[1])) == pytest.approx(
        np.interp(bp.t2, ts[k2 - 2:k2 + 2], ang[k2 - 2:k2 + 2]) - ang[0], abs=1e-5)
    # the rotation in T+ is positive: theta_bar = theta ln(32/27) / (2 kappa)
    kappa = 1 + math.log(32 / 27)
    assert st_.theta == pytest.approx(params.theta * math.log(32 / 27) / (2 * kappa), abs=1e-12)


def test_closed_form_against_ivp_all_segments():
    sol = _ivp(HALF_PI, P0, 0.5)
    ts = np.linspace(0, 0.5, 301)
    np.testing.assert_allclose(flow_eps_closed(HALF_PI, ts, P0), sol.sol(ts).T, atol=1e-8)


def test_time_shift_identity():
    for z in (0.5, 1.0):
        p = np.array([0.2 * math.sqrt(z), 0.1 * math.sqrt(z), z])
        bp = breakpoints(HALF_PI, z)
        d = time_shift(HALF_PI, z)
        assert d == pytest.approx(time_shift(HALF_PI), rel=1e-10)
        for t in (bp.t4, bp.t4 + 0.1, bp.t4 + 1.0):
            np.testing.assert_allclose(flow_eps_closed(HALF_PI, t, p),
                                       flow_limit(HALF_PI.theta, t - d, p), atol=1e-13)
    assert 0 < time_shift(HALF_PI) < 10 * HALF_PI.eps**2 * HALF_PI.theta


def test_closed_form_rejects_other_regions():
    with pytest.raises(ValueError):
        flow_eps_closed(HALF_PI, 0.1, (0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        flow_eps_closed(HALF_PI, -0.1, P0)


# -- general propagator ------------------------------------------------------------------------

def test_piecewise_agrees_with_closed_form():
    ts = np.linspace(0, 0.6, 97)
    np.testing.assert_allclose(flow_eps_piecewise(HALF_PI, ts, P0), flow_eps_closed(HALF_PI, ts, P0),
                               atol=1e-13)


@pytest.mark.parametrize("region", EPS_STACK)
def test_piecewise_against_ivp_in_every_piece(region):
    rng = np.random.default_rng(int(region))
    for p in sample_region(HALF_PI, region, 3, rng, z_max=0.6, margin=0.1):
        sol = _ivp(HALF_PI, p, 0.1)
        ts = np.linspace(0, 0.1, 41)
        np.testing.assert_allclose(flow_eps_piecewise(HALF_PI, ts, p), sol.sol(ts).T, atol=1e-7)


def test_piecewise_inverse_roundtrip():
    rng = np.random.default_rng(9)
    for region in EPS_STACK:
        for p in sample_region(HALF_PI, region, 5, rng, z_max=0.6, margin=0.1):
            for t in (0.01, 0.3):
                fwd = flow_eps_piecewise(HALF_PI, t, p)
                np.testing.assert_allclose(flow_eps_inverse(HALF_PI, t, fwd), p, atol=1e-11)


def test_piecewise_identity_outside():
    p = np.array([1.0, 0.5, 0.2])
    assert HALF_PI and np.array_equal(flow_eps_piecewise(HALF_PI, [0.0, 0.5, -0.5], p), np.tile(p, (3, 1)))


def test_piecewise_inverse_matches_limit_inverse_far_from_origin():
    p = np.array([0.1, 0.2, -1.0])
    t = 0.1  # traced back up P-eps without reaching -eta eps
    np.testing.assert_allclose(flow_eps_inverse(HALF_PI, t, p), flow_limit_inverse(HALF_PI.theta, t, p),
                               rtol=1e-13)


def test_regions_preserved_by_segment_labels():
    bp = breakpoints(HALF_PI, P0[2])
    ts = np.sort(np.concatenate([np.linspace(0, 0.5, 50), np.linspace(bp.t1, bp.t4, 50)]))
    _, segs = flow_eps_closed(HALF_PI, ts, P0, with_segment=True)
    order = ["parab+", "trans+", "cyl", "trans-", "parab-"]
    seen = [s for i, s in enumerate(segs) if i == 0 or s != segs[i - 1]]
    assert seen == order
    assert Region.CYL_EPS in EPS_STACK


# -- planar example ------------------------------------------------------------------------------

def test_dpl2d_examples():
    p = np.array([0.5, 1.0])
    X, Xt = dpl2d_flows(0.0, p)
    np.testing.assert_array_equal(X, p)
    np.testing.assert_array_equal(Xt, p)
    X, Xt = dpl2d_flows(0.5, p)
    assert X[1] == 0 and Xt[1] == 0
    X, Xt = dpl2d_flows(1.0, p)
    np.testing.assert_allclose(X, [0.5, -1.0])
    np.testing.assert_allclose(Xt, [-0.5, -1.0])
    with pytest.raises(ValueError):
        dpl2d_flows(0.1, (1.0, 0.5))


@settings(max_examples=50)
@given(st.floats(0.5, 2.0), st.floats(0.05, 0.95), st.floats(0.02, 0.98))
def test_dpl2d_ode_residual(y, ratio, frac):
    p = np.array([ratio * y, y])
    tc = y * y / 2
    h = 1e-7
    for t in (frac * tc, tc * (1 + frac)):
        for k in (0, 1):
            d = (dpl2d_flows(t + h, p)[k] - dpl2d_flows(t - h, p)[k]) / (2 * h)
            np.testing.assert_allclose(d, eval_b_dpl2d(dpl2d_flows(t, p)[k]), atol=1e-5)


def test_trajectory_csv_roundtrip(tmp_path):
    ts = np.linspace(0, 0.5, 20)
    X, segs = flow_eps_closed(HALF_PI, ts, P0, with_segment=True)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, ts, X, list(segs))
    t2, X2, s2 = read_trajectory_csv(path)
    np.testing.assert_array_equal(t2, ts)
    np.testing.assert_array_equal(X2, X)
    assert s2 == list(segs)
