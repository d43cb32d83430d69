import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roughflow.geometry import (
    BOUNDARY_NAMES,
    EPS_STACK,
    ApproxParams,
    CylCoords,
    Region,
    boundary_values,
    cart_from_cyl,
    classify_eps,
    classify_limit,
    cyl_from_cart,
    region_volume_eps,
    sample_region,
    transition_lateral_r2,
)


def test_cyl_from_cart_examples():
    assert cyl_from_cart((1, 0, 0)) == CylCoords(1.0, 0.0, 0.0)
    assert cyl_from_cart((0, 0, 5)) == CylCoords(0.0, 0.0, 5.0)
    c = cyl_from_cart((-1, 0, 2))
    assert c.r == pytest.approx(1.0) and c.theta == pytest.approx(math.pi) and c.z == 2.0


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
def test_cyl_roundtrip(x, y, z):
    c = cyl_from_cart((x, y, z))
    assert 0.0 <= c.theta < 2 * math.pi
    np.testing.assert_allclose(cart_from_cyl(c), (x, y, z), atol=1e-12 * max(1, abs(x), abs(y)))


def test_classify_limit_examples():
    assert classify_limit((0, 0, 1)) == Region.P_PLUS
    assert classify_limit((1, 0, 0.5)) == Region.EXTERIOR
    assert classify_limit((0.3, 0.4, -1)) == Region.P_MINUS
    # the origin goes to the upper paraboloid
    assert classify_limit((0, 0, 0)) == Region.P_PLUS


def test_classify_eps_examples():
    params = ApproxParams(0.01, math.pi)
    assert params.alpha == pytest.approx(4.0 / 3.0 * math.sqrt(27 * math.pi / 32), rel=1e-15)
    assert params.alpha == pytest.approx(2.1715, abs=1e-3)
    assert classify_eps(params, (0, 0, 1)) == Region.P_PLUS_EPS
    assert classify_eps(params, (0, 0, 0)) == Region.CYL_EPS
    assert classify_eps(params, (10, 0, 0)) == Region.EXTERIOR_EPS


@pytest.mark.parametrize("theta", [0.3, math.pi / 2, math.pi, 2 * math.pi])
@pytest.mark.parametrize("eps", [0.2, 0.01])
def test_height_relations(theta, eps):
    p = ApproxParams(eps, theta)
    assert 4 * p.beta == pytest.approx(3 * p.alpha, rel=1e-15)
    assert 4 * p.gamma == pytest.approx(3 * p.eta, rel=1e-15)
    assert p.beta == p.gamma
    assert p.beta == pytest.approx(math.sqrt(27 * theta / 32), rel=1e-15)


def test_params_validation():
    with pytest.raises(ValueError):
        ApproxParams(0.0, 1.0)
    with pytest.raises(ValueError):
        ApproxParams(0.1, 0.0)
    with pytest.raises(ValueError):
        ApproxParams(0.1, 7.0)


def test_boundary_values_examples():
    params = ApproxParams(0.05, math.pi / 2)
    v = boundary_values(params, (0.0, 0.0, params.z_top))
    assert v[BOUNDARY_NAMES.index("z=alpha*eps")] == 0.0
    deep = boundary_values(params, (0.01, 0.0, 0.8))
    for name in ("z=beta*eps", "z=-gamma*eps", "z=-eta*eps"):
        assert deep[BOUNDARY_NAMES.index(name)] > 0
    z = 0.5 * (params.z_top + params.z_cyl_top)
    r = math.sqrt(transition_lateral_r2(params, z))
    lat = boundary_values(params, (r, 0.0, z))[BOUNDARY_NAMES.index("T+ lateral")]
    assert abs(lat) <= 1e-12


def test_boundary_precedence():
    params = ApproxParams(0.05, math.pi / 2)
    assert classify_eps(params, (0, 0, params.z_top)) == Region.P_PLUS_EPS
    assert classify_eps(params, (0, 0, params.z_cyl_top)) == Region.T_PLUS_EPS
    assert classify_eps(params, (0, 0, params.z_cyl_bottom)) == Region.CYL_EPS
    assert classify_eps(params, (0, 0, params.z_bottom)) == Region.T_MINUS_EPS


def test_partition_and_local_constancy():
    params = ApproxParams(0.1, math.pi / 2)
    rng = np.random.default_rng(1)
    P = rng.uniform(-1, 1, (100_000, 3)) * np.array([0.8, 0.8, 1.0])
    lab = classify_eps(params, P)
    valid = {int(r) for r in EPS_STACK} | {int(Region.EXTERIOR_EPS)}
    assert set(np.unique(lab)) <= valid
    shifted = classify_eps(params, P + rng.normal(size=P.shape) * 1e-9)
    # labels only change at points within ~1e-8 of an interface
    changed = np.flatnonzero(shifted != lab)
    for q in P[changed]:
        assert np.min(np.abs(boundary_values(params, q))) < 1e-7


@pytest.mark.parametrize("region", EPS_STACK)
def test_sample_region_lands_in_region(region):
    params = ApproxParams(0.05, math.pi / 2)
    pts = sample_region(params, region, 500, np.random.default_rng(0), margin=0.01)
    assert np.all(classify_eps(params, pts) == int(region))


def test_approximation_volume_scales_like_eps_squared():
    rng = np.random.default_rng(3)
    eps = np.array([0.2, 0.1, 0.05, 0.025])
    vols = []
    for e in eps:
        params = ApproxParams(e, math.pi / 2)
        h = 1.1 * params.alpha * e
        # widest point of the transition zones is at z = alpha eps, r^2 = 9/8 wall
        w = 1.1 * math.sqrt(9.0 / 8.0 * params.cyl_r2)
        box = np.array([w, w, h])
        P = rng.uniform(-1, 1, (200_000, 3)) * box
        lab = classify_eps(params, P)
        frac = np.isin(lab, [int(Region.T_PLUS_EPS), int(Region.CYL_EPS), int(Region.T_MINUS_EPS)]).mean()
        vol = frac * np.prod(2 * box)
        assert vol == pytest.approx(region_volume_eps(params), rel=0.05)
        vols.append(vol)
    slope = np.polyfit(np.log(eps), np.log(vols), 1)[0]
    assert 1.8 <= slope <= 2.2


@settings(max_examples=50)
@given(st.floats(0.01, 0.3), st.floats(0.1, 2 * math.pi))
def test_axis_is_stacked_in_order(eps, theta):
    params = ApproxParams(eps, theta)
    heights = [params.z_top + 0.1, 0.5 * (params.z_top + params.z_cyl_top), 0.0,
               0.5 * (params.z_cyl_bottom + params.z_bottom), params.z_bottom - 0.1]
    labels = [classify_eps(params, (0.0, 0.0, z)) for z in heights]
    assert labels == list(EPS_STACK)
