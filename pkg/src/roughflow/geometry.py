"""Coordinates, approximation parameters and region bookkeeping.

The limit field lives on two paraboloids ``P+ = {x^2 + y^2 <= z}`` and
``P- = {x^2 + y^2 <= -z}``.  The smooth approximation replaces the
neighbourhood of the origin by a stack of five pieces (top to bottom)::

    P+eps   truncated upper paraboloid, z >= alpha*eps
    T+eps   upper transition zone,      beta*eps <= z <= alpha*eps
    Ceps    rotating cylinder,          -gamma*eps <= z <= beta*eps
    T-eps   lower transition zone,      -eta*eps <= z <= -gamma*eps
    P-eps   truncated lower paraboloid, z <= -eta*eps

All functions here broadcast over arrays of points with a trailing axis of
length 3.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

# 1 + ln(32/27): ratio between the net rotation and the rotation spent in the
# cylinder, the two transition zones adding ln(32/27) between them.
ROTATION_SPLIT = 1.0 + math.log(32.0 / 27.0)


class Region(IntEnum):
    """Piece of a piecewise field that a point belongs to."""

    P_PLUS = 0
    P_MINUS = 1
    EXTERIOR = 2
    P_PLUS_EPS = 10
    T_PLUS_EPS = 11
    CYL_EPS = 12
    T_MINUS_EPS = 13
    P_MINUS_EPS = 14
    EXTERIOR_EPS = 15

    @property
    def tag(self) -> str:
        return _TAGS[self]


_TAGS = {
    Region.P_PLUS: "P+",
    Region.P_MINUS: "P-",
    Region.EXTERIOR: "ext",
    Region.P_PLUS_EPS: "P+eps",
    Region.T_PLUS_EPS: "T+eps",
    Region.CYL_EPS: "Ceps",
    Region.T_MINUS_EPS: "T-eps",
    Region.P_MINUS_EPS: "P-eps",
    Region.EXTERIOR_EPS: "ext_eps",
}

# segment names used in trajectory exports
SEGMENT_NAMES = {
    Region.P_PLUS: "parab+",
    Region.P_MINUS: "parab-",
    Region.EXTERIOR: "exterior",
    Region.P_PLUS_EPS: "parab+",
    Region.T_PLUS_EPS: "trans+",
    Region.CYL_EPS: "cyl",
    Region.T_MINUS_EPS: "trans-",
    Region.P_MINUS_EPS: "parab-",
    Region.EXTERIOR_EPS: "exterior",
}

# stacking order of the approximation, top to bottom
EPS_STACK = (
    Region.P_PLUS_EPS,
    Region.T_PLUS_EPS,
    Region.CYL_EPS,
    Region.T_MINUS_EPS,
    Region.P_MINUS_EPS,
)


@dataclass(frozen=True)
class CylCoords:
    r: float
    theta: float
    z: float


def cyl_from_cart(p) -> CylCoords:
    """Cylindrical coordinates with ``theta`` in ``[0, 2*pi)`` and ``theta = 0`` on the axis."""
    x, y, z = (float(c) for c in p)
    r = math.hypot(x, y)
    if r == 0.0:
        return CylCoords(0.0, 0.0, z)
    theta = math.atan2(y, x)
    if theta < 0.0:
        theta += 2.0 * math.pi
    if theta >= 2.0 * math.pi:
        theta = 0.0
    return CylCoords(r, theta, z)


def cart_from_cyl(c: CylCoords) -> np.ndarray:
    return np.array([c.r * math.cos(c.theta), c.r * math.sin(c.theta), c.z])


@dataclass(frozen=True)
class ApproxParams:
    """Regularisation scale ``eps`` and target rotation ``theta``.

    ``beta`` is fixed by ``theta`` so that the cylinder is traversed in time
    ``theta * eps**2``; the other heights follow from ``4 beta = 3 alpha``,
    ``4 gamma = 3 eta`` and ``beta = gamma``.
    """

    eps: float
    theta: float

    def __post_init__(self):
        if not (self.eps > 0.0 and math.isfinite(self.eps)):
            raise ValueError(f"eps must be positive, got {self.eps!r}")
        if not (0.0 < self.theta <= 2.0 * math.pi + 1e-12):
            raise ValueError(f"theta must lie in (0, 2*pi], got {self.theta!r}")

    @property
    def beta(self) -> float:
        return math.sqrt(27.0 * self.theta / 32.0)

    @property
    def alpha(self) -> float:
        return 4.0 * self.beta / 3.0

    @property
    def gamma(self) -> float:
        return self.beta

    @property
    def eta(self) -> float:
        return 4.0 * self.beta / 3.0

    @property
    def omega(self) -> float:
        """Angular velocity inside the cylinder."""
        return 1.0 / (ROTATION_SPLIT * self.eps**2)

    @property
    def cyl_r2(self) -> float:
        """Squared radius of the cylinder, ``32 beta eps / 27``."""
        return 32.0 * self.beta * self.eps / 27.0

    @property
    def rate(self) -> float:
        """``27 / (8 beta^2 eps^2)``, the exponential rate in the transition zones."""
        return 27.0 / (8.0 * (self.beta * self.eps) ** 2)

    # interface heights
    @property
    def z_top(self) -> float:
        return self.alpha * self.eps

    @property
    def z_cyl_top(self) -> float:
        return self.beta * self.eps

    @property
    def z_cyl_bottom(self) -> float:
        return -self.gamma * self.eps

    @property
    def z_bottom(self) -> float:
        return -self.eta * self.eps


def _split(p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 3:
        raise ValueError(f"expected points with trailing dimension 3, got shape {p.shape}")
    return p[..., 0], p[..., 1], p[..., 2]


def _labels(codes):
    codes = np.asarray(codes)
    if codes.ndim == 0:
        return Region(int(codes))
    return codes


def classify_limit(p):
    """Region of the limit field: ``P_PLUS``, ``P_MINUS`` or ``EXTERIOR``.

    The origin belongs to both paraboloids and is assigned to ``P_PLUS``.
    """
    x, y, z = _split(p)
    r2 = x * x + y * y
    codes = np.full(np.shape(z), int(Region.EXTERIOR), dtype=np.int64)
    codes = np.where(r2 <= -z, int(Region.P_MINUS), codes)
    codes = np.where(r2 <= z, int(Region.P_PLUS), codes)
    return _labels(codes)


def transition_weight_plus(params: ApproxParams, z):
    """``1 - s^2`` with ``s = z/(beta eps) - 1``; ``r^2 (1 - s^2)`` is constant along the flow in T+."""
    s = np.asarray(z) / (params.beta * params.eps) - 1.0
    return 1.0 - s * s


def transition_weight_minus(params: ApproxParams, z):
    """Mirror of :func:`transition_weight_plus` for T-."""
    u = -np.asarray(z) / (params.gamma * params.eps) - 1.0
    return 1.0 - u * u


def classify_eps(params: ApproxParams, p):
    """Region of the approximating field.

    Points on an interface go to the upper piece (P+ > T+ > C > T- > P-).
    Inside the transition heights the lateral surface
    ``z = beta eps (1 + sqrt(1 - 32 beta eps / (27 r^2)))`` bounds the zone;
    points closer to the axis than the cylinder wall are inside it.
    """
    x, y, z = _split(p)
    r2 = x * x + y * y
    a, b, g, e = params.z_top, params.z_cyl_top, params.z_cyl_bottom, params.z_bottom
    wall = params.cyl_r2
    wall_minus = 32.0 * params.gamma * params.eps / 27.0

    in_p_plus = (r2 <= z) & (z >= a)
    in_t_plus = (z >= b) & (z <= a) & (r2 * transition_weight_plus(params, z) <= wall)
    in_cyl = (r2 <= wall) & (z >= g) & (z <= b)
    in_t_minus = (z >= e) & (z <= g) & (r2 * transition_weight_minus(params, z) <= wall_minus)
    in_p_minus = (r2 <= -z) & (z <= e)

    codes = np.select(
        [in_p_plus, in_t_plus, in_cyl, in_t_minus, in_p_minus],
        [int(r) for r in EPS_STACK],
        default=int(Region.EXTERIOR_EPS),
    )
    return _labels(codes)


BOUNDARY_NAMES = (
    "z=alpha*eps",
    "z=beta*eps",
    "z=-gamma*eps",
    "z=-eta*eps",
    "P+ lateral",
    "T+ lateral",
    "C wall",
    "T- lateral",
    "P- lateral",
)


def boundary_values(params: ApproxParams, p) -> np.ndarray:
    """Signed interface functions, one per entry of :data:`BOUNDARY_NAMES`.

    Horizontal interfaces give ``z - z_k`` (negative below).  Lateral surfaces
    give a quantity negative on the axis side: ``r^2 - z`` for the upper
    paraboloid, ``r^2 (1 - s^2) - 32 beta eps / 27`` for the transition zones,
    ``r^2 - 32 beta eps / 27`` for the cylinder and ``r^2 + z`` for the lower
    paraboloid.
    """
    x, y, z = _split(p)
    r2 = x * x + y * y
    wall = params.cyl_r2
    return np.stack(
        [
            z - params.z_top,
            z - params.z_cyl_top,
            z - params.z_cyl_bottom,
            z - params.z_bottom,
            r2 - z,
            r2 * transition_weight_plus(params, z) - wall,
            r2 - wall,
            r2 * transition_weight_minus(params, z) - 32.0 * params.gamma * params.eps / 27.0,
            r2 + z,
        ],
        axis=-1,
    )


def transition_lateral_r2(params: ApproxParams, z, upper: bool = True):
    """Squared radius of the lateral surface of T+ (``upper``) or T- at height ``z``."""
    if upper:
        return params.cyl_r2 / transition_weight_plus(params, z)
    return 32.0 * params.gamma * params.eps / 27.0 / transition_weight_minus(params, z)


def region_volume_eps(params: ApproxParams) -> float:
    """Exact volume of ``T+ u C u T-`` (used as a check on the Monte-Carlo estimate)."""
    be = params.beta * params.eps
    # int_0^{1/3} pi * wall / (1 - s^2) * be ds = pi * wall * be * artanh(1/3)
    transition = math.pi * params.cyl_r2 * be * math.atanh(1.0 / 3.0)
    cylinder = math.pi * params.cyl_r2 * (params.beta + params.gamma) * params.eps
    return 2.0 * transition + cylinder


# -- lateral surfaces -------------------------------------------------------

SURFACES = ("P+", "T+", "C", "T-", "P-")


def surface_function(params: ApproxParams | None, name: str, p):
    """Level-set function ``F`` of a lateral surface (``F < 0`` on the axis side).

    ``params=None`` selects the paraboloids of the limit field.
    """
    x, y, z = _split(p)
    r2 = x * x + y * y
    if name == "P+":
        return r2 - z
    if name == "P-":
        return r2 + z
    if params is None:
        raise ValueError(f"surface {name!r} needs approximation parameters")
    if name == "C":
        return r2 - params.cyl_r2
    if name == "T+":
        return r2 * transition_weight_plus(params, z) - params.cyl_r2
    if name == "T-":
        return r2 * transition_weight_minus(params, z) - 32.0 * params.gamma * params.eps / 27.0
    raise ValueError(f"unknown surface {name!r}")


def surface_gradient(params: ApproxParams | None, name: str, p) -> np.ndarray:
    """Analytic gradient of :func:`surface_function` (points outward)."""
    x, y, z = _split(p)
    r2 = x * x + y * y
    one = np.ones_like(z)
    if name == "P+":
        return np.stack([2 * x, 2 * y, -one], axis=-1)
    if name == "P-":
        return np.stack([2 * x, 2 * y, one], axis=-1)
    if name == "C":
        return np.stack([2 * x, 2 * y, 0 * z], axis=-1)
    if name == "T+":
        be = params.beta * params.eps
        s = z / be - 1.0
        w = 1.0 - s * s
        return np.stack([2 * x * w, 2 * y * w, -2.0 * r2 * s / be], axis=-1)
    if name == "T-":
        ge = params.gamma * params.eps
        u = -z / ge - 1.0
        w = 1.0 - u * u
        return np.stack([2 * x * w, 2 * y * w, 2.0 * r2 * u / ge], axis=-1)
    raise ValueError(f"unknown surface {name!r}")


def _region_z_range(params: ApproxParams, region: Region, z_max: float):
    if region == Region.P_PLUS_EPS:
        return params.z_top, z_max
    if region == Region.T_PLUS_EPS:
        return params.z_cyl_top, params.z_top
    if region == Region.CYL_EPS:
        return params.z_cyl_bottom, params.z_cyl_top
    if region == Region.T_MINUS_EPS:
        return params.z_bottom, params.z_cyl_bottom
    if region == Region.P_MINUS_EPS:
        return -z_max, params.z_bottom
    raise ValueError(f"{region!r} is not a bounded piece of the approximation")


def region_r2_max(params: ApproxParams, region: Region, z):
    """Squared radius of the lateral boundary of ``region`` at height ``z``."""
    z = np.asarray(z, dtype=float)
    if region == Region.P_PLUS_EPS:
        return z
    if region == Region.T_PLUS_EPS:
        return transition_lateral_r2(params, z, upper=True)
    if region == Region.CYL_EPS:
        return np.full_like(z, params.cyl_r2)
    if region == Region.T_MINUS_EPS:
        return transition_lateral_r2(params, z, upper=False)
    if region == Region.P_MINUS_EPS:
        return -z
    raise ValueError(f"{region!r} is not a bounded piece of the approximation")


def sample_region(params: ApproxParams, region: Region, n: int, rng: np.random.Generator,
                  z_max: float = 1.0, margin: float = 0.0, on_boundary: bool = False) -> np.ndarray:
    """Random points of one piece, stratified in (z, r^2, theta).

    ``margin`` shrinks the piece: heights keep a relative distance ``margin``
    from the horizontal interfaces and ``r^2 <= (1 - margin) r2_max``.
    ``on_boundary`` puts every point on the lateral surface instead.
    """
    lo, hi = _region_z_range(params, Region(region), z_max)
    pad = margin * (hi - lo)
    z = rng.uniform(lo + pad, hi - pad, n)
    r2max = region_r2_max(params, region, z)
    if on_boundary:
        r2 = r2max
    else:
        r2 = rng.uniform(0.0, 1.0 - margin, n) * r2max
    th = rng.uniform(0.0, 2.0 * np.pi, n)
    r = np.sqrt(r2)
    return np.stack([r * np.cos(th), r * np.sin(th), z], axis=-1)
