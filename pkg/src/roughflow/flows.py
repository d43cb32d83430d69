"""Closed-form flows.

* :func:`flow_limit` / :func:`flow_limit_inverse`: the family of flows of the
  limit field, indexed by the rotation ``theta`` picked up at the origin.
* :func:`flow_eps_closed`: the characteristics of the approximating field
  for starts in the upper paraboloid, glued from the five segments.
* :func:`flow_eps_piecewise`: an independent closed form for any start and
  any signed time, built from one clock, one radial invariant and one angle
  function per piece.
* :func:`dpl2d_flows`: the two planar flows of the two dimensional example.

Array arguments broadcast: points have a trailing axis of length 3 (or 2),
times broadcast against the leading axes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .geometry import ApproxParams, Region, SEGMENT_NAMES, classify_eps

TWO_PI = 2.0 * math.pi


def _complex(p):
    p = np.asarray(p, dtype=float)
    return p[..., 0] + 1j * p[..., 1], p[..., 2]


def _pack(w, z):
    return np.stack(np.broadcast_arrays(w.real, w.imag, z), axis=-1)


def _broadcast(t, p):
    p = np.asarray(p, dtype=float)
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(t.shape, p.shape[:-1])
    return np.broadcast_to(t, shape), np.broadcast_to(p, shape + (p.shape[-1],))


# -- limit flows -----------------------------------------------------------------

def flow_limit(theta: float, t, p) -> np.ndarray:
    """Flow of the limit field that rotates by ``theta`` through the origin.

    In ``P-`` trajectories move down the paraboloid of constant
    ``r^2/|z|``.  In ``P+`` they reach the origin at ``t = z^2/4`` and leave
    through ``P-`` rotated by ``theta``; the origin itself moves to
    ``(0, 0, -2 sqrt(t))``.  Points outside both paraboloids do not move.
    """
    t, p = _broadcast(t, p)
    if np.any(t < 0):
        raise ValueError("flow_limit needs t >= 0; use flow_limit_inverse")
    w, z = _complex(p)
    r2 = (w * w.conj()).real
    up = (r2 <= z) & (z > 0)
    down = (r2 <= -z) & (z < 0)
    origin = (r2 == 0) & (z == 0)
    az = np.where(up | down, np.abs(z), 1.0)
    q = z * z - 4.0 * t

    w_out, z_out = w.copy(), z.copy()
    # lower paraboloid
    m = down
    w_out = np.where(m, w * (z * z + 4 * t) ** 0.25 / np.sqrt(az), w_out)
    z_out = np.where(m, -np.sqrt(z * z + 4 * t), z_out)
    # upper paraboloid before the origin
    m = up & (q > 0)
    w_out = np.where(m, w * np.abs(q) ** 0.25 / np.sqrt(az), w_out)
    z_out = np.where(m, np.sqrt(np.abs(q)), z_out)
    # upper paraboloid after the origin; t = z^2/4 takes this branch
    m = up & (q <= 0)
    w_out = np.where(m, np.exp(1j * theta) * w * np.abs(q) ** 0.25 / np.sqrt(az), w_out)
    z_out = np.where(m, -np.sqrt(np.abs(q)), z_out)
    z_out = np.where(origin, -2.0 * np.sqrt(t), z_out)
    return _pack(w_out, z_out)


def flow_limit_inverse(theta: float, t, p) -> np.ndarray:
    """Inverse of :func:`flow_limit` at time ``t``: the start that is at ``p`` after ``t``.

    In ``P+`` trajectories are traced back up the paraboloid.  In ``P-`` they
    are traced back to the origin at ``t = z^2/4`` and, for longer times, into
    ``P+`` rotated by ``-theta``.
    """
    t, p = _broadcast(t, p)
    if np.any(t < 0):
        raise ValueError("flow_limit_inverse needs t >= 0")
    w, z = _complex(p)
    r2 = (w * w.conj()).real
    up = (r2 <= z) & (z > 0)
    down = (r2 <= -z) & (z < 0)
    origin = (r2 == 0) & (z == 0)
    az = np.where(up | down, np.abs(z), 1.0)
    q = z * z - 4.0 * t

    w_out, z_out = w.copy(), z.copy()
    m = up
    w_out = np.where(m, w * (z * z + 4 * t) ** 0.25 / np.sqrt(az), w_out)
    z_out = np.where(m, np.sqrt(z * z + 4 * t), z_out)
    m = down & (q > 0)
    w_out = np.where(m, w * np.abs(q) ** 0.25 / np.sqrt(az), w_out)
    z_out = np.where(m, -np.sqrt(np.abs(q)), z_out)
    m = down & (q <= 0)
    w_out = np.where(m, np.exp(-1j * theta) * w * np.abs(q) ** 0.25 / np.sqrt(az), w_out)
    z_out = np.where(m, np.sqrt(np.abs(q)), z_out)
    z_out = np.where(origin, 2.0 * np.sqrt(t), z_out)
    return _pack(w_out, z_out)


def conserved_ratio(p):
    """``(x^2 + y^2)/|z|``, constant along the limit flows."""
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z == 0):
        raise ValueError("conserved ratio is undefined on z = 0")
    out = (p[..., 0] ** 2 + p[..., 1] ** 2) / np.abs(z)
    return float(out) if out.ndim == 0 else out


def theta0_half_angle(x, y):
    """Initial azimuth as written for the closed forms: ``pi`` on the negative x-axis,
    ``2 arctan(y / (x + r))`` elsewhere and ``0`` on the axis.

    Values lie in ``(-pi, pi]``; they agree with ``atan2`` modulo ``2 pi``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(x, y)
    neg_axis = (y == 0) & (x < 0)
    # y/(x + r) equals (r - x)/y; the second form avoids cancellation for x < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        half = np.where(x >= 0, y / np.where(r == 0, 1.0, x + r), (r - x) / np.where(y == 0, 1.0, y))
    out = np.where(neg_axis, math.pi, 2.0 * np.arctan(half))
    out = np.where(r == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


# -- breakpoints -------------------------------------------------------------------

@dataclass(frozen=True)
class Breakpoints:
    """Times at which a start in ``P+eps`` crosses ``z = alpha eps, beta eps, -gamma eps, -eta eps``."""

    t1: float
    t2: float
    t3: float
    t4: float

    def as_tuple(self):
        return (self.t1, self.t2, self.t3, self.t4)


def transition_time(params: ApproxParams) -> float:
    """Time spent in each transition zone, ``(8 beta^2 eps^2 / 27) ln 2``."""
    return 8.0 * (params.beta * params.eps) ** 2 / 27.0 * math.log(2.0)


def cylinder_time(params: ApproxParams) -> float:
    """Time spent in the cylinder, ``32 beta^2 eps^2 / 27``, equal to ``theta eps^2``."""
    return 32.0 * (params.beta * params.eps) ** 2 / 27.0


def breakpoints(params: ApproxParams, z: float) -> Breakpoints:
    if z < params.z_top:
        raise ValueError(f"start height {z} below alpha*eps = {params.z_top}")
    t1 = (z * z - params.z_top**2) / 4.0
    t2 = t1 + transition_time(params)
    t3 = t2 + cylinder_time(params)
    t4 = t3 + transition_time(params)
    return Breakpoints(t1, t2, t3, t4)


def exit_delay(params: ApproxParams) -> float:
    """``t4 - z^2/4`` for any start in ``P+eps``: ``(20 + 16 ln 2) beta^2 eps^2 / 27``."""
    return (20.0 + 16.0 * math.log(2.0)) * (params.beta * params.eps) ** 2 / 27.0


def time_shift(params: ApproxParams, z: float | None = None) -> float:
    """Delay ``Delta`` with ``flow_eps(t) = flow_limit(t - Delta)`` after exit.

    Equal to ``t4 - z^2/4 - eta^2 eps^2/4``, the last term being the time the
    limit flow needs to go from the origin down to ``z = -eta eps``.  It does
    not depend on the start; with ``z`` given it is evaluated from the
    breakpoints of that start.
    """
    tail = params.z_bottom**2 / 4.0
    if z is None:
        return exit_delay(params) - tail
    return breakpoints(params, z).t4 - z * z / 4.0 - tail


# -- closed-form characteristics for starts in P+eps --------------------------------

@dataclass(frozen=True)
class TransitionState:
    """Planar state inside the approximation for a start in ``P+eps``.

    ``phi_eps``/``theta`` are the squared radius and azimuth in the upper
    transition zone, ``rho``/``phi`` their analogues in the lower one,
    ``A`` the radial rate and ``B`` the angular rate of the planar motion
    (``d(x, y)/dt = A (x, y) + B (-y, x)``).
    """

    t: float
    segment: str
    z: float
    phi_eps: float
    theta: float
    rho: float
    phi: float
    theta0: float
    A: float
    B: float


def _closed_scalar(params: ApproxParams, t: float, p):
    x, y, z = (float(c) for c in p)
    eps, be = params.eps, params.beta * params.eps
    k, om = params.rate, params.omega
    bp = breakpoints(params, z)
    c = (x * x + y * y) / z
    th0 = float(theta0_half_angle(x, y))
    ae, ee = params.z_top, -params.z_bottom

    if t <= bp.t1:
        q = z * z - 4.0 * t
        X3 = math.sqrt(q)
        return "parab+", X3, c * X3, th0, 0.0, 0.0
    # squared radius and azimuth at t1
    r2_1 = c * ae
    if t <= bp.t2:
        s = t - bp.t1
        E = math.exp(k * s)
        X3 = 4.0 * be / (2.0 + E)
        phi_eps = r2_1 * math.exp(-k * s) * ((2.0 + E) / 3.0) ** 2
        theta = th0 + om * (-2.0 * s + 6.0 / k * math.log((2.0 + E) / 3.0))
        A = -27.0 * (X3 - be) / (16.0 * be**3)
        B = om * (1.0 - 3.0 * (X3 - be) / be)
        return "trans+", X3, phi_eps, theta, A, B
    theta_bar = om / k * (-2.0 * math.log(2.0) + 6.0 * math.log(4.0 / 3.0))
    r2_2 = r2_1 * 0.5 * (4.0 / 3.0) ** 2
    th2 = th0 + theta_bar
    if t <= bp.t3:
        s = t - bp.t2
        X3 = be - 27.0 * s / (16.0 * be)
        return "cyl", X3, r2_2, th2 + om * s, 0.0, om
    th3 = th2 + om * (bp.t3 - bp.t2)
    if t <= bp.t4:
        s = t - bp.t3
        F = math.exp(-k * s)
        X3 = -2.0 * be / (1.0 + F)
        rho = r2_2 * math.exp(k * s) * ((1.0 + F) / 2.0) ** 2
        phi = th3 + om * (-2.0 * s - 6.0 / k * math.log((1.0 + F) / 2.0))
        u = -X3 / be - 1.0
        A = 27.0 * u / (16.0 * be * be)
        B = om * (1.0 - 3.0 * u)
        return "trans-", X3, rho, phi, A, B
    th4 = th3 + theta_bar
    r2_4 = r2_2 * 2.0 * (3.0 / 4.0) ** 2
    q = ee * ee + 4.0 * (t - bp.t4)
    X3 = -math.sqrt(q)
    return "parab-", X3, r2_4 / ee * math.sqrt(q), th4, 0.0, 0.0


def transition_state(params: ApproxParams, t: float, p) -> TransitionState:
    seg, X3, r2, ang, A, B = _closed_scalar(params, t, p)
    th0 = float(theta0_half_angle(p[0], p[1]))
    upper = seg in ("parab+", "trans+")
    return TransitionState(
        t=float(t), segment=seg, z=X3,
        phi_eps=r2 if upper else math.nan, theta=ang if upper else math.nan,
        rho=r2 if not upper else math.nan, phi=ang if not upper else math.nan,
        theta0=th0, A=A, B=B,
    )


def flow_eps_closed(params: ApproxParams, t, p, with_segment: bool = False):
    """Characteristic of the approximating field from ``p`` in ``P+eps``, segment by segment.

    Parameters
    ----------
    params : ApproxParams
    t : float or array of float
        Times ``>= 0``.
    p : array_like, shape (3,)
        Start, inside ``P+eps``.
    with_segment : bool
        Also return the segment name of every time.

    Returns
    -------
    ndarray, shape ``t.shape + (3,)``
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (3,):
        raise ValueError("flow_eps_closed takes a single start point")
    if classify_eps(params, p) != Region.P_PLUS_EPS:
        raise ValueError(f"start {p} is not in P+eps; use flow_eps_piecewise or the engine")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("flow_eps_closed needs t >= 0")
    out = np.empty(t.shape + (3,))
    segs = np.empty(t.shape, dtype=object)
    for idx in np.ndindex(t.shape):
        seg, X3, r2, ang, _, _ = _closed_scalar(params, float(t[idx]), p)
        r = math.sqrt(max(r2, 0.0))
        out[idx] = (r * math.cos(ang), r * math.sin(ang), X3)
        segs[idx] = seg
    if with_segment:
        return out, segs
    return out


def net_rotation(params: ApproxParams) -> float:
    """Azimuth gained between ``t1`` and ``t4`` by the closed forms (independent of the start)."""
    k, om = params.rate, params.omega
    theta_bar = om / k * (-2.0 * math.log(2.0) + 6.0 * math.log(4.0 / 3.0))
    return 2.0 * theta_bar + om * cylinder_time(params)


# -- general closed-form propagator ---------------------------------------------------

_BELOW = {
    Region.P_PLUS_EPS: Region.T_PLUS_EPS,
    Region.T_PLUS_EPS: Region.CYL_EPS,
    Region.CYL_EPS: Region.T_MINUS_EPS,
    Region.T_MINUS_EPS: Region.P_MINUS_EPS,
}


def _exit_level(params, region):
    return {
        Region.P_PLUS_EPS: params.z_top,
        Region.T_PLUS_EPS: params.z_cyl_top,
        Region.CYL_EPS: params.z_cyl_bottom,
        Region.T_MINUS_EPS: params.z_bottom,
    }.get(region, -np.inf)


def _clock(params, region, z):
    """Function of height that grows at unit rate along the flow inside ``region``."""
    be, ge, k = params.beta * params.eps, params.gamma * params.eps, params.rate
    if region == Region.P_PLUS_EPS:
        return -z * z / 4.0
    if region == Region.T_PLUS_EPS:
        return -(2.0 / k) * np.arctanh(z / be - 1.0)
    if region == Region.CYL_EPS:
        return -16.0 * be * z / 27.0
    if region == Region.T_MINUS_EPS:
        return (2.0 / k) * np.arctanh(-z / ge - 1.0)
    return z * z / 4.0


def _height(params, region, z, tau):
    """Height reached after time ``tau`` (not crossing the exit plane)."""
    be, ge, k = params.beta * params.eps, params.gamma * params.eps, params.rate
    if region == Region.P_PLUS_EPS:
        return np.sqrt(np.maximum(z * z - 4.0 * tau, 0.0))
    if region == Region.T_PLUS_EPS:
        return be * (1.0 + np.tanh(np.arctanh(z / be - 1.0) - 0.5 * k * tau))
    if region == Region.CYL_EPS:
        return z - 27.0 * tau / (16.0 * be)
    if region == Region.T_MINUS_EPS:
        return -ge * (1.0 + np.tanh(np.arctanh(-z / ge - 1.0) + 0.5 * k * tau))
    return -np.sqrt(z * z + 4.0 * tau)


def _radial_weight(params, region, z):
    """``w(z)`` with ``r^2 w(z)`` invariant in ``region``."""
    if region in (Region.P_PLUS_EPS, Region.P_MINUS_EPS):
        return 1.0 / np.abs(z)
    if region == Region.T_PLUS_EPS:
        s = z / (params.beta * params.eps) - 1.0
        return 1.0 - s * s
    if region == Region.T_MINUS_EPS:
        u = -z / (params.gamma * params.eps) - 1.0
        return 1.0 - u * u
    return np.ones_like(z)


def _angle(params, region, z):
    """Azimuth function: its increase along the flow equals the rotation performed."""
    k, om = params.rate, params.omega
    if region == Region.T_PLUS_EPS:
        s = z / (params.beta * params.eps) - 1.0
        return -(2.0 * om / k) * (np.arctanh(s) + 1.5 * np.log1p(-s * s))
    if region == Region.T_MINUS_EPS:
        u = -z / (params.gamma * params.eps) - 1.0
        return (2.0 * om / k) * (np.arctanh(u) + 1.5 * np.log1p(-u * u))
    if region == Region.CYL_EPS:
        return om * _clock(params, region, z)
    return np.zeros_like(z)


def _forward(params: ApproxParams, t, w, z):
    """Advance complex planar coordinate ``w`` and height ``z`` by times ``t >= 0``."""
    w, z = w.copy(), z.copy()
    labels = np.asarray(classify_eps(params, np.stack([w.real, w.imag, z], axis=-1)))
    tau = t.copy()
    active = labels != int(Region.EXTERIOR_EPS)
    while np.any(active):
        for region in (Region.P_PLUS_EPS, Region.T_PLUS_EPS, Region.CYL_EPS,
                       Region.T_MINUS_EPS, Region.P_MINUS_EPS):
            m = active & (labels == int(region))
            if not np.any(m):
                continue
            zm, tm = z[m], tau[m]
            g0 = _clock(params, region, zm)
            level = _exit_level(params, region)
            if np.isfinite(level):
                t_exit = _clock(params, region, np.full_like(zm, level)) - g0
            else:
                t_exit = np.full_like(zm, np.inf)
            leave = tm > t_exit
            z_new = np.where(leave, level, _height(params, region, zm, np.where(leave, 0.0, tm)))
            scale = np.sqrt(_radial_weight(params, region, zm) / _radial_weight(params, region, z_new))
            turn = _angle(params, region, z_new) - _angle(params, region, zm)
            w[m] = w[m] * scale * np.exp(1j * turn)
            z[m] = z_new
            tau[m] = np.where(leave, tm - t_exit, 0.0)
            idx = np.nonzero(m)[0]
            labels[idx[leave]] = int(_BELOW.get(region, Region.EXTERIOR_EPS))
            active[idx[~leave]] = False
    return w, z


def flow_eps_piecewise(params: ApproxParams, t, p) -> np.ndarray:
    """Flow of the approximating field at signed times ``t`` from any points ``p``.

    Inside each piece the height follows a clock ``G(z)`` with ``dG/dt = 1``,
    the squared radius keeps ``r^2 w(z)`` fixed and the azimuth changes by the
    increment of an angle function of height.  Negative times use the
    symmetry ``X(-t, p) = R X(t, R p)`` with ``R(x, y, z) = (x, -y, -z)``,
    which maps the field to its negative.
    """
    t, p = _broadcast(t, p)
    shape = t.shape
    t = t.reshape(-1)
    p = p.reshape(-1, 3)
    back = t < 0
    q = p.copy()
    q[back, 1:] *= -1.0
    w, z = _forward(params, np.abs(t), q[:, 0] + 1j * q[:, 1], q[:, 2])
    out = np.stack([w.real, w.imag, z], axis=-1)
    out[back, 1:] *= -1.0
    return out.reshape(shape + (3,))


def flow_eps_inverse(params: ApproxParams, t, p) -> np.ndarray:
    """Inverse of the approximating flow at time ``t >= 0``."""
    return flow_eps_piecewise(params, -np.asarray(t, dtype=float), p)


# -- the two dimensional example --------------------------------------------------------

def dpl2d_flows(t, p):
    """The two flows of the planar example from ``0 < x < y``.

    Both move the point down ``x/y = const`` until ``t = y^2/2``, when it
    reaches the origin.  Afterwards ``X`` continues on the same side of the
    vertical axis while ``X~`` is reflected to the other side.

    Returns
    -------
    (ndarray, ndarray)
        ``X(t, p)`` and ``X~(t, p)``.
    """
    t, p = _broadcast(t, p)
    x, y = p[..., 0], p[..., 1]
    if not np.all((0 < x) & (x < y)):
        raise ValueError("the two flows are given for starts with 0 < x < y")
    sigma = np.where(t <= y * y / 2.0, 1.0, -1.0)
    rad = np.sqrt(np.abs(y * y - 2.0 * t))
    X = np.stack([x / y * rad, sigma * rad], axis=-1)
    Xt = np.stack([sigma * x / y * rad, sigma * rad], axis=-1)
    return X, Xt


# -- export --------------------------------------------------------------------------------

def write_trajectory_csv(path, times, states, labels=None) -> None:
    """CSV with columns ``t, x, y, z, segment_id``.

    ``labels`` are :class:`Region` codes or segment names; ``None`` writes an
    empty segment column.
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "y", "z", "segment_id"])
        for i, tt in enumerate(times):
            lab = "" if labels is None else labels[i]
            if not isinstance(lab, str):
                lab = SEGMENT_NAMES[Region(int(lab))]
            wr.writerow([repr(float(tt))] + [repr(float(v)) for v in states[i]] + [lab])


def read_trajectory_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    times = np.array([float(r["t"]) for r in rows])
    states = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])
    return times, states, [r["segment_id"] for r in rows]
