"""Vector fields: the rough limit field, its smooth approximations and diagnostics.

Every field is a :class:`FieldHandle`.  Calling a handle evaluates the full
(piecewise) field on an array of points.  Piecewise fields also expose the
smooth formula of each piece through :meth:`FieldHandle.velocity_in` and the
horizontal interfaces that end a piece through :meth:`FieldHandle.guards`;
the ODE engine integrates one smooth piece at a time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .geometry import (
    EPS_STACK,
    ApproxParams,
    Region,
    classify_eps,
    classify_limit,
    region_r2_max,
    sample_region,
    surface_function,
    surface_gradient,
    transition_lateral_r2,
)

SMOOTH = -1  # region label of fields without pieces


class StencilError(ValueError):
    """A finite-difference stencil straddles an interface of a piecewise field."""


@dataclass(frozen=True)
class Guard:
    """Horizontal plane ``z = level`` leaving a piece.

    ``value(p) = sign * (p_z - level)`` is positive once the trajectory is
    outside the piece.  ``terminal`` guards stop the integration instead of
    switching piece.
    """

    name: str
    level: float
    sign: float
    terminal: bool = False

    def value(self, p) -> float:
        return self.sign * (p[2] - self.level)

    def clamp(self, p) -> np.ndarray:
        q = np.array(p, dtype=float)
        q[2] = self.level
        return q


class FieldHandle:
    """Base class.  Subclasses implement ``__call__`` and, if piecewise, the hooks."""

    dim = 3
    name = "field"

    def __call__(self, p) -> np.ndarray:
        raise NotImplementedError

    def region(self, p):
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            return SMOOTH
        return np.full(p.shape[:-1], SMOOTH, dtype=np.int64)

    def velocity_in(self, label, p) -> np.ndarray:
        return np.asarray(self(p), dtype=float)

    def guards(self, label) -> Sequence[Guard]:
        return ()

    def max_step(self, label) -> float:
        return math.inf

    def radial_breaks(self, z) -> np.ndarray:
        """Radii at which the field jumps, per height (used by the quadrature)."""
        return np.full(np.shape(z) + (1,), np.inf)


class SmoothField(FieldHandle):
    """Wrap a vectorised callable ``(..., dim) -> (..., dim)``."""

    def __init__(self, func: Callable, dim: int = 3, name: str = "smooth"):
        self.func = func
        self.dim = dim
        self.name = name

    def __call__(self, p):
        return np.asarray(self.func(np.asarray(p, dtype=float)), dtype=float)


def constant_field(c) -> SmoothField:
    c = np.asarray(c, dtype=float)
    return SmoothField(lambda p: np.broadcast_to(c, p.shape).copy(), dim=c.size, name="constant")


def rotation_field(rate: float) -> SmoothField:
    """Rigid rotation ``rate * (-y, x, 0)``."""

    def f(p):
        return np.stack([-rate * p[..., 1], rate * p[..., 0], np.zeros_like(p[..., 2])], axis=-1)

    return SmoothField(f, name="rotation")


# -- the limit field ----------------------------------------------------------

def eval_b(p) -> np.ndarray:
    """Limit field: ``(-sgn(z) x/z^2, -sgn(z) y/z^2, -2/|z|)`` on the paraboloids, zero elsewhere.

    The field is set to zero on the plane ``z = 0`` (including the origin).
    """
    p = np.asarray(p, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    inside = (x * x + y * y <= np.abs(z)) & (z != 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        zz = np.where(inside, z, 1.0)
        sg = np.sign(zz)
        out = np.stack([-sg * x / zz**2, -sg * y / zz**2, -2.0 / np.abs(zz)], axis=-1)
    return np.where(inside[..., None], out, 0.0)


class LimitField(FieldHandle):
    """The rough limit field.

    Trajectories in ``P+`` reach the origin in finite time, where uniqueness
    is lost; the engine stops them at height ``z_floor``.
    """

    name = "limit"

    def __init__(self, z_floor: float = 1e-6):
        self.z_floor = z_floor

    def __call__(self, p):
        return eval_b(p)

    def region(self, p):
        return classify_limit(p)

    def velocity_in(self, label, p):
        x, y, z = p[0], p[1], p[2]
        if label == Region.P_PLUS:
            return np.array([-x / z**2, -y / z**2, -2.0 / z])
        if label == Region.P_MINUS:
            return np.array([x / z**2, y / z**2, 2.0 / z])
        return np.zeros(3)

    def guards(self, label):
        if label == Region.P_PLUS:
            return (Guard("z=floor", self.z_floor, -1.0, terminal=True),)
        if label == Region.P_MINUS:
            return (Guard("z=-floor", -self.z_floor, 1.0, terminal=True),)
        return ()

    def radial_breaks(self, z):
        return np.sqrt(np.abs(np.asarray(z, dtype=float)))[..., None]


# -- the approximating field --------------------------------------------------

def _piece(params: ApproxParams, label, x, y, z):
    """Formula of one piece; works on floats and on arrays."""
    eps = params.eps
    a, b, g, e = params.alpha, params.beta, params.gamma, params.eta
    om = params.omega
    if label == Region.P_PLUS_EPS:
        return -x / z**2, -y / z**2, -2.0 / z
    if label == Region.T_PLUS_EPS:
        s = (z - b * eps) / ((a - b) * eps)
        k = s / (a * eps) ** 2
        bz = 2.0 / (a * a * eps**3 * (b - a)) * (b * eps * z - 0.5 * z * z)
        return -k * x - (1.0 - s) * om * y, -k * y + (1.0 - s) * om * x, bz
    if label == Region.CYL_EPS:
        return -om * y, om * x, -27.0 / (16.0 * b * eps) + 0.0 * z
    if label == Region.T_MINUS_EPS:
        w = (-z - g * eps) / ((e - g) * eps)
        k = w / (e * eps) ** 2
        bz = -2.0 / (e * e * eps**3 * (g - e)) * (0.5 * z * z + g * eps * z)
        return k * x - (1.0 - w) * om * y, k * y + (1.0 - w) * om * x, bz
    if label == Region.P_MINUS_EPS:
        return x / z**2, y / z**2, 2.0 / z
    zero = 0.0 * x
    return zero, zero, zero


def eval_b_eps(params: ApproxParams, p) -> np.ndarray:
    """Smooth approximation of the limit field at scale ``params.eps``."""
    p = np.asarray(p, dtype=float)
    labels = np.asarray(classify_eps(params, p))
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    out = np.zeros(p.shape)
    for label in EPS_STACK:
        m = labels == int(label)
        if np.any(m):
            out[m] = np.stack(_piece(params, label, x[m], y[m], z[m]), axis=-1)
    return out


class ApproxField(FieldHandle):
    """Divergence-free approximation with net rotation ``params.theta``."""

    name = "approx"

    def __init__(self, params: ApproxParams):
        self.params = params
        pr = params
        top, ct, cb, bot = pr.z_top, pr.z_cyl_top, pr.z_cyl_bottom, pr.z_bottom
        self._guards = {
            Region.P_PLUS_EPS: (Guard("z=alpha*eps", top, -1.0),),
            Region.T_PLUS_EPS: (Guard("z=alpha*eps", top, 1.0), Guard("z=beta*eps", ct, -1.0)),
            Region.CYL_EPS: (Guard("z=beta*eps", ct, 1.0), Guard("z=-gamma*eps", cb, -1.0)),
            Region.T_MINUS_EPS: (Guard("z=-gamma*eps", cb, 1.0), Guard("z=-eta*eps", bot, -1.0)),
            Region.P_MINUS_EPS: (Guard("z=-eta*eps", bot, 1.0),),
        }

    def __call__(self, p):
        return eval_b_eps(self.params, p)

    def region(self, p):
        return classify_eps(self.params, p)

    def velocity_in(self, label, p):
        return np.array(_piece(self.params, label, float(p[0]), float(p[1]), float(p[2])))

    def guards(self, label):
        return self._guards.get(Region(label), ())

    def max_step(self, label):
        if label == Region.CYL_EPS:
            return self.params.eps**2 / 10.0
        return math.inf

    def radial_breaks(self, z):
        z = np.asarray(z, dtype=float)
        pr = self.params
        r2 = np.full(z.shape, np.inf)
        for label in EPS_STACK:
            if label == Region.P_PLUS_EPS:
                m = z >= pr.z_top
            elif label == Region.T_PLUS_EPS:
                m = (z >= pr.z_cyl_top) & (z < pr.z_top)
            elif label == Region.CYL_EPS:
                m = (z >= pr.z_cyl_bottom) & (z < pr.z_cyl_top)
            elif label == Region.T_MINUS_EPS:
                m = (z > pr.z_bottom) & (z < pr.z_cyl_bottom)
            else:
                m = z <= pr.z_bottom
            if np.any(m):
                r2[m] = region_r2_max(pr, label, z[m])
        return np.sqrt(r2)[..., None]


class ReversedField(FieldHandle):
    """``-f`` with the pieces and interfaces of ``f``."""

    def __init__(self, field: FieldHandle):
        self.base = field
        self.dim = field.dim
        self.name = f"reversed({field.name})"

    def __call__(self, p):
        return -self.base(p)

    def region(self, p):
        return self.base.region(p)

    def velocity_in(self, label, p):
        return -self.base.velocity_in(label, p)

    def guards(self, label):
        return self.base.guards(label)

    def max_step(self, label):
        return self.base.max_step(label)


# -- the two dimensional example ------------------------------------------------

def eval_b_dpl2d(p) -> np.ndarray:
    """Planar field with two measure-preserving flows; zero at the origin."""
    p = np.asarray(p, dtype=float)
    x, y = p[..., 0], p[..., 1]
    ax, ay = np.abs(x), np.abs(y)
    inner = ax <= ay
    with np.errstate(divide="ignore", invalid="ignore"):
        b1 = -np.sign(y) * np.where(inner, x / np.where(inner, ay, 1.0) ** 2, 1.0)
        b2 = -np.where(inner, 1.0 / np.where(inner, ay, 1.0), 1.0)
    origin = (x == 0.0) & (y == 0.0)
    out = np.stack([b1, b2], axis=-1)
    return np.where(origin[..., None], 0.0, out)


class DPLField2D(FieldHandle):
    dim = 2
    name = "dpl2d"

    def __call__(self, p):
        return eval_b_dpl2d(p)


# -- diagnostics ----------------------------------------------------------------

def _stencil(p, h):
    p = np.asarray(p, dtype=float)
    dim = p.shape[-1]
    offsets = np.concatenate([np.eye(dim), -np.eye(dim)]) * h
    return p + offsets


def divergence_fd(f: FieldHandle, p, h: float = 1e-5) -> float:
    """Central-difference divergence at a single point.

    Raises :class:`StencilError` if the stencil touches more than one piece.
    """
    pts = _stencil(p, h)
    labels = np.atleast_1d(f.region(np.vstack([np.asarray(p, dtype=float)[None], pts])))
    if np.any(labels != labels[0]):
        raise StencilError(f"stencil of width {h} around {p} crosses an interface")
    vals = f(pts)
    dim = pts.shape[-1]
    return float(sum((vals[i, i] - vals[dim + i, i]) / (2.0 * h) for i in range(dim)))


def gradient_fd(f: FieldHandle, p, h: float = 1e-5, label=None) -> np.ndarray:
    """Central-difference Jacobian ``d f_i / d x_j`` of one smooth piece."""
    pts = _stencil(p, h)
    if label is None:
        vals = f(pts)
    else:
        vals = np.array([f.velocity_in(label, q) for q in pts])
    dim = pts.shape[-1]
    return (vals[:dim] - vals[dim:]).T / (2.0 * h)


_INSIDE = {
    "P+": (Region.P_PLUS_EPS, Region.P_PLUS),
    "P-": (Region.P_MINUS_EPS, Region.P_MINUS),
    "T+": (Region.T_PLUS_EPS, None),
    "C": (Region.CYL_EPS, None),
    "T-": (Region.T_MINUS_EPS, None),
}


def normal_flux(field: FieldHandle, surface: str, p, tol: float = 1e-10) -> float:
    """``b . n`` on a lateral surface, ``n`` the analytic unit outward normal.

    The velocity is the formula of the piece on the inner side.  Raises
    ``ValueError`` when ``p`` is farther than ``tol`` from the surface.
    """
    params = getattr(field, "params", None)
    p = np.asarray(p, dtype=float)
    grad = surface_gradient(params, surface, p)
    gnorm = float(np.linalg.norm(grad))
    dist = abs(float(surface_function(params, surface, p))) / gnorm
    if dist > tol * max(1.0, float(np.linalg.norm(p))):
        raise ValueError(f"point {p} is {dist:.3g} away from surface {surface!r}")
    eps_label, lim_label = _INSIDE[surface]
    label = eps_label if params is not None else lim_label
    if label is None:
        raise ValueError(f"surface {surface!r} does not bound the limit field")
    v = field.velocity_in(label, p)
    return float(np.dot(v, grad) / gnorm)


# -- integrability --------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature of ``|f|^p`` over the ball of ``radius`` minus the slab ``|z| < cutoff``."""

    radius: float
    cutoff: float
    p: float = 1.0
    nodes: int = 12
    panels_per_decade: int = 3
    n_theta: int = 8

    def __post_init__(self):
        if not 0.0 < self.cutoff < self.radius:
            raise ValueError("need 0 < cutoff < radius")
        if self.nodes < 8 or self.n_theta < 8:
            raise ValueError("node counts must be at least 8")
        if self.p < 1.0:
            raise ValueError("exponent p must be >= 1")


class QuadratureError(RuntimeError):
    pass


def _lp_integral(f: FieldHandle, spec: QuadratureSpec, nodes: int) -> float:
    R, rho = spec.radius, spec.cutoff
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    zstar = 0.5 * (-1.0 + math.sqrt(1.0 + 4.0 * R * R))  # where sqrt(z) meets the sphere
    n_pan = max(1, math.ceil(math.log10(R / rho) * spec.panels_per_decade))
    edges = np.unique(np.concatenate([np.geomspace(rho, R, n_pan + 1),
                                      [zstar] if rho < zstar < R else []]))
    a, b = edges[:-1, None], edges[1:, None]
    zn = (0.5 * (b - a) * gx + 0.5 * (b + a)).ravel()
    zw = (0.5 * (b - a) * gw).ravel()

    th = (np.arange(spec.n_theta) + 0.5) * 2.0 * math.pi / spec.n_theta
    total = 0.0
    for sign in (1.0, -1.0):
        z = sign * zn
        r_top = np.sqrt(np.maximum(R * R - z * z, 0.0))
        br = np.clip(f.radial_breaks(z), 0.0, r_top[:, None])
        knots = np.sort(np.concatenate([np.zeros((z.size, 1)), br, r_top[:, None]], axis=1), axis=1)
        lo, hi = knots[:, :-1, None], knots[:, 1:, None]
        rn = 0.5 * (hi - lo) * gx + 0.5 * (hi + lo)          # (nz, panels, nodes)
        rw = 0.5 * (hi - lo) * gw
        pts = np.stack(np.broadcast_arrays(
            rn[..., None] * np.cos(th),
            rn[..., None] * np.sin(th),
            z[:, None, None, None],
        ), axis=-1)
        mag = np.linalg.norm(f(pts), axis=-1) ** spec.p      # (nz, panels, nodes, ntheta)
        inner = (mag.mean(axis=-1) * 2.0 * math.pi * rn * rw).sum(axis=(1, 2))
        total += float(np.dot(inner, zw))
    return total


def lp_local_integral(f: FieldHandle, spec: QuadratureSpec, check: bool = True) -> float:
    """``int |f|^p`` over ``B_R`` minus ``{|z| < cutoff}`` in cylindrical coordinates.

    Heights use panels graded geometrically towards ``z = 0``; radii are split
    at the jumps reported by ``f.radial_breaks``.  With ``check`` the result is
    recomputed with more nodes and :class:`QuadratureError` is raised if the
    two disagree by more than ``1e-3`` relative.
    """
    value = _lp_integral(f, spec, spec.nodes)
    if check:
        finer = _lp_integral(f, spec, spec.nodes + 8)
        if abs(finer - value) > 1e-3 * max(abs(finer), 1e-300):
            raise QuadratureError(f"quadrature not resolved: {value!r} vs {finer!r}")
        value = finer
    return value


def integrability_probe(f: FieldHandle, p: float, radius: float, cutoffs: Sequence[float],
                        **spec_kwargs) -> dict:
    """Integral of ``|f|^p`` for a decreasing sequence of cutoffs.

    Returns the values, the relative change across each refinement and the
    growth factor per decade of cutoff.
    """
    cutoffs = [float(c) for c in cutoffs]
    values = [lp_local_integral(f, QuadratureSpec(radius, c, p, **spec_kwargs)) for c in cutoffs]
    rel = [abs(v1 - v0) / abs(v1) for v0, v1 in zip(values, values[1:])]
    growth = [
        (v1 / v0) ** (1.0 / math.log10(c0 / c1))
        for (c0, v0), (c1, v1) in zip(zip(cutoffs, values), zip(cutoffs[1:], values[1:]))
    ]
    return {"p": p, "radius": radius, "cutoffs": cutoffs, "values": values,
            "relative_change": rel, "growth_per_decade": growth}


# -- sup norms -------------------------------------------------------------------

def _stratified(params, budget, seed, z_max, regions, margin=0.0):
    rng = np.random.default_rng(seed)
    chunks = []
    per = max(1, budget // len(regions))
    for region in regions:
        if region == Region.EXTERIOR_EPS:
            box = rng.uniform(-z_max, z_max, size=(4 * per, 3))
            box = box[np.asarray(classify_eps(params, box)) == int(Region.EXTERIOR_EPS)]
            chunks.append(box[:per])
            continue
        chunks.append(sample_region(params, region, per // 2, rng, z_max=z_max, margin=margin))
        chunks.append(sample_region(params, region, per - per // 2, rng, z_max=z_max,
                                    on_boundary=True))
    return np.concatenate(chunks)


def sup_norm_scan(params: ApproxParams, budget: int = 2000, seed: int = 0, z_max: float = 1.0,
                  regions=EPS_STACK) -> float:
    """Largest ``|b_eps|`` over stratified samples of the pieces in ``|z| <= z_max``.

    Half of the samples of each piece lie on its lateral boundary, where the
    magnitude peaks.
    """
    if budget < 1000:
        raise ValueError("sample budget must be at least 1000")
    pts = _stratified(params, budget, seed, z_max, regions)
    if len(pts) == 0:
        return 0.0
    return float(np.max(np.linalg.norm(eval_b_eps(params, pts), axis=-1)))


def gradient_sup_scan(params: ApproxParams, budget: int = 1000, seed: int = 0,
                      z_max: float = 1.0) -> float:
    """Largest Frobenius norm of the finite-difference gradient of each piece."""
    f = ApproxField(params)
    rng = np.random.default_rng(seed)
    best = 0.0
    per = max(1, budget // len(EPS_STACK))
    for region in EPS_STACK:
        for q in sample_region(params, region, per, rng, z_max=z_max):
            h = 1e-6 * max(params.eps, abs(q[2]))
            best = max(best, float(np.linalg.norm(gradient_fd(f, q, h, label=region))))
    return best


# -- mollification ---------------------------------------------------------------

def bump_weights(delta: float, spacing: float) -> np.ndarray:
    """Kernel ``(1 - (r/delta)^2)^4`` sampled on the grid and normalised to unit sum."""
    m = int(math.ceil(delta / spacing))
    ax = np.arange(-m, m + 1) * spacing
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    s2 = (X * X + Y * Y + Z * Z) / delta**2
    w = np.where(s2 < 1.0, (1.0 - s2) ** 4, 0.0)
    return w / w.sum()


class MollifiedField(FieldHandle):
    """Grid mollification of a field with trilinear interpolation between nodes.

    Nodes sit at ``spacing * (i, j, k)``.  Node values are the discrete
    convolution of the samples of ``base`` with :func:`bump_weights`; they are
    computed in cubic blocks the first time a block is needed and then kept.
    Block contents depend only on the block index, so results do not depend
    on the order of evaluation.
    """

    name = "mollified"

    def __init__(self, base: FieldHandle, delta: float, spacing: float | None = None,
                 block: int = 16):
        if spacing is None:
            spacing = delta / 4.0
        if not delta > 0.0:
            raise ValueError("delta must be positive")
        if spacing > delta / 4.0 * (1.0 + 1e-12):
            raise ValueError(f"grid spacing {spacing} too coarse for delta {delta}")
        self.base = base
        self.delta = float(delta)
        self.spacing = float(spacing)
        self.block = int(block)
        self.kernel = bump_weights(self.delta, self.spacing)
        self._m = (self.kernel.shape[0] - 1) // 2
        self._blocks: dict[tuple, np.ndarray] = {}
        self.name = f"mollified({base.name}, {delta:g})"

    def _fill(self, key):
        B, m, h = self.block, self._m, self.spacing
        start = np.array(key) * B - m
        ax = [(start[i] + np.arange(B + 2 * m + 1)) * h for i in range(3)]
        pts = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)
        vals = self.base(pts)
        out = np.empty((B + 1, B + 1, B + 1, 3))
        for c in range(3):
            out[..., c] = fftconvolve(vals[..., c], self.kernel, mode="valid")
        self._blocks[key] = out
        return out

    def _node_block(self, key):
        blk = self._blocks.get(key)
        return blk if blk is not None else self._fill(key)

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        flat = p.reshape(-1, 3)
        out = np.empty_like(flat)
        g = flat / self.spacing
        cell = np.floor(g).astype(np.int64)
        frac = g - cell
        keys = np.floor_divide(cell, self.block)
        local = cell - keys * self.block
        ukeys, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        for j, key in enumerate(ukeys):
            idx = np.nonzero(inv == j)[0]
            blk = self._node_block(tuple(int(k) for k in key))
            i0, i1, i2 = local[idx, 0], local[idx, 1], local[idx, 2]
            fx, fy, fz = frac[idx, 0:1], frac[idx, 1:2], frac[idx, 2:3]
            c00 = blk[i0, i1, i2] * (1 - fx) + blk[i0 + 1, i1, i2] * fx
            c10 = blk[i0, i1 + 1, i2] * (1 - fx) + blk[i0 + 1, i1 + 1, i2] * fx
            c01 = blk[i0, i1, i2 + 1] * (1 - fx) + blk[i0 + 1, i1, i2 + 1] * fx
            c11 = blk[i0, i1 + 1, i2 + 1] * (1 - fx) + blk[i0 + 1, i1 + 1, i2 + 1] * fx
            out[idx] = (c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz
        return out.reshape(p.shape)

    def velocity_in(self, label, p):
        return self(np.asarray(p, dtype=float)[None])[0]


def mollify_field(f: FieldHandle, delta: float, spacing: float | None = None) -> FieldHandle:
    """Mollify ``f`` at width ``delta``; ``delta == 0`` returns ``f`` itself."""
    if delta == 0:
        return f
    return MollifiedField(f, delta, spacing)
