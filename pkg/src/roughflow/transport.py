"""Transport solutions by backward characteristics and the metrics used to compare them.

A solution at time ``t`` is the datum composed with the inverse flow,
``u(t, x) = u0(X(t, .)^{-1}(x))``.  Spatial quantities are midpoint sums
over the cells of a uniform grid on the cube ``[-R, R]^3`` whose centres lie
in the ball of radius ``R``.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .engine import IntegratorConfig, flow_engine
from .fields import ApproxField, FieldHandle
from .flows import flow_eps_inverse, flow_limit_inverse
from .geometry import ApproxParams


@dataclass(frozen=True)
class InitialDatum:
    """Scalar datum with declared bounds (``|u0| <= sup``, Lipschitz constant ``lip`` on ``B_R``)."""

    func: Callable
    sup: float
    lip: float
    name: str = "datum"

    def __call__(self, p):
        return self.func(np.asarray(p, dtype=float))


def default_datum() -> InitialDatum:
    """``x exp(-|p|^2)``: bounded by ``1/sqrt(2e)``, Lipschitz constant 1, not rotation invariant."""

    def u0(p):
        return p[..., 0] * np.exp(-np.sum(p * p, axis=-1))

    return InitialDatum(u0, 1.0 / math.sqrt(2.0 * math.e), 1.0, "x*exp(-|p|^2)")


def radial_datum() -> InitialDatum:
    """``z exp(-|p|^2)``, a function of ``(r, z)`` only."""

    def u0(p):
        return p[..., 2] * np.exp(-np.sum(p * p, axis=-1))

    return InitialDatum(u0, 1.0 / math.sqrt(2.0 * math.e), 1.0, "z*exp(-|p|^2)")


def solve_exact(theta: float, u0: InitialDatum, t, p):
    """Solution transported by the limit flow that rotates by ``theta``."""
    return u0(flow_limit_inverse(theta, t, p))


def solve_eps(params: ApproxParams, u0: InitialDatum, t, p, cfg: IntegratorConfig | None = None,
              method: str = "closed"):
    """Solution transported by the flow of the approximating field.

    ``method="closed"`` uses the closed-form inverse flow (vectorised);
    ``method="engine"`` integrates each characteristic backwards.
    """
    if method == "closed":
        return u0(flow_eps_inverse(params, t, p))
    if method != "engine":
        raise ValueError(f"unknown method {method!r}")
    p = np.asarray(p, dtype=float)
    f = ApproxField(params)
    flat = p.reshape(-1, 3)
    tt = np.broadcast_to(np.asarray(t, dtype=float), flat.shape[:1])
    feet = np.array([flow_engine(f, -float(s), q, cfg) for s, q in zip(tt, flat)])
    return u0(feet).reshape(p.shape[:-1])


# -- grids -----------------------------------------------------------------------------

def ball_grid(R: float, n: int):
    """Cell centres of the ``n^3`` grid on ``[-R, R]^3`` that lie in the closed ball.

    Returns
    -------
    points : ndarray, shape (M, 3)
    index : ndarray of int, shape (M, 3)
    cell_volume : float
    """
    h = 2.0 * R / n
    ax = -R + (np.arange(n) + 0.5) * h
    I = np.stack(np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij"), axis=-1)
    I = I.reshape(-1, 3)
    pts = ax[I]
    inside = np.sum(pts * pts, axis=-1) <= R * R
    return pts[inside], I[inside], h**3


def midpoint_times(T: float, nt: int) -> np.ndarray:
    return (np.arange(nt) + 0.5) * T / nt


@dataclass
class GridField:
    """Samples of a scalar field at the ball-grid cells, one row per time.

    ``initial`` optionally holds the samples at ``t = 0``.
    """

    R: float
    n: int
    times: np.ndarray
    values: np.ndarray
    initial: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        pts, _, _ = ball_grid(self.R, self.n)
        if self.values.shape != (len(self.times), len(pts)):
            raise ValueError(f"values of shape {self.values.shape} do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @property
    def points(self) -> np.ndarray:
        return ball_grid(self.R, self.n)[0]

    @property
    def cell_volume(self) -> float:
        return (2.0 * self.R / self.n) ** 3

    @classmethod
    def sample(cls, R: float, n: int, times: Sequence[float], func: Callable,
               initial: Callable | None = None) -> "GridField":
        """Fill from ``func(t, points)``; ``initial(points)`` fills the ``t = 0`` row."""
        pts, _, _ = ball_grid(R, n)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        vals = np.array([func(t, pts) for t in times])
        init = None if initial is None else np.asarray(initial(pts), dtype=float)
        return cls(R, n, times, vals, init)

    def slice(self, k: int = -1) -> np.ndarray:
        return self.values[k]

    def save_csv(self, path) -> None:
        pts, idx, _ = ball_grid(self.R, self.n)
        with open(path, "w") as fh:
            fh.write(f"# R={self.R!r}\n# n={self.n}\n")
            fh.write("# times=" + ",".join(repr(float(t)) for t in self.times) + "\n")
            cols = ["i", "j", "k"] + [f"u{k}" for k in range(len(self.times))]
            if self.initial is not None:
                cols.append("u_initial")
            fh.write(",".join(cols) + "\n")
            data = [idx.astype(float), self.values.T]
            if self.initial is not None:
                data.append(self.initial[:, None])
            buf = io.StringIO()
            np.savetxt(buf, np.hstack(data), delimiter=",", fmt="%.17g")
            fh.write(buf.getvalue())

    @classmethod
    def load_csv(cls, path) -> "GridField":
        meta = {}
        with open(path) as fh:
            for line in fh:
                if not line.startswith("#"):
                    header = line.strip().split(",")
                    break
                key, _, val = line[1:].strip().partition("=")
                meta[key] = val
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        R, n = float(meta["R"]), int(meta["n"])
        times = np.array([float(v) for v in meta["times"].split(",")])
        nt = len(times)
        init = data[:, 3 + nt] if "u_initial" in header else None
        return cls(R, n, times, data[:, 3:3 + nt].T, init)


def _check_match(f: GridField, g: GridField, k: int):
    if f.R != g.R or f.n != g.n:
        raise ValueError("grids differ")
    if f.times[k] != g.times[k]:
        raise ValueError(f"time stamps differ: {f.times[k]} vs {g.times[k]}")


def l1_loc_distance(f: GridField, g: GridField, k: int = -1) -> float:
    """Midpoint-rule ``int_{B_R} |f - g|`` at time index ``k``."""
    _check_match(f, g, k)
    return float(np.sum(np.abs(f.values[k] - g.values[k])) * f.cell_volume)


def ball_volume_grid(R: float, n: int) -> float:
    pts, _, vol = ball_grid(R, n)
    return len(pts) * vol


# -- test functions ----------------------------------------------------------------------

def _bump_profile(s2):
    """``exp(1 - 1/(1 - s^2))`` for ``s^2 < 1``, zero otherwise (value 1 at the centre)."""
    inside = s2 < 1.0
    q = np.where(inside, 1.0 - s2, 1.0)
    return np.where(inside, np.exp(1.0 - 1.0 / q), 0.0), inside, q


@dataclass(frozen=True)
class Bump:
    """Smooth compactly supported test function on a ball."""

    center: tuple
    radius: float

    def __call__(self, p):
        d = np.asarray(p, dtype=float) - np.asarray(self.center)
        return _bump_profile(np.sum(d * d, axis=-1) / self.radius**2)[0]

    def grad(self, p):
        d = np.asarray(p, dtype=float) - np.asarray(self.center)
        val, inside, q = _bump_profile(np.sum(d * d, axis=-1) / self.radius**2)
        # d/dx exp(1 - 1/q) with q = 1 - |d|^2/r^2
        fac = np.where(inside, val * (-2.0 / (q * q * self.radius**2)), 0.0)
        return fac[..., None] * d

    def inside_ball(self, R: float) -> bool:
        return float(np.linalg.norm(self.center)) + self.radius <= R


@dataclass(frozen=True)
class SpaceTimeBump:
    """``psi(t) * phi(x)``; ``psi`` is a smooth bump in time (it may be nonzero at ``t = 0``)."""

    space: Bump
    t_center: float
    t_radius: float

    def time_profile(self, t):
        s = (np.asarray(t, dtype=float) - self.t_center) / self.t_radius
        val, inside, q = _bump_profile(s * s)
        dval = np.where(inside, val * (-2.0 * s / (q * q * self.t_radius)), 0.0)
        return val, dval

    def __call__(self, t, p):
        return self.time_profile(t)[0] * self.space(p)


def weak_star_pairing(f: GridField, testfn: Callable, k: int = -1) -> float:
    """Midpoint-rule ``int_{B_R} f phi`` at time index ``k``."""
    return float(np.sum(f.values[k] * testfn(f.points)) * f.cell_volume)


def weak_form_residual(u: GridField, field: FieldHandle, testfn: SpaceTimeBump, T: float) -> float:
    """``|int int u (dphi/dt + b . grad phi) + int u0 phi(0)|`` by midpoint sums.

    ``u`` must be sampled at the midpoint times of ``[0, T]`` and carry its
    ``t = 0`` row.  The test function must vanish outside the ball and at
    ``t = T``.
    """
    nt = len(u.times)
    if not np.allclose(u.times, midpoint_times(T, nt), rtol=0, atol=1e-14 * max(1.0, T)):
        raise ValueError("u must be sampled at the midpoint times of [0, T]")
    if u.initial is None:
        raise ValueError("u needs its initial row")
    if not testfn.space.inside_ball(u.R):
        raise ValueError("test function support escapes the sampled ball")
    if testfn.t_center + testfn.t_radius > T:
        raise ValueError("test function support escapes the sampled time window")
    pts = u.points
    phi = testfn.space(pts)
    active = phi != 0.0
    pts, phi = pts[active], phi[active]
    adv = np.sum(field(pts) * testfn.space.grad(pts), axis=-1)
    psi, dpsi = testfn.time_profile(u.times)
    psi0, _ = testfn.time_profile(0.0)
    dt = T / nt
    body = sum(
        float(np.sum(u.values[k][active] * (dpsi[k] * phi + psi[k] * adv)))
        for k in range(nt)
    ) * dt
    init = float(psi0) * float(np.sum(u.initial[active] * phi))
    return abs((body + init) * u.cell_volume)
