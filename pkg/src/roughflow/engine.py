"""Adaptive Dormand-Prince 5(4) integration of piecewise smooth fields.

The engine integrates one smooth piece at a time.  After every accepted step
the guards of the current piece are checked; when one has become positive
the crossing time is located by bisection (re-stepping from the start of the
step), the state is clamped onto the interface and integration continues
with the formula of the piece on the other side.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import SMOOTH, FieldHandle, ReversedField, gradient_fd

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    """Step control of the engine.

    ``event_tol`` is relative: crossings are bisected to a time window of
    ``event_tol * max(1, |t|)``.
    """

    rtol: float = 1e-10
    atol: float = 1e-12
    h0: float | None = None
    max_step: float = math.inf
    event_tol: float = 1e-12
    max_steps: int = 200_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.event_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.event_tol > self.atol:
            raise ValueError("event tolerance must not exceed the absolute tolerance")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def scaled(self, factor: float) -> "IntegratorConfig":
        """Same config with both tolerances multiplied by ``factor``."""
        atol = self.atol * factor
        return IntegratorConfig(self.rtol * factor, atol, self.h0, self.max_step,
                                min(self.event_tol, atol), self.max_steps)


@dataclass(frozen=True)
class Event:
    t: float
    guard: str
    before: int
    after: int


@dataclass
class TrajectoryRecord:
    """Accepted states of one integration.

    ``times`` increase strictly.  For backward integrations (``direction ==
    -1``) they count elapsed backward time, so ``states[i]`` approximates
    ``X(-times[i], x0)``.
    """

    times: np.ndarray
    states: np.ndarray
    labels: np.ndarray
    events: list
    status: str
    nudged: bool = False
    nudge: float = 0.0
    direction: int = 1
    n_steps: int = 0
    n_rejected: int = 0
    config: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def event_times(self, guard: str | None = None) -> list:
        return [e.t for e in self.events if guard is None or e.guard == guard]

    def state_at(self, t) -> np.ndarray:
        """Linear interpolation between accepted states."""
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.times, self.states[:, i])
                         for i in range(self.states.shape[1])], axis=-1)

    def segments(self):
        """``(start, stop)`` index pairs of maximal runs with one label."""
        cuts = np.nonzero(np.diff(self.labels))[0] + 1
        bounds = np.concatenate([[0], cuts, [len(self.labels)]])
        out = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            out.append((int(a), int(b)))
        return out

    def manifest(self) -> dict:
        return {
            "status": self.status,
            "direction": self.direction,
            "t_final": float(self.times[-1]),
            "x0": [float(v) for v in self.states[0]],
            "x_final": [float(v) for v in self.states[-1]],
            "nudged": self.nudged,
            "nudge": self.nudge,
            "n_steps": self.n_steps,
            "n_rejected": self.n_rejected,
            "events": [asdict(e) for e in self.events],
            "config": self.config,
        }

    def write_manifest(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)


def _dp_step(rhs, t, x, h, k1):
    ks = [k1]
    for i in range(1, 7):
        xi = x + h * sum(a * k for a, k in zip(_A[i], ks))
        ks.append(rhs(xi))
    K = np.array(ks)
    x5 = x + h * (_B5 @ K)
    err = h * (_E @ K)
    return x5, err, ks[-1]


def _error_norm(err, x, xn, cfg):
    scale = cfg.atol + cfg.rtol * np.maximum(np.abs(x), np.abs(xn))
    return float(np.max(np.abs(err / scale)))


def _initial_step(rhs, x, k1, cfg, span):
    if cfg.h0 is not None:
        return cfg.h0
    d0 = np.linalg.norm(x) + 1e-300
    d1 = np.linalg.norm(k1) + 1e-300
    h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6
    return min(h, span)


def _label_of(f, x):
    lab = f.region(x)
    return int(lab)


def integrate(f: FieldHandle, x0, t_span, cfg: IntegratorConfig | None = None,
              classify=None, record_steps: bool = True) -> TrajectoryRecord:
    """Integrate ``dX/dt = f(X)`` from ``x0`` over ``t_span = (t0, t1)``, ``t1 > t0``.

    Parameters
    ----------
    f : FieldHandle
        Piecewise fields supply ``velocity_in``, ``guards`` and ``max_step``.
    classify : callable, optional
        Region function; defaults to ``f.region``.
    record_steps : bool
        Keep every accepted step (otherwise only starts, events and the end).
    """
    cfg = cfg or IntegratorConfig()
    if classify is None:
        classify = f.region
    t0, t1 = (float(v) for v in t_span)
    if not t1 >= t0:
        raise ValueError("t_span must be increasing")
    x = np.array(x0, dtype=float)
    label = int(classify(x))

    # start exactly on an interface of its piece: move it inside
    nudged, nudge = False, 0.0
    for g in f.guards(label):
        if not g.terminal and g.value(x) >= 0.0:
            tol = cfg.event_tol * max(1.0, abs(g.level))
            nudge = -g.sign * (g.value(x) + tol)
            x[-1] += nudge
            nudged = True
    times, states, labels, events = [t0], [x.copy()], [label], []
    status = "completed"
    n_steps = n_rej = 0

    def rhs_for(lab):
        return lambda y: f.velocity_in(lab, y)

    rhs = rhs_for(label)
    t = t0
    k1 = rhs(x)
    guards = f.guards(label)
    for g in guards:
        if g.terminal and g.value(x) >= 0.0:
            status = "left-domain"
            break
    h = _initial_step(rhs, x, k1, cfg, t1 - t0) if t1 > t0 else 0.0

    while status == "completed" and t < t1:
        if n_steps >= cfg.max_steps:
            status = "step-limit"
            break
        hmax = min(cfg.max_step, f.max_step(label), t1 - t)
        h = min(h, hmax)
        if h <= 1e-15 * max(1.0, abs(t)) and t1 - t > 1e-15 * max(1.0, abs(t)):
            status = "step-underflow"
            break
        xn, err, k_last = _dp_step(rhs, t, x, h, k1)
        en = _error_norm(err, x, xn, cfg)
        if not np.isfinite(en) or en > 1.0:
            n_rej += 1
            fac = 0.2 if not np.isfinite(en) else max(0.2, 0.9 * en ** -0.2)
            h *= fac
            continue
        n_steps += 1
        # events
        crossed = [g for g in guards if g.value(xn) > 0.0]
        if crossed:
            tol = cfg.event_tol * max(1.0, abs(t))
            best = None
            for g in crossed:
                lo, hi = 0.0, h
                x_lo, x_hi = x, xn
                while hi - lo > tol:
                    mid = 0.5 * (lo + hi)
                    xm, _, _ = _dp_step(rhs, t, x, mid, k1)
                    if g.value(xm) > 0.0:
                        hi, x_hi = mid, xm
                    else:
                        lo, x_lo = mid, xm
                if best is None or hi < best[0]:
                    best = (hi, g, x_hi, lo, x_lo)
            hi, g, x_far, lo, x_lo = best
            # secant step inside the final bracket: the crossing is then
            # located to O(tol^2) instead of O(tol)
            v_lo, v_hi = g.value(x_lo), g.value(x_far)
            tau = lo + (hi - lo) * (-v_lo) / (v_hi - v_lo) if v_hi > v_lo else hi
            if not tau > 0.0:
                tau = hi
            x_ev = _dp_step(rhs, t, x, tau, k1)[0]
            t_ev = t + tau
            if g.terminal:
                times.append(t_ev)
                states.append(g.clamp(x_ev))
                labels.append(label)
                events.append(Event(t_ev, g.name, label, label))
                status = "left-domain"
                break
            new_label = int(classify(x_far))
            if new_label != label:
                x = g.clamp(x_ev)
                t = t_ev
                events.append(Event(t_ev, g.name, label, new_label))
                label = new_label
                times.append(t)
                states.append(x.copy())
                labels.append(label)
                rhs = rhs_for(label)
                guards = f.guards(label)
                k1 = rhs(x)
                h = max(h - tau, tau, 1e-12)
                continue
        t += h
        x = xn
        k1 = k_last
        if record_steps or t >= t1:
            times.append(t)
            states.append(x.copy())
            labels.append(label)
        fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
        h *= fac

    if not record_steps and times[-1] != t:
        times.append(t)
        states.append(x.copy())
        labels.append(label)
    return TrajectoryRecord(
        times=np.array(times), states=np.array(states), labels=np.array(labels),
        events=events, status=status, nudged=nudged, nudge=nudge,
        n_steps=n_steps, n_rejected=n_rej, config=asdict(cfg),
    )


def integrate_backward(f: FieldHandle, x0, t_span, cfg: IntegratorConfig | None = None,
                       classify=None, record_steps: bool = True) -> TrajectoryRecord:
    """Integrate the reversed field; the result approximates ``X(-s, x0)`` at ``s = times``."""
    rec = integrate(ReversedField(f), x0, t_span, cfg, classify=classify or f.region,
                    record_steps=record_steps)
    rec.direction = -1
    return rec


def flow_engine(f: FieldHandle, t: float, x0, cfg: IntegratorConfig | None = None) -> np.ndarray:
    """End point ``X(t, x0)`` for signed ``t``; raises if the run did not complete."""
    if t >= 0:
        rec = integrate(f, x0, (0.0, t), cfg, record_steps=False)
    else:
        rec = integrate_backward(f, x0, (0.0, -t), cfg, record_steps=False)
    if rec.status != "completed":
        raise IntegrationError(f"integration from {x0} stopped: {rec.status}")
    return rec.final


# -- volume preservation --------------------------------------------------------------

@dataclass
class JacobianTrack:
    """Jacobian of the flow map restarted at the identity on every segment."""

    times: np.ndarray
    matrices: np.ndarray
    dets: np.ndarray
    segment: np.ndarray
    labels: list

    def drift_per_segment(self) -> np.ndarray:
        out = []
        for s in range(len(self.labels)):
            out.append(float(np.max(np.abs(self.dets[self.segment == s] - 1.0))))
        return np.array(out)


def track_jacobian(f: FieldHandle, record: TrajectoryRecord, h: float = 1e-6,
                   cfg: IntegratorConfig | None = None) -> JacobianTrack:
    """Integrate ``dJ/dt = grad f(X) J`` along each segment of ``record``.

    Segments are the runs between events; on each one ``J`` starts at the
    identity and the gradient is the finite-difference gradient of that
    piece's formula, so stencils never see the neighbouring piece.
    ``h`` is relative to ``max(1e-3, |X|)``.
    """
    if record.status != "completed":
        raise ValueError("Jacobian tracking needs a completed trajectory")
    cfg = cfg or IntegratorConfig()
    g = ReversedField(f) if record.direction < 0 else f
    dim = record.states.shape[1]

    times, mats, dets, seg_ids, seg_labels = [], [], [], [], []
    for s, (a, b) in enumerate(record.segments()):
        lab = int(record.labels[a])
        seg_labels.append(lab)
        # the segment runs up to the next event point (or the end)
        ta = record.times[a]
        tb = record.times[min(b, len(record.times) - 1)]

        def rhs(y, lab=lab):
            X = y[:dim]
            J = y[dim:].reshape(dim, dim)
            step = h * max(1e-3, float(np.linalg.norm(X)))
            G = gradient_fd(g, X, step, label=None if lab == SMOOTH else lab)
            return np.concatenate([g.velocity_in(lab, X), (G @ J).ravel()])

        y0 = np.concatenate([record.states[a], np.eye(dim).ravel()])
        seg = _AugmentedField(rhs, dim * (dim + 1), f.max_step(lab))
        rec = integrate(seg, y0, (ta, tb), cfg)
        for tt, yy in zip(rec.times, rec.states):
            J = yy[dim:].reshape(dim, dim)
            times.append(tt)
            mats.append(J)
            dets.append(np.linalg.det(J))
            seg_ids.append(s)
    return JacobianTrack(np.array(times), np.array(mats), np.array(dets),
                         np.array(seg_ids), seg_labels)


class _AugmentedField(FieldHandle):
    def __init__(self, rhs, dim, max_step):
        self.rhs = rhs
        self.dim = dim
        self._max = max_step

    def __call__(self, p):
        return self.rhs(p)

    def region(self, p):
        return SMOOTH

    def velocity_in(self, label, p):
        return self.rhs(p)

    def max_step(self, label):
        return self._max
