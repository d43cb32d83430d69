"""Verification suites: divergence, tangency, conserved ratio and volume preservation."""
from __future__ import annotations

import math

import numpy as np

from .engine import IntegratorConfig, integrate, track_jacobian
from .fields import (
    ApproxField,
    LimitField,
    StencilError,
    divergence_fd,
    gradient_fd,
    normal_flux,
    rotation_field,
)
from .flows import conserved_ratio, flow_limit
from .geometry import EPS_STACK, SURFACES, ApproxParams, Region, sample_region

SUITES = ("divergence", "tangency", "conserved", "volume")

_SURFACE_REGION = dict(zip(SURFACES, EPS_STACK))


def _result(name, passed, **metrics):
    return {"suite": name, "passed": bool(passed), **metrics}


def verify_divergence(params: ApproxParams, n: int = 1000, seed: int = 0, tol: float = 1e-6) -> dict:
    """Median of ``|div| / max(1, |grad b|)`` over interior points of each piece."""
    f = ApproxField(params)
    rng = np.random.default_rng(seed)
    per_region, skipped = {}, 0
    for region in EPS_STACK:
        vals = []
        for q in sample_region(params, region, n, rng, margin=0.05):
            h = 1e-5 * max(params.eps, abs(q[2]))
            try:
                div = divergence_fd(f, q, h)
            except StencilError:
                skipped += 1
                continue
            scale = float(np.linalg.norm(gradient_fd(f, q, h, label=region)))
            vals.append(abs(div) / max(1.0, scale))
        per_region[region.tag] = {"median": float(np.median(vals)), "max": float(np.max(vals)),
                                  "n": len(vals)}
    ext = np.array([[2.0, 0.0, 0.5], [0.0, 3.0, -1.0], [1.5, 1.5, 0.01]])
    ext_div = [divergence_fd(f, q, 1e-5) for q in ext]
    ok = all(v["median"] <= tol for v in per_region.values()) and all(d == 0.0 for d in ext_div)
    return _result("divergence", ok, regions=per_region, exterior=ext_div, skipped=skipped, tol=tol)


def verify_tangency(params: ApproxParams, n: int = 100, seed: int = 0, tol: float = 1e-8) -> dict:
    """``|b . n|`` on the lateral surfaces of every piece and of the limit paraboloids."""
    f = ApproxField(params)
    rng = np.random.default_rng(seed)
    out = {}
    for surf, region in _SURFACE_REGION.items():
        pts = sample_region(params, region, n, rng, on_boundary=True)
        out[surf] = float(max(abs(normal_flux(f, surf, q)) for q in pts))
    lim = LimitField()
    for surf, sign in (("P+", 1.0), ("P-", -1.0)):
        z = rng.uniform(0.01, 1.0, n)
        th = rng.uniform(0.0, 2 * math.pi, n)
        r = np.sqrt(z)
        pts = np.stack([r * np.cos(th), r * np.sin(th), sign * z], axis=-1)
        out["limit " + surf] = float(max(abs(normal_flux(lim, surf, q)) for q in pts))
    return _result("tangency", all(v <= tol for v in out.values()), max_flux=out, tol=tol)


def verify_conserved(params: ApproxParams, n: int = 20, seed: int = 0, tol_closed: float = 1e-12,
                     tol_engine: float = 1e-6, cfg: IntegratorConfig | None = None) -> dict:
    """Drift of ``r^2/|z|`` along closed-form limit flows and along engine runs in ``P+-eps``."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(0.2, 1.0, n)
    c = rng.uniform(0.0, 0.9, n)
    th = rng.uniform(0.0, 2 * math.pi, n)
    r = np.sqrt(c * z)
    P = np.stack([r * np.cos(th), r * np.sin(th), z], axis=-1)
    P[n // 2:, 2] *= -1.0
    ts = np.linspace(0.0, 1.0, 51)
    closed = 0.0
    for p in P:
        X = flow_limit(params.theta, ts, p)
        keep = X[:, 2] != 0.0
        closed = max(closed, float(np.max(np.abs(conserved_ratio(X[keep]) - conserved_ratio(p)))))

    f = ApproxField(params)
    cfg = cfg or IntegratorConfig()
    engine = 0.0
    for p in P[: max(1, n // 2)]:
        rec = integrate(f, p, (0.0, 1.0), cfg)
        for lab in (Region.P_PLUS_EPS, Region.P_MINUS_EPS):
            m = rec.labels == int(lab)
            if np.count_nonzero(m) < 2:
                continue
            ratio = conserved_ratio(rec.states[m])
            engine = max(engine, float(np.max(np.abs(ratio - ratio[0]))))
    ok = closed <= tol_closed and engine <= tol_engine
    return _result("conserved", ok, closed_form_drift=closed, engine_drift=engine,
                   tol_closed=tol_closed, tol_engine=tol_engine)


def verify_volume(params: ApproxParams, n: int = 5, seed: int = 0, tol: float = 1e-4,
                  tol_rotation: float = 1e-10, cfg: IntegratorConfig | None = None) -> dict:
    """Per-segment Jacobian determinant drift along trajectories through all five pieces."""
    rng = np.random.default_rng(seed)
    f = ApproxField(params)
    cfg = cfg or IntegratorConfig()
    starts = sample_region(params, Region.P_PLUS_EPS, n, rng, z_max=0.8, margin=0.1)
    drift = 0.0
    seen = set()
    for p in starts:
        rec = integrate(f, p, (0.0, 0.5), cfg)
        seen.update(int(v) for v in rec.labels)
        jt = track_jacobian(f, rec, cfg=cfg)
        drift = max(drift, float(np.max(jt.drift_per_segment())))
    # one full turn of a rigid rotation at the cylinder's angular scale
    rot = rotation_field(1.0 / params.eps**2)
    tight = IntegratorConfig(rtol=1e-12, atol=1e-14, event_tol=1e-14)
    rec = integrate(rot, [0.3, 0.1, 0.2], (0.0, 2 * math.pi * params.eps**2), tight)
    rot_drift = float(np.max(track_jacobian(rot, rec, cfg=tight).drift_per_segment()))
    ok = drift <= tol and rot_drift <= tol_rotation and len(seen) == 5
    return _result("volume", ok, det_drift=drift, rotation_det_drift=rot_drift,
                   regions_visited=len(seen), tol=tol, tol_rotation=tol_rotation)


def run_suite(name: str, params: ApproxParams, seed: int = 0) -> list:
    if name == "all":
        names = SUITES
    elif name in SUITES:
        names = (name,)
    else:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
    funcs = {"divergence": verify_divergence, "tangency": verify_tangency,
             "conserved": verify_conserved, "volume": verify_volume}
    return [funcs[s](params, seed=seed) for s in names]
