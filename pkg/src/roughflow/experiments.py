"""Experiment drivers: convergence of flows, non-uniqueness of limits, stability
under mollification, the interleaved (diagonal) sequence and the planar example.

Every driver takes an :class:`ExperimentConfig`, returns a report object with
the tables, fitted slopes and named pass/fail checks, and writes
``report.json``, CSV tables and a gnuplot script when ``cfg.out`` is set.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import __version__
from .engine import IntegratorConfig, integrate, integrate_backward
from .fields import ApproxField, FieldHandle, eval_b_dpl2d, mollify_field
from .flows import (
    breakpoints,
    dpl2d_flows,
    flow_eps_closed,
    flow_eps_inverse,
    flow_eps_piecewise,
    flow_limit,
    flow_limit_inverse,
)
from .geometry import ApproxParams, Region, classify_eps
from .transport import (
    Bump,
    GridField,
    default_datum,
    l1_loc_distance,
    solve_eps,
    solve_exact,
    weak_star_pairing,
)

SCHEMA_VERSION = 1
EXPERIMENTS = ("flow-convergence", "inverse-convergence", "nonuniqueness",
               "mollification", "diagonal-merge", "dpl2d")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Parameters shared by all drivers (each driver reads the fields it needs)."""

    experiment: str = "flow-convergence"
    schema_version: int = SCHEMA_VERSION
    theta: float = math.pi / 2
    phi: float = math.pi
    eps: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    eps_mollify: float = 0.1
    deltas: list = field(default_factory=lambda: [0.05, 0.02, 0.01])
    T: float = 1.0
    n_samples: int = 50
    n_mollify_samples: int = 12
    n_merge_samples: int = 64
    seed: int = 0
    grid_R: float = 2.0
    grid_n: int = 64
    grid_n_coarse: int = 48
    time_points: int = 200
    engine_fraction: float = 0.1
    rtol: float = 1e-11
    atol: float = 1e-12
    event_tol: float = 1e-12
    mollify_rtol: float = 1e-7
    out: str | None = None
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        for name in ("eps", "deltas"):
            seq = [float(v) for v in getattr(self, name)]
            if not seq or any(v <= 0 for v in seq):
                raise ConfigError(f"{name} must be a non-empty list of positive numbers")
            if any(b >= a for a, b in zip(seq, seq[1:])):
                raise ConfigError(f"{name} schedule must be strictly decreasing")
            setattr(self, name, seq)
        for name in ("theta", "phi"):
            v = float(getattr(self, name))
            if not 0.0 < v <= 2.0 * math.pi + 1e-12:
                raise ConfigError(f"{name} must lie in (0, 2 pi] (radians)")
        if self.experiment in ("nonuniqueness", "diagonal-merge") and self.theta == self.phi:
            raise ConfigError("theta and phi must differ")
        if self.T <= 0 or self.grid_R <= 0:
            raise ConfigError("T and grid_R must be positive")
        if min(self.n_samples, self.grid_n, self.grid_n_coarse, self.threads, self.time_points) < 1:
            raise ConfigError("counts must be positive")
        if not 0.0 <= self.engine_fraction <= 1.0:
            raise ConfigError("engine_fraction must lie in [0, 1]")
        try:
            IntegratorConfig(self.rtol, self.atol, event_tol=self.event_tol)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "schema_version" not in data:
            raise ConfigError("config needs a schema_version field")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        """Fields that determine the results (the output directory is left out)."""
        d = dataclasses.asdict(self)
        d.pop("out")
        return d

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(self.rtol, self.atol, event_tol=self.event_tol)

    def manifest_hash(self) -> str:
        blob = json.dumps({"config": self.to_dict(), "version": __version__},
                          sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ConvergenceReport:
    """Errors per parameter value with a log-log fit and named checks."""

    experiment: str
    parameter: str
    values: list
    errors: list
    slope: float
    intercept: float
    checks: dict
    tables: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    manifest: str = ""
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["passed"] = self.passed
        return d


@dataclass
class Report:
    """Report of a driver without a single convergence table."""

    experiment: str
    checks: dict
    tables: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    manifest: str = ""
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["passed"] = self.passed
        return d


# -- helpers ---------------------------------------------------------------------------

def parallel_map(func, items, threads: int = 1) -> list:
    """Ordered map, optionally over a thread pool (results do not depend on ``threads``)."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def loglog_fit(x, y):
    """Slope and intercept of ``log y`` against ``log x``."""
    slope, intercept = np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)
    return float(slope), float(intercept)


def sobol_unit(n: int, dim: int, seed: int) -> np.ndarray:
    """First ``n`` points of a scrambled Sobol sequence."""
    m = max(0, math.ceil(math.log2(max(n, 1))))
    return qmc.Sobol(dim, scramble=True, seed=seed).random_base2(m)[:n]


def paraboloid_samples(n: int, seed: int, z_lo: float, z_hi: float, upper: bool = True,
                       ratio_max: float = 0.9) -> np.ndarray:
    """Starts with ``|z|`` in ``[z_lo, z_hi]`` and ``r^2/|z| <= ratio_max``."""
    u = sobol_unit(n, 3, seed)
    z = z_lo + (z_hi - z_lo) * u[:, 0]
    r = np.sqrt(ratio_max * u[:, 1] * z)
    th = 2.0 * math.pi * u[:, 2]
    return np.stack([r * np.cos(th), r * np.sin(th), z if upper else -z], axis=-1)


def cross_oracle_bound(cfg: IntegratorConfig, scale: float, stretch: float = 1.0) -> float:
    """Allowed engine/closed-form gap: ten times the per-step tolerance at state size ``scale``.

    ``stretch`` accounts for the growth of errors made near the origin: on a
    paraboloid planar offsets scale like ``sqrt(|z|)``, so an error committed
    at ``|z| = eta eps`` is magnified by ``sqrt(|z_max| / (eta eps))``.
    """
    return 10.0 * (cfg.rtol * max(1.0, scale) + cfg.atol) * max(1.0, stretch)


def _time_grid(T, n, window):
    g = np.linspace(0.0, T, n)
    a, b = max(0.0, window[0]), min(T, window[1])
    d = np.linspace(a, b, n) if b > a else np.empty(0)
    return np.unique(np.concatenate([g, d]))


def sup_flow_error(params: ApproxParams, theta: float, P: np.ndarray, T: float, n0: int,
                   inverse: bool = False, max_doublings: int = 7):
    """``sup_t |X_eps - X|`` per start on a time grid refined until the sup changes < 1%.

    Returns the per-start sup of the full, planar and vertical error and the
    number of time points used.
    """
    def evaluate(n):
        full, planar, vert = [], [], []
        for p in P:
            z = abs(p[2])
            bp = breakpoints(params, max(z, params.z_top))
            width = bp.t4 - bp.t1
            ts = _time_grid(T, n, (bp.t1 - width, bp.t4 + 4.0 * width))
            if inverse:
                a = flow_eps_inverse(params, ts, p)
                b = flow_limit_inverse(theta, ts, p)
            else:
                a = flow_eps_piecewise(params, ts, p)
                b = flow_limit(theta, ts, p)
            d = a - b
            full.append(np.max(np.linalg.norm(d, axis=-1)))
            planar.append(np.max(np.linalg.norm(d[:, :2], axis=-1)))
            vert.append(np.max(np.abs(d[:, 2])))
        return np.array(full), np.array(planar), np.array(vert)

    n = n0
    cur = evaluate(n)
    for _ in range(max_doublings):
        n *= 2
        nxt = evaluate(n)
        change = abs(nxt[0].max() - cur[0].max()) / max(nxt[0].max(), 1e-300)
        cur = nxt
        if change < 0.01:
            break
    return cur[0], cur[1], cur[2], n


def engine_cross_check(params: ApproxParams, P: np.ndarray, T: float, cfg: IntegratorConfig,
                       backward: bool = False) -> dict:
    """Worst gap between engine trajectories and both closed forms at the accepted steps."""
    f = ApproxField(params)
    worst, worst_closed, scale = 0.0, 0.0, 1.0
    statuses = []
    for p in P:
        if backward:
            rec = integrate_backward(f, p, (0.0, T), cfg)
            ref = flow_eps_piecewise(params, -rec.times, p)
        else:
            rec = integrate(f, p, (0.0, T), cfg)
            ref = flow_eps_piecewise(params, rec.times, p)
            if classify_eps(params, p) == Region.P_PLUS_EPS:
                closed = flow_eps_closed(params, rec.times, p)
                worst_closed = max(worst_closed, float(np.max(np.abs(closed - ref))))
        statuses.append(rec.status)
        worst = max(worst, float(np.max(np.abs(rec.states - ref))))
        scale = max(scale, float(np.max(np.abs(rec.states))))
    z_max = max(float(np.max(np.abs(P[:, 2]))), scale)
    stretch = math.sqrt(z_max / params.z_top)
    bound = cross_oracle_bound(cfg, scale, stretch)
    return {"n": len(P), "max_gap": worst, "stretch": stretch, "closed_vs_piecewise": worst_closed, "bound": bound,
            "failures": sum(s != "completed" for s in statuses),
            "ok": worst <= bound and worst_closed <= 1e-12 * max(1.0, scale) * 100
            and all(s == "completed" for s in statuses)}


# -- flow convergence --------------------------------------------------------------------

def _flow_convergence(cfg: ExperimentConfig, inverse: bool) -> ConvergenceReport:
    eps = cfg.eps
    p_max = ApproxParams(eps[0], cfg.theta)
    z_lo = p_max.z_top if not inverse else -p_max.z_bottom
    P = paraboloid_samples(cfg.n_samples, cfg.seed, z_lo, 1.0, upper=not inverse)

    def one(e):
        params = ApproxParams(e, cfg.theta)
        full, planar, vert, n = sup_flow_error(params, cfg.theta, P, cfg.T, cfg.time_points,
                                               inverse=inverse)
        long = sup_flow_error(params, cfg.theta, P, 2.0 * cfg.T, cfg.time_points,
                              inverse=inverse)[0]
        return full.max(), planar.max(), vert.max(), long.max(), n

    rows = parallel_map(one, eps, cfg.threads)
    errors = [r[0] for r in rows]
    planar = [r[1] for r in rows]
    vert = [r[2] for r in rows]
    slope, intercept = loglog_fit(eps, errors)
    s_planar = loglog_fit(eps, planar)[0]
    s_vert = loglog_fit(eps, vert)[0]

    n_engine = max(1, math.ceil(cfg.engine_fraction * len(P)))
    icfg = cfg.integrator()
    checks_engine = [engine_cross_check(ApproxParams(e, cfg.theta), P[:n_engine], cfg.T, icfg,
                                        backward=inverse) for e in (eps[0], eps[-1])]
    saturation = max(abs(r[3] - r[0]) / r[0] for r in rows)

    checks = {
        "errors_strictly_decreasing": all(b < a for a, b in zip(errors, errors[1:])),
        "slope_at_least_0.4": slope >= 0.4,
        "engine_cross_check": all(c["ok"] for c in checks_engine),
        "time_doubling_unchanged": saturation <= 0.01,
    }
    if inverse:
        checks["vertical_slope_at_least_0.9"] = s_vert >= 0.9
    report = ConvergenceReport(
        experiment="inverse-convergence" if inverse else "flow-convergence",
        parameter="eps", values=list(eps), errors=[float(e) for e in errors],
        slope=slope, intercept=intercept, checks=checks,
        tables={"errors": {"eps": list(eps), "sup_error": errors, "planar": planar,
                           "vertical": vert, "sup_error_2T": [r[3] for r in rows],
                           "time_points": [r[4] for r in rows]}},
        extra={"slope_planar": s_planar, "slope_vertical": s_vert,
               "slope_in_band_0.4_1.1": 0.4 <= slope <= 1.1,
               "engine": checks_engine, "time_doubling_change": saturation,
               "n_samples": len(P)},
        config=cfg.to_dict(), manifest=cfg.manifest_hash())
    _emit(cfg, report, {"errors.csv": report.tables["errors"]},
          plot=("errors.csv", "eps", "sup_error", True))
    return report


def run_flow_convergence(cfg: ExperimentConfig) -> ConvergenceReport:
    """``sup_t sup_p |X_eps(t, p) - X(t, p)|`` against ``eps`` for starts in ``P+eps``."""
    return _flow_convergence(cfg, inverse=False)


def run_inverse_convergence(cfg: ExperimentConfig) -> ConvergenceReport:
    """Same for the inverse flows, with starts in ``P-eps``."""
    return _flow_convergence(cfg, inverse=True)


# -- non-uniqueness ------------------------------------------------------------------------

PAIRING_BUMPS = (
    Bump((0.0, 0.4, -1.2), 0.5),
    Bump((0.4, 0.0, -1.0), 0.5),
    Bump((-0.3, 0.3, -0.8), 0.5),
)


def _grid(cfg, n, func):
    return GridField.sample(cfg.grid_R, n, [cfg.T], func)


def nonuniqueness_tables(cfg: ExperimentConfig) -> dict:
    u0 = default_datum()
    T = cfg.T
    out = {"D": {}, "d_theta": [], "d_phi": [], "pair_theta": [], "pair_phi": []}
    exact = {}
    for n in (cfg.grid_n_coarse, cfg.grid_n):
        gt = _grid(cfg, n, lambda t, p: solve_exact(cfg.theta, u0, t, p))
        gp = _grid(cfg, n, lambda t, p: solve_exact(cfg.phi, u0, t, p))
        exact[n] = (gt, gp)
        out["D"][n] = l1_loc_distance(gt, gp)
    gt, gp = exact[cfg.grid_n]
    out["pair_exact_theta"] = [weak_star_pairing(gt, b) for b in PAIRING_BUMPS]
    out["pair_exact_phi"] = [weak_star_pairing(gp, b) for b in PAIRING_BUMPS]

    def one(e):
        get = _grid(cfg, cfg.grid_n, lambda t, p: solve_eps(ApproxParams(e, cfg.theta), u0, t, p))
        gep = _grid(cfg, cfg.grid_n, lambda t, p: solve_eps(ApproxParams(e, cfg.phi), u0, t, p))
        return (l1_loc_distance(get, gt), l1_loc_distance(gep, gp),
                [weak_star_pairing(get, b) for b in PAIRING_BUMPS],
                [weak_star_pairing(gep, b) for b in PAIRING_BUMPS])

    for dt_, dp_, pt_, pp_ in parallel_map(one, cfg.eps, cfg.threads):
        out["d_theta"].append(dt_)
        out["d_phi"].append(dp_)
        out["pair_theta"].append(pt_)
        out["pair_phi"].append(pp_)
    return out


def _engine_solution_check(cfg, n_points=8):
    """Closed-form against engine inverse flows at a few grid-free points (finest eps)."""
    u0 = default_datum()
    rng = np.random.default_rng(cfg.seed)
    P = paraboloid_samples(n_points, cfg.seed + 1, 0.3, 1.5, upper=False)
    P = P[rng.permutation(len(P))]
    icfg = cfg.integrator()
    params = ApproxParams(cfg.eps[-1], cfg.theta)
    a = solve_eps(params, u0, cfg.T, P, icfg, method="engine")
    b = solve_eps(params, u0, cfg.T, P)
    gap = float(np.max(np.abs(a - b)))
    return gap, u0.lip * cross_oracle_bound(icfg, 2.0 * cfg.grid_R)


def run_nonuniqueness(cfg: ExperimentConfig) -> Report:
    """L1 distances between approximate and exact transported data for two angles."""
    tab = nonuniqueness_tables(cfg)
    D_fine, D_coarse = tab["D"][cfg.grid_n], tab["D"][cfg.grid_n_coarse]
    d1, d2 = tab["d_theta"], tab["d_phi"]
    shrink1 = [a / b for a, b in zip(d1, d1[1:])]
    shrink2 = [a / b for a, b in zip(d2, d2[1:])]
    ratios = [e0 / e1 for e0, e1 in zip(cfg.eps, cfg.eps[1:])]
    # shrink factor per halving of eps
    per_half1 = [s ** (math.log(2) / math.log(r)) for s, r in zip(shrink1, ratios)]
    per_half2 = [s ** (math.log(2) / math.log(r)) for s, r in zip(shrink2, ratios)]
    pair_err_t = [float(np.max(np.abs(np.subtract(p, tab["pair_exact_theta"])))) for p in tab["pair_theta"]]
    pair_err_p = [float(np.max(np.abs(np.subtract(p, tab["pair_exact_phi"])))) for p in tab["pair_phi"]]
    gap, bound = _engine_solution_check(cfg)
    refinement_change = abs(D_fine - D_coarse) / D_fine
    checks = {
        "d_theta_shrinks_1.3x_per_halving": all(s >= 1.3 for s in per_half1),
        "d_phi_shrinks_1.3x_per_halving": all(s >= 1.3 for s in per_half2),
        "D_exceeds_10x_finest_d": D_fine > 10.0 * max(d1[-1], d2[-1]),
        "D_grid_change_at_most_5pct": refinement_change <= 0.05,
        "engine_cross_check": gap <= bound,
    }
    report = Report(
        experiment="nonuniqueness", checks=checks,
        tables={"distances": {"eps": cfg.eps, "d_theta": d1, "d_phi": d2,
                              "pairing_error_theta": pair_err_t, "pairing_error_phi": pair_err_p}},
        extra={"D": D_fine, "D_coarse": D_coarse, "grid_n": cfg.grid_n,
               "grid_n_coarse": cfg.grid_n_coarse, "D_refinement_change": refinement_change,
               "shrink_per_halving_theta": per_half1, "shrink_per_halving_phi": per_half2,
               "weak_star_evidence": {
                   "bumps": [dataclasses.asdict(b) for b in PAIRING_BUMPS],
                   "exact_theta": tab["pair_exact_theta"], "exact_phi": tab["pair_exact_phi"],
                   "monotone_theta": all(b < a for a, b in zip(pair_err_t, pair_err_t[1:])),
                   "monotone_phi": all(b < a for a, b in zip(pair_err_p, pair_err_p[1:])),
               },
               "engine_gap": gap, "engine_bound": bound},
        config=cfg.to_dict(), manifest=cfg.manifest_hash())
    _emit(cfg, report, {"distances.csv": report.tables["distances"]},
          plot=("distances.csv", "eps", "d_theta", True))
    return report


# -- mollification ------------------------------------------------------------------------------

def mollification_errors(cfg: ExperimentConfig, deltas=None, P=None, theta=None, eps=None):
    """Mean over starts of ``sup_t |X_delta - X|`` on the accepted steps of the mollified run."""
    theta = cfg.theta if theta is None else theta
    eps = cfg.eps_mollify if eps is None else eps
    deltas = cfg.deltas if deltas is None else deltas
    params = ApproxParams(eps, theta)
    base = ApproxField(params)
    if P is None:
        P = mollify_starts(cfg, params)
    icfg = IntegratorConfig(cfg.mollify_rtol, max(cfg.atol, 1e-10), event_tol=cfg.event_tol)

    def one(delta):
        f = mollify_field(base, delta)
        errs = []
        for p in P:
            rec = integrate(f, p, (0.0, cfg.T), icfg)
            ref = flow_eps_piecewise(params, rec.times, p)
            errs.append(float(np.max(np.linalg.norm(rec.states - ref, axis=-1))))
        return float(np.mean(errs)), float(np.max(errs))

    return parallel_map(one, deltas, cfg.threads)


def mollify_starts(cfg, params):
    z_hi = min(1.0, 2.0 * math.sqrt(cfg.T) * 0.9)
    return paraboloid_samples(cfg.n_mollify_samples, cfg.seed, max(params.z_top, 0.3), z_hi)


def run_mollification_stability(cfg: ExperimentConfig) -> ConvergenceReport:
    """Engine flows of the mollified field against the flow of the approximating field."""
    params = ApproxParams(cfg.eps_mollify, cfg.theta)
    rows = mollification_errors(cfg)
    mean_err = [r[0] for r in rows]
    slope, intercept = loglog_fit(cfg.deltas, mean_err)

    # delta = 0 takes the unmollified path
    base = ApproxField(params)
    icfg = cfg.integrator()
    p0 = mollify_starts(cfg, params)[0]
    same = mollify_field(base, 0.0) is base
    r1 = integrate(mollify_field(base, 0.0), p0, (0.0, cfg.T), icfg)
    r2 = integrate(base, p0, (0.0, cfg.T), icfg)
    identical = same and np.array_equal(r1.states, r2.states)

    # exterior starts farther than delta from the approximation do not move
    ext = np.array([[1.5, 0.0, 0.3], [0.0, -1.2, -0.4], [0.9, 0.9, 0.1]])
    f = mollify_field(base, cfg.deltas[0])
    ext_move = max(float(np.max(np.abs(integrate(f, q, (0.0, cfg.T), icfg).final - q)))
                   for q in ext)
    checks = {
        "errors_decreasing": all(b < a for a, b in zip(mean_err, mean_err[1:])),
        "delta_zero_identical": bool(identical),
        "exterior_unaffected": ext_move <= 1e-12,
    }
    report = ConvergenceReport(
        experiment="mollification", parameter="delta", values=list(cfg.deltas),
        errors=mean_err, slope=slope, intercept=intercept, checks=checks,
        tables={"errors": {"delta": list(cfg.deltas), "mean_sup_error": mean_err,
                           "max_sup_error": [r[1] for r in rows]}},
        extra={"eps": cfg.eps_mollify, "exterior_displacement": ext_move,
               "n_samples": cfg.n_mollify_samples},
        config=cfg.to_dict(), manifest=cfg.manifest_hash())
    _emit(cfg, report, {"errors.csv": report.tables["errors"]},
          plot=("errors.csv", "delta", "mean_sup_error", True))
    return report


# -- diagonal merge -------------------------------------------------------------------------------

def _mollified_solution_gap(cfg, theta, eps, delta, P, weights):
    """Monte-Carlo ``int_B |u0(X_delta^{-1}) - u0(X^{-1})|`` at time ``T``."""
    u0 = default_datum()
    params = ApproxParams(eps, theta)
    base = ApproxField(params)
    f = mollify_field(base, delta)
    icfg = IntegratorConfig(cfg.mollify_rtol, max(cfg.atol, 1e-10), event_tol=cfg.event_tol)
    vals = np.zeros(len(P))
    for i, p in enumerate(P):
        if weights[i] == 0.0:
            continue
        rec = integrate_backward(f, p, (0.0, cfg.T), icfg, record_steps=False)
        vals[i] = abs(u0(rec.final) - u0(flow_eps_inverse(params, cfg.T, p)))
    return float(np.sum(vals * weights))


def _ball_mc(cfg, n):
    """Sobol points in the ball with equal weights summing to its volume."""
    R = cfg.grid_R
    u = sobol_unit(4 * n, 3, cfg.seed + 7) * 2.0 * R - R
    u = u[np.sum(u * u, axis=1) <= R * R][:n]
    return u, np.full(len(u), 4.0 / 3.0 * math.pi * R**3 / len(u))


def run_diagonal_merge(cfg: ExperimentConfig, nonuniq: Report | None = None) -> Report:
    """Interleave mollified approximations for the two angles and certify both limits.

    Term ``n`` uses ``theta`` for even and ``phi`` for odd ``n``, with
    ``eps = cfg.eps[n // 2]`` and ``delta = eps / 4``.  Its distance to the
    corresponding exact solution is bounded by the grid distance of the
    unmollified approximation plus a Monte-Carlo estimate of the effect of the
    mollification; consecutive terms are then at least
    ``D - d_n - d_{n+1}`` apart.
    """
    if nonuniq is None:
        nonuniq = run_nonuniqueness(dataclasses.replace(cfg, experiment="nonuniqueness", out=None))
    D = nonuniq.extra["D"]
    tab = nonuniq.tables["distances"]
    P, w = _ball_mc(cfg, cfg.n_merge_samples)
    seq = []
    for i, e in enumerate(cfg.eps):
        for angle, key in ((cfg.theta, "d_theta"), (cfg.phi, "d_phi")):
            seq.append((angle, e, e / 4.0, tab[key][i]))

    # only starts whose backward path can feel the field need integrating
    def needs(p, e):
        r2 = p[0] ** 2 + p[1] ** 2
        return r2 <= abs(p[2]) + 2.0 * e or abs(p[2]) <= 2.0 * e

    def one(item):
        angle, e, delta, d_eps = item
        mask = np.array([needs(p, e) for p in P], dtype=float)
        m = _mollified_solution_gap(cfg, angle, e, delta, P, w * mask)
        return d_eps + m, m

    rows = parallel_map(one, seq, cfg.threads)
    d_n = [r[0] for r in rows]
    lower = [D - a - b for a, b in zip(d_n, d_n[1:])]
    even, odd = d_n[0::2], d_n[1::2]
    checks = {
        "even_errors_decreasing": all(b < a for a, b in zip(even, even[1:])),
        "odd_errors_decreasing": all(b < a for a, b in zip(odd, odd[1:])),
        "consecutive_gap_at_least_D_over_2": all(g >= D / 2.0 for g in lower[2:]),
    }
    table = {
        "n": list(range(len(seq))),
        "angle": [s[0] for s in seq], "eps": [s[1] for s in seq], "delta": [s[2] for s in seq],
        "d_eps": [s[3] for s in seq], "mollification_term": [r[1] for r in rows],
        "d_n": d_n, "gap_lower_bound": lower + [float("nan")],
    }
    report = Report(
        experiment="diagonal-merge", checks=checks, tables={"sequence": table},
        extra={"D": D, "D_over_2": D / 2.0, "n_mc": len(P),
               "nonuniqueness_manifest": nonuniq.manifest},
        config=cfg.to_dict(), manifest=cfg.manifest_hash())
    _emit(cfg, report, {"sequence.csv": table}, plot=("sequence.csv", "n", "d_n", False))
    return report


# -- planar example ---------------------------------------------------------------------------------

def run_dpl2d_demo(cfg: ExperimentConfig) -> Report:
    """The two planar flows: equal up to the origin, mirror images afterwards."""
    u = sobol_unit(cfg.n_samples, 2, cfg.seed)
    y = 0.5 + u[:, 0]
    x = y * (0.05 + 0.9 * u[:, 1])
    P = np.stack([x, y], axis=-1)
    before, after, resid = 0.0, True, 0.0
    rows = []
    h = 1e-6
    for p in P:
        tc = p[1] ** 2 / 2.0
        ts = np.linspace(0.0, 2.0 * tc, 41)
        X, Xt = dpl2d_flows(ts, p)
        pre = ts <= tc
        before = max(before, float(np.max(np.abs(X[pre] - Xt[pre]))))
        post = ts > tc
        after = after and bool(np.all(X[post, 0] * Xt[post, 0] < 0))
        # ODE residual away from the crossing time
        for t in ts:
            if abs(t - tc) < 0.05 or t < h:
                continue
            for k in (0, 1):
                a = dpl2d_flows(t + h, p)[k]
                b = dpl2d_flows(t - h, p)[k]
                c = dpl2d_flows(t, p)[k]
                resid = max(resid, float(np.max(np.abs((a - b) / (2 * h) - eval_b_dpl2d(c)))))
        for t, a, b in zip(ts, X, Xt):
            rows.append((float(p[0]), float(p[1]), float(t), *map(float, a), *map(float, b)))
    checks = {
        "coincide_before_crossing": before <= 1e-12,
        "first_components_opposite_after": after,
        "ode_residual_at_most_1e-6": resid <= 1e-6,
    }
    cols = ["x0", "y0", "t", "X1", "X2", "Xt1", "Xt2"]
    table = {c: [r[i] for r in rows] for i, c in enumerate(cols)}
    report = Report(experiment="dpl2d", checks=checks, tables={"trajectories": table},
                    extra={"max_gap_before": before, "max_residual": resid, "n_starts": len(P)},
                    config=cfg.to_dict(), manifest=cfg.manifest_hash())
    _emit(cfg, report, {"trajectories.csv": table}, plot=None)
    return report


RUNNERS = {
    "flow-convergence": run_flow_convergence,
    "inverse-convergence": run_inverse_convergence,
    "nonuniqueness": run_nonuniqueness,
    "mollification": run_mollification_stability,
    "diagonal-merge": run_diagonal_merge,
    "dpl2d": run_dpl2d_demo,
}


def run_experiment(cfg: ExperimentConfig):
    return RUNNERS[cfg.experiment](cfg)


# -- output ---------------------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_table(path, table: dict) -> None:
    cols = list(table)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for row in zip(*(table[c] for c in cols)):
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_report(out_dir, report, tables: dict, plot=None) -> None:
    """``report.json``, one CSV per table and an optional gnuplot script."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(_jsonable(report.to_dict()), fh, indent=2, sort_keys=True)
    for name, table in tables.items():
        write_table(os.path.join(out_dir, name), table)
    if plot is not None:
        csv_name, xcol, ycol, logscale = plot
        cols = list(tables[csv_name])
        ix, iy = cols.index(xcol) + 1, cols.index(ycol) + 1
        with open(os.path.join(out_dir, "plot.gp"), "w") as fh:
            fh.write("set datafile separator ','\n")
            if logscale:
                fh.write("set logscale xy\n")
            fh.write(f"set xlabel '{xcol}'\nset ylabel '{ycol}'\n")
            fh.write(f"plot '{csv_name}' every ::1 using {ix}:{iy} with linespoints title '{ycol}'\n")


def _emit(cfg, report, tables, plot):
    if cfg.out:
        write_report(cfg.out, report, tables, plot)
