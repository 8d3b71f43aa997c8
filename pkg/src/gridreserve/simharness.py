"""Monte-Carlo validation of reserve schedules against sampled events, and the Pareto sweep.

Validation is quasi-static: each scenario picks one step, realizes the events
its mode hedges against, turns them into a supply-demand imbalance, and
deploys reserves proportionally.  Whatever the pool cannot cover is the
scenario's violation.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dispatch import DispatchSolution
from .dro import SampleSet, build_ambiguity_set, solve_dro
from .errors import DomainError, GridReserveError, ValidationError
from .events import MODE_EVENT_KINDS, MODES, EventModel, ModeSchedule
from .netmodel import GridCase
from .robust import Dimension, DisturbanceSpec, ReserveSchedule, proportional_dispatch, solve_robust
from .stochastic import GaussianModel, estimate_var_cvar, norm_ppf, solve_chance, solve_cvar

DEFAULT_N = 20_000
VIOLATION_TOL = 1e-6
METHODS = ("robust", "chance", "dro", "cvar")


def scenario_rng(seed: int, i: int) -> np.random.Generator:
    """Counter-based stream for scenario ``i``; independent of evaluation order."""
    if seed < 0 or i < 0:
        raise DomainError("seed and scenario index must be nonnegative")
    return np.random.Generator(np.random.Philox(key=np.array([seed, i], dtype=np.uint64)))


@dataclass(frozen=True)
class Scenario:
    id: int
    step: int
    mode: str
    imbalance: float
    pool: float
    violation: float


@dataclass
class ValidationReport:
    scenarios: list[Scenario]
    seed: int
    rho: float
    tol: float = VIOLATION_TOL
    var_value: float | None = None
    cvar_value: float | None = None

    @property
    def n(self) -> int:
        return len(self.scenarios)

    @property
    def violations(self) -> np.ndarray:
        return np.array([s.violation for s in self.scenarios])

    @property
    def count(self) -> int:
        return int(np.sum(self.violations > self.tol))

    @property
    def probability(self) -> float:
        return self.count / self.n if self.n else 0.0

    @property
    def passed(self) -> bool:
        return self.probability <= self.rho

    def to_dict(self) -> dict:
        v = self.violations
        modes = {m: sum(s.mode == m for s in self.scenarios) for m in MODES}
        return {
            "n": self.n,
            "seed": self.seed,
            "rho": self.rho,
            "tolerance": self.tol,
            "violation_count": self.count,
            "violation_probability": self.probability,
            "var": self.var_value,
            "cvar": self.cvar_value,
            "mean_violation": float(v.mean()) if v.size else 0.0,
            "max_violation": float(v.max()) if v.size else 0.0,
            "passed": self.passed,
            "mode_counts": modes,
            "scenarios": [
                {"id": s.id, "step": s.step, "mode": s.mode, "imbalance_pu": s.imbalance,
                 "pool_pu": s.pool, "violation_pu": s.violation}
                for s in self.scenarios
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("scenario_id", "mode", "violation_pu"))
        for s in self.scenarios:
            w.writerow((s.id, s.mode, repr(s.violation)))
        return buf.getvalue()


class _Evaluator:
    """Everything one scenario needs, precomputed once and shared read-only."""

    def __init__(self, case, solution, reserves, catalog, schedule):
        self.case, self.catalog = case, catalog
        self.schedule = schedule or catalog.schedule()
        if self.schedule.windows[-1][1] < case.K:
            raise ValidationError("mode schedule does not cover the horizon")
        self.p = {d: solution.series[d]["p"] for d in solution.series}
        self.reserves = reserves
        self.lower = reserves.lower
        active = []
        for w, mode in enumerate(self.schedule.modes):
            subset = self.schedule.events[w] if self.schedule.events else None
            active.append(tuple(
                i for i, ev in enumerate(catalog.events)
                if ev.kind in MODE_EVENT_KINDS[mode] and (subset is None or ev.id in subset)
            ))
        self.active = active

    def __call__(self, seed: int, i: int) -> Scenario:
        rng = scenario_rng(seed, i)
        k = int(rng.integers(self.case.K))
        win = self.schedule.window_index(k)
        res = self.reserves
        up = {d: float(res.up[d][k]) for d in res.devices}
        dn = {d: float(res.down[d][k]) for d in res.devices}
        deficit = 0.0
        for e_idx in self.active[win]:
            ev = self.catalog.events[e_idx]
            probs = self.catalog.prob(win, e_idx)
            hit = rng.random(len(ev.locations)) < probs
            x = np.atleast_1d(ev.distribution.sample(rng, len(ev.locations)))
            for loc, occurs, mag in zip(ev.locations, hit, x):
                if occurs:
                    deficit += self._effect(ev.kind, loc, float(mag), k, up, dn)
        need_up = deficit >= 0
        act = proportional_dispatch(res, deficit, k, available=up if need_up else dn)
        viol = max(0.0, abs(deficit) - act.pool)
        return Scenario(i, k, self.schedule.modes[win], deficit, act.pool, viol)

    def _effect(self, kind, loc, x, k, up, dn) -> float:
        P = float(self.p[loc][k])
        if kind == "load_forecast_err":
            return x
        if kind == "pv_forecast_err":
            return -x
        if kind in ("load_cyber", "dg_cyber"):
            return -x * P
        if kind == "pv_cyber":
            return x * P
        if kind == "weather_load_loss":
            return x * P
        if kind == "weather_pv_loss":
            return -x * P
        # trips scale the unit's capacity by (1 + x)
        cap = (1.0 + x) * self.case.device(loc).smax_pu
        kept = min(P, cap)
        if loc in up:
            up[loc] = max(0.0, min(up[loc], cap - kept))
            dn[loc] = max(0.0, min(dn[loc], kept - float(self.lower[loc][k])))
        return P - kept


def validate(case: GridCase, solution: DispatchSolution, reserves: ReserveSchedule,
             catalog: EventModel, schedule: ModeSchedule | None = None, N: int = DEFAULT_N,
             seed: int = 0, *, rho: float = 0.05, threads: int = 1,
             tol: float = VIOLATION_TOL) -> ValidationReport:
    """Sample ``N`` scenarios and report the shortfall left after proportional deployment."""
    if N < 1:
        raise DomainError("N must be at least 1")
    ev = _Evaluator(case, solution, reserves, catalog, schedule)
    threads = max(1, int(threads))
    if threads == 1:
        scen = [ev(seed, i) for i in range(N)]
    else:
        chunks = np.array_split(np.arange(N), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda idx: [ev(seed, int(i)) for i in idx], chunks))
        scen = [s for part in parts for s in part]  # gathered in index order
    report = ValidationReport(scen, seed, rho, tol)
    if N >= math.ceil(1.0 / rho - 1e-12):
        risk = estimate_var_cvar(report.violations, rho)
        report.var_value, report.cvar_value = risk.var_value, risk.cvar_value
    return report


# ---------------------------------------------------------------- catalog bridges

_FORECAST = {"load_forecast_err": ("load_forecast_add", 1.0),
             "pv_forecast_err": ("pv_forecast_add", -1.0)}


def _forecast_terms(catalog: EventModel):
    """``(event, location)`` pairs of always-on Gaussian forecast errors."""
    out = []
    for e_idx, ev in enumerate(catalog.events):
        if ev.kind not in _FORECAST or ev.distribution.family != "gaussian":
            continue
        for j, loc in enumerate(ev.locations):
            if all(catalog.prob(w, e_idx)[j] == 1.0 for w in range(len(catalog.windows))):
                out.append((ev, loc))
    if not out:
        raise ValidationError("catalog has no always-on gaussian forecast errors")
    return out


def gaussian_from_catalog(catalog: EventModel) -> GaussianModel:
    """Independent Gaussian model of the forecast-error events, aggregated into one balance row."""
    terms = _forecast_terms(catalog)
    mean = np.array([ev.distribution.params["mean"] for ev, _ in terms], dtype=float)
    std = np.array([ev.distribution.params["std"] for ev, _ in terms], dtype=float)
    row = np.array([_FORECAST[ev.kind][1] for ev, _ in terms])
    return GaussianModel(mean, np.diag(std ** 2), (("balance", row),), tuple(l for _, l in terms))


def mapping_from_catalog(catalog: EventModel, case: GridCase, z: float = 6.0) -> DisturbanceSpec:
    """Disturbance dimensions for the forecast errors, box ``mean +/- z std`` over the horizon."""
    dims = []
    for ev, loc in _forecast_terms(catalog):
        mu, sd = ev.distribution.params["mean"], ev.distribution.params["std"]
        dims.append(Dimension(loc, _FORECAST[ev.kind][0], min(mu - z * sd, 0.0),
                              max(mu + z * sd, 0.0), (0, case.K - 1)))
    spec = DisturbanceSpec(tuple(dims))
    spec.validate(case)
    return spec


def deficit_row(spec: DisturbanceSpec) -> np.ndarray:
    """Aggregate-deficit weights of each disturbance dimension."""
    return np.array([-1.0 if d.channel == "pv_forecast_add" else 1.0 for d in spec.dims])


def draw_history(catalog: EventModel, n: int, seed: int) -> SampleSet:
    """``n`` historical forecast-error vectors drawn from the catalog.

    Columns are in injection-channel units, so :func:`deficit_row` maps them to imbalance.
    """
    terms = _forecast_terms(catalog)
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 2**63], dtype=np.uint64)))
    cols = [ev.distribution.sample(rng, n) for ev, _ in terms]
    return SampleSet(np.column_stack(cols), tuple(loc for _, loc in terms))


# ---------------------------------------------------------------- Pareto sweep

@dataclass
class ParetoPoint:
    rho: float
    cost: float
    resilience: float
    total_reserves: float
    seed: int
    error: str | None = None
    report: ValidationReport | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        def num(v):
            return None if math.isnan(v) else v
        return {"rho": self.rho, "cost": num(self.cost), "resilience": num(self.resilience),
                "total_reserves_pu": num(self.total_reserves), "seed": self.seed,
                "error": self.error}


def solve_method(case: GridCase, method: str, rho: float, *, gaussian: GaussianModel | None = None,
                 samples: SampleSet | None = None, mapping: DisturbanceSpec | None = None,
                 model: str = "linear"):
    """One reserve co-optimization by ``method`` at risk level ``rho``."""
    if method == "chance":
        return solve_chance(case, gaussian, rho, model)
    if method == "cvar":
        return solve_cvar(case, samples.samples, deficit_row(mapping), rho, model)
    if method == "dro":
        return solve_dro(case, build_ambiguity_set(samples, rho), mapping, model)
    if method == "robust":
        z = norm_ppf(1.0 - rho / 2)
        sd = np.sqrt(np.diag(gaussian.cov))
        dims = []
        for d, mu, s in zip(mapping.dims, gaussian.mean, sd):
            dims.append(Dimension(d.target, d.channel, min(mu - z * s, 0.0), max(mu + z * s, 0.0),
                                  d.steps))
        return solve_robust(case, DisturbanceSpec(tuple(dims)), model)
    raise DomainError(f"unknown method {method!r}; expected one of {METHODS}")


def pareto_sweep(case: GridCase, method: str, grid, N: int, seed: int, catalog: EventModel, *,
                 schedule: ModeSchedule | None = None, gaussian: GaussianModel | None = None,
                 samples: SampleSet | None = None, mapping: DisturbanceSpec | None = None,
                 model: str = "linear", threads: int = 1) -> list[ParetoPoint]:
    """Solve and validate at every ``rho`` in ``grid``; failed points are recorded, not raised."""
    grid = [float(r) for r in grid]
    if not grid:
        raise DomainError("grid must be nonempty")
    if grid != sorted(grid):
        raise DomainError("grid must be sorted")
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; expected one of {METHODS}")
    if method in ("chance", "robust") and gaussian is None:
        gaussian = gaussian_from_catalog(catalog)
    if method in ("dro", "cvar", "robust") and mapping is None:
        mapping = mapping_from_catalog(catalog, case)
    if method in ("dro", "cvar") and samples is None:
        samples = draw_history(catalog, 300, seed)
    points = []
    for rho in grid:
        try:
            sol, sched = solve_method(case, method, rho, gaussian=gaussian, samples=samples,
                                      mapping=mapping, model=model)
            rep = validate(case, sol, sched, catalog, schedule, N, seed, rho=rho, threads=threads)
            points.append(ParetoPoint(rho, float(sol.objective), 1.0 - rep.probability,
                                      sched.total(), seed, report=rep))
        except GridReserveError as exc:
            points.append(ParetoPoint(rho, math.nan, math.nan, math.nan, seed,
                                      f"{type(exc).__name__}: {exc}"))
    return points


def pareto_csv(points: list[ParetoPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("rho", "cost", "resilience", "total_reserves_pu", "seed"))
    for p in points:
        w.writerow((repr(p.rho), repr(p.cost), repr(p.resilience), repr(p.total_reserves), p.seed))
    return buf.getvalue()


def pareto_json(points: list[ParetoPoint], method: str) -> str:
    return json.dumps({"method": method, "points": [p.to_dict() for p in points]}, indent=1) + "\n"
