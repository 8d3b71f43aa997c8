"""Robust reserve co-optimization and post-hoc resilience verification.

Second-stage (recourse) rules shared by the optimizer and every verifier:

* DGs and storage move inside ``[P - R-, P + R+]``.  At a step where a device's
  capacity is scaled below one, the lower band is dropped so a trip can pull
  the output down to zero.
* PV and load curtailment are held at their baseline values, so PV output
  follows its availability and served load follows demand.
* Each recourse block carries its own network copy and SoC trajectory.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import conic
from .conic import ConicProgram, SolveReport
from .dispatch import (
    DispatchSolution, ScenarioData, breakdown_values, build_baseline, build_network,
    device_limits, extract_series, objective_baseline,
)
from .errors import (
    BisectionNotConverged, DegenerateActiveSet, InfeasibleRobust, NoFeasibleGain,
    ParseError, ValidationError, VertexBudgetExceeded,
)
from .netmodel import GridCase

CHANNELS = ("capacity_scale", "pv_forecast_add", "load_forecast_add")
RESERVE_KINDS = ("dg", "storage")
MAX_DIMS = 12
BISECT_TOL = 1e-4
BISECT_MAX_ITER = 60


@dataclass(frozen=True)
class Dimension:
    target: str
    channel: str
    lo: float
    hi: float
    steps: tuple[int, int]  # inclusive

    @property
    def nominal(self) -> float:
        return 1.0 if self.channel == "capacity_scale" else 0.0

    def to_dict(self) -> dict:
        return {"target": self.target, "channel": self.channel, "lo": self.lo, "hi": self.hi,
                "steps": list(self.steps)}


@dataclass(frozen=True)
class DisturbanceSpec:
    dims: tuple[Dimension, ...]

    @property
    def m(self) -> int:
        return len(self.dims)

    @property
    def lo(self) -> np.ndarray:
        return np.array([d.lo for d in self.dims])

    @property
    def hi(self) -> np.ndarray:
        return np.array([d.hi for d in self.dims])

    def nominal(self) -> np.ndarray:
        return np.array([d.nominal for d in self.dims])

    @classmethod
    def from_list(cls, records, case: GridCase | None = None) -> "DisturbanceSpec":
        if not isinstance(records, list):
            raise ParseError("disturbance spec must be a JSON list")
        dims = []
        for i, r in enumerate(records):
            where = f"dimension[{i}]"
            if not isinstance(r, dict):
                raise ParseError(f"{where}: expected an object")
            extra = set(r) - {"target", "channel", "lo", "hi", "steps"}
            if extra:
                raise ValidationError(f"{where}: unknown key '{sorted(extra)[0]}'")
            try:
                steps = r["steps"]
                dims.append(Dimension(str(r["target"]), str(r["channel"]), float(r["lo"]),
                                      float(r["hi"]), (int(steps[0]), int(steps[1]))))
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                raise ParseError(f"{where}: malformed record ({exc})") from exc
        spec = cls(tuple(dims))
        spec.validate(case)
        return spec

    def validate(self, case: GridCase | None = None) -> None:
        kinds = {"capacity_scale": ("dg", "pv", "storage"), "pv_forecast_add": ("pv",),
                 "load_forecast_add": ("load",)}
        for i, d in enumerate(self.dims):
            where = f"dimension[{i}] ({d.target})"
            if d.channel not in CHANNELS:
                raise ValidationError(f"{where}: unknown channel {d.channel!r}")
            if not d.lo <= d.hi:
                raise ValidationError(f"{where}: lo exceeds hi")
            if d.channel == "capacity_scale":
                if not 0.0 <= d.lo <= d.hi <= 1.0:
                    raise ValidationError(f"{where}: capacity_scale bounds must lie in [0, 1]")
            elif not d.lo <= 0.0 <= d.hi:
                raise ValidationError(f"{where}: additive channel needs lo <= 0 <= hi")
            if d.steps[0] > d.steps[1] or d.steps[0] < 0:
                raise ValidationError(f"{where}: bad step window {list(d.steps)}")
            if case is not None:
                try:
                    dev = case.device(d.target)
                except KeyError:
                    raise ValidationError(f"{where}: unknown device") from None
                if dev.kind not in kinds[d.channel]:
                    raise ValidationError(f"{where}: channel {d.channel} does not apply to {dev.kind}")
                if d.steps[1] >= case.K:
                    raise ValidationError(f"{where}: window ends after the horizon")

    def to_list(self) -> list[dict]:
        return [d.to_dict() for d in self.dims]


def load_spec(path, case: GridCase | None = None) -> DisturbanceSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read disturbance spec {path}: {exc}") from exc
    return DisturbanceSpec.from_list(doc, case)


def apply_disturbance(case: GridCase, spec: DisturbanceSpec, w,
                      base: ScenarioData | None = None) -> ScenarioData:
    """Scenario data with disturbance ``w`` applied on top of ``base`` (nominal by default)."""
    data = (base or ScenarioData.nominal(case)).copy()
    w = np.asarray(w, dtype=float)
    for d, val in zip(spec.dims, w):
        sl = slice(d.steps[0], d.steps[1] + 1)
        if d.channel == "capacity_scale":
            data.cap_scale[d.target][sl] *= val
        elif d.channel == "pv_forecast_add":
            data.pv_avail[d.target][sl] = np.maximum(data.pv_avail[d.target][sl] + val, 0.0)
        else:
            p = data.load_p[d.target][sl]
            new_p = np.maximum(p + val, 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(p > 0, new_p / np.where(p > 0, p, 1.0), 1.0)
            data.load_q[d.target][sl] = data.load_q[d.target][sl] * ratio
            data.load_p[d.target][sl] = new_p
    return data


def box_vertices(spec: DisturbanceSpec) -> np.ndarray:
    if spec.m > MAX_DIMS:
        raise VertexBudgetExceeded(f"{spec.m} dimensions exceed the limit of {MAX_DIMS}")
    out = []
    for corner in itertools.product(*[(d.lo, d.hi) for d in spec.dims]):
        if corner not in out:
            out.append(corner)
    return np.array(out, dtype=float).reshape(len(out), spec.m)


@dataclass
class ReserveSchedule:
    setpoints: dict[str, np.ndarray]
    up: dict[str, np.ndarray]
    down: dict[str, np.ndarray]
    lower: dict[str, np.ndarray]
    upper: dict[str, np.ndarray]
    curtail: dict[str, np.ndarray] = field(default_factory=dict)  # held pv / load curtailment
    vertices: np.ndarray | None = None

    @property
    def devices(self) -> list[str]:
        return list(self.setpoints)

    def totals(self) -> tuple[np.ndarray, np.ndarray]:
        up = np.sum([v for v in self.up.values()], axis=0)
        dn = np.sum([v for v in self.down.values()], axis=0)
        return up, dn

    def total(self) -> float:
        up, dn = self.totals()
        return float(np.sum(up) + np.sum(dn))

    def check(self, tol: float = 1e-6) -> None:
        for d in self.devices:
            p = self.setpoints[d]
            if np.any(self.up[d] < -tol) or np.any(self.down[d] < -tol):
                raise ValidationError(f"device {d}: negative reserve")
            if np.any(p + self.up[d] > self.upper[d] + tol):
                raise ValidationError(f"device {d}: up-reserve exceeds headroom")
            if np.any(p - self.down[d] < self.lower[d] - tol):
                raise ValidationError(f"device {d}: down-reserve exceeds footroom")

    @classmethod
    def from_solution(cls, sol: DispatchSolution, up=None, down=None) -> "ReserveSchedule":
        """Schedule around a solved dispatch; ``up``/``down`` map device -> scalar or array."""
        case, K = sol.case, sol.case.K
        up, down = up or {}, down or {}
        sched = cls({}, {}, {}, {}, {})
        for dev in case.devices:
            if dev.kind in RESERVE_KINDS:
                lo, hi = device_limits(dev)
                sched.setpoints[dev.id] = sol.series[dev.id]["p"].copy()
                sched.up[dev.id] = np.broadcast_to(np.asarray(up.get(dev.id, 0.0), float), K).copy()
                sched.down[dev.id] = np.broadcast_to(np.asarray(down.get(dev.id, 0.0), float), K).copy()
                sched.lower[dev.id] = np.full(K, lo)
                sched.upper[dev.id] = np.full(K, hi)
            elif dev.kind in ("pv", "load"):
                sched.curtail[dev.id] = sol.series[dev.id]["curtail_p"].copy()
        return sched

    def to_dict(self) -> dict:
        up, dn = self.totals()
        return {
            "devices": {
                d: {"setpoint": self.setpoints[d].tolist(), "up": self.up[d].tolist(),
                    "down": self.down[d].tolist()}
                for d in self.devices
            },
            "total_up": up.tolist(),
            "total_down": dn.tolist(),
            "vertices": None if self.vertices is None else self.vertices.tolist(),
        }


@dataclass
class _Stage1:
    """Indices of first-stage quantities a recourse block is tied to."""

    P: dict
    Rup: dict
    Rdn: dict
    curtail: dict  # (dev, k) -> Psc / Plc index


def _add_recourse(case: GridCase, prog: ConicProgram, s1: _Stage1, data: ScenarioData,
                  tag: str, model: str, banded: bool = True) -> None:
    nv = build_network(case, prog, model, tag)
    dv = build_baseline(case, prog, nv, data, tag)
    for dev in case.devices:
        for k in range(case.K):
            key = (dev.id, k)
            if dev.kind in RESERVE_KINDS and banded:
                prog.add_le({dv.P[key]: 1.0, s1.P[key]: -1.0, s1.Rup[key]: -1.0}, 0.0,
                            f"{tag}band_up[{dev.id},{k}]")
                if data.cap_scale[dev.id][k] >= 1.0:
                    prog.add_le({dv.P[key]: -1.0, s1.P[key]: 1.0, s1.Rdn[key]: -1.0}, 0.0,
                                f"{tag}band_dn[{dev.id},{k}]")
            elif dev.kind == "pv":
                if data.cap_scale[dev.id][k] >= 1.0:
                    prog.add_eq({dv.Psc[key]: 1.0, s1.curtail[key]: -1.0}, 0.0, f"{tag}hold[{dev.id},{k}]")
                else:
                    prog.add_le({dv.P[key]: 1.0, s1.P[key]: -1.0}, 0.0, f"{tag}hold[{dev.id},{k}]")
            elif dev.kind == "load":
                prog.add_eq({dv.Plc[key]: 1.0, s1.curtail[key]: -1.0}, 0.0, f"{tag}hold[{dev.id},{k}]")


def _add_reserves(case: GridCase, prog: ConicProgram, dv) -> tuple[dict, dict, list]:
    Rup, Rdn, terms = {}, {}, []
    for dev in case.devices:
        if dev.kind not in RESERVE_KINDS:
            continue
        lo, hi = device_limits(dev)
        for k in range(case.K):
            key = (dev.id, k)
            Rup[key] = prog.add_var(f"Rup[{dev.id},{k}]", 0.0)
            Rdn[key] = prog.add_var(f"Rdn[{dev.id},{k}]", 0.0)
            prog.add_le({dv.P[key]: 1.0, Rup[key]: 1.0}, hi, f"headroom[{dev.id},{k}]")
            prog.add_le({dv.P[key]: -1.0, Rdn[key]: 1.0}, -lo, f"footroom[{dev.id},{k}]")
            if dev.kind == "storage":
                e = dv.E[dev.id, k + 1]
                c = dev.eta * case.dt
                prog.add_le({e: -1.0, Rup[key]: c}, -dev.emin_pu_h, f"soc_up[{dev.id},{k}]")
                prog.add_le({e: 1.0, Rdn[key]: c}, dev.emax_pu_h, f"soc_dn[{dev.id},{k}]")
            terms += [(Rup[key], dev.reserve_cost), (Rdn[key], dev.reserve_cost)]
    return Rup, Rdn, terms


def _stage1_from_dv(case, dv, Rup, Rdn) -> _Stage1:
    curtail = {}
    for dev in case.devices:
        for k in range(case.K):
            if dev.kind == "pv":
                curtail[dev.id, k] = dv.Psc[dev.id, k]
            elif dev.kind == "load":
                curtail[dev.id, k] = dv.Plc[dev.id, k]
    return _Stage1(dv.P, Rup, Rdn, curtail)


def _schedule(case, dv, Rup, Rdn, x, vertices=None) -> ReserveSchedule:
    K = case.K
    s = ReserveSchedule({}, {}, {}, {}, {}, vertices=vertices)
    for dev in case.devices:
        if dev.kind in RESERVE_KINDS:
            lo, hi = device_limits(dev)
            s.setpoints[dev.id] = np.array([x[dv.P[dev.id, k]] for k in range(K)])
            s.up[dev.id] = np.maximum([x[Rup[dev.id, k]] for k in range(K)], 0.0)
            s.down[dev.id] = np.maximum([x[Rdn[dev.id, k]] for k in range(K)], 0.0)
            s.lower[dev.id] = np.full(K, lo)
            s.upper[dev.id] = np.full(K, hi)
        elif dev.kind == "pv":
            s.curtail[dev.id] = np.array([x[dv.Psc[dev.id, k]] for k in range(K)])
        elif dev.kind == "load":
            s.curtail[dev.id] = np.array([x[dv.Plc[dev.id, k]] for k in range(K)])
    return s


def reserve_program(case: GridCase, model: str = "linear"):
    """Nominal dispatch block plus reserve variables, headroom rows and costs."""
    prog = ConicProgram()
    nv = build_network(case, prog, model)
    dv = build_baseline(case, prog, nv)
    terms = objective_baseline(case, dv, prog)
    Rup, Rdn, rterms = _add_reserves(case, prog, dv)
    for j, c in rterms:
        if c:
            prog.add_cost(j, c)
    terms["reserve"] = rterms
    return prog, nv, dv, Rup, Rdn, terms


def finish(case, prog, nv, dv, Rup, Rdn, terms, report: SolveReport, vertices=None):
    sol = DispatchSolution(case, report, prog, nv, dv, breakdown_values(terms, report.x),
                           extract_series(case, dv, report.x), ScenarioData.nominal(case))
    sched = _schedule(case, dv, Rup, Rdn, report.x, vertices)
    sched.check()
    return sol, sched


def solve_robust(case: GridCase, spec: DisturbanceSpec, model: str = "linear",
                 vertices: np.ndarray | None = None) -> tuple[DispatchSolution, ReserveSchedule]:
    """Baseline plus reserves such that every vertex of the disturbance set has a recourse."""
    spec.validate(case)
    V = box_vertices(spec) if vertices is None else np.atleast_2d(np.asarray(vertices, float))
    if spec.m > MAX_DIMS:
        raise VertexBudgetExceeded(f"{spec.m} dimensions exceed the limit of {MAX_DIMS}")
    prog, nv, dv, Rup, Rdn, terms = reserve_program(case, model)
    s1 = _stage1_from_dv(case, dv, Rup, Rdn)
    for i, w in enumerate(V):
        _add_recourse(case, prog, s1, apply_disturbance(case, spec, w), f"v{i}:", model)
    report = conic.solve(prog)
    report.raise_for_status()
    if not report.ok:
        raise InfeasibleRobust(*_uncovered(case, spec, V, model))
    return finish(case, prog, nv, dv, Rup, Rdn, terms, report, V)


def _uncovered(case, spec, V, model):
    for w in V:
        prog, nv, dv, Rup, Rdn, _ = reserve_program(case, model)
        _add_recourse(case, prog, _stage1_from_dv(case, dv, Rup, Rdn),
                      apply_disturbance(case, spec, w), "v:", model)
        if not conic.solve(prog).ok:
            return f"no reserve schedule covers vertex {w.tolist()}", w
    return "vertices are individually coverable but not jointly", None


def _pinned_stage1(case: GridCase, prog: ConicProgram, sched: ReserveSchedule | None,
                   sol: DispatchSolution | None) -> _Stage1:
    P, Rup, Rdn, curtail = {}, {}, {}, {}
    for dev in case.devices:
        for k in range(case.K):
            key = (dev.id, k)
            if dev.kind in RESERVE_KINDS:
                p = sched.setpoints[dev.id][k] if sched else sol.series[dev.id]["p"][k]
                P[key] = prog.add_var(f"base:P[{dev.id},{k}]", p, p)
                if sched is not None:
                    Rup[key] = prog.add_var(f"base:Rup[{dev.id},{k}]", sched.up[dev.id][k], sched.up[dev.id][k])
                    Rdn[key] = prog.add_var(f"base:Rdn[{dev.id},{k}]", sched.down[dev.id][k],
                                            sched.down[dev.id][k])
            elif dev.kind in ("pv", "load"):
                c = sched.curtail[dev.id][k] if sched and dev.id in sched.curtail \
                    else sol.series[dev.id]["curtail_p"][k]
                curtail[key] = prog.add_var(f"base:C[{dev.id},{k}]", c, c)
                if dev.kind == "pv":
                    p = sol.series[dev.id]["p"][k] if sol is not None else \
                        ScenarioData.nominal(case).pv_avail[dev.id][k] - c
                    P[key] = prog.add_var(f"base:P[{dev.id},{k}]", p, p)
    return _Stage1(P, Rup, Rdn, curtail)


def recourse_feasible(case: GridCase, data: ScenarioData, *, schedule: ReserveSchedule | None = None,
                      solution: DispatchSolution | None = None, model: str = "linear") -> SolveReport:
    """Fresh feasibility solve of one disturbed scenario at fixed first-stage values.

    With a schedule the dispatchable devices stay in their reserve bands; without one
    they re-dispatch freely within physical limits.
    """
    return _recourse_solve(case, data, schedule, solution, model)[1]


def _recourse_solve(case, data, schedule, solution, model):
    prog = ConicProgram()
    s1 = _pinned_stage1(case, prog, schedule, solution)
    _add_recourse(case, prog, s1, data, "r:", model, banded=schedule is not None)
    return prog, conic.solve(prog)


def verify_vertices(case: GridCase, spec: DisturbanceSpec, schedule: ReserveSchedule,
                    solution: DispatchSolution | None = None, model: str = "linear") -> list[bool]:
    V = schedule.vertices if schedule.vertices is not None else box_vertices(spec)
    return [recourse_feasible(case, apply_disturbance(case, spec, w), schedule=schedule,
                              solution=solution, model=model).ok for w in V]


@dataclass
class Activation:
    activations: dict[str, float]
    deployed: float
    shortfall: float
    pool: float


def proportional_dispatch(schedule: ReserveSchedule, imbalance_pu: float, step: int,
                          available: dict[str, float] | None = None) -> Activation:
    """Share an imbalance across reserve holders in proportion to their capacity.

    Positive imbalance is a deficit served from up-reserves; negative is a surplus
    absorbed by down-reserves (activations returned negative).
    """
    if available is None:
        pools = schedule.up if imbalance_pu >= 0 else schedule.down
        available = {d: float(pools[d][step]) for d in schedule.devices}
    caps = {d: max(float(c), 0.0) for d, c in available.items()}
    pool = sum(caps.values())
    need = abs(float(imbalance_pu))
    target = min(need, pool)
    acts = {d: 0.0 for d in caps}
    if target >= pool:
        acts = dict(caps)
    elif target > 0:
        frac = Fraction(target) / Fraction(pool)
        names = [d for d in caps if caps[d] > 0]
        # shares floored onto the ulp grid of the target, so every partial sum and the
        # remainder handed to the last holder stay representable and the total is exact
        q = Fraction(math.ulp(target))
        for d in names[:-1]:
            acts[d] = float(math.floor(Fraction(caps[d]) * frac / q) * q)
        rest = Fraction(target) - sum(Fraction(acts[d]) for d in names[:-1])
        acts[names[-1]] = float(rest)
    sign = -1.0 if imbalance_pu < 0 else 1.0
    return Activation({d: sign * a if a else 0.0 for d, a in acts.items()}, target,
                      need - target, pool)


@dataclass
class Margins:
    names: list[str]
    values: np.ndarray

    @property
    def max(self) -> float:
        return float(np.max(self.values)) if len(self.values) else 0.0

    def row(self, prefix: str) -> np.ndarray:
        return np.array([v for n, v in zip(self.names, self.values) if n.startswith(prefix)])

    def feasible(self, tol: float = 1e-6) -> bool:
        return self.max <= tol


def program_margins(prog: ConicProgram, x: np.ndarray) -> Margins:
    """Constraint margins ``c`` with ``c <= 0`` exactly when ``x`` is feasible."""
    _, A, b, lo, hi = prog.arrays()
    names, vals = [], []
    res = np.abs(A @ x - b)
    names += prog.row_names
    vals.append(res)
    for j in range(prog.n):
        if np.isfinite(lo[j]):
            names.append(f"lo:{prog.var_names[j]}")
            vals.append([lo[j] - x[j]])
        if np.isfinite(hi[j]) and hi[j] != lo[j]:
            names.append(f"hi:{prog.var_names[j]}")
            vals.append([x[j] - hi[j]])
    for cone in prog.cones:
        names.append(f"cone:{prog.var_names[cone[0]]}")
        vals.append([np.linalg.norm(x[list(cone[1:])]) - x[cone[0]]])
    return Margins(names, np.concatenate([np.atleast_1d(np.asarray(v, float)) for v in vals]))


def compute_margins(solution: DispatchSolution, spec: DisturbanceSpec, w) -> Margins:
    """Margins of the baseline constraint rows under disturbance ``w`` at fixed setpoints."""
    case = solution.case
    data = apply_disturbance(case, spec, w, solution.data)
    prog = ConicProgram()
    nv = build_network(case, prog, solution.nv.model)
    build_baseline(case, prog, nv, data)
    x = np.zeros(prog.n)
    src = solution.prog.names
    for name, j in prog.names.items():
        if name in src:
            x[j] = solution.report.x[src[name]]
    lo, hi = np.array(prog.lo), np.array(prog.hi)
    pinned = lo == hi
    x[pinned] = lo[pinned]
    # device setpoints cannot exceed what the disturbed device can physically deliver
    for dev in case.devices:
        if dev.kind in ("dg", "storage", "pv"):
            for k in range(case.K):
                j = prog.idx(f"Pdev[{dev.id},{k}]")
                x[j] = np.clip(x[j], lo[j], hi[j])
    return program_margins(prog, x)


@dataclass
class RadiusResult:
    radius: float
    directions: np.ndarray
    radii: np.ndarray
    box: np.ndarray
    w_nom: np.ndarray
    vertices_checked: int = 0

    @property
    def certified(self) -> np.ndarray:
        return self.w_nom + self.radii[:, None] * self.directions

    def to_dict(self, margins_max: float = 0.0) -> dict:
        return {
            "radius": float(self.radius),
            "per_direction": [{"dir": d.tolist(), "r": float(r)} for d, r in zip(self.directions, self.radii)],
            "vertices_checked": int(self.vertices_checked),
            "margins_max": float(margins_max),
        }


def _box_reach(spec: DisturbanceSpec, w0: np.ndarray, d: np.ndarray) -> float:
    reach = np.inf
    for i in range(spec.m):
        if d[i] > 0:
            reach = min(reach, (spec.hi[i] - w0[i]) / d[i])
        elif d[i] < 0:
            reach = min(reach, (spec.lo[i] - w0[i]) / d[i])
    return max(float(reach), 0.0)


def bisect(feasible, hi: float, tol: float = BISECT_TOL, max_iter: int = BISECT_MAX_ITER) -> float:
    """Largest ``r`` in ``[0, hi]`` with ``feasible(r)``, to within ``tol``; 0 if none."""
    if hi <= 0 or not feasible(0.0):
        return 0.0
    if feasible(hi):
        return hi
    lo_r, hi_r = 0.0, hi
    for _ in range(max_iter):
        if hi_r - lo_r <= tol:
            return lo_r
        mid = 0.5 * (lo_r + hi_r)
        if feasible(mid):
            lo_r = mid
        else:
            hi_r = mid
    if hi_r - lo_r <= tol:
        return lo_r
    raise BisectionNotConverged(f"bracket [{lo_r}, {hi_r}] after {max_iter} iterations")


def feasibility_radius(case: GridCase, solution: DispatchSolution, spec: DisturbanceSpec,
                       w_nom=None, directions=None, schedule: ReserveSchedule | None = None,
                       model: str | None = None, tol: float = BISECT_TOL,
                       max_iter: int = BISECT_MAX_ITER) -> RadiusResult:
    """Per-direction certified radii by bisection on a recourse-feasibility solve.

    Directions along which the box leaves no room are reported with r = 0 and
    excluded from the ball radius.
    """
    model = model or solution.nv.model
    w0 = spec.nominal() if w_nom is None else np.asarray(w_nom, float)
    if directions is None:
        eye = np.eye(spec.m)
        directions = np.vstack([eye, -eye])
    D = np.atleast_2d(np.asarray(directions, float))
    radii, box = np.zeros(len(D)), np.zeros(len(D))
    count = [0]

    def ok_at(d):
        def f(r):
            count[0] += 1
            data = apply_disturbance(case, spec, w0 + r * d)
            return recourse_feasible(case, data, schedule=schedule, solution=solution, model=model).ok
        return f

    for i, d in enumerate(D):
        box[i] = _box_reach(spec, w0, d)
        radii[i] = bisect(ok_at(d), box[i], tol, max_iter)
    room = box > 0
    radius = float(np.min(radii[room])) if np.any(room) else 0.0
    return RadiusResult(radius, D, radii, box, w0, count[0])


@dataclass
class ActiveSet:
    rows: np.ndarray     # constraint-row selector into the stacked sensitivity system
    lo_vars: list[int]
    hi_vars: list[int]
    pinned: list[int]
    cones: list[int]


def active_set(prog: ConicProgram, report: SolveReport, tol: float = 1e-6) -> ActiveSet:
    """Active bounds and cones at an interior-point optimum; ties are rejected."""
    x = report.x
    lo, hi = np.array(prog.lo), np.array(prog.hi)
    lo_vars, hi_vars, pinned, cones = [], [], [], []
    for j in range(prog.n):
        if lo[j] == hi[j]:
            pinned.append(j)
            continue
        for bound, dual, side in ((lo[j], report.lo_duals[j], lo_vars), (hi[j], report.hi_duals[j], hi_vars)):
            if not np.isfinite(bound):
                continue
            slack = abs(x[j] - bound)
            scale = max(1.0, abs(bound))
            if slack <= tol * scale:
                if dual <= tol:
                    raise DegenerateActiveSet(
                        f"variable {prog.var_names[j]} sits on a bound with zero multiplier")
                side.append(j)
            elif dual > 1e3 * tol and slack <= 1e3 * tol * scale:
                raise DegenerateActiveSet(f"variable {prog.var_names[j]}: ambiguous bound activity")
    for c, cone in enumerate(prog.cones):
        t = x[cone[0]]
        nrm = np.linalg.norm(x[list(cone[1:])])
        zdual = report.cone_duals[c]
        if t - nrm <= tol * max(1.0, abs(t)):
            if zdual[0] <= tol:
                raise DegenerateActiveSet(f"cone {prog.var_names[cone[0]]} tight with zero multiplier")
            if nrm <= tol:
                raise DegenerateActiveSet(f"cone {prog.var_names[cone[0]]} active at its apex")
            cones.append(c)
    return ActiveSet(np.arange(prog.m), lo_vars, hi_vars, pinned, cones)


def kkt_sensitivity(prog: ConicProgram, report: SolveReport, db: np.ndarray, dlo: np.ndarray,
                    dhi: np.ndarray, active: ActiveSet | None = None) -> np.ndarray:
    """``dx/dw`` from the linearized active constraints; columns follow ``db``'s columns."""
    active = active or active_set(prog, report)
    n, x = prog.n, report.x
    A = prog.A().toarray()
    rows, rhs = [A], [db]
    fixed = [(j, dlo) for j in active.lo_vars + active.pinned] + [(j, dhi) for j in active.hi_vars]
    for j, src in fixed:
        e = np.zeros((1, n))
        e[0, j] = 1.0
        rows.append(e)
        rhs.append(src[j:j + 1])
    p = db.shape[1]
    for c in active.cones:
        cone = prog.cones[c]
        xs = x[list(cone[1:])]
        u = xs / np.linalg.norm(xs)
        r = np.zeros((1, n))
        r[0, cone[0]] = 1.0
        r[0, list(cone[1:])] = -u
        rows.append(r)
        rhs.append(np.zeros((1, p)))
    M = np.vstack(rows)
    R = np.vstack(rhs)
    if np.linalg.matrix_rank(M) < n:
        raise DegenerateActiveSet("active constraints do not determine the solution uniquely")
    K, *_ = np.linalg.lstsq(M, R, rcond=None)
    if np.max(np.abs(M @ K - R), initial=0.0) > 1e-8:
        raise DegenerateActiveSet("linearized active set is inconsistent")
    return K


@dataclass
class GainMatrix:
    K: np.ndarray
    var_names: list[str]

    def column(self, name: str) -> np.ndarray:
        return self.K[self.var_names.index(name)]


def sensitivity_gain(case: GridCase, solution: DispatchSolution, spec: DisturbanceSpec,
                     active: ActiveSet | None = None, w_nom=None) -> GainMatrix:
    """Gain ``K`` with ``dx = K dw`` around ``solution`` (solved at ``w_nom``)."""
    w0 = spec.nominal() if w_nom is None else np.asarray(w_nom, float)
    model = solution.nv.model

    def build(w):
        prog = ConicProgram()
        nv = build_network(case, prog, model)
        dv = build_baseline(case, prog, nv, apply_disturbance(case, spec, w))
        objective_baseline(case, dv, prog)
        return prog

    p0 = build(w0)
    if p0.var_names != solution.prog.var_names:
        raise ValueError("solution was not produced by the baseline builder")
    c0, A0, b0, lo0, hi0 = p0.arrays()
    db = np.zeros((p0.m, spec.m))
    dlo = np.zeros((p0.n, spec.m))
    dhi = np.zeros((p0.n, spec.m))
    for i in range(spec.m):
        w = w0.copy()
        w[i] += 1.0
        _, Ai, bi, loi, hii = build(w).arrays()
        if (Ai != A0).nnz:
            raise DegenerateActiveSet(f"dimension {i} changes the constraint matrix")
        db[:, i] = bi - b0
        with np.errstate(invalid="ignore"):
            dlo[:, i] = np.where(np.isfinite(lo0), loi - lo0, 0.0)
            dhi[:, i] = np.where(np.isfinite(hi0), hii - hi0, 0.0)
    K = kkt_sensitivity(solution.prog, solution.report, db, dlo, dhi, active)
    return GainMatrix(K, list(p0.var_names))


@dataclass
class GainResult:
    alpha: float
    k: np.ndarray              # |c| x |u|; delta_u = k.T @ c
    inputs: list[str]
    margins: Margins
    delta_u: np.ndarray


def tune_reserve_gain(case: GridCase, solution: DispatchSolution, reserves: ReserveSchedule,
                      spec: DisturbanceSpec, direction, w_nom=None, model: str | None = None,
                      tol: float = BISECT_TOL) -> GainResult:
    """Largest step ``alpha`` along ``direction`` that a reserve-banded feedback can absorb.

    ``direction`` is a dimension index (meaning ``+e_i``) or an explicit vector.
    """
    model = model or solution.nv.model
    w0 = spec.nominal() if w_nom is None else np.asarray(w_nom, float)
    if np.isscalar(direction):
        d = np.zeros(spec.m)
        d[int(direction)] = 1.0
    else:
        d = np.asarray(direction, float)
    reach = _box_reach(spec, w0, d)

    def solve_at(a):
        data = apply_disturbance(case, spec, w0 + a * d)
        return _recourse_solve(case, data, reserves, solution, model)

    alpha = bisect(lambda a: solve_at(a)[1].ok, reach, tol)
    if alpha <= tol and reach > 0:
        raise NoFeasibleGain(f"no reserve feedback absorbs any step along {d.tolist()}", alpha=0.0)
    prog, rep = solve_at(alpha)
    margins = compute_margins(solution, spec, w0 + alpha * d)
    inputs = [f"{dev},{k}" for dev in reserves.devices for k in range(case.K)]
    du = np.array([rep.x[prog.idx(f"r:Pdev[{dev},{k}]")] - reserves.setpoints[dev][k]
                   for dev in reserves.devices for k in range(case.K)])
    c = margins.values
    nc = float(c @ c)
    k = np.zeros((len(c), len(du))) if nc == 0.0 else np.outer(c, du) / nc
    return GainResult(alpha, k, inputs, margins, du)
