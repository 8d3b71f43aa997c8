"""Baseline multi-period dispatch: device constraints, objective and solution export."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic
from .conic import ConicProgram, SolveReport
from .errors import InfeasibleCase, NegativeCost
from .netmodel import GridCase
from .powerflow import NetworkVars, build_linear_bfm, build_socp_bfm

CSV_COLUMNS = ("case", "step", "device", "kind", "p_pu", "q_pu", "soc_pu_h", "curtail_p_pu")


@dataclass
class ScenarioData:
    """Per-step data a dispatch block is built against (nominal or disturbed)."""

    pv_avail: dict[str, np.ndarray]
    load_p: dict[str, np.ndarray]
    load_q: dict[str, np.ndarray]
    cap_scale: dict[str, np.ndarray]

    @classmethod
    def nominal(cls, case: GridCase) -> "ScenarioData":
        fc = case.forecasts
        return cls(
            pv_avail={d.id: np.array(fc[d.id].p_pu) for d in case.devices_of("pv")},
            load_p={d.id: np.array(fc[d.id].p_pu) for d in case.devices_of("load")},
            load_q={d.id: np.array(fc[d.id].q_pu) for d in case.devices_of("load")},
            cap_scale={d.id: np.ones(case.K) for d in case.devices},
        )

    def copy(self) -> "ScenarioData":
        dup = lambda m: {k: v.copy() for k, v in m.items()}  # noqa: E731
        return ScenarioData(dup(self.pv_avail), dup(self.load_p), dup(self.load_q),
                            dup(self.cap_scale))


@dataclass
class DeviceVars:
    P: dict = field(default_factory=dict)       # (dev, k); load P is power served
    Q: dict = field(default_factory=dict)
    Psc: dict = field(default_factory=dict)
    Plc: dict = field(default_factory=dict)
    Qlc: dict = field(default_factory=dict)
    E: dict = field(default_factory=dict)       # (dev, k) for k = 0..K
    Pch: dict = field(default_factory=dict)
    Pdis: dict = field(default_factory=dict)
    balance_rows: dict = field(default_factory=dict)  # (bus, k, "p"|"q") -> row


def device_limits(dev, scale: float = 1.0) -> tuple[float, float]:
    """Physical real-power range of a dispatchable device."""
    if dev.kind == "dg":
        return 0.0, scale * dev.smax_pu
    if dev.kind == "storage":
        return -dev.pmax_pu, dev.pmax_pu
    raise ValueError(f"device {dev.id}: kind {dev.kind} is not dispatchable")


def build_baseline(case: GridCase, prog: ConicProgram, nv: NetworkVars,
                   data: ScenarioData | None = None, tag: str = "") -> DeviceVars:
    """Device variables, apparent-power cones, SoC dynamics and net-injection ties."""
    data = data or ScenarioData.nominal(case)
    dv = DeviceVars()
    K, dt = case.K, case.dt
    for dev in case.devices:
        scale = data.cap_scale.get(dev.id, np.ones(K))
        for k in range(K):
            name = f"{dev.id},{k}"
            if dev.kind == "dg":
                p = prog.add_var(f"{tag}Pdev[{name}]", 0.0, scale[k] * dev.smax_pu)
                q = prog.add_var(f"{tag}Qdev[{name}]")
            elif dev.kind == "pv":
                avail = float(data.pv_avail[dev.id][k])
                p = prog.add_var(f"{tag}Pdev[{name}]", 0.0, max(avail, 0.0))
                q = prog.add_var(f"{tag}Qdev[{name}]")
                sc = prog.add_var(f"{tag}Psc[{name}]", 0.0)
                dv.Psc[dev.id, k] = sc
                prog.add_eq({p: 1.0, sc: 1.0}, max(avail, 0.0), f"{tag}pvavail[{name}]")
            elif dev.kind == "storage":
                p = prog.add_var(f"{tag}Pdev[{name}]", -dev.pmax_pu, dev.pmax_pu)
                q = prog.add_var(f"{tag}Qdev[{name}]")
            else:
                lp = float(data.load_p[dev.id][k])
                lq = float(data.load_q[dev.id][k])
                p = prog.add_var(f"{tag}Pdev[{name}]")
                q = prog.add_var(f"{tag}Qdev[{name}]")
                lc = prog.add_var(f"{tag}Plc[{name}]", 0.0, dev.max_curtail_frac * max(lp, 0.0))
                qc = prog.add_var(f"{tag}Qlc[{name}]")
                dv.Plc[dev.id, k], dv.Qlc[dev.id, k] = lc, qc
                prog.add_eq({p: 1.0, lc: 1.0}, lp, f"{tag}served_p[{name}]")
                prog.add_eq({q: 1.0, qc: 1.0}, lq, f"{tag}served_q[{name}]")
                # shed reactive power at the load's own power factor
                ratio = lq / lp if lp > 0 else 0.0
                if lp > 0:
                    prog.add_eq({qc: 1.0, lc: -ratio}, 0.0, f"{tag}pf[{name}]")
                else:
                    prog.add_eq({qc: 1.0}, 0.0, f"{tag}pf[{name}]")
            dv.P[dev.id, k], dv.Q[dev.id, k] = p, q
            if dev.kind != "load":
                t = prog.add_var(f"{tag}srate[{name}]", scale[k] * dev.smax_pu, scale[k] * dev.smax_pu)
                prog.add_soc([t, p, q])

        if dev.kind == "storage":
            dv.E[dev.id, 0] = prog.add_var(f"{tag}E[{dev.id},0]", dev.e0_pu_h, dev.e0_pu_h)
            for k in range(K):
                e = prog.add_var(f"{tag}E[{dev.id},{k + 1}]", dev.emin_pu_h, dev.emax_pu_h)
                dv.E[dev.id, k + 1] = e
                # E[k+1] = E[k] - eta * P_b * dt  (P_b > 0 discharges)
                prog.add_eq({e: 1.0, dv.E[dev.id, k]: -1.0, dv.P[dev.id, k]: dev.eta * dt}, 0.0,
                            f"{tag}soc[{dev.id},{k}]")
                if dev.cost_coef(0) > 0:
                    pc = prog.add_var(f"{tag}Pdis[{dev.id},{k}]", 0.0)
                    pn = prog.add_var(f"{tag}Pch[{dev.id},{k}]", 0.0)
                    dv.Pdis[dev.id, k], dv.Pch[dev.id, k] = pc, pn
                    prog.add_eq({dv.P[dev.id, k]: 1.0, pc: -1.0, pn: 1.0}, 0.0)
        if dev.kind == "dg" and dev.ramp_pu is not None:
            for k in range(1, K):
                a, b = dv.P[dev.id, k], dv.P[dev.id, k - 1]
                prog.add_le({a: 1.0, b: -1.0}, dev.ramp_pu, f"{tag}ramp_up[{dev.id},{k}]")
                prog.add_le({a: -1.0, b: 1.0}, dev.ramp_pu, f"{tag}ramp_dn[{dev.id},{k}]")

    for k in range(K):
        for bus in case.buses:
            for part, net, var in (("p", nv.Pnet, dv.P), ("q", nv.Qnet, dv.Q)):
                coeffs = {net[bus.id, k]: 1.0}
                for dev in case.devices_at(bus.id):
                    coeffs[var[dev.id, k]] = 1.0 if dev.kind == "load" else -1.0
                dv.balance_rows[bus.id, k, part] = prog.add_eq(
                    coeffs, 0.0, f"{tag}balance_{part}[{bus.id},{k}]"
                )
    return dv


def objective_baseline(case: GridCase, dv: DeviceVars, prog: ConicProgram) -> dict[str, list]:
    """Add the linear cost and return ``term -> [(index, coefficient)]`` for reporting."""
    terms: dict[str, list] = {
        "dg": [], "pv_curtail": [], "load_curtail_p": [], "load_curtail_q": [], "storage_cycling": [],
    }
    for dev in case.devices:
        if any(c < 0 for c in dev.cost):
            raise NegativeCost(f"device {dev.id}: negative cost coefficient")
        for k in range(case.K):
            if dev.kind == "dg":
                terms["dg"].append((dv.P[dev.id, k], dev.cost_coef(0)))
            elif dev.kind == "pv":
                terms["pv_curtail"].append((dv.Psc[dev.id, k], dev.cost_coef(0)))
            elif dev.kind == "load":
                terms["load_curtail_p"].append((dv.Plc[dev.id, k], dev.cost_coef(0)))
                terms["load_curtail_q"].append((dv.Qlc[dev.id, k], dev.cost_coef(1)))
            elif (dev.id, k) in dv.Pdis:
                a5 = dev.cost_coef(0)
                terms["storage_cycling"] += [(dv.Pdis[dev.id, k], a5), (dv.Pch[dev.id, k], a5)]
    for entries in terms.values():
        for j, coef in entries:
            if coef:
                prog.add_cost(j, coef)
    return terms


@dataclass
class DispatchSolution:
    case: GridCase
    report: SolveReport
    prog: ConicProgram
    nv: NetworkVars
    dv: DeviceVars
    breakdown: dict[str, float]
    series: dict[str, dict[str, np.ndarray]]
    data: ScenarioData | None = None

    @property
    def objective(self) -> float:
        return self.report.objective

    def value(self, name: str) -> float:
        return float(self.report.x[self.prog.idx(name)])

    def setpoint(self, dev_id: str) -> np.ndarray:
        return self.series[dev_id]["p"]

    def to_dict(self) -> dict:
        x = self.report.x
        case = self.case

        def per_phase(table, elems):
            out = {}
            for el in elems:
                out[el.id] = {ph: [float(x[table[el.id, ph, k]]) for k in range(case.K)]
                              for ph in el.phases}
            return out

        return {
            "case": case.name,
            "status": self.report.status,
            "model": self.nv.model,
            "objective": float(self.objective),
            "breakdown": {k: float(v) for k, v in self.breakdown.items()},
            "devices": {
                dev_id: {"kind": case.device(dev_id).kind,
                         **{key: [None if np.isnan(v) else float(v) for v in arr]
                            for key, arr in s.items()}}
                for dev_id, s in self.series.items()
            },
            "network": {
                "W": per_phase(self.nv.W, case.buses),
                "P": per_phase(self.nv.P, case.branches),
                "Q": per_phase(self.nv.Q, case.branches),
            },
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for k in range(self.case.K):
            for dev in self.case.devices:
                s = self.series[dev.id]
                w.writerow([self.case.name, k, dev.id, dev.kind, _fmt(s["p"][k]), _fmt(s["q"][k]),
                            _fmt(s["soc"][k]), _fmt(s["curtail_p"][k])])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def extract_series(case: GridCase, dv: DeviceVars, x: np.ndarray) -> dict:
    K = case.K
    out = {}
    for dev in case.devices:
        p = np.array([x[dv.P[dev.id, k]] for k in range(K)])
        q = np.array([x[dv.Q[dev.id, k]] for k in range(K)])
        soc = np.full(K, np.nan)
        curt = np.full(K, np.nan)
        if dev.kind == "storage":
            soc = np.array([x[dv.E[dev.id, k + 1]] for k in range(K)])
        elif dev.kind == "pv":
            curt = np.array([x[dv.Psc[dev.id, k]] for k in range(K)])
        elif dev.kind == "load":
            curt = np.array([x[dv.Plc[dev.id, k]] for k in range(K)])
        out[dev.id] = {"p": p, "q": q, "soc": soc, "curtail_p": curt}
    return out


def breakdown_values(terms: dict[str, list], x: np.ndarray) -> dict[str, float]:
    return {name: float(sum(c * x[j] for j, c in entries)) for name, entries in terms.items()}


def build_network(case, prog, model: str, tag: str = "", **kw) -> NetworkVars:
    if model == "linear":
        return build_linear_bfm(case, prog, tag, **kw)
    if model == "socp":
        return build_socp_bfm(case, prog, tag, **kw)
    raise ValueError(f"unknown network model {model!r}")


def _diagnose(case: GridCase, data: ScenarioData, model: str) -> str:
    for k in range(case.K):
        supply = 0.0
        for dev in case.devices:
            s = data.cap_scale[dev.id][k]
            if dev.kind == "dg":
                supply += s * dev.smax_pu
            elif dev.kind == "pv":
                supply += min(data.pv_avail[dev.id][k], s * dev.smax_pu)
            elif dev.kind == "storage":
                supply += min(dev.pmax_pu, s * dev.smax_pu)
        must_serve = sum((1 - d.max_curtail_frac) * data.load_p[d.id][k]
                         for d in case.devices_of("load"))
        if supply < must_serve:
            return f"energy: step {k} needs {must_serve:.6g} pu but at most {supply:.6g} pu is available"
    for label, kw in (("line", dict(line_limits=False)),
                      ("voltage", dict(line_limits=False, voltage_limits=False))):
        prog = ConicProgram()
        nv = build_network(case, prog, model, **kw)
        build_baseline(case, prog, nv, data)
        if conic.solve(prog).ok:
            return f"{label}: case becomes feasible once {label} limits are relaxed"
    return "energy: storage energy limits cannot be met"


def solve_baseline(case: GridCase, model: str = "linear", data: ScenarioData | None = None,
                   tol_feas: float = conic.DEFAULT_TOL_FEAS,
                   tol_gap: float = conic.DEFAULT_TOL_GAP) -> DispatchSolution:
    """Minimum-cost dispatch over the horizon on the chosen network model."""
    data = data or ScenarioData.nominal(case)
    prog = ConicProgram()
    nv = build_network(case, prog, model)
    dv = build_baseline(case, prog, nv, data)
    terms = objective_baseline(case, dv, prog)
    report = conic.solve(prog, tol_feas, tol_gap)
    report.raise_for_status()
    if not report.ok:
        msg = _diagnose(case, data, model)
        raise InfeasibleCase(f"case {case.name} is infeasible ({msg})", msg.split(":")[0])
    return DispatchSolution(case, report, prog, nv, dv, breakdown_values(terms, report.x),
                            extract_series(case, dv, report.x), data)


def scaled_loads(case: GridCase, factor: float) -> GridCase:
    """Copy of ``case`` with every load forecast multiplied by ``factor``."""
    from .netmodel import Forecast, _frozen

    fc = dict(case.forecasts)
    for d in case.devices_of("load"):
        f = fc[d.id]
        fc[d.id] = Forecast(_frozen(f.p_pu * factor), _frozen(f.q_pu * factor))
    return replace(case, forecasts=fc)
