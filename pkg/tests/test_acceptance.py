"""Acceptance gate: nine end-to-end criteria, one PASS/FAIL line each.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""
import math
import sys
import time

import numpy as np
import pytest

from conftest import fixture_path
from gridreserve import cli
from gridreserve.conic import relaxation_gap
from gridreserve.dispatch import solve_baseline
from gridreserve.dro import (
    SampleSet, build_ambiguity_set, estimate_C, h, load_samples, solve_sigma, wasserstein_radius,
)
from gridreserve.events import load_events
from gridreserve.netmodel import load_case
from gridreserve.robust import (
    DisturbanceSpec, ReserveSchedule, apply_disturbance, feasibility_radius, load_spec,
    recourse_feasible, sensitivity_gain, solve_robust, verify_vertices,
)
from gridreserve.simharness import (
    gaussian_from_catalog, pareto_sweep, solve_method, validate,
)

pytestmark = pytest.mark.acceptance


@pytest.fixture
def gate(capsys):
    """Yields ``report(n, ok, detail, budget)``; prints the verdict line, then asserts."""
    start = time.perf_counter()

    def report(n, ok, detail, budget):
        elapsed = time.perf_counter() - start
        ok = bool(ok) and elapsed < budget
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail} "
                  f"({elapsed:.1f} s, budget {budget:.0f} s)")
        assert ok, detail
    return report


def _case(name):
    return load_case(fixture_path(name))


# 1 ------------------------------------------------------------------------------------

def _balance_error(case, sol):
    x, nv = sol.report.x, sol.nv
    worst = 0.0
    for k in range(case.K):
        for bus in case.buses:
            parent = case.parent_branch(bus.id)
            for ph in bus.phases:
                inflow = 0.0
                if parent is not None:
                    inflow = x[nv.P[parent.id, ph, k]]
                    if nv.I:
                        inflow -= parent.r_diag()[parent.phases.index(ph)] * x[nv.I[parent.id, ph, k]]
                out = sum(x[nv.P[br.id, ph, k]] for br in case.branches if br.from_bus == bus.id)
                worst = max(worst, abs(inflow - out + x[nv.Pnet[bus.id, k]] / len(bus.phases)))
    return worst


def test_criterion_1_baseline_feasibility(gate):
    problems, worst_bal = [], 0.0
    for name in ("twobus.json", "fourbus.json", "fourbus_hsll.json", "fourbus_lshl.json"):
        case = _case(name)
        for model in ("linear", "socp"):
            sol = solve_baseline(case, model)
            if sol.report.status != "Optimal":
                problems.append(f"{name}/{model} {sol.report.status}")
                continue
            worst_bal = max(worst_bal, _balance_error(case, sol))
            x = sol.report.x
            for (bus_id, _, _), j in sol.nv.W.items():
                b = case.bus(bus_id)
                if not b.vmin_pu ** 2 - 1e-9 <= x[j] <= b.vmax_pu ** 2 + 1e-9:
                    problems.append(f"{name}/{model} voltage at {bus_id}")
            for dev in case.devices:
                if dev.kind != "storage":
                    continue
                soc, p = sol.series[dev.id]["soc"], sol.series[dev.id]["p"]
                prev = np.concatenate([[dev.e0_pu_h], soc[:-1]])
                if np.max(np.abs(soc - (prev - dev.eta * case.dt * p))) > 1e-9:
                    problems.append(f"{name}/{model} SoC recurrence")
                if soc.min() < dev.emin_pu_h - 1e-9 or soc.max() > dev.emax_pu_h + 1e-9:
                    problems.append(f"{name}/{model} SoC bounds")
    ok = not problems and worst_bal <= 1e-6
    gate(1, ok, f"8 solves, worst nodal imbalance {worst_bal:.2e} pu"
         + (f"; problems: {problems}" if problems else ""), 5)


# 2 ------------------------------------------------------------------------------------

def _grid_oracle(case, step=1e-3):
    """Cheapest grid dispatch that satisfies the exact two-bus branch flow at every step."""
    br = case.branches[0]
    r, x = br.r_diag()[0], br.x_diag()[0]
    dg = case.device("dg0")
    lo_v, hi_v = case.bus("b1").vmin_pu ** 2, case.bus("b1").vmax_pu ** 2
    P0 = np.arange(0.0, dg.smax_pu + step / 2, step)
    # reactive power at the root that carries the line's own reactive loss (W_root = 1)
    Q0 = (1 - np.sqrt(np.maximum(1 - 4 * x * x * P0 * P0, 0))) / (2 * x)
    ell = P0 ** 2 + Q0 ** 2
    delivered = P0 - r * ell
    W1 = 1 - 2 * (r * P0 + x * Q0) + (r * r + x * x) * ell
    fine = (ell <= min(br.smax_pu, dg.smax_pu) ** 2) & (W1 >= lo_v) & (W1 <= hi_v)
    total = 0.0
    for k in range(case.K):
        load = case.forecasts["load1"].p_pu[k]
        ok = fine & (delivered >= load - 1e-12)
        total += dg.cost_coef(0) * case.dt * float(P0[ok].min())
    return total


def test_criterion_2_relaxation_ordering(gate):
    case = _case("twobus.json")
    socp = solve_baseline(case, "socp").objective
    oracle = _grid_oracle(case)
    gap = relaxation_gap(oracle, socp)
    ok = socp <= oracle + 1e-5 and gap >= 0 and oracle - socp <= case.K * 1e-3
    gate(2, ok, f"SOCP {socp:.6f} <= grid oracle {oracle:.6f}, gap {gap:.4f}%", 60)


# 3 ------------------------------------------------------------------------------------

def test_criterion_3_robust_coverage(gate):
    case = _case("fourbus.json")
    spec = load_spec(fixture_path("fourbus_robust_spec.json"), case)
    sol, sched = solve_robust(case, spec)
    verdicts = verify_vertices(case, spec, sched, sol)
    gate(3, all(verdicts), f"{sum(verdicts)}/{len(verdicts)} vertices re-verified, "
         f"objective {sol.objective:.4f}", 30)


# 4 ------------------------------------------------------------------------------------

def test_criterion_4_chance_calibration(gate):
    case = _case("fourbus.json")
    catalog = load_events(fixture_path("fourbus_forecast_events.json"), case)
    sol, sched = solve_method(case, "chance", 0.05, gaussian=gaussian_from_catalog(catalog))
    rep = validate(case, sol, sched, catalog, N=20_000, seed=42, rho=0.05, threads=4)
    bound = 0.05 + 3 * math.sqrt(0.05 * 0.95 / 20_000)
    gate(4, 0 <= rep.probability <= bound,
         f"empirical violation {rep.probability:.5f} within [0, {bound:.4f}]", 60)


# 5 ------------------------------------------------------------------------------------

def _grid_C(Z, points=1_000_000, chunk=50_000):
    d2 = np.abs(Z - Z.mean(axis=0)).sum(axis=1) ** 2
    alpha = np.geomspace(1e-6, 50.0, points)
    best = np.inf
    for s in range(0, points, chunk):
        a = alpha[s:s + chunk, None] * d2[None, :]
        top = a.max(axis=1, keepdims=True)
        lme = top[:, 0] + np.log(np.exp(a - top).mean(axis=1))
        best = min(best, float(np.min(np.sqrt((1 + lme) / (2 * alpha[s:s + chunk])))))
    return 2 * best


def test_criterion_5_wasserstein_oracles(gate):
    rng = np.random.default_rng(2024)
    sets = [rng.standard_normal((40, 2)), rng.uniform(-1, 1, (80, 3)), rng.standard_t(5, (30, 1))]
    c_err = max(abs(estimate_C(Z) - _grid_C(Z)) for Z in sets)
    sigma, lam = solve_sigma(np.array([[-1.0], [1.0]]), 0.1, 0.1)
    S = SampleSet(sets[0])
    amb = build_ambiguity_set(S, 0.1)
    vn = np.max(np.abs(S.whitened), axis=1)
    cert = h(amb.sigma, amb.lam, vn, amb.epsilon)
    halves = wasserstein_radius(1.7, 400, 0.05) == wasserstein_radius(1.7, 100, 0.05) / 2
    ok = c_err <= 1e-4 and abs(sigma - 2.0) <= 1e-6 and cert <= amb.rho + 1e-9 and halves
    gate(5, ok, f"max |C - grid| {c_err:.1e}, sigma {sigma:.7f}, certificate {cert:.4f} <= "
         f"{amb.rho}, eps halves: {halves}", 10)


# 6 ------------------------------------------------------------------------------------

def test_criterion_6_dro_vs_cvar(gate):
    case = _case("fourbus.json")
    matched = load_events(fixture_path("fourbus_forecast_events.json"), case)
    shifted = load_events(fixture_path("fourbus_shifted_events.json"), case)
    hist = load_samples(fixture_path("fourbus_samples.json"))
    mapping = load_spec(fixture_path("fourbus_dro_mapping.json"), case)
    rho, seed = 0.05, 42
    rates, totals = {}, {}
    for method in ("dro", "cvar"):
        sol, sched = solve_method(case, method, rho, samples=hist, mapping=mapping)
        totals[method] = sched.total()
        for label, cat in (("matched", matched), ("shifted", shifted)):
            rep = validate(case, sol, sched, cat, N=20_000, seed=seed, rho=rho, threads=4)
            rates[method, label] = rep.probability
    ok = (rates["dro", "shifted"] <= rho < rates["cvar", "shifted"]
          and rates["dro", "matched"] <= rho and rates["cvar", "matched"] <= rho
          and totals["dro"] >= totals["cvar"])
    detail = ", ".join(f"{m}/{lab} {v:.4f}" for (m, lab), v in rates.items())
    gate(6, ok, f"violation {detail}; reserves dro {totals['dro']:.3f} >= cvar {totals['cvar']:.3f}", 180)


# 7 ------------------------------------------------------------------------------------

def test_criterion_7_radius_and_gain(gate):
    case = _case("twobus.json")
    base = solve_baseline(case)
    P = base.series["dg0"]["p"]
    spec = DisturbanceSpec.from_list([{"target": "load1", "channel": "load_forecast_add",
                                       "lo": -1.0, "hi": 2.0, "steps": [0, 3]}], case)
    sched = ReserveSchedule.from_solution(base, up={"dg0": 1.5 - P})
    r = feasibility_radius(case, base, spec, schedule=sched).radii[0]
    spare = 1.5 - P.max()

    spec2 = DisturbanceSpec.from_list(
        [{"target": "load1", "channel": "load_forecast_add", "lo": -0.4, "hi": 1.0, "steps": s}
         for s in ([0, 1], [2, 3])], case)
    sched2 = ReserveSchedule.from_solution(base, up={"dg0": 1.5 - P}, down={"dg0": 0.3})
    cert = feasibility_radius(case, base, spec2, schedule=sched2).certified
    rng = np.random.default_rng(77)
    hull_ok = sum(
        recourse_feasible(case, apply_disturbance(case, spec2, rng.dirichlet(np.ones(len(cert))) @ cert),
                          schedule=sched2, solution=base).ok
        for _ in range(100))

    G = sensitivity_gain(case, base, spec2)
    worst = 0.0
    for _ in range(50):
        dw = rng.uniform(-1e-3, 1e-3, 2)
        moved = solve_baseline(case, data=apply_disturbance(case, spec2, dw))
        worst = max(worst, float(np.max(np.abs(moved.report.x - (base.report.x + G.K @ dw)))))
    ok = abs(r - spare) <= 1e-3 and hull_ok == 100 and worst <= 1e-6
    gate(7, ok, f"r {r:.5f} vs spare {spare:.5f}, hull {hull_ok}/100 feasible, "
         f"sensitivity error {worst:.1e}", 60)


# 8 ------------------------------------------------------------------------------------

def _weakly_decreasing(v, tol):
    return all(b <= a + tol for a, b in zip(v, v[1:]))


def test_criterion_8_pareto_monotone(gate):
    case = _case("fourbus.json")
    catalog = load_events(fixture_path("fourbus_forecast_events.json"), case)
    grid = [0.01, 0.05, 0.1, 0.2]
    lines, ok = [], True
    for method in ("chance", "cvar"):
        pts = pareto_sweep(case, method, grid, 20_000, 7, catalog, threads=4)
        cost = [p.cost for p in pts]
        res = [p.resilience for p in pts]
        good = all(p.error is None for p in pts) and _weakly_decreasing(cost, 1e-5) \
            and _weakly_decreasing(res, 1e-12)
        ok &= good
        lines.append(f"{method} cost {[round(c, 3) for c in cost]} resilience {[round(x, 4) for x in res]}")
    gate(8, ok, "; ".join(lines), 120)


# 9 ------------------------------------------------------------------------------------

def test_criterion_9_determinism(gate, tmp_path):
    case, ev = str(fixture_path("fourbus.json")), str(fixture_path("fourbus_forecast_events.json"))
    blobs = []
    for t in ("1", "4"):
        out = tmp_path / f"sim{t}"
        cli.main(["simulate", "--case", case, "--events", ev, "--method", "dro", "--rho", "0.05",
                  "--n", "20000", "--seed", "42", "--threads", t, "--out", str(out)])
        blobs.append((out / "report.json").read_bytes())
    pareto = []
    for t in ("1", "3"):
        out = tmp_path / f"par{t}"
        cli.main(["pareto", "--case", case, "--events", ev, "--method", "chance", "--n", "3000",
                  "--seed", "5", "--threads", t, "--format", "csv", "--out", str(out)])
        pareto.append((out / "pareto.csv").read_bytes())
    ok = blobs[0] == blobs[1] and pareto[0] == pareto[1] and len(blobs[0]) > 0
    gate(9, ok, f"simulate reports identical: {blobs[0] == blobs[1]} ({len(blobs[0])} bytes), "
         f"pareto identical: {pareto[0] == pareto[1]}", 60)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
