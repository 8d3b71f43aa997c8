import csv
import io

import numpy as np
import pytest

from conftest import assert_report_contract, case_with, fixture_path
from gridreserve.dispatch import CSV_COLUMNS, scaled_loads, solve_baseline
from gridreserve.errors import InfeasibleCase
from gridreserve.netmodel import load_case


def _storage_case(load, e0=3.0, eta=0.9, cost=0.0):
    """Storage at the root feeding a load on the far bus, one-hour steps."""
    def edit(doc):
        doc["horizon"] = {"steps": len(load), "dt_hours": 1.0}
        doc["devices"] = [
            {"id": "ess", "bus": "b0", "kind": "storage", "smax": 2.0, "emin": 0.0, "emax": 5.0,
             "e0": e0, "pmax": 2.0, "eta": eta, "cost": [cost]},
            {"id": "load1", "bus": "b1", "kind": "load", "smax": 2.0, "cost": [100.0, 100.0],
             "max_curtail_frac": 0.0},
        ]
        doc["forecasts"] = {"load1": {"p": list(load), "q": [0.0] * len(load)}}
    return case_with(edit=edit)


def _one_step(load, dg_smax=3.0, frac=0.0):
    def edit(doc):
        doc["horizon"]["steps"] = 1
        doc["devices"][0]["smax"] = dg_smax
        doc["devices"][1]["max_curtail_frac"] = frac
        doc["forecasts"]["load1"] = {"p": [load], "q": [0.0]}
    return case_with(edit=edit)


def test_storage_recurrence_example():
    sol = solve_baseline(_storage_case([1.0]))
    assert sol.series["ess"]["p"][0] == pytest.approx(1.0, abs=1e-7)
    assert sol.series["ess"]["soc"][0] == pytest.approx(2.1, abs=1e-7)


def test_idle_battery_keeps_soc():
    sol = solve_baseline(_storage_case([0.0, 0.0, 0.0], cost=0.01))
    np.testing.assert_allclose(sol.series["ess"]["soc"], 3.0, atol=1e-7)


def test_full_pv_curtailment_injects_nothing():
    def edit(doc):
        doc["devices"].append({"id": "pv", "bus": "b1", "kind": "pv", "smax": 1.0, "cost": [10.0]})
        doc["forecasts"]["pv"] = {"p": [0.8] * 4, "q": [0.0] * 4}
        doc["forecasts"]["load1"]["p"] = [0.0] * 4
    sol = solve_baseline(case_with(edit=edit))
    np.testing.assert_allclose(sol.series["pv"]["p"], 0.0, atol=1e-7)
    np.testing.assert_allclose(sol.series["pv"]["curtail_p"], 0.8, atol=1e-7)
    assert sol.breakdown["pv_curtail"] == pytest.approx(32.0, abs=1e-5)


def test_objective_dg_only():
    sol = solve_baseline(_one_step(1.0))
    assert sol.objective == pytest.approx(1.0, abs=1e-7)


def test_forced_load_shed_cost():
    sol = solve_baseline(_one_step(0.8, dg_smax=0.6, frac=1.0))
    assert sol.breakdown["load_curtail_p"] == pytest.approx(20.0, abs=1e-5)
    assert sol.objective == pytest.approx(20.6, abs=1e-5)


def test_zero_dispatch_zero_cost():
    assert solve_baseline(_one_step(0.0)).objective == pytest.approx(0.0, abs=1e-8)


def test_hsll_dg_idle():
    sol = solve_baseline(load_case(fixture_path("fourbus_hsll.json")))
    for dg in ("dg_big", "dg_small"):
        assert np.max(sol.series[dg]["p"]) <= 1e-6


def test_lshl_shed_only_early():
    case = load_case(fixture_path("fourbus_lshl.json"))
    sol = solve_baseline(case)
    shed = sum(sol.series[d.id]["curtail_p"] for d in case.devices_of("load"))
    assert shed[0] > 1e-3
    ramp_done = int(np.argmax(sum(case.forecasts[d.id].p_pu for d in case.devices_of("pv")) > 1.0))
    assert np.max(shed[ramp_done:]) <= 1e-6
    last = np.flatnonzero(shed > 1e-6).max()
    assert np.all(shed[last + 1:] <= 1e-6)


def test_overload_is_energy_infeasible(twobus):
    with pytest.raises(InfeasibleCase) as err:
        solve_baseline(scaled_loads(twobus, 100.0))
    assert err.value.aggregate == "energy"


def test_line_limit_diagnosis():
    def edit(doc):
        doc["branches"][0]["smax"] = 0.3
    with pytest.raises(InfeasibleCase) as err:
        solve_baseline(case_with(edit=edit))
    assert err.value.aggregate == "line"


@pytest.mark.parametrize("name", ["fourbus.json", "fourbus_hsll.json", "fourbus_lshl.json"])
def test_fourbus_invariants(name):
    case = load_case(fixture_path(name))
    sol = solve_baseline(case)
    assert_report_contract(sol.report)
    x = sol.report.x
    for k in range(case.K):
        inj = sum(sol.series[d.id]["p"][k] for d in case.devices if d.kind != "load")
        use = sum(sol.series[d.id]["p"][k] for d in case.devices if d.kind == "load")
        assert abs(inj - use) <= 1e-6
    for (bus_id, _, _), j in sol.nv.W.items():
        b = case.bus(bus_id)
        assert b.vmin_pu ** 2 - 1e-9 <= x[j] <= b.vmax_pu ** 2 + 1e-9
    ess = case.device("ess")
    soc, pb = sol.series["ess"]["soc"], sol.series["ess"]["p"]
    assert np.all(soc >= ess.emin_pu_h - 1e-9) and np.all(soc <= ess.emax_pu_h + 1e-9)
    assert soc[-1] == pytest.approx(ess.e0_pu_h - ess.eta * case.dt * pb.sum(), abs=1e-9)


def test_raising_shed_cost_never_increases_shed():
    def make(a3):
        def edit(doc):
            for d in doc["devices"]:
                if d["kind"] == "load":
                    d["cost"] = [a3, a3]
        return case_with("fourbus_lshl.json", edit)

    sheds = []
    for a3 in (0.5, 2.0, 10.0, 100.0):
        case = make(a3)
        sol = solve_baseline(case)
        sheds.append(sum(sol.series[d.id]["curtail_p"].sum() for d in case.devices_of("load")))
    assert all(b <= a + 1e-6 for a, b in zip(sheds, sheds[1:]))
    assert sheds[0] > sheds[-1]


def test_linear_vs_socp_within_two_percent(fourbus):
    lin = solve_baseline(fourbus).objective
    soc = solve_baseline(fourbus, "socp").objective
    assert abs(lin - soc) / lin <= 0.02


def test_csv_export(twobus):
    sol = solve_baseline(twobus)
    rows = list(csv.reader(io.StringIO(sol.to_csv())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + twobus.K * len(twobus.devices)
    first = dict(zip(rows[0], rows[1]))
    assert first["device"] == "dg0" and float(first["p_pu"]) == pytest.approx(0.6, abs=1e-7)
    assert first["soc_pu_h"] == ""


def test_json_export_has_nulls_not_nan(twobus):
    doc = solve_baseline(twobus).to_dict()
    assert doc["devices"]["dg0"]["soc"] == [None] * twobus.K
    assert doc["status"] == "Optimal"
