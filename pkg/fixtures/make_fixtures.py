"""Regenerate the JSON fixtures in this directory.

    python3 fixtures/make_fixtures.py

The 4-bus feeder is a desk-scale stand-in for a distribution test feeder:
a three-phase root bus with two DGs' worth of capacity, two PV sites,
one battery and three loads, simulated for five hours at five-minute steps.
"""
import json
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
K = 60


def dump(name, doc):
    (HERE / name).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def r3(a):
    return [round(float(v), 6) for v in a]


def twobus():
    return {
        "name": "twobus",
        "base_mva": 1.0,
        "horizon": {"steps": 4, "dt_hours": 1.0},
        "buses": [
            {"id": "b0", "phases": "a", "vmin": 0.9, "vmax": 1.1, "is_root": True},
            {"id": "b1", "phases": "a", "vmin": 0.9, "vmax": 1.1},
        ],
        "branches": [
            {"id": "br01", "from": "b0", "to": "b1", "phases": "a",
             "r": [[0.01]], "x": [[0.02]], "smax": 2.0},
        ],
        "devices": [
            {"id": "dg0", "bus": "b0", "kind": "dg", "smax": 1.5, "cost": [1.0], "reserve_cost": 0.1},
            {"id": "load1", "bus": "b1", "kind": "load", "smax": 2.0, "cost": [100.0, 100.0],
             "max_curtail_frac": 0.0},
        ],
        "forecasts": {"load1": {"p": [0.6, 0.8, 0.7, 0.5], "q": [0.0, 0.0, 0.0, 0.0]}},
    }


def fourbus(name, pv_shape, load_level, pv_floor=0.0):
    t = np.arange(K) / (K - 1)
    bell = np.sin(np.pi * (0.15 + 0.7 * t)) ** 2
    ramp = np.clip((t - 0.1) / 0.5, 0.0, 1.0)
    z = [[0.010, 0.002, 0.002], [0.002, 0.010, 0.002], [0.002, 0.002, 0.010]]
    xz = [[0.020, 0.004, 0.004], [0.004, 0.020, 0.004], [0.004, 0.004, 0.020]]
    buses = [{"id": "b0", "phases": "abc", "vmin": 0.95, "vmax": 1.05, "is_root": True}]
    buses += [{"id": b, "phases": "abc", "vmin": 0.95, "vmax": 1.05} for b in ("b1", "b2", "b3")]
    branches = [
        {"id": "br01", "from": "b0", "to": "b1", "phases": "abc", "r": z, "x": xz, "smax": 3.0},
        {"id": "br12", "from": "b1", "to": "b2", "phases": "abc", "r": z, "x": xz, "smax": 1.5},
        {"id": "br13", "from": "b1", "to": "b3", "phases": "abc", "r": z, "x": xz, "smax": 1.5},
    ]
    devices = [
        {"id": "dg_big", "bus": "b0", "kind": "dg", "smax": 1.2, "cost": [1.0], "reserve_cost": 0.2},
        {"id": "dg_small", "bus": "b2", "kind": "dg", "smax": 0.6, "cost": [1.5], "reserve_cost": 0.3},
        {"id": "pv1", "bus": "b1", "kind": "pv", "smax": 1.0, "cost": [0.1]},
        {"id": "pv2", "bus": "b3", "kind": "pv", "smax": 0.8, "cost": [0.1]},
        {"id": "ess", "bus": "b2", "kind": "storage", "smax": 0.6, "emin": 0.2, "emax": 2.0,
         "e0": 1.0, "pmax": 0.5, "eta": 0.95, "cost": [0.01], "reserve_cost": 0.1},
        {"id": "load1", "bus": "b1", "kind": "load", "smax": 2.0, "cost": [100.0, 100.0]},
        {"id": "load2", "bus": "b2", "kind": "load", "smax": 2.0, "cost": [100.0, 100.0]},
        {"id": "load3", "bus": "b3", "kind": "load", "smax": 2.0, "cost": [100.0, 100.0]},
    ]
    if pv_shape == "ramp":
        pv = pv_floor + (1 - pv_floor) * ramp
    else:
        pv = pv_floor + (1 - pv_floor) * bell
    swing = 1.0 + 0.15 * np.sin(2 * np.pi * t)
    shares = {"load1": 0.4, "load2": 0.35, "load3": 0.25}
    forecasts = {
        "pv1": {"p": r3(0.95 * pv), "q": [0.0] * K},
        "pv2": {"p": r3(0.75 * pv), "q": [0.0] * K},
    }
    for lid, share in shares.items():
        p = load_level * share * swing
        forecasts[lid] = {"p": r3(p), "q": r3(0.3 * p)}
    return {
        "name": name, "base_mva": 1.0, "horizon": {"steps": K, "dt_hours": 1.0 / 12},
        "buses": buses, "branches": branches, "devices": devices, "forecasts": forecasts,
    }


def events_full():
    windows = [{"from": 0, "to": 15}, {"from": 15, "to": 30}, {"from": 30, "to": 45},
               {"from": 45, "to": 60}]
    events = [
        {"id": "pv_err", "kind": "pv_forecast_err", "locations": ["pv1", "pv2"],
         "distribution": {"family": "gaussian", "params": {"mean": 0.0, "std": 0.03}}},
        {"id": "load_err", "kind": "load_forecast_err", "locations": ["load1", "load2", "load3"],
         "distribution": {"family": "gaussian", "params": {"mean": 0.0, "std": 0.02}}},
        {"id": "load_mask", "kind": "load_cyber", "locations": ["load2"],
         "distribution": {"family": "uniform", "params": {"lo": -0.3, "hi": -0.1}}},
        {"id": "pv_spoof", "kind": "pv_cyber", "locations": ["pv1"],
         "distribution": {"family": "uniform", "params": {"lo": 0.1, "hi": 0.3}}},
        {"id": "dg_spoof", "kind": "dg_cyber", "locations": ["dg_small"],
         "distribution": {"family": "uniform", "params": {"lo": -0.3, "hi": -0.1}}},
        {"id": "dg_out", "kind": "dg_trip", "locations": ["dg_big", "dg_small"],
         "distribution": {"family": "two_point", "params": {"values": [0.0, -1.0], "probs": [0.9, 0.1]}}},
        {"id": "pv_out", "kind": "pv_trip", "locations": ["pv1", "pv2"],
         "distribution": {"family": "two_point", "params": {"values": [0.0, -1.0], "probs": [0.9, 0.1]}}},
        {"id": "storm_pv", "kind": "weather_pv_loss", "locations": ["pv1", "pv2"],
         "distribution": {"family": "exponential_tail", "params": {"scale": 0.2, "sign": -1, "cap": 1.0}}},
        {"id": "storm_load", "kind": "weather_load_loss", "locations": ["load1", "load2", "load3"],
         "distribution": {"family": "exponential_tail", "params": {"scale": 0.1, "sign": -1, "cap": 0.5}},
         "impact": 1.5},
    ]
    # one matrix per window: events x their own locations
    calm = [[1.0, 1.0], [1.0, 1.0, 1.0], [0.0], [0.0], [0.0], [0.0, 0.0], [0.0, 0.0],
            [0.0, 0.0], [0.0, 0.0, 0.0]]
    cyber = [[1.0, 1.0], [1.0, 1.0, 1.0], [0.5], [0.4], [0.3], [0.0, 0.0], [0.0, 0.0],
             [0.0, 0.0], [0.0, 0.0, 0.0]]
    loadloss = [[1.0, 1.0], [1.0, 1.0, 1.0], [0.1], [0.1], [0.1], [0.0, 0.0], [0.0, 0.0],
                [0.1, 0.1], [0.7, 0.6, 0.7]]
    extreme = [[1.0, 1.0], [1.0, 1.0, 1.0], [0.2], [0.2], [0.2], [0.3, 0.2], [0.3, 0.3],
               [0.9, 0.9], [0.9, 0.9, 0.9]]
    return {"events": events, "probability_matrix": [calm, cyber, loadloss, extreme],
            "windows": windows, "impact_series": [0.1, 0.5, 1.05, 1.35]}


def events_forecast(std_load=0.03, mean_load=0.0):
    return {
        "events": [
            {"id": "load_err", "kind": "load_forecast_err", "locations": ["load1", "load2"],
             "distribution": {"family": "gaussian", "params": {"mean": mean_load, "std": std_load}}},
        ],
        "probability_matrix": [[1.0, 1.0]],
        "windows": [{"from": 0, "to": K}],
        "thresholds": [10.0, 20.0, 30.0],
    }


def robust_spec():
    return [
        {"target": "dg_big", "channel": "capacity_scale", "lo": 0.0, "hi": 1.0, "steps": [20, 40]},
        {"target": "load2", "channel": "load_forecast_add", "lo": 0.0, "hi": 0.2, "steps": [30, 50]},
    ]


def gaussian_model(std_load=0.03):
    return {"mean": [0.0, 0.0], "cov": [[std_load ** 2, 0.0], [0.0, std_load ** 2]],
            "rows": [{"constraint": "balance", "A": [1.0, 1.0]}],
            "labels": ["load1", "load2"]}


def samples(n=300, std=0.03, seed=2024):
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, std, size=(n, 2))
    return {"dims": 2, "labels": ["load1", "load2"], "samples": [r3(row) for row in z]}


def dro_mapping():
    return [
        {"target": "load1", "channel": "load_forecast_add", "lo": -1.0, "hi": 1.0, "steps": [0, K - 1]},
        {"target": "load2", "channel": "load_forecast_add", "lo": -1.0, "hi": 1.0, "steps": [0, K - 1]},
    ]


if __name__ == "__main__":
    dump("twobus.json", twobus())
    dump("fourbus.json", fourbus("fourbus", "bell", 2.2, pv_floor=0.25))
    dump("fourbus_hsll.json", fourbus("fourbus_hsll", "bell", 0.9, pv_floor=0.55))
    dump("fourbus_lshl.json", fourbus("fourbus_lshl", "ramp", 2.6, pv_floor=0.0))
    dump("fourbus_events.json", events_full())
    dump("fourbus_forecast_events.json", events_forecast())
    dump("fourbus_shifted_events.json", events_forecast(mean_load=0.06))
    dump("fourbus_robust_spec.json", robust_spec())
    dump("fourbus_gaussian.json", gaussian_model())
    dump("fourbus_samples.json", samples())
    dump("fourbus_dro_mapping.json", dro_mapping())
