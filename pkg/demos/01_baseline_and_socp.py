"""Baseline dispatch on the two-bus feeder, then the same case on the SOCP network model.

The linear model ignores losses, so the SOCP objective should come out a little higher:
the source has to cover the line losses as well as the load.
"""
from pathlib import Path

import numpy as np

from gridreserve import load_case, solve_baseline

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

case = load_case(FIXTURES / "twobus.json")
lin = solve_baseline(case)
soc = solve_baseline(case, model="socp")

print(f"{case.K} steps, {len(case.devices)} devices")
print(f"linear objective  {lin.objective:.6f}")
print(f"socp objective    {soc.objective:.6f}  (losses add {soc.objective - lin.objective:+.6f})")

# the dispatch itself, step by step
for dev, series in lin.series.items():
    print(f"  {dev:8s} p = {np.round(series['p'], 4).tolist()}")

# the solver report travels with the solution; residuals are worth a glance
r = lin.report
print(f"status {r.status}, primal residual {r.primal_residual:.1e}")
