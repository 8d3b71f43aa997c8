"""Cost against resilience as the risk level loosens.

Every point is a fresh solve and a fresh Monte Carlo run with the same seed, so the
curve is reproducible. Loosening rho should cut cost and resilience together.
"""
from pathlib import Path

from gridreserve import load_case, load_events, pareto_sweep
from gridreserve.simharness import pareto_csv

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

case = load_case(FIXTURES / "fourbus.json")
catalog = load_events(FIXTURES / "fourbus_forecast_events.json", case)

for method in ("chance", "cvar"):
    points = pareto_sweep(case, method, [0.01, 0.05, 0.1, 0.2], 3000, 7, catalog, threads=2)
    print(f"-- {method}")
    print(pareto_csv(points), end="")
