"""Operating modes from an event catalog, and what the attack transforms do to a series."""
from pathlib import Path

import numpy as np

from gridreserve import attack_coordinated, attack_replay, attack_scale, load_case, load_events
from gridreserve.events import sample_event

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

case = load_case(FIXTURES / "fourbus.json")
catalog = load_events(FIXTURES / "fourbus_events.json", case)
sched = catalog.schedule()
for (a, b), mode, ids in zip(sched.windows, sched.modes, sched.events):
    print(f"[{a}, {b}) {mode:16s} events: {', '.join(ids)}")

# draws for one event: each column is a location
rng = np.random.default_rng(7)
x = sample_event(catalog, "dg_out", rng, size=10_000)
print(f"dg_out mean per location {x.mean(axis=0).round(4)}")

load = case.forecasts["load1"].p_pu[:8]
print("load      ", load.round(3))
print("scaled    ", attack_scale(load, 0.2).round(3))
print("replayed  ", attack_replay(load, 3).round(3))

# an attacker lowers reported load and raises reported PV: the operator sees less net demand
pv = np.full_like(load, 0.2)
att = attack_coordinated(load, pv, -0.1, 0.1)
print("hidden imbalance", att.hidden_imbalance.round(4))
