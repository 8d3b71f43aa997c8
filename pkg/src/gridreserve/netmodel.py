"""Grid case domain types, JSON ingestion and radial topology checks.

All quantities are held in per-unit on ``base_mva``.  Case files carry powers
in MW/MVA/MVAr and energies in MWh; they are divided by ``base_mva`` on load.
Impedances and voltage bounds are already per-unit in the file.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import NegativeCost, ParseError, TopologyError, ValidationError

PHASES = ("a", "b", "c")
DEVICE_KINDS = ("pv", "dg", "storage", "load")

CASE_KEYS = {"name", "base_mva", "horizon", "buses", "branches", "devices", "forecasts"}
HORIZON_KEYS = {"steps", "dt_hours"}
BUS_KEYS = {"id", "phases", "vmin", "vmax", "is_root"}
BRANCH_KEYS = {"id", "from", "to", "phases", "r", "x", "smax"}
DEVICE_KEYS = {
    "id", "bus", "kind", "smax", "emin", "emax", "e0", "pmax", "eta",
    "cost", "reserve_cost", "max_curtail_frac", "ramp",
}
FORECAST_KEYS = {"p", "q"}


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Bus:
    id: str
    phases: tuple[str, ...]
    vmin_pu: float
    vmax_pu: float
    is_root: bool = False


@dataclass(frozen=True, eq=False)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    phases: tuple[str, ...]
    r_pu: np.ndarray
    x_pu: np.ndarray
    smax_pu: float

    def __eq__(self, other):
        if not isinstance(other, Branch):
            return NotImplemented
        return (
            (self.id, self.from_bus, self.to_bus, self.phases, self.smax_pu)
            == (other.id, other.from_bus, other.to_bus, other.phases, other.smax_pu)
            and np.array_equal(self.r_pu, other.r_pu)
            and np.array_equal(self.x_pu, other.x_pu)
        )

    def r_diag(self) -> np.ndarray:
        return np.diag(self.r_pu)

    def x_diag(self) -> np.ndarray:
        return np.diag(self.x_pu)


@dataclass(frozen=True)
class Device:
    id: str
    bus: str
    kind: str
    smax_pu: float
    cost: tuple[float, ...] = ()
    reserve_cost: float = 0.0
    emin_pu_h: float = 0.0
    emax_pu_h: float = 0.0
    e0_pu_h: float = 0.0
    pmax_pu: float = 0.0
    eta: float = 1.0
    max_curtail_frac: float = 1.0
    ramp_pu: float | None = None

    def cost_coef(self, i: int) -> float:
        return float(self.cost[i]) if i < len(self.cost) else 0.0


@dataclass(frozen=True, eq=False)
class Forecast:
    p_pu: np.ndarray
    q_pu: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Forecast):
            return NotImplemented
        return np.array_equal(self.p_pu, other.p_pu) and np.array_equal(self.q_pu, other.q_pu)


@dataclass(frozen=True)
class Horizon:
    steps: int
    dt_hours: float


@dataclass(frozen=True)
class GridCase:
    name: str
    base_mva: float
    horizon: Horizon
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    devices: tuple[Device, ...]
    forecasts: Mapping[str, Forecast] = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.horizon.steps

    @property
    def dt(self) -> float:
        return self.horizon.dt_hours

    @property
    def root(self) -> Bus:
        return next(b for b in self.buses if b.is_root)

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def branch(self, branch_id: str) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(branch_id)

    def device(self, device_id: str) -> Device:
        for d in self.devices:
            if d.id == device_id:
                return d
        raise KeyError(device_id)

    def devices_of(self, kind: str) -> list[Device]:
        return [d for d in self.devices if d.kind == kind]

    def devices_at(self, bus_id: str) -> list[Device]:
        return [d for d in self.devices if d.bus == bus_id]

    def parent_branch(self, bus_id: str) -> Branch | None:
        for br in self.branches:
            if br.to_bus == bus_id:
                return br
        return None


def downstream_map(case: GridCase) -> dict[str, list[str]]:
    """Map each bus to its child branch ids, sorted, walking out from the root.

    Raises TopologyError when the branch set is not a tree spanning every bus
    with parent-to-child orientation.
    """
    roots = [b.id for b in case.buses if b.is_root]
    if len(roots) != 1:
        raise TopologyError(f"expected exactly one root bus, found {len(roots)}")
    bus_ids = [b.id for b in case.buses]
    children: dict[str, list[str]] = {b: [] for b in bus_ids}
    parent: dict[str, str] = {}
    for br in case.branches:
        if br.from_bus not in children or br.to_bus not in children:
            raise TopologyError(f"branch {br.id}: unknown bus")
        if br.to_bus == roots[0]:
            raise TopologyError(f"branch {br.id}: root bus cannot have a parent (cycle)")
        if br.to_bus in parent:
            raise TopologyError(
                f"branch {br.id}: bus {br.to_bus} already fed by {parent[br.to_bus]} (cycle)"
            )
        parent[br.to_bus] = br.id
        children[br.from_bus].append(br.id)
    by_id = {br.id: br for br in case.branches}
    seen = {roots[0]}
    stack = [roots[0]]
    while stack:
        n = stack.pop()
        for bid in children[n]:
            m = by_id[bid].to_bus
            if m in seen:
                raise TopologyError(f"branch {bid}: cycle through bus {m}")
            seen.add(m)
            stack.append(m)
    missing = sorted(set(bus_ids) - seen)
    if missing:
        raise TopologyError(f"bus {missing[0]}: disconnected from root or part of a cycle")
    return {b: sorted(children[b]) for b in bus_ids}


def _orient(buses: list[dict], branches: list[dict]) -> None:
    """Flip branches in place so every branch points away from the root."""
    roots = [b["id"] for b in buses if b.get("is_root")]
    if len(roots) != 1:
        raise ValidationError(f"case must have exactly one root bus, found {len(roots)}")
    adj: dict[str, list[dict]] = {}
    for br in branches:
        adj.setdefault(br["from"], []).append(br)
        adj.setdefault(br["to"], []).append(br)
    seen = {roots[0]}
    stack = [roots[0]]
    flipped: set[int] = set()
    while stack:
        n = stack.pop()
        for br in adj.get(n, []):
            if id(br) in flipped:
                continue
            other = br["to"] if br["from"] == n else br["from"]
            if other in seen:
                continue
            if br["to"] == n:
                br["from"], br["to"] = br["to"], br["from"]
            flipped.add(id(br))
            seen.add(other)
            stack.append(other)


def _need(d: Mapping, key: str, where: str):
    if key not in d:
        raise ParseError(f"{where}: missing field '{key}'")
    return d[key]


def _num(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}: expected a number, got {v!r}")
    x = float(v)
    if not math.isfinite(x):
        raise ValidationError(f"{where}: non-finite value")
    return x


def _check_keys(d: Any, allowed: set[str], where: str, strict: bool) -> None:
    if not isinstance(d, dict):
        raise ParseError(f"{where}: expected an object")
    if strict:
        extra = sorted(set(d) - allowed)
        if extra:
            raise ValidationError(f"{where}: unknown key '{extra[0]}'")


def _phases(v, where: str) -> tuple[str, ...]:
    if isinstance(v, str):
        v = list(v)
    if not isinstance(v, list) or not v:
        raise ValidationError(f"{where}: phases must be a nonempty subset of a,b,c")
    if any(p not in PHASES for p in v) or len(set(v)) != len(v):
        raise ValidationError(f"{where}: phases must be a nonempty subset of a,b,c")
    return tuple(p for p in PHASES if p in v)


def _matrix(v, n: int, where: str) -> np.ndarray:
    try:
        arr = np.array(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: impedance must be a numeric matrix") from exc
    if arr.shape != (n, n):
        raise ValidationError(f"{where}: impedance must be {n}x{n}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{where}: non-finite impedance")
    return _frozen(arr)


def case_from_dict(doc: Any, strict: bool = True) -> GridCase:
    """Validate a parsed case document and convert it to a per-unit GridCase."""
    _check_keys(doc, CASE_KEYS, "case", strict)
    for key in sorted(CASE_KEYS):
        _need(doc, key, "case")
    name = doc["name"]
    if not isinstance(name, str):
        raise ParseError("case: 'name' must be a string")
    base = _num(doc["base_mva"], "case.base_mva")
    if base <= 0:
        raise ValidationError("case.base_mva must be positive")
    hz = doc["horizon"]
    _check_keys(hz, HORIZON_KEYS, "horizon", strict)
    steps = _need(hz, "steps", "horizon")
    if isinstance(steps, bool) or not isinstance(steps, int) or steps < 1:
        raise ValidationError("horizon.steps must be a positive integer")
    dt = _num(_need(hz, "dt_hours", "horizon"), "horizon.dt_hours")
    if dt <= 0:
        raise ValidationError("horizon.dt_hours must be positive")

    raw_buses = doc["buses"]
    raw_branches = doc["branches"]
    raw_devices = doc["devices"]
    raw_fc = doc["forecasts"]
    for key, val in (("buses", raw_buses), ("branches", raw_branches), ("devices", raw_devices)):
        if not isinstance(val, list):
            raise ParseError(f"case.{key} must be a list")
    if not isinstance(raw_fc, dict):
        raise ParseError("case.forecasts must be an object")

    buses: list[Bus] = []
    bus_ids: set[str] = set()
    for i, b in enumerate(raw_buses):
        _check_keys(b, BUS_KEYS, f"bus[{i}]", strict)
        bid = _need(b, "id", f"bus[{i}]")
        if not isinstance(bid, str):
            raise ParseError(f"bus[{i}]: id must be a string")
        where = f"bus {bid}"
        if bid in bus_ids:
            raise ValidationError(f"{where}: duplicate id")
        bus_ids.add(bid)
        vmin = _num(_need(b, "vmin", where), where + ".vmin")
        vmax = _num(_need(b, "vmax", where), where + ".vmax")
        if not 0 < vmin < vmax:
            raise ValidationError(f"{where}: need 0 < vmin < vmax")
        is_root = b.get("is_root", False)
        if not isinstance(is_root, bool):
            raise ParseError(f"{where}: is_root must be a boolean")
        buses.append(Bus(bid, _phases(_need(b, "phases", where), where), vmin, vmax, is_root))

    branch_dicts = []
    branch_ids: set[str] = set()
    for i, br in enumerate(raw_branches):
        _check_keys(br, BRANCH_KEYS, f"branch[{i}]", strict)
        brid = _need(br, "id", f"branch[{i}]")
        if not isinstance(brid, str):
            raise ParseError(f"branch[{i}]: id must be a string")
        where = f"branch {brid}"
        if brid in branch_ids:
            raise ValidationError(f"{where}: duplicate id")
        branch_ids.add(brid)
        for key in ("from", "to", "phases", "r", "x", "smax"):
            _need(br, key, where)
        if br["from"] not in bus_ids or br["to"] not in bus_ids:
            raise ValidationError(f"{where}: unknown bus")
        if br["from"] == br["to"]:
            raise ValidationError(f"{where}: self loop")
        branch_dicts.append(dict(br))

    _orient([dict(id=b.id, is_root=b.is_root) for b in buses], branch_dicts)
    bus_by_id = {b.id: b for b in buses}
    branches: list[Branch] = []
    for br in branch_dicts:
        where = f"branch {br['id']}"
        ph = _phases(br["phases"], where)
        for end in (br["from"], br["to"]):
            if not set(ph) <= set(bus_by_id[end].phases):
                raise ValidationError(f"{where}: phases not shared by bus {end}")
        smax = _num(br["smax"], where + ".smax")
        if smax < 0:
            raise ValidationError(f"{where}: smax must be >= 0")
        branches.append(
            Branch(
                br["id"], br["from"], br["to"], ph,
                _matrix(br["r"], len(ph), where + ".r"),
                _matrix(br["x"], len(ph), where + ".x"),
                smax / base,
            )
        )
    if len(branches) != len(buses) - 1:
        raise TopologyError(
            f"case: radial network with {len(buses)} buses needs {len(buses) - 1} branches, "
            f"found {len(branches)}"
        )

    devices: list[Device] = []
    dev_ids: set[str] = set()
    for i, d in enumerate(raw_devices):
        _check_keys(d, DEVICE_KEYS, f"device[{i}]", strict)
        did = _need(d, "id", f"device[{i}]")
        if not isinstance(did, str):
            raise ParseError(f"device[{i}]: id must be a string")
        where = f"device {did}"
        if did in dev_ids:
            raise ValidationError(f"{where}: duplicate id")
        dev_ids.add(did)
        bus = _need(d, "bus", where)
        if bus not in bus_ids:
            raise ValidationError(f"{where}: unknown bus")
        kind = _need(d, "kind", where)
        if kind not in DEVICE_KINDS:
            raise ValidationError(f"{where}: kind must be one of {', '.join(DEVICE_KINDS)}")
        smax = _num(_need(d, "smax", where), where + ".smax")
        if smax < 0:
            raise ValidationError(f"{where}: smax must be >= 0")
        cost = d.get("cost", [])
        if not isinstance(cost, list):
            raise ParseError(f"{where}: cost must be a list")
        cost_t = tuple(_num(c, where + ".cost") for c in cost)
        if any(c < 0 for c in cost_t):
            raise NegativeCost(f"{where}: negative cost coefficient")
        rcost = _num(d.get("reserve_cost", 0.0), where + ".reserve_cost")
        if rcost < 0:
            raise NegativeCost(f"{where}: negative reserve cost")
        frac = _num(d.get("max_curtail_frac", 1.0), where + ".max_curtail_frac")
        if not 0 <= frac <= 1:
            raise ValidationError(f"{where}: max_curtail_frac must lie in [0, 1]")
        ramp = d.get("ramp")
        ramp_pu = None if ramp is None else _num(ramp, where + ".ramp") / base
        if ramp_pu is not None and ramp_pu < 0:
            raise ValidationError(f"{where}: ramp must be >= 0")
        extra = {}
        if kind == "storage":
            for key in ("emin", "emax", "e0", "pmax", "eta"):
                _need(d, key, where)
            emin = _num(d["emin"], where + ".emin")
            emax = _num(d["emax"], where + ".emax")
            e0 = _num(d["e0"], where + ".e0")
            pmax = _num(d["pmax"], where + ".pmax")
            eta = _num(d["eta"], where + ".eta")
            if not emin <= emax:
                raise ValidationError(f"{where}: emin exceeds emax")
            if not emin <= e0 <= emax:
                raise ValidationError(f"{where}: e0 outside [emin, emax]")
            if not 0 < eta <= 1:
                raise ValidationError(f"{where}: eta must lie in (0, 1]")
            if pmax < 0:
                raise ValidationError(f"{where}: pmax must be >= 0")
            extra = dict(
                emin_pu_h=emin / base, emax_pu_h=emax / base, e0_pu_h=e0 / base,
                pmax_pu=pmax / base, eta=eta,
            )
        devices.append(
            Device(
                did, bus, kind, smax / base, cost=cost_t, reserve_cost=rcost,
                max_curtail_frac=frac, ramp_pu=ramp_pu, **extra,
            )
        )

    forecasts: dict[str, Forecast] = {}
    for did, fc in raw_fc.items():
        where = f"forecast {did}"
        if did not in dev_ids:
            raise ValidationError(f"{where}: unknown device")
        _check_keys(fc, FORECAST_KEYS, where, strict)
        p = _need(fc, "p", where)
        q = fc.get("q", [0.0] * steps)
        if not isinstance(p, list) or not isinstance(q, list):
            raise ParseError(f"{where}: p and q must be lists")
        p_arr = np.array([_num(v, where + ".p") for v in p]) / base
        q_arr = np.array([_num(v, where + ".q") for v in q]) / base
        if len(p_arr) != steps or len(q_arr) != steps:
            raise ValidationError(f"{where}: series length must equal horizon steps {steps}")
        if np.any(p_arr < 0):
            raise ValidationError(f"{where}: p must be >= 0")
        kind = next(d.kind for d in devices if d.id == did)
        if kind == "load" and np.any(q_arr < 0):
            raise ValidationError(f"{where}: load q must be >= 0")
        if kind not in ("pv", "load"):
            raise ValidationError(f"{where}: forecasts apply to pv and load devices only")
        forecasts[did] = Forecast(_frozen(p_arr), _frozen(q_arr))
    for d in devices:
        if d.kind in ("pv", "load") and d.id not in forecasts:
            raise ValidationError(f"device {d.id}: missing forecast")

    case = GridCase(
        name=name, base_mva=base, horizon=Horizon(steps, dt),
        buses=tuple(buses), branches=tuple(branches), devices=tuple(devices),
        forecasts=forecasts,
    )
    downstream_map(case)
    for b in buses:
        if b.is_root:
            continue
        parent = case.parent_branch(b.id)
        if set(b.phases) != set(parent.phases):
            raise ValidationError(f"bus {b.id}: phases must match its feeding branch {parent.id}")
    return case


def load_case(path, strict: bool = True) -> GridCase:
    """Read and validate a JSON case file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read case file {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ParseError(f"case file {path} is not UTF-8") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON in {path}: {exc}") from exc
    return case_from_dict(doc, strict=strict)


def case_to_dict(case: GridCase) -> dict:
    """Inverse of :func:`case_from_dict`, back to MW/MWh units."""
    b = case.base_mva
    devices = []
    for d in case.devices:
        rec: dict[str, Any] = {
            "id": d.id, "bus": d.bus, "kind": d.kind, "smax": d.smax_pu * b,
            "cost": list(d.cost), "reserve_cost": d.reserve_cost,
            "max_curtail_frac": d.max_curtail_frac,
        }
        if d.ramp_pu is not None:
            rec["ramp"] = d.ramp_pu * b
        if d.kind == "storage":
            rec.update(
                emin=d.emin_pu_h * b, emax=d.emax_pu_h * b, e0=d.e0_pu_h * b,
                pmax=d.pmax_pu * b, eta=d.eta,
            )
        devices.append(rec)
    return {
        "name": case.name,
        "base_mva": b,
        "horizon": {"steps": case.K, "dt_hours": case.dt},
        "buses": [
            {"id": x.id, "phases": "".join(x.phases), "vmin": x.vmin_pu, "vmax": x.vmax_pu,
             "is_root": x.is_root}
            for x in case.buses
        ],
        "branches": [
            {"id": br.id, "from": br.from_bus, "to": br.to_bus, "phases": "".join(br.phases),
             "r": br.r_pu.tolist(), "x": br.x_pu.tolist(), "smax": br.smax_pu * b}
            for br in case.branches
        ],
        "devices": devices,
        "forecasts": {
            k: {"p": (f.p_pu * b).tolist(), "q": (f.q_pu * b).tolist()}
            for k, f in case.forecasts.items()
        },
    }


def save_case(case: GridCase, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=1), encoding="utf-8")
