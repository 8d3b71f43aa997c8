"""Cyber-physical event catalog, disturbance distributions, attack transforms and mode selection."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError, ParseError, SignError, UnknownEvent, ValidationError

EVENT_KINDS = (
    "dg_trip", "pv_trip", "dg_cyber", "pv_cyber", "load_cyber",
    "pv_forecast_err", "load_forecast_err", "weather_pv_loss", "weather_load_loss",
)
LOCATION_KIND = {
    "dg_trip": "dg", "pv_trip": "pv", "dg_cyber": "dg", "pv_cyber": "pv", "load_cyber": "load",
    "pv_forecast_err": "pv", "load_forecast_err": "load", "weather_pv_loss": "pv",
    "weather_load_loss": "load",
}
MODES = ("Normal", "CyberThreat", "ExtremeLoadLoss", "Blackout")
_NORMAL = ("pv_forecast_err", "load_forecast_err")
_CYBER = _NORMAL + ("dg_cyber", "pv_cyber", "load_cyber")
_LOADLOSS = _CYBER + ("weather_load_loss",)
MODE_EVENT_KINDS = {
    "Normal": _NORMAL,
    "CyberThreat": _CYBER,
    "ExtremeLoadLoss": _LOADLOSS,
    "Blackout": _LOADLOSS + ("dg_trip", "pv_trip", "weather_pv_loss"),
}
FAMILIES = ("gaussian", "uniform", "two_point", "gaussian_mixture", "exponential_tail")


@dataclass(frozen=True)
class DistributionSpec:
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.params
        try:
            if self.family == "gaussian":
                ok = float(p["std"]) >= 0 and math.isfinite(float(p["mean"]))
            elif self.family == "uniform":
                ok = float(p["lo"]) <= float(p["hi"])
            elif self.family == "two_point":
                ok = (len(p["values"]) == 2 and len(p["probs"]) == 2
                      and min(p["probs"]) >= 0 and abs(sum(p["probs"]) - 1.0) <= 1e-12)
            elif self.family == "gaussian_mixture":
                w = p["weights"]
                ok = (len(w) == len(p["means"]) == len(p["stds"]) > 0 and min(w) >= 0
                      and abs(sum(w) - 1.0) <= 1e-12 and min(p["stds"]) >= 0)
            elif self.family == "exponential_tail":
                ok = float(p["scale"]) > 0 and p.get("sign", 1) in (1, -1) and float(p["cap"]) > 0
            else:
                raise ValidationError(f"unknown distribution family {self.family!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{self.family}: missing or malformed parameter ({exc})") from exc
        if not ok:
            raise ValidationError(f"{self.family}: invalid parameters {p}")
        lo, hi = self.support
        if not lo <= hi:
            raise ValidationError(f"{self.family}: empty support")

    @property
    def support(self) -> tuple[float, float]:
        p = self.params
        if self.family == "gaussian":
            mu, sd = float(p["mean"]), float(p["std"])
            return float(p.get("lo", mu - 6 * sd)), float(p.get("hi", mu + 6 * sd))
        if self.family == "uniform":
            return float(p["lo"]), float(p["hi"])
        if self.family == "two_point":
            return float(min(p["values"])), float(max(p["values"]))
        if self.family == "gaussian_mixture":
            lo = min(m - 6 * s for m, s in zip(p["means"], p["stds"]))
            hi = max(m + 6 * s for m, s in zip(p["means"], p["stds"]))
            return float(p.get("lo", lo)), float(p.get("hi", hi))
        cap = float(p["cap"])
        return (-cap, 0.0) if p.get("sign", 1) == -1 else (0.0, cap)

    @property
    def mean(self) -> float:
        p = self.params
        if self.family == "gaussian":
            return float(p["mean"])
        if self.family == "uniform":
            return 0.5 * (float(p["lo"]) + float(p["hi"]))
        if self.family == "two_point":
            return float(np.dot(p["values"], p["probs"]))
        if self.family == "gaussian_mixture":
            return float(np.dot(p["weights"], p["means"]))
        raise DomainError("exponential_tail mean depends on its cap; sample instead")

    def sample(self, rng: np.random.Generator, size=None):
        p = self.params
        if self.family == "gaussian":
            x = rng.normal(float(p["mean"]), float(p["std"]), size)
        elif self.family == "uniform":
            x = rng.uniform(float(p["lo"]), float(p["hi"]), size)
        elif self.family == "two_point":
            u = rng.random(size)
            x = np.where(u < p["probs"][0], float(p["values"][0]), float(p["values"][1]))
        elif self.family == "gaussian_mixture":
            u = rng.random(size)
            comp = np.searchsorted(np.cumsum(p["weights"]), u, side="right")
            comp = np.minimum(comp, len(p["weights"]) - 1)
            z = rng.standard_normal(size)
            x = np.asarray(p["means"], float)[comp] + np.asarray(p["stds"], float)[comp] * z
        else:
            x = p.get("sign", 1) * rng.exponential(float(p["scale"]), size)
        lo, hi = self.support
        x = np.clip(x, lo, hi)
        return float(x) if size is None else x

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}


@dataclass(frozen=True)
class Event:
    id: str
    kind: str
    locations: tuple[str, ...]
    distribution: DistributionSpec
    impact: float = 1.0


@dataclass(frozen=True)
class ModeSchedule:
    windows: tuple[tuple[int, int], ...]    # half-open [from, to)
    modes: tuple[str, ...]
    events: tuple[tuple[str, ...], ...] = ()
    scores: tuple[float, ...] = ()

    def window_index(self, k: int) -> int:
        for i, (a, b) in enumerate(self.windows):
            if a <= k < b:
                return i
        raise DomainError(f"step {k} is outside every mode window")

    def mode_at(self, k: int) -> str:
        return self.modes[self.window_index(k)]

    def to_dict(self) -> dict:
        return {
            "windows": [{"from": a, "to": b} for a, b in self.windows],
            "modes": list(self.modes),
            "events": [list(e) for e in self.events],
            "scores": list(self.scores),
        }


@dataclass(frozen=True)
class EventModel:
    """Catalog, per-window event-location probabilities and mode-selection inputs."""

    events: tuple[Event, ...]
    matrix: tuple[tuple[np.ndarray, ...], ...]   # window -> event -> per-location probability
    windows: tuple[tuple[int, int], ...]
    thresholds: tuple[float, ...] | None = None
    impact_series: tuple[float, ...] | None = None

    def event(self, event_id: str) -> Event:
        for e in self.events:
            if e.id == event_id:
                return e
        raise UnknownEvent(event_id)

    def index(self, event_id: str) -> int:
        for i, e in enumerate(self.events):
            if e.id == event_id:
                return i
        raise UnknownEvent(event_id)

    def prob(self, window: int, event_idx: int) -> np.ndarray:
        return self.matrix[window][event_idx]

    def schedule(self) -> ModeSchedule:
        impacts = self.impact_series or (1.0,) * len(self.windows)
        weighted = [[m * e.impact for m, e in zip(win, self.events)] for win in self.matrix]
        sched = select_modes(weighted, impacts, self.thresholds, self.windows)
        subsets = tuple(
            tuple(e.id for e in self.events if e.kind in MODE_EVENT_KINDS[mode])
            for mode in sched.modes
        )
        return ModeSchedule(sched.windows, sched.modes, subsets, sched.scores)


def select_modes(matrix, impact: Sequence, thresholds: Sequence[float] | None = None,
                 windows=None) -> ModeSchedule:
    """Map each window's expected impact ``impact[w] * max p[w]`` to a severity mode.

    The mode index counts thresholds the score reaches, so ties go to the more
    severe mode; a score of zero is always Normal.  Default thresholds are the
    quartiles of the score series.
    """
    impact = np.asarray(impact, dtype=float)
    nwin = len(impact)
    if windows is None:
        windows = tuple((i, i + 1) for i in range(nwin))
    scores = []
    for w in range(nwin):
        table = matrix[w] if _is_windowed(matrix) else matrix
        pmax = max((float(np.max(row)) for row in table if len(row)), default=0.0)
        scores.append(pmax * float(impact[w]))
    scores = np.array(scores)
    if thresholds is None:
        thresholds = np.quantile(scores, [0.25, 0.5, 0.75]) if nwin else np.zeros(3)
    th = np.sort(np.asarray(thresholds, dtype=float))
    modes = []
    for s in scores:
        level = 0 if s <= 0 else int(np.sum(s >= th))
        modes.append(MODES[min(level, len(MODES) - 1)])
    return ModeSchedule(tuple(tuple(map(int, w)) for w in windows), tuple(modes),
                        scores=tuple(float(s) for s in scores))


def _is_windowed(matrix) -> bool:
    try:
        first = matrix[0][0]
        return hasattr(first, "__len__")
    except (IndexError, TypeError):
        return False


def load_events(path, case=None, strict: bool = True) -> EventModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read events file {path}: {exc}") from exc
    return events_from_dict(doc, case, strict)


def events_from_dict(doc, case=None, strict: bool = True) -> EventModel:
    if not isinstance(doc, dict):
        raise ParseError("events file must be a JSON object")
    allowed = {"events", "probability_matrix", "windows", "thresholds", "impact_series"}
    if strict and set(doc) - allowed:
        raise ValidationError(f"events: unknown key '{sorted(set(doc) - allowed)[0]}'")
    try:
        raw_events, raw_matrix, raw_windows = doc["events"], doc["probability_matrix"], doc["windows"]
    except KeyError as exc:
        raise ParseError(f"events: missing field {exc}") from exc
    events = []
    seen = set()
    for i, e in enumerate(raw_events):
        try:
            ev = Event(str(e["id"]), str(e["kind"]), tuple(e["locations"]),
                       DistributionSpec(e["distribution"]["family"], dict(e["distribution"].get("params", {}))),
                       float(e.get("impact", 1.0)))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"event[{i}]: malformed record ({exc})") from exc
        if ev.kind not in EVENT_KINDS:
            raise ValidationError(f"event {ev.id}: unknown kind {ev.kind!r}")
        if ev.id in seen:
            raise ValidationError(f"event {ev.id}: duplicate id")
        seen.add(ev.id)
        if case is not None:
            for loc in ev.locations:
                try:
                    dev = case.device(loc)
                except KeyError:
                    raise ValidationError(f"event {ev.id}: unknown location {loc}") from None
                if dev.kind != LOCATION_KIND[ev.kind]:
                    raise ValidationError(f"event {ev.id}: {loc} is a {dev.kind}, not a "
                                          f"{LOCATION_KIND[ev.kind]}")
        events.append(ev)
    windows = tuple((int(w["from"]), int(w["to"])) for w in raw_windows)
    if not windows or windows[0][0] != 0 or any(a >= b for a, b in windows) \
            or any(windows[i][1] != windows[i + 1][0] for i in range(len(windows) - 1)):
        raise ValidationError("events: windows must partition the horizon from step 0")
    if case is not None and windows[-1][1] != case.K:
        raise ValidationError(f"events: windows end at {windows[-1][1]}, horizon is {case.K}")
    per_window = raw_matrix if _is_windowed(raw_matrix) else [raw_matrix] * len(windows)
    if len(per_window) != len(windows):
        raise ValidationError("events: one probability table per window is required")
    matrix = []
    for w, table in enumerate(per_window):
        if len(table) != len(events):
            raise ValidationError(f"events: window {w} table needs one row per event")
        rows = []
        for ev, row in zip(events, table):
            arr = np.asarray(row, dtype=float)
            if arr.shape != (len(ev.locations),):
                raise ValidationError(f"event {ev.id}: window {w} row must list one probability per location")
            if np.any(arr < 0) or np.any(arr > 1):
                raise ValidationError(f"event {ev.id}: probabilities must lie in [0, 1]")
            arr.setflags(write=False)
            rows.append(arr)
        matrix.append(tuple(rows))
    th = doc.get("thresholds")
    imp = doc.get("impact_series")
    if imp is not None and len(imp) != len(windows):
        raise ValidationError("events: impact_series needs one entry per window")
    return EventModel(tuple(events), tuple(matrix), windows,
                      None if th is None else tuple(float(t) for t in th),
                      None if imp is None else tuple(float(v) for v in imp))


def sample_event(catalog: EventModel, event_id: str, rng: np.random.Generator, size=None) -> np.ndarray:
    """One magnitude per event location (or ``size`` rows of them), clipped to support."""
    ev = catalog.event(event_id)
    shape = (len(ev.locations),) if size is None else (size, len(ev.locations))
    return np.asarray(ev.distribution.sample(rng, shape), dtype=float)


def _check_eps(eps) -> np.ndarray:
    e = np.asarray(eps, dtype=float)
    if np.any(e < -1) or np.any(e > 1) or not np.all(np.isfinite(e)):
        raise DomainError("attack magnitude must lie in [-1, 1]")
    return e


def attack_scale(series, eps):
    """Telemetry scaled by ``1 + eps`` (``eps`` scalar or per-step)."""
    return np.asarray(series, dtype=float) * (1.0 + _check_eps(eps))


def attack_replay(series, delta: int):
    """Telemetry replayed ``delta`` steps late; early steps hold the first value."""
    if int(delta) != delta or delta < 0:
        raise DomainError("replay delay must be a nonnegative integer")
    s = np.asarray(series, dtype=float)
    idx = np.maximum(np.arange(len(s)) - int(delta), 0)
    return s[idx]


class CoordinatedAttack(NamedTuple):
    load: np.ndarray
    pv: np.ndarray
    hidden_imbalance: np.ndarray


def attack_coordinated(load, pv, eps_l, eps_pv) -> CoordinatedAttack:
    """Under-report load and over-report PV; the hidden imbalance is true minus reported net demand."""
    el, ep = _check_eps(eps_l), _check_eps(eps_pv)
    if not (np.all(el < 0) and np.all(ep > 0)):
        raise SignError("coordinated attack needs eps_load < 0 < eps_pv")
    L, S = np.asarray(load, dtype=float), np.asarray(pv, dtype=float)
    Lm, Sm = L * (1 + el), S * (1 + ep)
    return CoordinatedAttack(Lm, Sm, (L - S) - (Lm - Sm))
