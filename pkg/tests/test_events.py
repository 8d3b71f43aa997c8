import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fixture_doc, fixture_path
from gridreserve.errors import DomainError, SignError, UnknownEvent, ValidationError
from gridreserve.events import (
    MODE_EVENT_KINDS, MODES, DistributionSpec, attack_coordinated, attack_replay, attack_scale,
    events_from_dict, load_events, sample_event, select_modes,
)


@pytest.fixture(scope="module")
def catalog(fourbus):
    return load_events(fixture_path("fourbus_events.json"), fourbus)


# mode selection --------------------------------------------------------------------------

def test_fixture_mode_sequence(catalog):
    sched = catalog.schedule()
    assert sched.modes == ("Normal", "CyberThreat", "ExtremeLoadLoss", "Blackout")
    assert sched.windows == ((0, 15), (15, 30), (30, 45), (45, 60))
    assert sched.mode_at(20) == "CyberThreat"
    with pytest.raises(DomainError):
        sched.window_index(60)


def test_mode_event_subsets_are_cumulative(catalog):
    sched = catalog.schedule()
    assert sched.events[0] == ("pv_err", "load_err")
    assert "storm_load" in sched.events[2] and "dg_out" not in sched.events[2]
    assert set(sched.events[3]) == {e.id for e in catalog.events}
    for a, b in zip(MODES, MODES[1:]):
        assert set(MODE_EVENT_KINDS[a]) < set(MODE_EVENT_KINDS[b])


def test_all_zero_probabilities_are_normal():
    matrix = [[0.0, 0.0], [0.0]]
    sched = select_modes(matrix, [0.3, 2.0, 9.0], thresholds=[0.1, 0.2, 0.3])
    assert sched.modes == ("Normal",) * 3
    # default quartile thresholds of an all-zero score series also give Normal
    assert select_modes(matrix, [1.0, 1.0]).modes == ("Normal", "Normal")


def test_ties_go_to_higher_severity():
    sched = select_modes([[1.0]], [0.1, 0.2, 0.3, 0.35], thresholds=[0.1, 0.2, 0.3])
    assert sched.modes == ("CyberThreat", "ExtremeLoadLoss", "Blackout", "Blackout")


@settings(max_examples=80)
@given(st.lists(st.floats(0, 5), min_size=1, max_size=8), st.integers(0, 7), st.floats(0, 3))
def test_modes_monotone_and_idempotent(impact, i, bump):
    th = [0.5, 1.5, 3.0]
    matrix = [[0.2, 0.9], [0.4]]
    before = select_modes(matrix, impact, th)
    assert select_modes(matrix, impact, th) == before
    raised = list(impact)
    raised[i % len(impact)] += bump
    after = select_modes(matrix, raised, th)
    rank = {m: j for j, m in enumerate(MODES)}
    assert all(rank[b] <= rank[a] for b, a in zip(before.modes, after.modes))


# attack transforms ---------------------------------------------------------------------

def test_attack_scale_examples():
    assert attack_scale([1.0], 0.1) == pytest.approx([1.1])
    assert attack_scale([0.3, 0.7], -1.0).tolist() == [0.0, 0.0]
    assert attack_scale([1.0, 2.0], [0.1, -0.5]) == pytest.approx([1.1, 1.0])
    with pytest.raises(DomainError):
        attack_scale([1.0], 1.5)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
def test_identity_parameters_are_bitwise(series):
    s = np.array(series)
    assert attack_scale(s, 0.0).tobytes() == s.tobytes()
    assert attack_replay(s, 0).tobytes() == s.tobytes()


def test_attack_replay():
    assert attack_replay([1, 2, 3, 4], 2).tolist() == [1, 1, 1, 2]
    assert attack_replay([5, 6, 7], 9).tolist() == [5, 5, 5]
    with pytest.raises(DomainError):
        attack_replay([1, 2], -1)


def test_attack_coordinated():
    out = attack_coordinated([1.0], [0.5], -0.2, 0.2)
    assert out.load == pytest.approx([0.8])
    assert out.pv == pytest.approx([0.6])
    assert out.hidden_imbalance == pytest.approx([0.3])
    zero = attack_coordinated(np.zeros(3), np.zeros(3), -0.1, 0.1)
    assert not np.any(zero.hidden_imbalance)
    for el, ep in ((0.0, 0.0), (0.1, 0.2), (-0.1, -0.2)):
        with pytest.raises(SignError):
            attack_coordinated([1.0], [1.0], el, ep)


# distributions -------------------------------------------------------------------------

def test_two_point_law_of_large_numbers(catalog):
    x = sample_event(catalog, "dg_out", np.random.default_rng(7), size=100_000)
    assert x.shape == (100_000, 2)
    assert abs(x[:, 0].mean() + 0.1) <= 0.005
    again = sample_event(catalog, "dg_out", np.random.default_rng(7), size=100_000)
    assert np.array_equal(x, again)


def test_degenerate_families(rng):
    assert np.all(DistributionSpec("gaussian", {"mean": 0, "std": 0}).sample(rng, 50) == 0.0)
    assert np.all(DistributionSpec("uniform", {"lo": 0.4, "hi": 0.4}).sample(rng, 50) == 0.4)


_SPECS = [
    DistributionSpec("gaussian", {"mean": 0.1, "std": 0.5, "lo": -0.2, "hi": 0.3}),
    DistributionSpec("gaussian", {"mean": 0.0, "std": 1.0}),
    DistributionSpec("uniform", {"lo": -0.3, "hi": -0.1}),
    DistributionSpec("two_point", {"values": [0.0, -1.0], "probs": [0.9, 0.1]}),
    DistributionSpec("gaussian_mixture", {"weights": [0.3, 0.7], "means": [-1, 2], "stds": [0.1, 0.5]}),
    DistributionSpec("exponential_tail", {"scale": 0.2, "sign": -1, "cap": 0.5}),
]


@pytest.mark.parametrize("spec", _SPECS, ids=lambda s: s.family)
def test_draws_respect_support(spec):
    lo, hi = spec.support
    x = spec.sample(np.random.default_rng(11), 1_000_000)
    assert lo <= x.min() and x.max() <= hi


def test_mixture_mean(rng):
    spec = _SPECS[4]
    assert spec.sample(rng, 200_000).mean() == pytest.approx(spec.mean, abs=0.01)


@pytest.mark.parametrize("family, params", [
    ("gaussian", {"mean": 0, "std": -1}),
    ("uniform", {"lo": 1, "hi": 0}),
    ("two_point", {"values": [0, 1], "probs": [0.5, 0.6]}),
    ("exponential_tail", {"scale": 0.1, "sign": 2, "cap": 1}),
    ("cauchy", {}),
    ("gaussian", {"std": 1}),
])
def test_bad_distribution_params(family, params):
    with pytest.raises(ValidationError):
        DistributionSpec(family, params)


# catalog file --------------------------------------------------------------------------

def test_unknown_event(catalog, rng):
    with pytest.raises(UnknownEvent):
        sample_event(catalog, "meteor", rng)


def _edited(edit):
    doc = copy.deepcopy(fixture_doc("fourbus_events.json"))
    edit(doc)
    return doc


@pytest.mark.parametrize("edit, msg", [
    (lambda d: d.update(extra=1), "unknown key"),
    (lambda d: d["events"][0].update(kind="volcano"), "unknown kind"),
    (lambda d: d["events"][0].update(locations=["dg_big", "pv2"]), "not a pv"),
    (lambda d: d["windows"].__setitem__(1, {"from": 16, "to": 30}), "partition"),
    (lambda d: d["probability_matrix"].pop(), "one probability table"),
    (lambda d: d["probability_matrix"][0].__setitem__(2, [1.5]), r"\[0, 1\]"),
    (lambda d: d["probability_matrix"][0].__setitem__(2, [0.1, 0.1]), "one probability per location"),
])
def test_catalog_validation(fourbus, edit, msg):
    with pytest.raises(ValidationError, match=msg):
        events_from_dict(_edited(edit), fourbus)


def test_catalog_horizon_mismatch(fourbus):
    doc = _edited(lambda d: d["windows"][-1].update(to=59))
    with pytest.raises(ValidationError, match="horizon"):
        events_from_dict(doc, fourbus)
    # without a case the same windows are acceptable
    assert events_from_dict(doc).windows[-1] == (45, 59)


def test_shared_matrix_broadcasts(fourbus):
    doc = _edited(lambda d: d.update(probability_matrix=d["probability_matrix"][1]))
    model = events_from_dict(doc, fourbus)
    assert all(np.array_equal(model.prob(w, 2), [0.5]) for w in range(4))
