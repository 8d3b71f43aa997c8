import numpy as np
import pytest

from conftest import assert_report_contract
from gridreserve import conic
from gridreserve.conic import ConicProgram, dump_lp, relaxation_gap, solve
from gridreserve.errors import DomainError, DuplicateName, UnknownIndex


def test_add_var_indices():
    p = ConicProgram()
    assert p.add_var("Pg[0]", 0, 2.5) == 0
    assert p.add_var("Pg[1]") == 1
    with pytest.raises(DuplicateName):
        p.add_var("Pg[0]")


def test_unknown_index():
    p = ConicProgram()
    p.add_var("x")
    with pytest.raises(UnknownIndex):
        p.add_eq({3: 1.0}, 0.0)
    with pytest.raises(UnknownIndex):
        p.add_soc([0, 5])


def test_cone_head_reuse_rejected():
    p = ConicProgram()
    t, a, b = (p.add_var(n) for n in "tab")
    p.add_soc([t, a])
    with pytest.raises(DuplicateName):
        p.add_soc([t, b])


def test_pinned_by_equality():
    p = ConicProgram()
    x = p.add_var("x0", cost=1.0)
    p.add_eq({x: 1.0}, 1.0)
    rep = solve(p)
    assert_report_contract(rep)
    assert rep.x[x] == pytest.approx(1.0, abs=1e-8)


def test_soc_norm():
    p = ConicProgram()
    t = p.add_var("t", cost=1.0)
    a = p.add_var("p", 0.3, 0.3)
    b = p.add_var("q", 0.4, 0.4)
    p.add_soc([t, a, b])
    rep = solve(p)
    assert_report_contract(rep)
    assert rep.objective == pytest.approx(0.5, abs=1e-7)


def test_status_optimal_infeasible_unbounded():
    p = ConicProgram()
    x = p.add_var("x", 0, 10, cost=1.0)
    p.add_eq({x: 1.0}, 3.0)
    rep = solve(p)
    assert rep.status == conic.OPTIMAL and rep.objective == pytest.approx(3.0, abs=1e-7)

    p = ConicProgram()
    x = p.add_var("x", 4, 10)
    p.add_eq({x: 1.0}, 3.0)
    assert solve(p).status == conic.INFEASIBLE

    p = ConicProgram()
    p.add_var("x", cost=-1.0)
    assert solve(p).status == conic.UNBOUNDED


def test_unbounded_with_rows():
    p = ConicProgram()
    x = p.add_var("x", cost=-1.0)
    y = p.add_var("y")
    p.add_eq({x: 1.0, y: -1.0}, 0.0)
    assert solve(p).status == conic.UNBOUNDED


def test_add_le_slack():
    p = ConicProgram()
    x = p.add_var("x", cost=-1.0)
    p.add_le({x: 2.0}, 3.0, "cap")
    rep = solve(p)
    assert rep.x[x] == pytest.approx(1.5, abs=1e-7)
    assert "slack:cap" in p.names


def _lp(rng, n=6, m=3):
    p = ConicProgram()
    for j in range(n):
        p.add_var(f"x{j}", 0.0, 5.0, cost=float(rng.uniform(-1, 1)))
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(0.5, 4.5, n)
    for i in range(m):
        p.add_eq({j: float(A[i, j]) for j in range(n)}, float(A[i] @ x0))
    t = p.add_var("t", cost=0.1)
    p.add_soc([t, 0, 1, 2])
    return p


def test_scaling_objective(rng):
    p = _lp(rng)
    base = solve(p)
    assert_report_contract(base)
    q = _lp(np.random.default_rng(20240611))
    q.c = [3.0 * v for v in q.c]
    scaled = solve(q)
    assert scaled.objective == pytest.approx(3.0 * base.objective, rel=1e-6, abs=1e-7)
    np.testing.assert_allclose(scaled.x, base.x, atol=1e-5)


def test_bitwise_repeatable(rng):
    p = _lp(rng)
    a, b = solve(p), solve(p)
    assert a.x.tobytes() == b.x.tobytes() and a.objective == b.objective


def test_relaxation_gap():
    assert relaxation_gap(105, 100) == pytest.approx(4.761904761904762, rel=1e-15)
    assert relaxation_gap(100, 100) == 0.0
    with pytest.raises(DomainError):
        relaxation_gap(100, 105)
    with pytest.raises(DomainError):
        relaxation_gap(0, 0)


def test_dump_lp_lists_everything():
    p = ConicProgram()
    t = p.add_var("t", cost=1.0)
    a = p.add_var("a", 0.3, 0.3)
    p.add_eq({t: 1.0, a: -2.0}, 0.0, "link")
    p.add_soc([t, a])
    text = dump_lp(p)
    assert "link: +1 t -2 a = 0" in text
    assert "||(a)|| <= t" in text
    assert text.endswith("END\n")
