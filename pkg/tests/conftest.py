import copy
import json
from pathlib import Path

import numpy as np
import pytest

from gridreserve import conic
from gridreserve.netmodel import case_from_dict, load_case

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def fixture_path(name: str) -> Path:
    return FIXTURES / name


def fixture_doc(name: str) -> dict:
    return json.loads(fixture_path(name).read_text(encoding="utf-8"))


def case_with(name: str = "twobus.json", edit=None, strict: bool = True):
    """Load a fixture document, apply ``edit(doc)`` in place, and build the case."""
    doc = copy.deepcopy(fixture_doc(name))
    if edit is not None:
        edit(doc)
    return case_from_dict(doc, strict)


def assert_report_contract(report, tol=conic.DEFAULT_TOL_FEAS):
    assert report.ok, report.status
    assert report.primal_residual <= tol
    assert report.bound_violation <= tol
    assert report.cone_violation <= tol


@pytest.fixture(scope="session")
def twobus():
    return load_case(fixture_path("twobus.json"))


@pytest.fixture(scope="session")
def fourbus():
    return load_case(fixture_path("fourbus.json"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
