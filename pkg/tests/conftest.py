"""Shared problems, solved families and probe runs for the test modules."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np
import pytest

from nlinclusion.config import build_problem, parse_config

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
FIXTURES = Path(__file__).resolve().parent / "fixtures"

OUTER_POLY = [[[2, 0, 0], 1.0], [[0, 0, 2], -1.0], [[0, 1, 0], 0.5], [[0, 0, 0], 0.3]]

AFFINE = {
    "data": {"family": "affine", "a": 0.0, "b": 1.0, "c": 0.0},
    "f_outer": [[[1, 0, 0], 1.0]],
    "epsilon_grid": [0.05, 0.1, 0.2],
}


def load_json(name: str) -> dict:
    return json.loads((CONFIGS / name).read_text())


def make_problem(obj: dict, **overrides):
    d = copy.deepcopy(obj)
    d.update(overrides)
    return build_problem(parse_config(d))


_ACCEPTANCE: list[str] = []


def record_acceptance(line: str) -> None:
    """Collect one acceptance line for the terminal summary."""
    _ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def affine_problem():
    return make_problem(AFFINE)


@pytest.fixture(scope="session")
def manufactured_problem():
    return make_problem(load_json("manufactured.json"))


@pytest.fixture(scope="session")
def polynomial_problem():
    return make_problem(load_json("polynomial.json"))


@pytest.fixture(scope="session")
def star_problem():
    return make_problem(load_json("star_manufactured.json"))


@pytest.fixture(scope="session")
def manufactured_family(manufactured_problem):
    from nlinclusion.continuation import continue_family

    return continue_family(manufactured_problem)


@pytest.fixture(scope="session")
def polynomial_family_record(polynomial_problem):
    from nlinclusion.continuation import continue_family

    return continue_family(polynomial_problem)


@pytest.fixture(scope="session")
def probe_runs(manufactured_problem, polynomial_problem):
    """Full probe runs (family, certificates, probes, competing starts) for both nonlinear families."""
    from nlinclusion.cli import run_probes

    return {
        "manufactured": (manufactured_problem, *run_probes(manufactured_problem, threads=2)),
        "polynomial": (polynomial_problem, *run_probes(polynomial_problem, threads=2)),
    }


@pytest.fixture(scope="session")
def delta_hat_floors():
    return json.loads((FIXTURES / "delta_hat_floors.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
