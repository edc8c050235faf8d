import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mpglab import scenario  # noqa: E402
from mpglab.game_model import ConjectureSet, Dynamics, StageCost  # noqa: E402
from mpglab.mpg import ControllerBank  # noqa: E402
from mpglab.polytope import Polytope  # noqa: E402


@pytest.fixture(scope="session")
def example1():
    return scenario.load(scenario.shipped("example1"))


@pytest.fixture(scope="session")
def example2():
    return scenario.load(scenario.shipped("example2"))


@pytest.fixture(scope="session")
def example3():
    return scenario.load(scenario.shipped("example3"))


def homogeneous_bank(dyn, costs, K, Z, **kw):
    conj = [ConjectureSet(j, costs, K) for j in range(dyn.n_agents)]
    return ControllerBank(dyn, conj, Z, **kw)


def scalar_bank(A=0.5, b=1.0, q=0.0, r=1.0, Qx=0.0, K=2, lo=-1.0, hi=1.0, extra=None):
    """One agent, one state: handy closed forms."""
    dyn = Dynamics([[A]], [[[b]]])
    c = StageCost([[Qx]], [q], [[r]], (1,))
    if extra is None:
        Z = Polytope.from_box(lo * np.ones(K), hi * np.ones(K))
    else:
        Z = Polytope.from_box(lo * np.ones(K), hi * np.ones(K), C=extra[0], d=extra[1])
    return ControllerBank(dyn, [ConjectureSet(0, (c,), K)], Z)


# acceptance criteria report their verdicts here; printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
