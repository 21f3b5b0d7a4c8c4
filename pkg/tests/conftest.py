import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from snofcert.snof import NonlinearitySpec, Snof

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "snofcert" / "fixtures"
BOILER = FIXTURES / "boiler"
TOY = FIXTURES / "toy"

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    def _record(n, ok, detail):
        ACCEPTANCE.append((n, bool(ok), detail))
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return _record


@pytest.fixture
def boiler_manifest():
    from snofcert.plant_loop import load_loop_manifest

    return load_loop_manifest(BOILER / "loop.json")


def load_json(path):
    return json.loads(Path(path).read_text())


def scalar_lure(A=0.5, B=0.4, C=1.0, bx=0.1, kind="tanh"):
    return Snof(A=[[A]], Bp=[[B]], Bu=np.zeros((1, 0)), Cq=[[C]], Dqp=[[0.0]], Dqu=np.zeros((1, 0)),
                Cy=[[1.0]], Dyp=[[0.0]], Dyu=np.zeros((1, 0)), beta_x=[bx],
                nl=NonlinearitySpec.uniform(kind, 1))


def lti(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = len(A)
    return Snof(A=A, Bp=np.zeros((n, 0)), Bu=np.zeros((n, 0)), Cq=np.zeros((0, n)), Dqp=np.zeros((0, 0)),
                Dqu=np.zeros((0, 0)), Cy=np.eye(n), Dyp=np.zeros((n, 0)), Dyu=np.zeros((n, 0)),
                nl=NonlinearitySpec(()))
