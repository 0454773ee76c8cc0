import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from plateopt import fem
from plateopt.eig import principal_eigenpair
from plateopt.mesh import generate_disk, generate_rectangle
from plateopt.oracle import double_hexagon

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SQRT2 = math.sqrt(2.0)


def eigenvalue(mesh, bc, rho=None, **kw):
    op = fem.assemble(mesh, bc)
    rho = np.ones(mesh.n_triangles) if rho is None else rho
    return principal_eigenpair(op, fem.assemble_mass(mesh, rho, op), **kw).value


@pytest.fixture(scope="session")
def square8():
    return generate_rectangle(1, 1, 0.5, pattern="uniform")


@pytest.fixture(scope="session")
def hexagon10():
    return double_hexagon()


@pytest.fixture(scope="session")
def small_disk():
    return generate_disk(1.0, 0.2)


@pytest.fixture(scope="session")
def small_meshes():
    return [generate_rectangle(1, 1, 0.25), generate_rectangle(2, 1, 0.2, pattern="uniform"),
            generate_disk(1.0, 0.25)]


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[num])
