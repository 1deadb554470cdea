import numpy as np
import pytest

from qpat import mesh as fem
from qpat.forward import OpticalCoefficients
from qpat.phantoms import default_phantoms, generate_phantom

ODD_ORDERS = list(range(1, 18, 2))


@pytest.fixture(scope="session")
def mesh8():
    return fem.generate_uniform_mesh(8)


@pytest.fixture(scope="session")
def mesh16():
    return fem.generate_uniform_mesh(16)


@pytest.fixture(scope="session")
def mesh32():
    return fem.generate_uniform_mesh(32)


def phantom_coefficients(mesh, g=0.8):
    ph = default_phantoms()
    return OpticalCoefficients(*(generate_phantom(ph[k], mesh)
                                 for k in ("sigma_a", "sigma_s", "upsilon")), g)


@pytest.fixture(scope="session")
def coeffs16(mesh16):
    return phantom_coefficients(mesh16)


@pytest.fixture(scope="session")
def coeffs32(mesh32):
    return phantom_coefficients(mesh32)


def constant_coefficients(mesh, sigma_a=0.02, sigma_s=8.0, upsilon=1.0, g=0.8):
    one = np.ones(mesh.n_nodes)
    return OpticalCoefficients(sigma_a * one, sigma_s * one, upsilon * one, g)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
