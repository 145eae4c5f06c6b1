import numpy as np
import pytest

from stochnsf import ModelParams, ScalarField, SystemState, TorusGrid, VectorField, build_noise_basis
from stochnsf.spectral import fourier_project, leray_project


@pytest.fixture(scope="session")
def grid():
    return TorusGrid(4, 16)


@pytest.fixture(scope="session")
def small_grid():
    return TorusGrid(2)


@pytest.fixture(scope="session")
def basis(grid):
    return build_noise_basis([((1, 0, 0), 0.3), ((0, 1, 1), 0.2)], [((0, 0, 1), 0.2)], grid)


@pytest.fixture(scope="session")
def small_basis(small_grid):
    return build_noise_basis([((1, 0, 0), 0.3)], [((0, 1, 0), 0.2)], small_grid)


@pytest.fixture(scope="session")
def params():
    return ModelParams(delta=0.01, epsilon=0.001)


def random_scalar(grid, rng, cutoff=None):
    f = ScalarField.from_values(grid, rng.standard_normal((grid.n,) * 3))
    return fourier_project(f, grid.m if cutoff is None else cutoff)


def random_vector(grid, rng, cutoff=None):
    v = VectorField.from_values(grid, rng.standard_normal((3,) + (grid.n,) * 3))
    return fourier_project(v, grid.m if cutoff is None else cutoff)


def positive_state(grid, rng, mean=2.0, variation=0.5, velocity=0.5, cutoff=2):
    u = leray_project(random_vector(grid, rng, cutoff))
    u = u * (velocity / float(np.abs(u.values()).max()))
    phi = random_scalar(grid, rng, cutoff)
    phi = phi - ScalarField.constant(grid, phi.mean())
    phi = phi * (variation / float(np.abs(phi.values(grid.fine_n)).max()))
    return SystemState(VectorField(grid, u.coeffs, divergence_free=True), ScalarField.constant(grid, mean) + phi)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for the acceptance summary."""

    def record(label: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
