"""Shared fixtures: the expensive round trips run once per session."""

import time

import pytest

from ticgo.dn_form import QuadratureSpec
from ticgo.elastic_tensors import IsotropicBackground, SpatialGrid
from ticgo.phantoms import default_phantom
from ticgo.recon import forward, plan_frequencies, reconstruct

BG = IsotropicBackground(1.0, 1.0, 1.0)

_ACCEPTANCE = {}


def record_acceptance(n: int, ok: bool, detail: str):
    _ACCEPTANCE[n] = (ok, detail)


@pytest.fixture(scope="session")
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")


class RoundTrip:
    def __init__(self, grid, omegas, phantom, quad_points):
        self.grid = grid
        self.phantom = phantom
        self.plan = plan_frequencies(grid, omegas, BG, QuadratureSpec(points=quad_points))
        self.dC = phantom.stiffness_field(grid)
        self.dRho = phantom.density_field(grid)
        t0 = time.perf_counter()
        self.data = forward(self.dC, self.dRho, self.plan)
        self.forward_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        self.rC, self.rRho, self.diag = reconstruct(self.data, self.plan)
        self.reconstruct_s = time.perf_counter() - t0


@pytest.fixture(scope="session")
def roundtrip16_static():
    return RoundTrip(SpatialGrid(shape=(16, 16, 16)), (0.0,), default_phantom(), 48)


@pytest.fixture(scope="session")
def roundtrip16_dynamic():
    return RoundTrip(SpatialGrid(shape=(16, 16, 16)), (1.0, 2.0),
                     default_phantom(with_density=True), 48)


@pytest.fixture(scope="session")
def roundtrip8_static():
    return RoundTrip(SpatialGrid(shape=(8, 8, 8)), (0.0,), default_phantom(), 32)
