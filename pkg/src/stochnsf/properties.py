"""Quick numerical battery of the structural invariants, used by ``stochnsf verify-properties``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import drift_galerkin, drift_ito, drift_stratonovich, h_delta, truncate
from .generic import verify_generic
from .noise import NoiseBasis, NoiseStreams, noise_diffusion_fields, sample_increments, verify_stationarity
from .spectral import (
    ScalarField,
    TorusGrid,
    VectorField,
    divergence_residual,
    fourier_project,
    inner_product,
    leray_project,
    multiply,
)
from .state import ModelParams, SystemState


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance, "passed": self.passed}


def smooth_state(grid: TorusGrid, rng: np.random.Generator, cutoff: int = 2, mean: float = 2.0,
                 variation: float = 0.5, velocity: float = 0.5) -> SystemState:
    """Random divergence-free u and psi = mean + variation * phi with sup |phi| = 1."""
    u = leray_project(fourier_project(VectorField.from_values(grid, rng.standard_normal((3,) + (grid.n,) * 3)), cutoff))
    u = u * (velocity / float(np.abs(u.values()).max()))
    phi = fourier_project(ScalarField.from_values(grid, rng.standard_normal((grid.n,) * 3)), cutoff)
    phi = phi - ScalarField.constant(grid, phi.mean())
    phi = phi * (1.0 / float(np.abs(phi.values(grid.fine_n)).max()))
    return SystemState(VectorField(grid, u.coeffs, divergence_free=True), ScalarField.constant(grid, mean) + phi * variation)


def _rel(a: float, scale: float) -> float:
    return abs(a) / scale if scale > 0 else abs(a)


def run_property_checks(basis: NoiseBasis, params: ModelParams | None = None, seed: int = 0,
                        samples: int = 5) -> list[Check]:
    grid = basis.grid
    rng = np.random.default_rng(seed)
    params = params or ModelParams(delta=0.01, epsilon=0.0)
    worst: dict[str, float] = {}

    def note(name, value):
        worst[name] = max(worst.get(name, 0.0), float(value))

    for _ in range(samples):
        v = fourier_project(VectorField.from_values(grid, rng.standard_normal((3,) + (grid.n,) * 3)), grid.m)
        p = leray_project(v)
        scale = float(v.norm())
        note("leray_idempotence", float((leray_project(p) - p).norm()) / scale)
        note("leray_orthogonality", _rel(inner_product(p, v - p), scale**2))
        note("leray_divergence_free", divergence_residual(grid, p.coeffs) / scale)

        a = fourier_project(ScalarField.from_values(grid, rng.standard_normal((grid.n,) * 3)), grid.m)
        b = fourier_project(ScalarField.from_values(grid, rng.standard_normal((grid.n,) * 3)), grid.m)
        prod = multiply(a, b)
        note("product_reality", float(np.abs(prod.coeffs - np.conj(prod.coeffs[::-1, ::-1, ::-1])).max()))

        state = smooth_state(grid, rng)
        du, dp = drift_stratonovich(state, basis)
        scale = float(state.u.norm() * du.norm() + state.psi.norm() * dp.norm())
        note("stratonovich_energy_identity", _rel(inner_product(state.u, du) + inner_product(state.psi, dp), scale))
        inc = sample_increments(basis, 1e-3, NoiseStreams(seed, basis.n_f, basis.n_g))
        nu, npsi = noise_diffusion_fields(basis, state, inc)
        scale = float(state.u.norm() * nu.norm() + state.psi.norm() * npsi.norm()) or 1.0
        note("noise_energy_pairing", _rel(inner_product(state.u, nu) + inner_product(state.psi, npsi), scale))
        gu, gp = drift_galerkin(state, basis, ModelParams(delta=min(params.delta, 0.5), epsilon=0.0))
        iu, ip = drift_ito(state, basis)
        note("galerkin_matches_ito_above_delta",
             max(float(np.abs((gu - iu).coeffs).max()), float(np.abs((gp - ip).coeffs).max())))

    r = np.linspace(1e-6, 10.0, 10_000)
    for delta in (0.5, 0.1, 0.01, 1e-3, 1e-4):
        note("h_delta_bound", max(0.0, float(np.max(r * h_delta(r, delta)) - 1.0)))
    xs = rng.standard_normal((1000, 2, 6)) * 3
    for x, y in xs:
        tx, ty = truncate(x, 1.0), truncate(y, 1.0)
        note("truncation_norm", max(0.0, float(np.linalg.norm(tx)) - 1.0 - 1e-15))
        note("truncation_lipschitz", max(0.0, float(np.linalg.norm(tx - ty) - 2 * np.linalg.norm(x - y))))

    stationarity = verify_stationarity(basis)
    tolerances = {
        "leray_idempotence": 1e-12,
        "leray_orthogonality": 1e-12,
        "leray_divergence_free": 1e-12,
        "product_reality": 1e-12,
        "stratonovich_energy_identity": 1e-10,
        "noise_energy_pairing": 1e-10,
        "galerkin_matches_ito_above_delta": 1e-10,
        "h_delta_bound": 1e-15,
        "truncation_norm": 1e-12,
        "truncation_lipschitz": 1e-12,
    }
    checks = [Check(name, worst[name], tol) for name, tol in tolerances.items()]
    checks.append(Check("noise_stationarity", stationarity.worst, stationarity.tol))
    generic = verify_generic(TorusGrid(grid.m, grid.n, grid.fine_factor), samples=2, seed=seed, jacobi_samples=10)
    checks.extend(Check(f"generic_{name}", value, generic.tolerances[name]) for name, value in generic.residuals.items())
    return checks


def all_passed(checks: list[Check]) -> bool:
    return all(c.passed for c in checks) and not any(math.isnan(c.value) for c in checks)
