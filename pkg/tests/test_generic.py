import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochnsf import InsufficientHeadroomError, ScalarField, ThetaState, TorusGrid, VectorField
from stochnsf.generic import (
    GENERIC_TOLERANCES,
    CoVector,
    apply_B,
    apply_B_transpose,
    apply_L,
    apply_M,
    bracket_x,
    degeneracy_residuals,
    drift_consistency_residual,
    energy_derivative,
    entropy_derivative,
    jacobi_residual,
    pairing,
    random_covector,
    random_noise_field,
    random_state,
    verify_generic,
)

GRID = TorusGrid(3)


def constant_theta_state(grid, value=2.0):
    return ThetaState(VectorField.zeros(grid), ScalarField.constant(grid, value))


class TestOperatorsByHand:
    def test_L_on_rest_state_is_heat_gradient(self):
        # u = 0, theta = c: L w = (-Pi(c grad q), -div(c v)); Pi kills the gradient
        z = constant_theta_state(GRID, 2.0)
        rng = np.random.default_rng(0)
        w = random_covector(GRID, rng, 2)
        out = apply_L(z, w).on(GRID)
        from stochnsf.spectral import differentiate, leray_project

        expected_q = -differentiate(leray_project(w.v), "divergence") * 2.0
        assert float(out.v.norm()) < 1e-12
        assert np.allclose(out.q.coeffs, expected_q.coeffs, atol=1e-12)

    def test_M_on_rest_state_is_diffusion(self):
        from stochnsf.spectral import differentiate, leray_project

        z = constant_theta_state(GRID, 2.0)
        w = random_covector(GRID, np.random.default_rng(1), 2)
        out = apply_M(z, w).on(GRID)
        v = leray_project(w.v)
        assert np.allclose(out.v.coeffs, (-differentiate(differentiate(v, "sym_gradient"), "divergence") * 2.0).coeffs,
                           atol=1e-10)
        assert np.allclose(out.q.coeffs, (-differentiate(w.q, "laplacian") * 4.0).coeffs, atol=1e-10)

    def test_derivatives(self):
        z = constant_theta_state(GRID, 4.0)
        assert energy_derivative(z).q.mean() == 1.0
        assert entropy_derivative(z).q.mean() == pytest.approx(0.25)

    def test_noise_free_drift_on_rest_state_vanishes(self):
        assert drift_consistency_residual(constant_theta_state(GRID)) < 1e-14


class TestIdentities:
    def setup_method(self):
        self.rng = np.random.default_rng(2)
        self.z = random_state(GRID, self.rng)

    def test_degeneracy(self):
        # L dS vanishes only up to how well 1/theta is resolved on the quadrature grid
        z = random_state(TorusGrid(4), self.rng)
        l_res, m_res = degeneracy_residuals(z)
        assert l_res <= GENERIC_TOLERANCES["degeneracy_L"]
        assert m_res <= GENERIC_TOLERANCES["degeneracy_M"]

    def test_antisymmetry_and_symmetry(self):
        w1, w2 = random_covector(GRID, self.rng), random_covector(GRID, self.rng)
        a = pairing(w1, apply_L(self.z, w2)) + pairing(w2, apply_L(self.z, w1))
        s = pairing(w1, apply_M(self.z, w2)) - pairing(w2, apply_M(self.z, w1))
        scale = w1.norm() * w2.norm() * apply_M(self.z, w1).norm()
        assert abs(a) <= 1e-12 * scale and abs(s) <= 1e-12 * scale

    def test_factorisation_and_adjointness(self):
        w = random_covector(GRID, self.rng)
        xi = random_noise_field(GRID, self.rng)
        bt = apply_B_transpose(self.z, w)
        mw = pairing(w, apply_M(self.z, w))
        assert mw >= 0
        assert pairing(bt, bt) == pytest.approx(mw, rel=1e-10)
        assert pairing(w, apply_B(self.z, xi)) == pytest.approx(pairing(bt, xi), rel=1e-10)

    def test_drift_consistency(self):
        assert drift_consistency_residual(self.z) <= GENERIC_TOLERANCES["drift_consistency"]

    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_M_positive_semidefinite(self, seed):
        rng = np.random.default_rng(seed)
        z = random_state(GRID, rng)
        w = random_covector(GRID, rng)
        mw = apply_M(z, w)
        assert pairing(w, mw) >= -1e-12 * w.norm() * mw.norm()

    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_L_antisymmetric_on_diagonal(self, seed):
        rng = np.random.default_rng(seed)
        z = random_state(GRID, rng)
        w = random_covector(GRID, rng)
        lw = apply_L(z, w)
        assert abs(pairing(w, lw)) <= 1e-12 * w.norm() * lw.norm()


class TestBracket:
    def test_antisymmetric(self):
        g = TorusGrid(6)
        rng = np.random.default_rng(3)
        a, b = random_covector(g, rng, 2), random_covector(g, rng, 2)
        s = bracket_x(a, b) + bracket_x(b, a)
        assert s.norm() <= 1e-13 * bracket_x(a, b).norm()

    def test_hand_example(self):
        # {w1, w2} = (v2.grad) w1 - (v1.grad) w2 with v2 = 0 leaves -(v1.grad) q2
        g = TorusGrid(3)
        v1 = VectorField.from_function(g, lambda x1, x2, x3: (np.sin(2 * np.pi * x2), 0 * x1, 0 * x1))
        w1 = CoVector(v1, ScalarField.zeros(g))
        q2 = ScalarField.from_function(g, lambda x1, x2, x3: np.cos(2 * np.pi * x1))
        w2 = CoVector(VectorField.zeros(g), q2)
        out = bracket_x(w1, w2)
        expected = ScalarField.from_function(
            g, lambda x1, x2, x3: np.sin(2 * np.pi * x2) * 2 * np.pi * np.sin(2 * np.pi * x1))
        assert np.allclose(out.q.coeffs, expected.coeffs, atol=1e-12)
        assert float(out.v.norm()) < 1e-14

    def test_jacobi_small(self):
        g = TorusGrid(6)
        rng = np.random.default_rng(4)
        ws = [random_covector(g, rng, 2) for _ in range(3)]
        assert jacobi_residual(*ws) <= 1e-10

    def test_headroom(self):
        g = TorusGrid(4)
        rng = np.random.default_rng(5)
        ws = [random_covector(g, rng, 2) for _ in range(3)]
        with pytest.raises(InsufficientHeadroomError):
            jacobi_residual(*ws)


class TestReport:
    def test_small_report(self):
        report = verify_generic(TorusGrid(4), samples=2, seed=1, jacobi_samples=3, jacobi_m=6, jacobi_cutoff=2)
        assert report.passed, report.residuals
        assert set(report.as_dict()["checks"]) == set(GENERIC_TOLERANCES)
