import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import positive_state
from stochnsf import (
    InvalidOperandError,
    ModelParams,
    PositivityViolationError,
    ScalarField,
    SystemState,
    ThetaState,
    TorusGrid,
    VectorField,
    build_noise_basis,
)
from stochnsf.dynamics import (
    conversion_roundtrip_error,
    drift_galerkin,
    drift_ito,
    drift_stratonovich,
    h_delta,
    nonlinearity_N,
    psi_theta_convert,
    smooth_window,
    truncate,
)
from stochnsf.spectral import analyze, differentiate, inner_product, leray_project, multiply, outer


def pointwise(grid, values):
    return ScalarField(grid, analyze(values, grid.m))


def gradient_square_values(state, n):
    gp = differentiate(state.psi, "gradient").values(n)
    su = differentiate(state.u, "sym_gradient").values(n)
    return np.sum(gp**2, axis=0) + np.sum(su**2, axis=(0, 1))


def velocity_oracle(state, basis, extra_lap=0.0):
    u = state.u
    lap = differentiate(u, "laplacian")
    conv = leray_project(differentiate(outer(u, u), "divergence"))
    return lap * (0.5 + extra_lap) - conv


def psi_oracle(state, basis):
    grid = state.grid
    n = grid.fine_n
    psi = state.psi
    grads = gradient_square_values(state, n)
    nonlin = pointwise(grid, grads / psi.values(n))
    return (differentiate(psi, "laplacian") * (1 + basis.F1 / 2 + basis.G1 / 2) + nonlin
            - differentiate(multiply(psi, state.u), "divergence") - psi * (basis.F2 / 2 + basis.G2 / 8))


def close(a, b, rel=1e-10):
    return float((a - b).norm()) <= rel * max(float(b.norm()), 1e-300)


class TestItoDrift:
    def test_psi_system_oracle(self, grid, basis):
        state = positive_state(grid, np.random.default_rng(0))
        du, dpsi = drift_ito(state, basis)
        assert close(du, velocity_oracle(state, basis, basis.F1 / 4))
        assert close(dpsi, psi_oracle(state, basis))

    def test_theta_system_oracle(self, grid, basis):
        state = positive_state(grid, np.random.default_rng(1))
        ts = psi_theta_convert(state)
        du, dth = drift_ito(ts, basis, formulation="theta_system")
        n = grid.fine_n
        th = ts.theta.values(n)
        sym = differentiate(state.u, "sym_gradient").values(n)
        gth = differentiate(ts.theta, "gradient").values(n)
        F1 = basis.F1
        point = (1 + F1 / 2) * np.sum(sym**2, axis=(0, 1)) - F1 * np.sum(gth**2, axis=0) / (4 * th)
        expected = (differentiate(ts.theta, "laplacian") * (1 + F1 / 2 + basis.G1 / 2) + pointwise(grid, point)
                    - differentiate(multiply(ts.theta, state.u), "divergence") - ts.theta * basis.F2)
        assert close(du, velocity_oracle(state, basis, F1 / 4))
        assert close(dth, expected)

    def test_system_state_converted_for_theta(self, grid, basis):
        state = positive_state(grid, np.random.default_rng(2))
        a = drift_ito(state, basis, formulation="theta_system")
        b = drift_ito(psi_theta_convert(state), basis, formulation="theta_system")
        assert np.allclose(a[1].coeffs, b[1].coeffs)

    def test_positivity_violation(self, grid, basis):
        psi = ScalarField.from_function(grid, lambda x1, x2, x3: 0.5 + np.cos(2 * np.pi * x1))
        state = SystemState(VectorField.zeros(grid), psi)
        with pytest.raises(PositivityViolationError) as info:
            drift_ito(state, basis)
        assert info.value.location is not None

    def test_unknown_formulation(self, grid, basis):
        with pytest.raises(InvalidOperandError):
            drift_ito(positive_state(grid, np.random.default_rng(0)), basis, formulation="nope")

    def test_batched_matches_single(self, grid, basis):
        rng = np.random.default_rng(3)
        states = [positive_state(grid, rng) for _ in range(3)]
        du, dpsi = drift_ito(SystemState.stack(states), basis)
        for i, s in enumerate(states):
            a, b = drift_ito(s, basis)
            assert np.allclose(du.coeffs[i], a.coeffs, atol=1e-13)
            assert np.allclose(dpsi.coeffs[i], b.coeffs, atol=1e-13)

    def test_constant_state_decays(self, grid, basis):
        state = SystemState(VectorField.zeros(grid), ScalarField.constant(grid, 2.0))
        _, dpsi = drift_ito(state, basis)
        assert dpsi.mean() == pytest.approx(-2.0 * (basis.F2 / 2 + basis.G2 / 8))

    def test_linear_switch(self, grid, basis):
        state = positive_state(grid, np.random.default_rng(4))
        du, dpsi = drift_ito(state, basis, ModelParams(include_nonlinear=False))
        assert close(du, differentiate(state.u, "laplacian") * (0.5 + basis.F1 / 4))


class TestStratonovichDrift:
    def test_oracle(self, grid, basis):
        state = positive_state(grid, np.random.default_rng(5))
        du, dpsi = drift_stratonovich(state, basis)
        n = grid.fine_n
        nonlin = pointwise(grid, gradient_square_values(state, n) / state.psi.values(n))
        expected = differentiate(state.psi, "laplacian") + nonlin - differentiate(multiply(state.psi, state.u), "divergence")
        assert close(du, velocity_oracle(state, basis))
        assert close(dpsi, expected)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_energy_identity(self, seed):
        g = TorusGrid(3)
        b = build_noise_basis([((1, 0, 0), 0.3)], [((0, 1, 0), 0.2)], g)
        state = positive_state(g, np.random.default_rng(seed))
        du, dpsi = drift_stratonovich(state, b)
        pairing = inner_product(state.u, du) + inner_product(state.psi, dpsi)
        scale = float(state.u.norm() * du.norm() + state.psi.norm() * dpsi.norm())
        assert abs(pairing) <= 1e-10 * scale


class TestGalerkinDrift:
    def test_matches_ito_above_delta(self, grid, basis):
        state = positive_state(grid, np.random.default_rng(6))
        gu, gp = drift_galerkin(state, basis, ModelParams(delta=0.1, epsilon=0.0))
        iu, ip = drift_ito(state, basis)
        assert close(gu, iu, 1e-12) and close(gp, ip, 1e-12)

    def test_oracle_with_sign_change(self, grid, basis):
        params = ModelParams(delta=0.05, epsilon=0.01)
        psi = ScalarField.from_function(grid, lambda x1, x2, x3: 0.2 + np.cos(2 * np.pi * x1) * np.sin(2 * np.pi * x3))
        u = leray_project(VectorField.from_function(grid, lambda x1, x2, x3: (np.sin(2 * np.pi * x2), 0 * x1, 0 * x1)))
        state = SystemState(u, psi)
        du, dpsi = drift_galerkin(state, basis, params)
        n = grid.fine_n
        point = h_delta(psi.values(n), params.delta) * (gradient_square_values(state, n) + params.epsilon)
        eps = params.epsilon
        expected = (differentiate(psi, "laplacian") * (1 + basis.F1 / 2 + basis.G1 / 2)
                    - differentiate(psi, "biharmonic") * eps + pointwise(grid, point)
                    - differentiate(multiply(psi, u), "divergence") - psi * (basis.F2 / 2 + basis.G2 / 8))
        assert close(dpsi, expected)
        assert close(du, velocity_oracle(state, basis, basis.F1 / 4) - differentiate(u, "biharmonic") * eps)

    def test_needs_params(self, grid, basis):
        with pytest.raises(InvalidOperandError):
            drift_galerkin(positive_state(grid, np.random.default_rng(0)), basis, None)

    def test_galerkin_cutoff_masks(self, grid, basis):
        state = positive_state(grid, np.random.default_rng(7))
        du, dpsi = drift_galerkin(state, basis, ModelParams(delta=0.01, cutoff=2))
        assert du.support_cutoff() <= 2 and dpsi.support_cutoff() <= 2


class TestHDelta:
    @pytest.mark.parametrize("delta", [0.5, 0.1, 0.01, 1e-3, 1e-4])
    def test_bound_on_grid(self, delta):
        r = np.linspace(1e-6, 10, 10_000)
        assert np.all(r * h_delta(r, delta) <= 1.0)

    def test_equals_inverse_above_delta(self):
        r = np.array([0.2, 1.0, 7.0])
        assert np.allclose(h_delta(r, 0.1), 1 / r)

    def test_continuous_and_c1_at_delta(self):
        d = 0.01
        assert h_delta(d - 1e-12, d) == pytest.approx(1 / d)
        slope = (h_delta(d, d) - h_delta(d - 1e-7, d)) / 1e-7
        assert slope == pytest.approx(-1 / d**2, rel=1e-4)

    def test_monotone_in_delta(self):
        r = np.linspace(1e-6, 2, 5000)
        deltas = [0.5, 0.1, 0.01, 1e-3]
        for a, b in zip(deltas, deltas[1:]):
            assert np.all(h_delta(r, b) >= h_delta(r, a))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 50), st.floats(1e-4, 0.9))
    def test_bound_property(self, r, delta):
        assert max(r, 0.0) * h_delta(r, delta) <= 1.0 + 1e-15
        assert h_delta(r, delta) > 0


class TestTruncation:
    def test_inside_ball_unchanged(self):
        x = np.array([0.3, 0.4])
        assert truncate(x, 1.0) is x

    def test_scales_to_radius(self):
        out = truncate(np.array([3.0, 4.0]), 1.0)
        assert np.allclose(out, [0.6, 0.8])

    def test_state_and_batch(self, grid):
        rng = np.random.default_rng(8)
        states = SystemState.stack([positive_state(grid, rng) * 10, positive_state(grid, rng) * 0.01])
        out = truncate(states, 1.0)
        norms = np.asarray(out.l2_norm())
        assert norms[0] == pytest.approx(1.0) and norms[1] == pytest.approx(float(states.l2_norm()[1]))

    def test_bad_radius(self):
        with pytest.raises(InvalidOperandError):
            truncate(np.ones(2), 0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=6, max_size=6), st.lists(st.floats(-100, 100), min_size=6, max_size=6),
           st.floats(0.1, 10))
    def test_norm_and_lipschitz(self, x, y, R):
        x, y = np.array(x), np.array(y)
        tx, ty = truncate(x, R), truncate(y, R)
        assert np.linalg.norm(tx) <= R * (1 + 1e-12)
        assert np.linalg.norm(tx - ty) <= 2 * np.linalg.norm(x - y) + 1e-12


class TestAuxiliary:
    def test_smooth_window(self):
        r = np.array([0.01, 0.07, 0.1, 0.5, 1.0, 1.5, 2.5])
        w = smooth_window(r, 0.1, 1.0)
        assert w[2] == w[3] == w[4] == 1.0
        assert w[0] == 0.0 and w[-1] == 0.0
        assert 0 < w[1] < 1 and 0 < w[5] < 1

    def test_nonlinearity_N_on_positive_state(self, grid, basis):
        state = positive_state(grid, np.random.default_rng(9))
        n1, n2 = nonlinearity_N(state, 0.1, 10.0)
        du, dpsi = drift_stratonovich(state, basis, ModelParams(include_nonlinear=True))
        lin_u = differentiate(state.u, "laplacian") * 0.5
        lin_p = differentiate(state.psi, "laplacian")
        assert close(n1, du - lin_u)
        assert close(n2, dpsi - lin_p)

    def test_nonlinearity_N_defined_for_signed_psi(self, grid):
        psi = ScalarField.from_function(grid, lambda x1, x2, x3: np.cos(2 * np.pi * x1))
        n1, n2 = nonlinearity_N(SystemState(VectorField.zeros(grid), psi), 0.1, 1.0)
        assert np.all(np.isfinite(n2.coeffs))

    def test_conversion(self, grid):
        state = positive_state(grid, np.random.default_rng(10))
        ts = psi_theta_convert(state)
        assert isinstance(ts, ThetaState)
        n = grid.fine_n
        assert np.allclose(ts.theta.coeffs, analyze(0.5 * state.psi.values(n) ** 2, grid.m))
        assert conversion_roundtrip_error(state) < 1e-3 * float(state.psi.norm())

    def test_conversion_needs_nonnegative_theta(self, grid):
        th = ScalarField.from_function(grid, lambda x1, x2, x3: np.cos(2 * np.pi * x1))
        with pytest.raises(PositivityViolationError):
            psi_theta_convert(ThetaState(VectorField.zeros(grid), th))
