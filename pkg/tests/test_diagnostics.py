import math
from fractions import Fraction
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import integrate

from conftest import positive_state
from stochnsf import GridMismatchError, InvalidOperandError, ModelParams, PositivityViolationError, ScalarField
from stochnsf import SystemState, ThetaState, TorusGrid, VectorField
from stochnsf.diagnostics import (
    CSV_COLUMNS,
    DiagnosticRecord,
    GronwallEnvelope,
    admissibility_margin,
    dissipation_budget,
    energy_inequality_slack,
    entropies,
    entropy_drift_coefficients,
    entropy_drift_decomposition,
    gradient_norms,
    gronwall_envelope,
    hyper_dissipation_rate,
    record_field_names,
    relative_energy,
    relative_energy_rhs,
    sup_gradient_norms,
    total_energy,
)
from stochnsf.dynamics import psi_theta_convert


def cosine_state(grid, c=2.0, a=0.5):
    psi = ScalarField.from_function(grid, lambda x1, x2, x3: c + a * np.cos(2 * np.pi * x1))
    return SystemState(VectorField.zeros(grid), psi)


class TestEnergies:
    def test_energy_hand_value(self, grid):
        # 1/2 (c^2 + a^2/2)
        assert total_energy(cosine_state(grid)) == pytest.approx(0.5 * (4 + 0.125))

    def test_theta_energy_is_consistent(self, grid):
        state = positive_state(grid, np.random.default_rng(0))
        ts = psi_theta_convert(state)
        assert total_energy(ts) == pytest.approx(total_energy(state), rel=1e-12)

    def test_entropies_of_constant(self, grid):
        state = SystemState(VectorField.zeros(grid), ScalarField.constant(grid, 2.0))
        phys, math_entropy = entropies(state)
        assert phys == pytest.approx(math.log(2.0))
        assert math_entropy == pytest.approx(-2.0)

    def test_entropies_of_unit_theta(self, grid):
        state = SystemState(VectorField.zeros(grid), ScalarField.constant(grid, math.sqrt(2)))
        phys, math_entropy = entropies(state)
        assert phys == pytest.approx(0.0, abs=1e-15) and math_entropy == pytest.approx(-math.sqrt(2))

    def test_entropy_phys_absent_for_zero_psi(self, grid):
        phys, math_entropy = entropies(SystemState(VectorField.zeros(grid), ScalarField.zeros(grid)))
        assert phys is None and math_entropy == 0

    def test_entropy_math_uses_modulus(self, grid):
        _, math_entropy = entropies(cosine_state(grid, c=0.0, a=1.0))
        # collocation quadrature of the kinked |cos| converges slowly
        assert math_entropy == pytest.approx(-2 / math.pi, rel=1e-2)

    def test_batched_entropies(self, grid):
        rng = np.random.default_rng(1)
        batch = SystemState.stack([positive_state(grid, rng), SystemState(VectorField.zeros(grid), ScalarField.zeros(grid))])
        phys, _ = entropies(batch)
        assert np.isfinite(phys[0]) and np.isnan(phys[1])

    def test_relative_energy(self, grid):
        a = cosine_state(grid)
        b = cosine_state(grid, a=0.3)
        assert relative_energy(a, b) == pytest.approx(0.5 * 0.2**2 / 2)
        with pytest.raises(GridMismatchError):
            relative_energy(a, cosine_state(TorusGrid(2)))


class TestBudget:
    def test_one_dimensional_quadrature_oracle(self, grid):
        c, a = 2.0, 0.5
        exact, _ = integrate.quad(lambda x: (2 * np.pi * a * np.sin(2 * np.pi * x)) ** 2 / (c + a * np.cos(2 * np.pi * x)),
                                  0, 1, epsabs=1e-14)
        assert dissipation_budget(cosine_state(grid, c, a)) == pytest.approx(exact, rel=1e-8)

    def test_regularised_budget(self, grid):
        params = ModelParams(delta=0.1, epsilon=0.01)
        state = cosine_state(grid)
        # psi >= 1.5 > delta: h_delta = 1/psi, plus eps * mean(1/psi)
        extra, _ = integrate.quad(lambda x: 0.01 / (2 + 0.5 * np.cos(2 * np.pi * x)), 0, 1)
        assert dissipation_budget(state, params) == pytest.approx(dissipation_budget(state) + extra, rel=1e-8)

    def test_exact_budget_needs_positive_psi(self, grid):
        with pytest.raises(PositivityViolationError):
            dissipation_budget(cosine_state(grid, c=0.0))

    def test_regularised_budget_nonnegative_for_signed_psi(self, grid):
        assert dissipation_budget(cosine_state(grid, c=0.1), ModelParams(delta=0.01)) >= 0

    def test_gradient_norms(self, grid):
        gu, gp = gradient_norms(cosine_state(grid, a=0.5))
        assert gu == 0 and gp == pytest.approx(2 * np.pi * 0.5 / math.sqrt(2))

    def test_hyper_rate(self, grid):
        assert hyper_dissipation_rate(cosine_state(grid, a=0.5)) == pytest.approx((4 * np.pi**2) ** 2 * 0.125)

    def test_sup_norms(self, grid):
        _, gp = sup_gradient_norms(cosine_state(grid, a=0.5))
        assert gp == pytest.approx(2 * np.pi * 0.5, rel=1e-3)


class TestTrajectoryFunctionals:
    def make(self, energies, hyper, eps=0.1, bracket=None):
        times = [0.0, 0.5, 1.0]
        return SimpleNamespace(times=times, energies=energies, hyper_integral=hyper, epsilon=eps,
                               bracket_max=bracket or [])

    def test_margin_from_saved_states(self):
        traj = self.make([1.0, 1.02, 0.9], [0.0, 0.1, 0.5])
        # E0 + eps T - max(E + eps H) = 1 + 0.1 - max(1, 1.03, 0.95)
        assert admissibility_margin(traj) == pytest.approx(0.07)

    def test_margin_prefers_running_maximum(self):
        traj = self.make([1.0, 1.0, 1.0], [0, 0, 0], bracket=[1.0, 1.0, 1.2])
        assert admissibility_margin(traj) == pytest.approx(1.0 + 0.1 - 1.2)

    def test_slack(self):
        traj = self.make([1.0, 1.02, 0.9], [0.0, 0.1, 0.5])
        assert np.allclose(energy_inequality_slack(traj), [0.0, 1 + 0.05 - 1.02 - 0.01, 1 + 0.1 - 0.9 - 0.05])

    def test_empty(self):
        with pytest.raises(InvalidOperandError):
            admissibility_margin(SimpleNamespace(times=[]))


class TestEnvelope:
    def test_hand_value(self):
        env = GronwallEnvelope([0.0, 1.0, 2.0], [1.0, 0.5, 2.0], [0.0, 3.0, 1.0], E0=2.0)
        assert env(0.0) == pytest.approx(2.0)
        assert env(1.5) == pytest.approx(2.0 * math.exp((2 * 1.0 + 3.0) * 1.5))
        assert env(2.0) == pytest.approx(2.0 * math.exp((2 * 2.0 + 3.0) * 2.0))

    def test_from_states(self, grid):
        states = [cosine_state(grid).replace(t=t) for t in (0.0, 0.1)]
        env = gronwall_envelope(states, 1e-6)
        assert env(0.1) > 1e-6

    def test_rejects_empty_or_nonfinite(self):
        with pytest.raises(InvalidOperandError):
            GronwallEnvelope([], [], [], 1.0)
        with pytest.raises(InvalidOperandError):
            GronwallEnvelope([0.0], [np.inf], [0.0], 1.0)


class TestEntropyDrift:
    def test_exact_coefficients(self):
        F1, F2, G1, G2 = Fraction(1, 3), Fraction(2), Fraction(1, 5), Fraction(3, 7)
        cv, cg, const = entropy_drift_coefficients(F1, F2, G1, G2)
        assert cv == Fraction(-1, 2) and cg == -(Fraction(1, 12) + 1) and const == -(2 + Fraction(3, 14))

    def test_sign_change_at_two_thirds(self):
        assert entropy_drift_coefficients(Fraction(2, 3), 0, 0, 0)[0] == 0
        assert entropy_drift_coefficients(Fraction(1, 2), 0, 0, 0)[0] < 0
        assert entropy_drift_coefficients(Fraction(1), 0, 0, 0)[0] > 0

    def test_decomposition_integrals(self, grid, basis):
        state = cosine_state(grid)
        d = entropy_drift_decomposition(state, basis)
        theta = lambda x: 0.5 * (2 + 0.5 * np.cos(2 * np.pi * x)) ** 2  # noqa: E731
        dtheta = lambda x: (2 + 0.5 * np.cos(2 * np.pi * x)) * (-np.pi * np.sin(2 * np.pi * x))  # noqa: E731
        exact, _ = integrate.quad(lambda x: dtheta(x) ** 2 / theta(x), 0, 1, epsabs=1e-14)
        assert d.velocity_integral == 0
        assert d.gradient_integral == pytest.approx(exact, rel=1e-6)
        assert d.total == pytest.approx(d.gradient_term + float(d.constant_term))


class TestRelativeEnergyRHS:
    def test_vanishes_on_diagonal(self, grid):
        state = positive_state(grid, np.random.default_rng(2))
        rhs = relative_energy_rhs(state, state)
        scale = sum(abs(v) for v in rhs.terms.values())
        assert abs(rhs.total) <= 1e-12 * scale

    def test_dissipation_terms_nonpositive(self, grid):
        rng = np.random.default_rng(3)
        a, b = positive_state(grid, rng), positive_state(grid, rng)
        terms = relative_energy_rhs(a, b).terms
        assert terms["reference_dissipation"] <= 0 and terms["state_dissipation"] <= 0


class TestRecords:
    def test_columns(self):
        assert record_field_names() == CSV_COLUMNS

    def test_row_format(self):
        rec = DiagnosticRecord(0.0, 1.0, None, -1.0, 0.5, 0.0, None, 0.1, 0.2)
        row = rec.as_row()
        assert row[2] == "" and row[1] == "1.0"

    def test_rejects_negative_energy(self):
        with pytest.raises(InvalidOperandError):
            DiagnosticRecord(0.0, -1.0, None, -1.0, None, 0.0, None, 0.0, 0.0)

    def test_theta_state_records(self, grid):
        ts = ThetaState(VectorField.zeros(grid), ScalarField.constant(grid, 2.0))
        phys, _ = entropies(ts)
        assert phys == pytest.approx(math.log(2.0))
