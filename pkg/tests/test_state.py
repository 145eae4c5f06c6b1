import numpy as np
import pytest

from stochnsf import GridMismatchError, InvalidOperandError, ModelParams, ScalarField, SystemState, TorusGrid
from stochnsf import VectorField
from stochnsf.properties import all_passed, run_property_checks
from stochnsf.state import check_divergence


class TestModelParams:
    @pytest.mark.parametrize("kwargs", [dict(delta=0.0), dict(delta=1.0), dict(epsilon=-0.1), dict(epsilon=1.0),
                                        dict(cutoff=0), dict(truncation_radius=0.0)])
    def test_rejects(self, kwargs):
        with pytest.raises(InvalidOperandError):
            ModelParams(**kwargs)

    def test_galerkin_cutoff(self, grid):
        assert ModelParams().galerkin_cutoff(grid) == grid.m
        assert ModelParams(cutoff=2).galerkin_cutoff(grid) == 2
        with pytest.raises(InvalidOperandError):
            ModelParams(cutoff=9).galerkin_cutoff(grid)


class TestSystemState:
    def test_requires_solenoidal_velocity(self, grid):
        u = VectorField.from_function(grid, lambda x1, x2, x3: (np.sin(2 * np.pi * x1), 0 * x1, 0 * x1))
        assert not check_divergence(u)
        with pytest.raises(InvalidOperandError):
            SystemState(u, ScalarField.constant(grid, 1.0))

    def test_grid_and_batch_checks(self, grid):
        with pytest.raises(GridMismatchError):
            SystemState(VectorField.zeros(grid), ScalarField.constant(TorusGrid(2), 1.0))
        with pytest.raises(InvalidOperandError):
            SystemState(VectorField.zeros(grid, (2,)), ScalarField.zeros(grid))
        with pytest.raises(InvalidOperandError):
            SystemState(VectorField.zeros(grid), ScalarField.zeros(grid), t=-1.0)

    def test_immutable_and_replace(self, grid):
        s = SystemState(VectorField.zeros(grid), ScalarField.constant(grid, 1.0))
        with pytest.raises(AttributeError):
            s.t = 1.0
        assert s.replace(t=2.0).t == 2.0
        assert float(s.l2_norm()) == pytest.approx(1.0)

    def test_stack_and_take(self, grid):
        a = SystemState(VectorField.zeros(grid), ScalarField.constant(grid, 1.0))
        b = SystemState(VectorField.zeros(grid), ScalarField.constant(grid, 3.0))
        st = SystemState.stack([a, b])
        assert st.batch_shape == (2,)
        assert st.take(1).psi.mean() == 3.0


class TestPropertyBattery:
    def test_all_pass(self, basis, params):
        checks = run_property_checks(basis, params, seed=0, samples=2)
        assert all_passed(checks), [c.as_dict() for c in checks if not c.passed]
        assert {"noise_stationarity", "generic_jacobi", "h_delta_bound"} <= {c.name for c in checks}
