"""State containers and model parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, InvalidOperandError
from .spectral import (
    DIVERGENCE_TOLERANCE,
    ScalarField,
    VectorField,
    divergence_residual,
    inner_product,
)


def _as_divergence_free(u: VectorField) -> VectorField:
    if u.divergence_free:
        return u
    # accept untagged input that is already solenoidal, but never repair it silently
    return VectorField(u.grid, u.coeffs, divergence_free=True, copy=False)


class _PairState:
    __slots__ = ("u", "_scalar", "t")
    _scalar_name = ""

    def __init__(self, u: VectorField, scalar: ScalarField, t: float = 0.0):
        if not isinstance(u, VectorField) or not isinstance(scalar, ScalarField):
            raise InvalidOperandError("state needs a VectorField velocity and a ScalarField")
        if u.grid != scalar.grid:
            raise GridMismatchError("velocity and scalar live on different grids")
        if u.batch_shape != scalar.batch_shape:
            raise InvalidOperandError("velocity and scalar batch shapes differ")
        if t < 0:
            raise InvalidOperandError(f"time must be >= 0, got {t}")
        object.__setattr__(self, "u", _as_divergence_free(u))
        object.__setattr__(self, "_scalar", scalar)
        object.__setattr__(self, "t", float(t))

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    @property
    def grid(self):
        return self.u.grid

    @property
    def batch_shape(self):
        return self.u.batch_shape

    def replace(self, u=None, scalar=None, t=None):
        return type(self)(
            self.u if u is None else u,
            self._scalar if scalar is None else scalar,
            self.t if t is None else t,
        )

    def take(self, index):
        return type(self)(self.u.take(index), self._scalar.take(index), self.t)

    def __mul__(self, factor):
        return type(self)(self.u * factor, self._scalar * factor, self.t)

    __rmul__ = __mul__

    def l2_norm(self):
        """sqrt(||u||^2 + ||scalar||^2)."""
        return np.sqrt(inner_product(self.u, self.u) + inner_product(self._scalar, self._scalar))

    def divergence_residual(self) -> float:
        return divergence_residual(self.grid, self.u.coeffs)

    def __repr__(self):
        return f"{type(self).__name__}(m={self.grid.m}, t={self.t}, batch={self.batch_shape})"


class SystemState(_PairState):
    """Velocity u (divergence-free) and square-root temperature psi at time t.

    psi carries no sign constraint: the regularised scheme may produce
    negative values.  Fields may carry a leading batch axis (one entry per
    path).
    """

    __slots__ = ()

    @property
    def psi(self) -> ScalarField:
        return self._scalar

    @classmethod
    def stack(cls, states: list["SystemState"]) -> "SystemState":
        grid = states[0].grid
        u = VectorField(grid, np.stack([s.u.coeffs for s in states]), copy=False)
        psi = ScalarField(grid, np.stack([s.psi.coeffs for s in states]), copy=False)
        return cls(u, psi, states[0].t)


class ThetaState(_PairState):
    """Velocity u and temperature theta at time t."""

    __slots__ = ()

    @property
    def theta(self) -> ScalarField:
        return self._scalar


def check_divergence(u: VectorField, tol: float = DIVERGENCE_TOLERANCE) -> bool:
    scale = float(np.sqrt(np.sum(np.abs(u.coeffs) ** 2)))
    return divergence_residual(u.grid, u.coeffs) <= tol * max(scale, np.finfo(float).tiny)


@dataclass(frozen=True)
class ModelParams:
    """Regularisation parameters of the Galerkin scheme.

    Args:
        delta: threshold of the bounded 1/r surrogate, in (0, 1).
        epsilon: biharmonic regularisation, in [0, 1).
        cutoff: Galerkin projection index; None means the grid cutoff.
        truncation_radius: radius of the Lipschitz truncation, or None.
        include_nonlinear: switch off every nonlinear term (linear studies only).
    """

    delta: float = 0.01
    epsilon: float = 0.0
    cutoff: int | None = None
    truncation_radius: float | None = None
    include_nonlinear: bool = True

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise InvalidOperandError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 <= self.epsilon < 1.0:
            raise InvalidOperandError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.cutoff is not None and self.cutoff < 1:
            raise InvalidOperandError(f"cutoff must be >= 1, got {self.cutoff}")
        if self.truncation_radius is not None and not self.truncation_radius > 0:
            raise InvalidOperandError(f"truncation radius must be > 0, got {self.truncation_radius}")

    def galerkin_cutoff(self, grid) -> int:
        if self.cutoff is None:
            return grid.m
        if self.cutoff > grid.m:
            raise InvalidOperandError(f"Galerkin cutoff {self.cutoff} exceeds grid cutoff {grid.m}")
        return self.cutoff
