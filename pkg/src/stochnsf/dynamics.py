"""Drifts of the stochastic Navier-Stokes-Fourier system.

All drifts are assembled by :mod:`stochnsf.kernels`; this module exposes
them on field objects and adds the bounded reciprocal ``h_delta``, the
Lipschitz truncation, the windowed nonlinearities and the change of
variables between psi and theta = psi^2 / 2.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import InvalidOperandError
from .kernels import (
    _require_positive,
    _sym_gradient6,
    _weighted_contract,
    assemble_fields,
    h_delta,
    linear_coefficients,
)
from .noise import NoiseBasis
from .spectral import (
    ScalarField,
    analyze,
    check_finite,
    derivative_factors,
    differentiate,
    leray_project,
    multiply,
    outer,
    synthesize,
)
from .state import ModelParams, SystemState, ThetaState

__all__ = [
    "h_delta",
    "truncate",
    "drift_ito",
    "drift_galerkin",
    "drift_stratonovich",
    "nonlinearity_N",
    "psi_theta_convert",
    "smooth_window",
    "linear_coefficients",
]


def truncate(x, R: float, norm: Callable | None = None):
    """Lipschitz truncation R x / max(R, ||x||).

    ``norm`` defaults to the L2 norm of states, fields or arrays.  Batched
    states are truncated path by path.
    """
    if not R > 0:
        raise InvalidOperandError(f"truncation radius must be > 0, got {R}")
    if norm is None:
        norm = _default_norm
    size = np.asarray(norm(x), dtype=float)
    factor = R / np.maximum(R, size)
    if np.all(factor == 1.0):
        return x
    return x * (float(factor) if factor.ndim == 0 else factor)


def _default_norm(x):
    if isinstance(x, (SystemState, ThetaState)):
        return x.l2_norm()
    if hasattr(x, "norm") and callable(x.norm):
        return x.norm()
    return np.linalg.norm(np.asarray(x))


def _as_theta(state) -> ThetaState:
    if isinstance(state, ThetaState):
        return state
    return psi_theta_convert(state, "psi_to_theta")


def drift_ito(state, basis: NoiseBasis, params: ModelParams | None = None, formulation: str = "psi_system"):
    """Itô drift in (u, psi) (``psi_system``) or in (u, theta) (``theta_system``).

    psi_system: du = div(sym grad u) - Pi div(u⊗u) + F1/4 Δu,
    dpsi = (1 + F1/2 + G1/2) Δpsi + (|grad psi|^2 + |sym grad u|^2)/psi
    - div(u psi) - (F2/2 + G2/8) psi.

    theta_system: same velocity drift, dtheta = (1 + F1/2 + G1/2) Δtheta
    + (1 + F1/2)|sym grad u|^2 - F1 |grad sqrt theta|^2 - div(u theta) - F2 theta.
    A SystemState passed with ``theta_system`` is converted first.

    Raises PositivityViolationError if psi (or theta) is not strictly
    positive at a collocation point of the refined grid.
    """
    if formulation == "psi_system":
        return assemble_fields("psi_system", state, basis, params)
    if formulation == "theta_system":
        return assemble_fields("theta_system", _as_theta(state), basis, params)
    raise InvalidOperandError(f"unknown Itô formulation {formulation!r}")


def drift_galerkin(state: SystemState, basis: NoiseBasis, params: ModelParams):
    """Drift of the (delta, epsilon)-regularised Galerkin scheme.

    du = div(sym grad u) - eps Δ²u - Pi_m div(u⊗u) + F1/4 Δu,
    dpsi = (1 + F1/2 + G1/2) Δpsi - eps Δ²psi
    + P_m[h_delta(psi)(|grad psi|^2 + |sym grad u|^2 + eps)] - P_m div(u psi) - (F2/2 + G2/8) psi.
    Total: no sign condition on psi.
    """
    if params is None:
        raise InvalidOperandError("the Galerkin drift needs ModelParams")
    return assemble_fields("galerkin", state, basis, params)


def drift_stratonovich(state: SystemState, basis: NoiseBasis, params: ModelParams | None = None):
    """Drift without Itô corrections: the noise enters through the Stratonovich integral only."""
    return assemble_fields("stratonovich", state, basis, params)


def smooth_window(r, lower: float, upper: float):
    """C-infinity bump equal to 1 on [lower, upper] and 0 outside [lower/2, 2 upper]."""
    r = np.asarray(r, dtype=float)

    def psi(t):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)

    def step(t):
        t = np.clip(t, 0.0, 1.0)
        a, b = psi(t), psi(1.0 - t)
        return a / (a + b)

    rise = step((r - lower / 2) / (lower / 2))
    fall = step((2 * upper - r) / upper)
    return rise * fall


def nonlinearity_N(state: SystemState, chi_lower: float, chi_upper: float):
    """N1 = -Pi div(U⊗U), N2 = h(Psi)(|grad Psi|^2 + |sym grad U|^2) - div(U Psi).

    h is 1/r times :func:`smooth_window`, so it equals 1/r on
    [chi_lower, chi_upper], vanishes near zero and is defined for any state.
    """
    if not 0 < chi_lower < chi_upper:
        raise InvalidOperandError(f"need 0 < chi_lower < chi_upper, got {chi_lower}, {chi_upper}")
    u, psi = state.u, state.psi
    grid = state.grid
    n1 = -leray_project(differentiate(outer(u, u), "divergence"))

    ik = derivative_factors(grid.m)
    n = grid.fine_n
    stack = np.concatenate(
        [psi.coeffs[..., None, :, :, :], ik * psi.coeffs[..., None, :, :, :], _sym_gradient6(ik, u.coeffs)],
        axis=-4,
    )
    vals = synthesize(stack, n)
    pv = vals[..., 0, :, :, :]
    gradients = np.sum(vals[..., 1:4, :, :, :] ** 2, axis=-4) + _weighted_contract(vals[..., 4:10, :, :, :], vals[..., 4:10, :, :, :])
    window = smooth_window(pv, chi_lower, chi_upper)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(window > 0, window / np.where(window > 0, pv, 1.0), 0.0)
    gradient_term = ScalarField(grid, analyze(h * gradients, grid.m), copy=False)
    n2 = gradient_term - differentiate(multiply(psi, u), "divergence")
    return n1, n2


def psi_theta_convert(state, direction: str | None = None):
    """Change variables pointwise on the refined grid and truncate.

    ``psi_to_theta``: theta = psi^2 / 2.  ``theta_to_psi``: psi = sqrt(2 theta),
    which requires theta >= 0.  With direction None the state type decides.
    """
    if direction is None:
        direction = "theta_to_psi" if isinstance(state, ThetaState) else "psi_to_theta"
    grid = state.grid
    n = grid.fine_n
    if direction == "psi_to_theta":
        if not isinstance(state, SystemState):
            raise InvalidOperandError("psi_to_theta needs a SystemState")
        values = synthesize(state.psi.coeffs, n)
        theta = ScalarField(grid, analyze(0.5 * values**2, grid.m), copy=False)
        return ThetaState(state.u, theta, state.t)
    if direction == "theta_to_psi":
        if not isinstance(state, ThetaState):
            raise InvalidOperandError("theta_to_psi needs a ThetaState")
        values = synthesize(state.theta.coeffs, n)
        _require_positive(values, n, "theta", strict=False)
        root = np.sqrt(2.0 * values)
        check_finite(root, n, "sqrt(2 theta)")
        return SystemState(state.u, ScalarField(grid, analyze(root, grid.m), copy=False), state.t)
    raise InvalidOperandError(f"unknown conversion direction {direction!r}")


def conversion_roundtrip_error(state: SystemState) -> float:
    """L2 distance between psi and its psi -> theta -> psi round trip (truncation error)."""
    back = psi_theta_convert(psi_theta_convert(state, "psi_to_theta"), "theta_to_psi")
    diff = back.psi - state.psi
    return float(np.max(np.atleast_1d(diff.norm())))
