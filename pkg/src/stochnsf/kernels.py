"""Fused assembly of drift and noise increments on raw coefficient arrays.

Every public drift or noise operation, and every time step, goes through
:func:`assemble`.  It evaluates ``drift_scale * drift + diffusion(dB, dW)``
with as few transforms as possible:

* quadratic fluxes (u⊗u, the psi-weighted noise matrix, s(u + G)) on the
  dealiasing grid, where truncation to the cutoff is exact;
* every pointwise term that involves 1/psi, h_delta, sqrt or 1/theta on the
  refined grid (``fine_factor * n``).

Systems: ``psi_ito`` (Itô equations in (u, psi)), ``psi_stratonovich``
(same without correction drifts), ``galerkin`` (regularised Itô scheme),
``galerkin_stratonovich`` (the regularised scheme without correction
drifts; the noise is linear in the state, so both describe one process) and
``theta_ito`` (Itô equations in (u, theta)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidOperandError, PositivityViolationError
from .spectral import (
    TWO_PI,
    ScalarField,
    VectorField,
    analyze,
    check_finite,
    derivative_factors,
    fourier_mask,
    leray_coefficients,
    synthesize,
    wavenumber_squared,
)

SYSTEMS = ("psi_ito", "psi_stratonovich", "galerkin", "galerkin_stratonovich", "theta_ito")
GALERKIN_SYSTEMS = ("galerkin", "galerkin_stratonovich")

FORMULATION_SYSTEMS = {
    "psi_system": "psi_ito",
    "theta_system": "theta_ito",
    "galerkin": "galerkin",
    "stratonovich": "psi_stratonovich",
    "galerkin_stratonovich": "galerkin_stratonovich",
}

INV_SQRT2 = 1.0 / math.sqrt(2.0)

# unique entries of a symmetric 3x3 matrix and their multiplicity in a full contraction
SYM_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
SYM_WEIGHT = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])


def h_delta(r, delta: float):
    """1/r for r >= delta, the C1 linear continuation (2 delta - r)/delta^2 below."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r >= delta, 1.0 / np.where(r >= delta, r, 1.0), (2.0 * delta - r) / (delta * delta))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LinearCoefficients:
    """Constant-coefficient part: du = u_lap Δu - eps Δ²u, ds = s_lap Δs - eps Δ²s - s_damp s."""

    u_lap: float
    s_lap: float
    s_damp: float
    eps: float

    def symbols(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        lam = (TWO_PI**2) * wavenumber_squared(m)
        u_sym = -self.u_lap * lam - self.eps * lam * lam
        s_sym = -self.s_lap * lam - self.eps * lam * lam - self.s_damp
        return u_sym, s_sym


def linear_coefficients(system: str, basis, params) -> LinearCoefficients:
    if system not in SYSTEMS:
        raise InvalidOperandError(f"unknown system {system!r}")
    F1, F2, G1, G2 = basis.F1, basis.F2, basis.G1, basis.G2
    # div(sym grad u) = Δu / 2 on divergence-free fields
    eps = params.epsilon if (system in GALERKIN_SYSTEMS and params is not None) else 0.0
    if system in ("psi_stratonovich", "galerkin_stratonovich"):
        return LinearCoefficients(0.5, 1.0, 0.0, eps)
    damp = F2 if system == "theta_ito" else F2 / 2 + G2 / 8
    return LinearCoefficients(0.5 + F1 / 4, 1.0 + F1 / 2 + G1 / 2, damp, eps)


@dataclass
class Assembly:
    du: np.ndarray
    ds: np.ndarray
    budget: np.ndarray | None


def _require_positive(values: np.ndarray, n: int, name: str, strict: bool = True):
    low = float(values.min())
    if (low <= 0.0) if strict else (low < 0.0):
        idx = np.unravel_index(int(np.argmin(values)), values.shape)
        location = tuple(int(i) / n for i in idx[-3:])
        where = f" (batch entry {tuple(int(i) for i in idx[:-3])})" if len(idx) > 3 else ""
        raise PositivityViolationError(
            f"{name} must be {'strictly positive' if strict else 'non-negative'}; "
            f"minimum {low:.6g} at x={location}{where}",
            min_value=low,
            location=location,
        )


def _sym_divergence(ik: np.ndarray, t6: np.ndarray) -> np.ndarray:
    """Divergence of a symmetric tensor given by its six unique coefficient arrays."""
    t00, t11, t22, t01, t02, t12 = (t6[..., i, :, :, :] for i in range(6))
    k1, k2, k3 = ik
    out = np.empty(t6.shape[:-4] + (3,) + t6.shape[-3:], dtype=np.complex128)
    out[..., 0, :, :, :] = k1 * t00 + k2 * t01 + k3 * t02
    out[..., 1, :, :, :] = k1 * t01 + k2 * t11 + k3 * t12
    out[..., 2, :, :, :] = k1 * t02 + k2 * t12 + k3 * t22
    return out


def _sym_gradient6(ik: np.ndarray, u: np.ndarray) -> np.ndarray:
    parts = [0.5 * (ik[i] * u[..., j, :, :, :] + ik[j] * u[..., i, :, :, :]) for i, j in SYM_INDEX]
    return np.stack(parts, axis=-4)


def _sym6(matrix: np.ndarray) -> np.ndarray:
    return np.stack([matrix[..., i, j, :, :, :] for i, j in SYM_INDEX], axis=-4)


def _weighted_contract(a6: np.ndarray, b6: np.ndarray) -> np.ndarray:
    """Full contraction A:B of symmetric matrices stored as six unique collocation arrays."""
    diagonal = a6[..., 0, :, :, :] * b6[..., 0, :, :, :] + a6[..., 1, :, :, :] * b6[..., 1, :, :, :] + a6[..., 2, :, :, :] * b6[..., 2, :, :, :]
    off = a6[..., 3, :, :, :] * b6[..., 3, :, :, :] + a6[..., 4, :, :, :] * b6[..., 4, :, :, :] + a6[..., 5, :, :, :] * b6[..., 5, :, :, :]
    return diagonal + 2.0 * off


def assemble(system: str, grid, basis, params, u: np.ndarray, s: np.ndarray, *,
             drift_scale: float = 1.0, dB: np.ndarray | None = None, dW: np.ndarray | None = None,
             linear: bool = True) -> Assembly:
    """drift_scale * drift(u, s) + noise(dB, dW) as coefficient arrays.

    ``linear=False`` omits the constant-coefficient linear part (used by
    integrating-factor schemes).  ``budget`` is the spatial integral of the
    pointwise dissipation term (None for the theta system).
    """
    if system not in SYSTEMS:
        raise InvalidOperandError(f"unknown system {system!r}")
    m = grid.m
    ik = derivative_factors(m)
    nonlinear = params.include_nonlinear if params is not None else True
    with_drift = drift_scale != 0.0
    with_f = dB is not None and basis.n_f > 0
    with_g = dW is not None and basis.n_g > 0
    batch = s.shape[:-3]

    du = np.zeros(u.shape, dtype=np.complex128)
    ds = np.zeros(s.shape, dtype=np.complex128)
    budget = None

    if linear and with_drift:
        u_sym, s_sym = linear_coefficients(system, basis, params).symbols(m)
        du += drift_scale * u_sym * u
        ds += drift_scale * s_sym * s

    S6 = _sym6(basis.matrix_field(dB)) if with_f else None
    G = basis.vector_field(dW) if with_g else None
    convect = with_drift and nonlinear

    # quadratic terms on the dealiasing grid, where truncation to the cutoff is exact
    psi_like = system != "theta_ito"
    tensor_flux = convect or (with_f and psi_like)
    scalar_flux = convect or with_g
    quadratic = psi_like and (with_f or with_g)
    if tensor_flux or scalar_flux:
        n = grid.dealias_n
        stack = [s[..., None, :, :, :]]
        if convect:
            stack.append(u)
        if with_f and psi_like:
            stack.append(S6)
            stack.append(_sym_gradient6(ik, u))
        if with_g:
            stack.append(G)
            if psi_like:
                stack.append(np.sum(ik * G, axis=-4)[..., None, :, :, :])
        vals = synthesize(np.concatenate(stack, axis=-4), n)
        sv = vals[..., 0, :, :, :]
        pos = 1
        uv = s6 = sym_u = gv = div_g = None
        if convect:
            uv = vals[..., pos:pos + 3, :, :, :]
            pos += 3
        if with_f and psi_like:
            s6 = vals[..., pos:pos + 6, :, :, :]
            sym_u = vals[..., pos + 6:pos + 12, :, :, :]
            pos += 12
        if with_g:
            gv = vals[..., pos:pos + 3, :, :, :]
            pos += 3
            if psi_like:
                div_g = vals[..., pos, :, :, :]
        parts = []
        if tensor_flux:
            t6 = np.zeros(batch + (6, n, n, n))
            if convect:
                for c, (i, j) in enumerate(SYM_INDEX):
                    t6[..., c, :, :, :] = drift_scale * uv[..., i, :, :, :] * uv[..., j, :, :, :]
            if s6 is not None:
                t6 += INV_SQRT2 * sv[..., None, :, :, :] * s6
            parts.append(t6)
        if scalar_flux:
            carrier = np.zeros(batch + (3, n, n, n))
            if convect:
                carrier += drift_scale * uv
            if with_g:
                carrier += gv
            parts.append(sv[..., None, :, :, :] * carrier)
        if quadratic:
            q = np.zeros(batch + (n, n, n))
            if div_g is not None:
                q += 0.5 * sv * div_g
            if s6 is not None:
                q -= INV_SQRT2 * _weighted_contract(sym_u, s6)
            parts.append(q[..., None, :, :, :])
        coeffs = analyze(np.concatenate(parts, axis=-4), m)
        pos = 0
        if tensor_flux:
            du -= leray_coefficients(m, _sym_divergence(ik, coeffs[..., 0:6, :, :, :]))
            pos = 6
        if scalar_flux:
            ds -= np.sum(ik * coeffs[..., pos:pos + 3, :, :, :], axis=-4)
            pos += 3
        if quadratic:
            ds += coeffs[..., pos, :, :, :]

    # pointwise terms with 1/psi, h_delta, sqrt or 1/theta on the refined grid
    pointwise_drift = with_drift and nonlinear
    if pointwise_drift or (with_f and not psi_like):
        n = grid.fine_n
        stack = [s[..., None, :, :, :]]
        if pointwise_drift:
            stack.append(ik * s[..., None, :, :, :])
        stack.append(_sym_gradient6(ik, u))
        if with_f and not psi_like:
            stack.append(S6)
        vals = synthesize(np.concatenate(stack, axis=-4), n)
        sv = vals[..., 0, :, :, :]
        pos = 1
        grad_s = None
        if pointwise_drift:
            grad_s = vals[..., 1:4, :, :, :]
            pos = 4
        sym_u = vals[..., pos:pos + 6, :, :, :]
        s6 = vals[..., pos + 6:pos + 12, :, :, :] if (with_f and not psi_like) else None

        term = np.zeros(batch + (n, n, n))
        extra = None
        if psi_like:
            gradients = np.sum(grad_s**2, axis=-4) + _weighted_contract(sym_u, sym_u)
            if system in GALERKIN_SYSTEMS:
                integrand = h_delta(sv, params.delta) * (gradients + params.epsilon)
            else:
                _require_positive(sv, n, "psi")
                integrand = gradients / sv
            check_finite(integrand, n, "dissipation integrand")
            budget = integrand.mean(axis=(-3, -2, -1))
            term += drift_scale * integrand
        else:
            F1 = basis.F1
            _require_positive(sv, n, "theta", strict=pointwise_drift)
            if pointwise_drift:
                sym_sq = _weighted_contract(sym_u, sym_u)
                grad_sq = np.sum(grad_s**2, axis=-4)
                pointwise = (1.0 + F1 / 2) * sym_sq - F1 * grad_sq / (4.0 * sv)
                check_finite(pointwise, n, "theta drift")
                term += drift_scale * pointwise
            if with_f:
                root = np.sqrt(sv)
                term -= root * _weighted_contract(sym_u, s6)
                extra = root[..., None, :, :, :] * s6
        if extra is None:
            ds += analyze(term, m)
        else:
            coeffs = analyze(np.concatenate([term[..., None, :, :, :], extra], axis=-4), m)
            ds += coeffs[..., 0, :, :, :]
            du -= leray_coefficients(m, _sym_divergence(ik, coeffs[..., 1:7, :, :, :]))

    if system in GALERKIN_SYSTEMS and params is not None and params.galerkin_cutoff(grid) < m:
        mask = fourier_mask(m, params.galerkin_cutoff(grid))
        du *= mask
        ds *= mask
    return Assembly(du, ds, budget)


def assemble_fields(formulation: str, state, basis, params, *, drift_scale: float = 1.0,
                    increment=None, linear: bool = True):
    """Field-level wrapper around :func:`assemble` returning (du, dscalar)."""
    from .state import SystemState, ThetaState

    system = FORMULATION_SYSTEMS.get(formulation, formulation)
    expected = ThetaState if system == "theta_ito" else SystemState
    if not isinstance(state, expected):
        raise InvalidOperandError(f"{formulation} assembly needs a {expected.__name__}")
    grid = state.grid
    if basis.grid != grid:
        raise InvalidOperandError("noise basis and state live on different grids")
    scalar = state.theta if system == "theta_ito" else state.psi
    out = assemble(
        system, grid, basis, params, state.u.coeffs, scalar.coeffs,
        drift_scale=drift_scale,
        dB=None if increment is None else increment.dB,
        dW=None if increment is None else increment.dW,
        linear=linear,
    )
    return (
        VectorField(grid, out.du, divergence_free=True, copy=False, check=False),
        ScalarField(grid, out.ds, copy=False),
    )
