"""Scalar functionals of states and trajectories, with their proven envelopes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import GridMismatchError, InvalidOperandError
from .kernels import _require_positive, _sym_gradient6, _weighted_contract, h_delta
from .spectral import TWO_PI, derivative_factors, inner_product, synthesize, wavenumber_squared
from .state import ModelParams, SystemState, ThetaState

CSV_COLUMNS = (
    "t",
    "energy",
    "entropy_phys",
    "entropy_math",
    "dissipation_budget",
    "admissibility_margin",
    "relative_energy",
    "grad_u_norm",
    "grad_psi_norm",
)


@dataclass(frozen=True)
class DiagnosticRecord:
    """Per-save diagnostics of one path.  Optional entries are None when undefined."""

    t: float
    energy: float
    entropy_phys: float | None
    entropy_math: float
    dissipation_budget: float | None
    admissibility_margin: float
    relative_energy: float | None
    grad_u_norm: float
    grad_psi_norm: float

    def __post_init__(self):
        if self.energy < 0:
            raise InvalidOperandError(f"energy must be >= 0, got {self.energy}")
        if self.dissipation_budget is not None and self.dissipation_budget < 0:
            raise InvalidOperandError(f"dissipation budget must be >= 0, got {self.dissipation_budget}")

    def as_row(self) -> list[str]:
        """CSV cells in the fixed column order; absent values become empty cells."""
        return ["" if getattr(self, name) is None else repr(float(getattr(self, name))) for name in CSV_COLUMNS]


def _psi_state(state) -> SystemState:
    if isinstance(state, ThetaState):
        from .dynamics import psi_theta_convert

        return psi_theta_convert(state, "theta_to_psi")
    return state


def _scalar_of(state):
    return state.theta if isinstance(state, ThetaState) else state.psi


def total_energy(state):
    """1/2 (||u||^2 + ||psi||^2); for a ThetaState 1/2 ||u||^2 + mean(theta)."""
    kinetic = 0.5 * inner_product(state.u, state.u)
    if isinstance(state, ThetaState):
        return kinetic + state.theta.mean()
    return kinetic + 0.5 * inner_product(state.psi, state.psi)


def entropies(state):
    """(entropy_phys, entropy_math) = (mean log theta, -mean sqrt(2 theta)).

    theta = psi^2 / 2 is formed on the refined grid.  entropy_phys is None
    when theta is not strictly positive somewhere; entropy_math uses |psi|
    and is therefore always defined.
    """
    scalar = _scalar_of(state)
    n = state.grid.fine_n
    values = synthesize(scalar.coeffs, n)
    if isinstance(state, ThetaState):
        theta = values
        root = np.sqrt(2.0 * np.maximum(values, 0.0))
    else:
        theta = 0.5 * values**2
        root = np.abs(values)
    axes = (-3, -2, -1)
    positive = np.min(theta, axis=axes) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        phys = np.where(positive, np.mean(np.log(np.where(theta > 0, theta, 1.0)), axis=axes), np.nan)
    math_entropy = -np.mean(root, axis=axes)
    if np.ndim(phys) == 0:
        return (float(phys) if positive else None), float(math_entropy)
    return np.where(positive, phys, np.nan), math_entropy


def _gradient_values(state: SystemState, n: int):
    ik = derivative_factors(state.grid.m)
    stack = np.concatenate(
        [state.psi.coeffs[..., None, :, :, :], ik * state.psi.coeffs[..., None, :, :, :],
         _sym_gradient6(ik, state.u.coeffs)],
        axis=-4,
    )
    vals = synthesize(stack, n)
    return vals[..., 0, :, :, :], vals[..., 1:4, :, :, :], vals[..., 4:10, :, :, :]


def dissipation_integrand(state: SystemState, params: ModelParams | None = None) -> np.ndarray:
    """Collocation values of the budget integrand on the refined grid.

    With params: h_delta(psi)(|grad psi|^2 + |sym grad u|^2 + eps).
    Without: (|grad psi|^2 + |sym grad u|^2) / psi, which needs psi > 0.
    """
    state = _psi_state(state)
    n = state.grid.fine_n
    psi, grad_psi, sym_u = _gradient_values(state, n)
    gradients = np.sum(grad_psi**2, axis=-4) + _weighted_contract(sym_u, sym_u)
    if params is not None:
        return h_delta(psi, params.delta) * (gradients + params.epsilon)
    _require_positive(psi, n, "psi")
    return gradients / psi


def dissipation_budget(state, params: ModelParams | None = None):
    """Spatial integral of :func:`dissipation_integrand`."""
    out = dissipation_integrand(state, params).mean(axis=(-3, -2, -1))
    return float(out) if np.ndim(out) == 0 else out


def gradient_norms(state):
    """(||grad u||, ||grad scalar||) in L2."""

    lam = (TWO_PI**2) * wavenumber_squared(state.grid.m)
    scalar = _scalar_of(state)
    gu = np.sqrt(np.sum(lam * np.abs(state.u.coeffs) ** 2, axis=(-4, -3, -2, -1)))
    gs = np.sqrt(np.sum(lam * np.abs(scalar.coeffs) ** 2, axis=(-3, -2, -1)))
    return (float(gu), float(gs)) if np.ndim(gu) == 0 else (gu, gs)


def hyper_dissipation_rate(state) -> float:
    """||Δu||^2 + ||Δscalar||^2."""

    lam2 = ((TWO_PI**2) * wavenumber_squared(state.grid.m)) ** 2
    scalar = _scalar_of(state)
    out = np.sum(lam2 * np.abs(state.u.coeffs) ** 2, axis=(-4, -3, -2, -1)) + np.sum(
        lam2 * np.abs(scalar.coeffs) ** 2, axis=(-3, -2, -1)
    )
    return float(out) if np.ndim(out) == 0 else out


def relative_energy(state, reference):
    """1/2 (||u - V||^2 + ||psi - Phi||^2)."""
    if state.grid != reference.grid:
        raise GridMismatchError("state and reference live on different grids")
    du = state.u - reference.u
    ds = _scalar_of(state) - _scalar_of(reference)
    return 0.5 * (inner_product(du, du) + inner_product(ds, ds))


# ---------------------------------------------------------------------------
# trajectory functionals


def admissibility_margin(traj) -> float:
    """E(0) + eps t_max - max_t [E(t) + eps int_0^t (||Δu||^2 + ||Δpsi||^2)].

    Positive values mean the energy inequality held along the path.  When
    the trajectory carries a running maximum tracked at every step, that
    value is used; otherwise the maximum runs over the saved states.
    """
    if len(traj.times) == 0:
        raise InvalidOperandError("empty trajectory")
    eps = traj.epsilon
    bracket = traj.bracket_max[-1] if traj.bracket_max else max(
        e + eps * h for e, h in zip(traj.energies, traj.hyper_integral)
    )
    return traj.energies[0] + eps * traj.times[-1] - bracket


def energy_inequality_slack(traj) -> np.ndarray:
    """E(0) + eps t - E(t) - eps int_0^t (||Δu||^2 + ||Δpsi||^2) at every saved time."""
    eps = traj.epsilon
    t = np.asarray(traj.times)
    e = np.asarray(traj.energies)
    h = np.asarray(traj.hyper_integral)
    return e[0] + eps * t - e - eps * h


def sup_gradient_norms(state, n: int | None = None) -> tuple[float, float]:
    """Collocation sup of the Frobenius norm of sym grad u and of |grad psi|."""
    state = _psi_state(state)
    n = state.grid.fine_n if n is None else n
    _, grad_psi, sym_u = _gradient_values(state, n)
    sym_norm = np.sqrt(_weighted_contract(sym_u, sym_u))
    grad_norm = np.sqrt(np.sum(grad_psi**2, axis=-4))
    return float(sym_norm.max()), float(grad_norm.max())


class GronwallEnvelope:
    """t -> exp((2 max_{s<=t} ||sym grad V||_inf + max_{s<=t} ||grad Phi||_inf) t) E0.

    The running maxima are step functions over the sample times of the
    reference.
    """

    def __init__(self, times: Sequence[float], sym_norms: Sequence[float], grad_norms: Sequence[float], E0: float):
        if len(times) == 0:
            raise InvalidOperandError("empty reference trajectory")
        order = np.argsort(times)
        self.times = np.asarray(times, dtype=float)[order]
        self.sym_max = np.maximum.accumulate(np.asarray(sym_norms, dtype=float)[order])
        self.grad_max = np.maximum.accumulate(np.asarray(grad_norms, dtype=float)[order])
        if not (np.all(np.isfinite(self.sym_max)) and np.all(np.isfinite(self.grad_max))):
            raise InvalidOperandError("reference gradients are not finite")
        self.E0 = float(E0)

    def rate(self, t):
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        idx = np.clip(idx, 0, len(self.times) - 1)
        return 2.0 * self.sym_max[idx] + self.grad_max[idx]

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        out = np.exp(self.rate(t_arr) * t_arr) * self.E0
        return float(out) if out.ndim == 0 else out


def gronwall_envelope(reference_traj, E0: float) -> GronwallEnvelope:
    """Relative-energy envelope built from a reference trajectory or a list of states."""
    states = reference_traj.states if hasattr(reference_traj, "states") else list(reference_traj)
    if not states:
        raise InvalidOperandError("empty reference trajectory")
    norms = [sup_gradient_norms(s) for s in states]
    return GronwallEnvelope([s.t for s in states], [a for a, _ in norms], [b for _, b in norms], E0)


# ---------------------------------------------------------------------------
# entropy drift and relative-energy right-hand side


def entropy_drift_coefficients(F1, F2, G1, G2):
    """(3 F1/2 - 1, -(F1/4 + 1), -(F2 + G2/2)); plain arithmetic, so exact and symbolic inputs pass through."""
    return 3 * F1 / 2 - 1, -(F1 / 4 + 1), -(F2 + G2 / 2)


@dataclass(frozen=True)
class EntropyDrift:
    coef_velocity_term: object
    coef_gradient_term: object
    constant_term: object
    velocity_integral: float
    gradient_integral: float
    fields: dict = field(default_factory=dict, repr=False)

    @property
    def velocity_term(self) -> float:
        return float(self.coef_velocity_term) * self.velocity_integral

    @property
    def gradient_term(self) -> float:
        return float(self.coef_gradient_term) * self.gradient_integral

    @property
    def total(self) -> float:
        return self.velocity_term + self.gradient_term + float(self.constant_term)


def entropy_drift_decomposition(state, basis) -> EntropyDrift:
    """Terms of the drift of -mean(log theta).

    velocity_integral = mean(|sym grad u|^2 / theta), gradient_integral =
    mean(|grad theta|^2 / theta), both on the refined grid.
    """
    from .dynamics import psi_theta_convert

    theta_state = state if isinstance(state, ThetaState) else psi_theta_convert(state, "psi_to_theta")
    grid = theta_state.grid
    n = grid.fine_n
    ik = derivative_factors(grid.m)
    th = theta_state.theta.coeffs
    stack = np.concatenate(
        [th[..., None, :, :, :], ik * th[..., None, :, :, :], _sym_gradient6(ik, theta_state.u.coeffs)], axis=-4
    )
    vals = synthesize(stack, n)
    theta = vals[..., 0, :, :, :]
    _require_positive(theta, n, "theta")
    velocity = _weighted_contract(vals[..., 4:10, :, :, :], vals[..., 4:10, :, :, :]) / theta
    gradient = np.sum(vals[..., 1:4, :, :, :] ** 2, axis=-4) / theta
    c_vel, c_grad, const = entropy_drift_coefficients(basis.F1, basis.F2, basis.G1, basis.G2)
    return EntropyDrift(
        c_vel, c_grad, const,
        float(velocity.mean()), float(gradient.mean()),
        {"velocity_integrand": velocity, "gradient_integrand": gradient},
    )


@dataclass(frozen=True)
class RelativeEnergyRHS:
    terms: dict[str, float]

    @property
    def total(self) -> float:
        return math.fsum(self.terms.values())


def relative_energy_rhs(state: SystemState, reference: SystemState) -> RelativeEnergyRHS:
    """Deterministic integrand of the relative-energy expansion.

    The defect measure is represented by its equality case, the state's own
    dissipation integrand, so the total vanishes when state == reference.
    All integrals are collocation quadratures on the refined grid.
    """
    state, reference = _psi_state(state), _psi_state(reference)
    if state.grid != reference.grid:
        raise GridMismatchError("state and reference live on different grids")
    grid = state.grid
    n = grid.fine_n
    ik = derivative_factors(grid.m)
    u, V = state.u.coeffs, reference.u.coeffs
    stack = np.concatenate(
        [
            state.psi.coeffs[..., None, :, :, :],
            reference.psi.coeffs[..., None, :, :, :],
            ik * state.psi.coeffs[..., None, :, :, :],
            ik * reference.psi.coeffs[..., None, :, :, :],
            _sym_gradient6(ik, u),
            _sym_gradient6(ik, V),
            u,
            V,
            (ik[:, None] * V[..., None, :, :, :, :]).reshape(V.shape[:-4] + (9,) + V.shape[-3:]),
        ],
        axis=-4,
    )
    vals = synthesize(stack, n)
    psi, Phi = vals[..., 0, :, :, :], vals[..., 1, :, :, :]
    grad_psi, grad_Phi = vals[..., 2:5, :, :, :], vals[..., 5:8, :, :, :]
    sym_u, sym_V = vals[..., 8:14, :, :, :], vals[..., 14:20, :, :, :]
    uv, Vv = vals[..., 20:23, :, :, :], vals[..., 23:26, :, :, :]
    grad_V = vals[..., 26:35, :, :, :].reshape(vals.shape[:-4] + (3, 3) + vals.shape[-3:])  # d_i V_j

    _require_positive(Phi, n, "Phi")
    _require_positive(psi, n, "psi")
    axes = (-3, -2, -1)

    def integral(values):
        return float(np.mean(values, axis=axes))

    dot = lambda a, b: np.sum(a * b, axis=-4)  # noqa: E731
    advect_V = np.einsum("...ixyz,...ijxyz->...jxyz", Vv, grad_V)  # (V.grad)V
    grad_V_uu = np.einsum("...ijxyz,...ixyz,...jxyz->...xyz", grad_V, uv, uv)
    sym_V_sq = _weighted_contract(sym_V, sym_V)
    sym_u_sq = _weighted_contract(sym_u, sym_u)
    terms = {
        "cross_dissipation": 2.0 * integral(_weighted_contract(sym_V, sym_u) + dot(grad_psi, grad_Phi)),
        "reference_dissipation": -integral(psi / Phi * (dot(grad_Phi, grad_Phi) + sym_V_sq)),
        "state_dissipation": -integral(Phi / psi * (dot(grad_psi, grad_psi) + sym_u_sq)),
        "velocity_transport": integral(dot(uv, advect_V) - grad_V_uu),
        "scalar_transport": integral(psi * dot(Vv, grad_Phi) - psi * dot(grad_Phi, uv)),
    }
    return RelativeEnergyRHS(terms)


def record_for(state, *, params: ModelParams | None, margin: float, reference=None,
               budget: float | None = None) -> DiagnosticRecord:
    """Assemble a DiagnosticRecord for a single (unbatched) state."""
    phys, math_entropy = entropies(state)
    if budget is None:
        try:
            budget = dissipation_budget(state, params)
        except ArithmeticError:
            budget = None
    gu, gs = gradient_norms(state)
    rel = None if reference is None else float(relative_energy(state, reference))
    return DiagnosticRecord(
        t=state.t,
        energy=float(total_energy(state)),
        entropy_phys=phys,
        entropy_math=math_entropy,
        dissipation_budget=None if budget is None else float(budget),
        admissibility_margin=float(margin),
        relative_energy=rel,
        grad_u_norm=gu,
        grad_psi_norm=gs,
    )


def record_field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(DiagnosticRecord))
