"""Discrete GENERIC operators L, M, B and checks of their structural identities.

States are z = (u, theta); covectors w = (v, q) are functional-gradient
directions.  L, M, B and B^T are evaluated on an odd quadrature grid with
2 qc + 1 points per axis, qc = fine_n // 2 of the state grid.  On that grid
pointwise products are self-adjoint, spectral derivatives are exactly
skew-adjoint and Pi is an orthogonal projector, so antisymmetry, symmetry,
positivity, B B^T = M and adjointness hold to rounding.  Velocity parts of
covectors pass through Pi before use.  Outputs live on the quadrature grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, InsufficientHeadroomError, InvalidOperandError
from .kernels import _require_positive
from .noise import NoiseBasis
from .spectral import (
    ScalarField,
    TensorField,
    TorusGrid,
    VectorField,
    analyze,
    derivative_factors,
    fourier_project,
    leray_coefficients,
    leray_project,
    resample,
    resize_coefficients,
    synthesize,
)
from .state import SystemState, ThetaState


@dataclass(frozen=True)
class CoVector:
    """Pair (v, q) of a vector field and a scalar field on one grid."""

    v: VectorField
    q: ScalarField

    def __post_init__(self):
        if self.v.grid != self.q.grid:
            raise GridMismatchError("covector components live on different grids")
        if self.v.batch_shape or self.q.batch_shape:
            raise InvalidOperandError("covectors are unbatched")

    @property
    def grid(self) -> TorusGrid:
        return self.v.grid

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "CoVector":
        return cls(VectorField.zeros(grid), ScalarField.zeros(grid))

    def on(self, grid: TorusGrid) -> "CoVector":
        return CoVector(resample(self.v, grid), resample(self.q, grid))

    def cutoff(self, tol: float = 0.0) -> int:
        return max(self.v.support_cutoff(tol), self.q.support_cutoff(tol))

    def norm(self) -> float:
        return math.sqrt(float(self.v.norm()) ** 2 + float(self.q.norm()) ** 2)

    def __add__(self, other: "CoVector") -> "CoVector":
        a, b = _common(self, other)
        return CoVector(a.v + b.v, a.q + b.q)

    def __sub__(self, other: "CoVector") -> "CoVector":
        a, b = _common(self, other)
        return CoVector(a.v - b.v, a.q - b.q)

    def __mul__(self, factor: float) -> "CoVector":
        return CoVector(self.v * factor, self.q * factor)

    __rmul__ = __mul__


@dataclass(frozen=True)
class NoiseField:
    """Argument of B: a matrix field and a vector field."""

    mat: TensorField
    vec: VectorField

    @property
    def grid(self) -> TorusGrid:
        return self.mat.grid

    def on(self, grid: TorusGrid) -> "NoiseField":
        return NoiseField(resample(self.mat, grid), resample(self.vec, grid))


def _larger(a: TorusGrid, b: TorusGrid) -> TorusGrid:
    return a if (a.m, a.n) >= (b.m, b.n) else b


def _common(a, b):
    grid = _larger(a.grid, b.grid)
    return a.on(grid), b.on(grid)


def pairing(a, b) -> float:
    """L2 pairing of two covectors or two noise fields, on the finer of their grids."""
    a, b = _common(a, b)
    if isinstance(a, CoVector):
        pairs = ((a.v, b.v), (a.q, b.q))
    else:
        pairs = ((a.mat, b.mat), (a.vec, b.vec))
    return math.fsum(float(np.sum((x.coeffs * np.conj(y.coeffs)).real)) for x, y in pairs)


# ---------------------------------------------------------------------------
# quadrature grid


class _Quadrature:
    def __init__(self, grid: TorusGrid):
        self.cutoff = grid.fine_n // 2
        self.n = 2 * self.cutoff + 1
        self.grid = TorusGrid(self.cutoff, self.n, grid.fine_factor)
        self.ik = derivative_factors(self.cutoff)

    def values(self, coeffs: np.ndarray) -> np.ndarray:
        return synthesize(resize_coefficients(coeffs, self.cutoff), self.n)

    def coeffs(self, values: np.ndarray) -> np.ndarray:
        return analyze(values, self.cutoff)

    def grad(self, values: np.ndarray) -> np.ndarray:
        """Gradient of the trailing-grid arrays, new axis -4 holding d/dx_i."""
        c = self.coeffs(values)
        return synthesize(self.ik.reshape((3,) + (1,) * (c.ndim - 3) + self.ik.shape[1:]) * c[None], self.n)

    def div(self, values: np.ndarray) -> np.ndarray:
        """Divergence over the first component axis (axis -4 for vectors, -5 for matrices)."""
        c = self.coeffs(values)
        ik = self.ik if c.ndim == 4 else self.ik[:, None]
        return synthesize(np.sum(ik * c, axis=0), self.n)

    def leray(self, values: np.ndarray) -> np.ndarray:
        return leray_coefficients(self.cutoff, self.coeffs(values))

    def sym_grad(self, vec_values: np.ndarray) -> np.ndarray:
        g = self.grad(vec_values)  # g[i, j] = d_i v_j
        return 0.5 * (g + np.swapaxes(g, 0, 1))


def _theta_state(z) -> ThetaState:
    if isinstance(z, ThetaState):
        return z
    if isinstance(z, SystemState):
        from .dynamics import psi_theta_convert

        return psi_theta_convert(z, "psi_to_theta")
    raise InvalidOperandError("expected a ThetaState or SystemState")


def _state_values(quad: _Quadrature, z: ThetaState):
    u = quad.values(z.u.coeffs)
    theta = quad.values(z.theta.coeffs)
    return u, theta


def _covector_values(quad: _Quadrature, w: CoVector):
    v = quad.values(leray_coefficients(w.grid.m, w.v.coeffs))
    return v, quad.values(w.q.coeffs)


def _out(quad: _Quadrature, v_coeffs: np.ndarray, q_values: np.ndarray) -> CoVector:
    g = quad.grid
    return CoVector(VectorField(g, v_coeffs, copy=False), ScalarField(g, quad.coeffs(q_values), copy=False))


def _check_grids(z, w):
    if w.grid.m > z.grid.fine_n // 2:
        raise InvalidOperandError(f"covector cutoff {w.grid.m} exceeds the quadrature cutoff {z.grid.fine_n // 2}")


# ---------------------------------------------------------------------------
# operators


def apply_L(z, w: CoVector) -> CoVector:
    """L(z) w = (-Pi(div(v⊗u) + (grad v).u) - Pi(theta grad q), -div(theta v)).

    div contracts the first tensor index and ((grad v).u)_i = d_i v_j u_j.
    """
    z = _theta_state(z)
    _check_grids(z, w)
    quad = _Quadrature(z.grid)
    u, theta = _state_values(quad, z)
    v, q = _covector_values(quad, w)
    transport = quad.div(v[:, None] * u[None, :])
    gv = quad.grad(v)
    stretch = np.einsum("ij...,j...->i...", gv, u)
    heat = theta * quad.grad(q)
    row1 = -quad.leray(transport + stretch + heat)
    row2 = -quad.div(theta * v)
    return _out(quad, row1, row2)


def apply_M(z, w: CoVector) -> CoVector:
    """M(z) w with rows

    -Pi div(theta sym grad v) + Pi div(theta q sym grad u) and
    -theta sym grad u : grad v + theta |sym grad u|^2 q - div(theta^2 grad q).
    """
    z = _theta_state(z)
    _check_grids(z, w)
    quad = _Quadrature(z.grid)
    u, theta = _state_values(quad, z)
    v, q = _covector_values(quad, w)
    su = quad.sym_grad(u)
    sv = quad.sym_grad(v)
    row1 = quad.leray(-quad.div(theta * sv) + quad.div(theta * q * su))
    contract = np.einsum("ij...,ij...->...", su, sv)
    row2 = -theta * contract + theta * np.einsum("ij...,ij...->...", su, su) * q - quad.div(theta**2 * quad.grad(q))
    return _out(quad, row1, row2)


def apply_B(z, xi: NoiseField) -> CoVector:
    """B(z) xi = (-Pi div(sqrt(theta) sym(xi_mat)), -sqrt(theta) sym grad u : xi_mat - div(theta xi_vec))."""
    z = _theta_state(z)
    quad = _Quadrature(z.grid)
    if xi.grid.m > quad.cutoff:
        raise InvalidOperandError("noise field cutoff exceeds the quadrature cutoff")
    u, theta = _state_values(quad, z)
    _require_positive(theta, quad.n, "theta", strict=False)
    root = np.sqrt(theta)
    mat = quad.values(xi.mat.coeffs)
    sym = 0.5 * (mat + np.swapaxes(mat, 0, 1))
    vec = quad.values(xi.vec.coeffs)
    su = quad.sym_grad(u)
    row1 = -quad.leray(quad.div(root * sym))
    row2 = -root * np.einsum("ij...,ij...->...", su, sym) - quad.div(theta * vec)
    return _out(quad, row1, row2)


def apply_B_transpose(z, w: CoVector) -> NoiseField:
    """B(z)^T w = (sqrt(theta) sym grad v - sqrt(theta) q sym grad u, theta grad q)."""
    z = _theta_state(z)
    _check_grids(z, w)
    quad = _Quadrature(z.grid)
    u, theta = _state_values(quad, z)
    _require_positive(theta, quad.n, "theta", strict=False)
    root = np.sqrt(theta)
    v, q = _covector_values(quad, w)
    mat = root * quad.sym_grad(v) - root * q * quad.sym_grad(u)
    vec = theta * quad.grad(q)
    g = quad.grid
    return NoiseField(TensorField(g, quad.coeffs(mat), copy=False), VectorField(g, quad.coeffs(vec), copy=False))


def energy_derivative(z) -> CoVector:
    """First variation of the energy: (u, 1)."""
    z = _theta_state(z)
    return CoVector(VectorField(z.grid, z.u.coeffs), ScalarField.constant(z.grid, 1.0))


def entropy_derivative(z) -> CoVector:
    """First variation of the entropy: (0, 1/theta), with 1/theta sampled on the quadrature grid."""
    z = _theta_state(z)
    quad = _Quadrature(z.grid)
    theta = quad.values(z.theta.coeffs)
    _require_positive(theta, quad.n, "theta")
    return CoVector(VectorField.zeros(quad.grid), ScalarField(quad.grid, quad.coeffs(1.0 / theta), copy=False))


def generic_drift(z) -> CoVector:
    """L dE/dz + M dS/dz."""
    return apply_L(z, energy_derivative(z)) + apply_M(z, entropy_derivative(z))


# ---------------------------------------------------------------------------
# bracket and Jacobi identity


def bracket_x(w1: CoVector, w2: CoVector) -> CoVector:
    """{w1, w2}_x = (v2 . grad) w1 - (v1 . grad) w2 componentwise, dealiased to the shared cutoff."""
    if w1.grid != w2.grid:
        raise GridMismatchError("bracket arguments live on different grids")
    grid = w1.grid
    m, n = grid.m, grid.dealias_n
    ik = derivative_factors(m)

    def parts(w):
        comps = np.concatenate([w.v.coeffs, w.q.coeffs[None]])  # (4, K, K, K)
        grads = ik[:, None] * comps[None]  # grads[i, c] = d_i comp_c
        return synthesize(w.v.coeffs, n), synthesize(grads, n)

    v1, g1 = parts(w1)
    v2, g2 = parts(w2)
    values = np.einsum("i...,ic...->c...", v2, g1) - np.einsum("i...,ic...->c...", v1, g2)
    c = analyze(values, m)
    return CoVector(VectorField(grid, c[:3], copy=False), ScalarField(grid, c[3], copy=False))


def jacobi_residual(w1: CoVector, w2: CoVector, w3: CoVector, tol: float = 0.0) -> float:
    """||{w1,{w2,w3}} + {w2,{w3,w1}} + {w3,{w1,w2}}|| over the largest single term.

    Needs covector cutoffs <= m / 3 so that the double bracket is exact.
    """
    m = w1.grid.m
    cutoff = max(w.cutoff(tol) for w in (w1, w2, w3))
    if 3 * cutoff > m:
        raise InsufficientHeadroomError(
            f"covector cutoff {cutoff} needs a grid cutoff of at least {3 * cutoff}, have {m}"
        )
    terms = [
        bracket_x(w1, bracket_x(w2, w3)),
        bracket_x(w2, bracket_x(w3, w1)),
        bracket_x(w3, bracket_x(w1, w2)),
    ]
    scale = max(t.norm() for t in terms)
    if scale == 0.0:
        return 0.0
    return (terms[0] + terms[1] + terms[2]).norm() / scale


# ---------------------------------------------------------------------------
# random samples and the full report


def random_state(grid: TorusGrid, rng: np.random.Generator, *, cutoff: int = 2, velocity: float = 0.5,
                 variation: float = 0.2, mean: float = 1.0) -> ThetaState:
    """Divergence-free u and theta = mean * (1 + variation * phi) with sup |phi| = 1, phi of given cutoff."""
    if not 0 <= variation < 1:
        raise InvalidOperandError("variation must be in [0, 1)")
    u = VectorField.from_values(grid, rng.standard_normal((3,) + (grid.n,) * 3))
    u = leray_project(fourier_project(u, cutoff))
    peak = float(np.abs(u.values()).max())
    u = u * (velocity / peak) if peak > 0 else u
    phi = fourier_project(ScalarField.from_values(grid, rng.standard_normal((grid.n,) * 3)), cutoff)
    phi = phi - ScalarField.constant(grid, phi.mean())
    peak = float(np.abs(phi.values(grid.fine_n)).max())
    phi = phi * (1.0 / peak) if peak > 0 else phi
    theta = ScalarField.constant(grid, mean) + phi * (mean * variation)
    return ThetaState(VectorField(grid, u.coeffs, divergence_free=True), theta)


def random_covector(grid: TorusGrid, rng: np.random.Generator, cutoff: int | None = None) -> CoVector:
    """Gaussian coefficients up to ``cutoff``; v is not projected."""
    cutoff = grid.m if cutoff is None else cutoff
    v = fourier_project(VectorField.from_values(grid, rng.standard_normal((3,) + (grid.n,) * 3)), cutoff)
    q = fourier_project(ScalarField.from_values(grid, rng.standard_normal((grid.n,) * 3)), cutoff)
    return CoVector(v, q)


def random_noise_field(grid: TorusGrid, rng: np.random.Generator, cutoff: int | None = None) -> NoiseField:
    cutoff = grid.m if cutoff is None else cutoff
    mat = fourier_project(TensorField.from_values(grid, rng.standard_normal((3, 3) + (grid.n,) * 3)), cutoff)
    vec = fourier_project(VectorField.from_values(grid, rng.standard_normal((3,) + (grid.n,) * 3)), cutoff)
    return NoiseField(mat, vec)


def state_norm(z: ThetaState) -> float:
    return math.sqrt(float(z.u.norm()) ** 2 + float(z.theta.norm()) ** 2)


def degeneracy_residuals(z) -> tuple[float, float]:
    """(||L dS|| / ||z||, ||M dE|| / (||grad u||^2 + ||theta||))."""
    z = _theta_state(z)
    l_res = apply_L(z, entropy_derivative(z)).norm() / state_norm(z)
    grad_u = float(np.sum(np.abs(derivative_factors(z.grid.m)[:, None] * z.u.coeffs[None]) ** 2))
    m_res = apply_M(z, energy_derivative(z)).norm() / (grad_u + float(z.theta.norm()))
    return l_res, m_res


def drift_consistency_residual(z) -> float:
    """Largest coefficient gap between L dE + M dS and the noise-free theta drift."""
    from .dynamics import drift_ito

    z = _theta_state(z)
    du, dtheta = drift_ito(z, NoiseBasis.empty(z.grid), formulation="theta_system")
    g = generic_drift(z).on(z.grid)
    return float(max(np.abs(g.v.coeffs - du.coeffs).max(), np.abs(g.q.coeffs - dtheta.coeffs).max()))


@dataclass
class GenericReport:
    residuals: dict
    tolerances: dict

    @property
    def passed(self) -> bool:
        return all(self.residuals[k] <= self.tolerances[k] for k in self.tolerances)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": {
                k: {"residual": self.residuals[k], "tolerance": self.tolerances[k],
                    "passed": self.residuals[k] <= self.tolerances[k]}
                for k in self.tolerances
            },
        }


GENERIC_TOLERANCES = {
    "degeneracy_L": 1e-8,
    "degeneracy_M": 1e-8,
    "antisymmetry_L": 1e-8,
    "symmetry_M": 1e-8,
    "positivity_M": 1e-8,
    "factorization": 1e-6,
    "adjointness": 1e-8,
    "jacobi": 1e-8,
    "drift_consistency": 1e-8,
}


def verify_generic(grid: TorusGrid, samples: int = 20, seed: int = 0, jacobi_samples: int = 100,
                   jacobi_m: int = 9, jacobi_cutoff: int = 3) -> GenericReport:
    """Worst residual of every structural identity over random states and covectors.

    Pairing identities are measured relative to the product of the norms
    involved; positivity reports the largest negative part of <w, M w>.
    """
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(GENERIC_TOLERANCES, 0.0)
    for _ in range(samples):
        z = random_state(grid, rng)
        w1, w2 = random_covector(grid, rng), random_covector(grid, rng)
        xi = random_noise_field(grid, rng)
        l_res, m_res = degeneracy_residuals(z)
        worst["degeneracy_L"] = max(worst["degeneracy_L"], l_res)
        worst["degeneracy_M"] = max(worst["degeneracy_M"], m_res)

        l12, l21 = apply_L(z, w2), apply_L(z, w1)
        scale = max(l12.norm(), l21.norm()) * max(w1.norm(), w2.norm())
        worst["antisymmetry_L"] = max(worst["antisymmetry_L"], abs(pairing(w1, l12) + pairing(w2, l21)) / scale)

        m12, m21 = apply_M(z, w2), apply_M(z, w1)
        scale = max(m12.norm(), m21.norm()) * max(w1.norm(), w2.norm())
        worst["symmetry_M"] = max(worst["symmetry_M"], abs(pairing(w1, m12) - pairing(w2, m21)) / scale)
        quad = pairing(w1, m21)
        worst["positivity_M"] = max(worst["positivity_M"], max(0.0, -quad / (w1.norm() * m21.norm())))

        bt = apply_B_transpose(z, w1)
        bbt = pairing(w1, apply_B(z, bt))
        worst["factorization"] = max(worst["factorization"], abs(bbt - quad) / max(abs(quad), 1e-300))

        lhs = pairing(w1, apply_B(z, xi))
        rhs = pairing(bt, xi)
        scale = w1.norm() * apply_B(z, xi).norm() + 1e-300
        worst["adjointness"] = max(worst["adjointness"], abs(lhs - rhs) / scale)

        worst["drift_consistency"] = max(worst["drift_consistency"], drift_consistency_residual(z))

    jgrid = TorusGrid(jacobi_m)
    for _ in range(jacobi_samples):
        ws = [random_covector(jgrid, rng, jacobi_cutoff) for _ in range(3)]
        worst["jacobi"] = max(worst["jacobi"], jacobi_residual(*ws))
    return GenericReport(worst, dict(GENERIC_TOLERANCES))


__all__ = [
    "CoVector",
    "NoiseField",
    "GenericReport",
    "apply_B",
    "apply_B_transpose",
    "apply_L",
    "apply_M",
    "bracket_x",
    "degeneracy_residuals",
    "drift_consistency_residual",
    "energy_derivative",
    "entropy_derivative",
    "generic_drift",
    "jacobi_residual",
    "pairing",
    "random_covector",
    "random_noise_field",
    "random_state",
    "verify_generic",
]
