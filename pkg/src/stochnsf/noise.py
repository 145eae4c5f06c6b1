"""Noise coefficient families, their constants, and Brownian increments.

A basis is built from cos/sin pairs ``a cos(2 pi k.x)``, ``a sin(2 pi k.x)``.
Each pair satisfies the three stationarity identities exactly because
cos^2 + sin^2 = 1 pointwise, so sums over pairs do as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidModeError, InvalidOperandError
from .spectral import TWO_PI, ScalarField, TorusGrid, derivative_factors, synthesize, wavenumber_squared

FAMILY_F = 0
FAMILY_G = 1


def _normalise_modes(spec, grid: TorusGrid, family: str) -> tuple[tuple[tuple[int, int, int], float], ...]:
    modes = []
    for i, entry in enumerate(spec or ()):
        try:
            k, amplitude = entry
            k = tuple(int(c) for c in k)
            amplitude = float(amplitude)
        except (TypeError, ValueError) as exc:
            raise InvalidModeError(f"{family}[{i}]: expected ((k1, k2, k3), amplitude), got {entry!r}") from exc
        if len(k) != 3:
            raise InvalidModeError(f"{family}[{i}]: wavevector must have three components, got {k}")
        if k == (0, 0, 0):
            raise InvalidModeError(f"{family}[{i}]: the zero wavevector is not a mode; use the constant option")
        if max(abs(c) for c in k) > grid.m:
            raise InvalidModeError(f"{family}[{i}]: wavevector {k} lies outside the grid cutoff {grid.m}")
        if not amplitude > 0 or not math.isfinite(amplitude):
            raise InvalidModeError(f"{family}[{i}]: amplitude must be positive and finite, got {amplitude}")
        modes.append((k, amplitude))
    return tuple(modes)


def _pair_coefficients(grid: TorusGrid, modes, constant: float | None) -> np.ndarray:
    m = grid.m
    count = 2 * len(modes) + (1 if constant else 0)
    coeffs = np.zeros((count,) + grid.shape, dtype=np.complex128)
    for i, (k, a) in enumerate(modes):
        pos = (k[0] + m, k[1] + m, k[2] + m)
        neg = (-k[0] + m, -k[1] + m, -k[2] + m)
        coeffs[(2 * i,) + pos] += 0.5 * a
        coeffs[(2 * i,) + neg] += 0.5 * a
        coeffs[(2 * i + 1,) + pos] += -0.5j * a
        coeffs[(2 * i + 1,) + neg] += 0.5j * a
    if constant:
        coeffs[(count - 1, m, m, m)] = constant
    return coeffs


class NoiseBasis:
    """Coefficient families {f_n} and {g_n} with their constants.

    ``f_fields`` and ``g_fields`` are batched ScalarFields (one batch entry per
    coefficient function).  Listed modes contribute a cos field followed by a
    sin field; an optional constant contributes one final field.
    """

    def __init__(self, grid: TorusGrid, f_coeffs: np.ndarray, g_coeffs: np.ndarray,
                 F1: float, F2: float, G1: float, G2: float,
                 f_modes=(), g_modes=(), f_constant=None, g_constant=None):
        self.grid = grid
        self.f_fields = ScalarField(grid, f_coeffs)
        self.g_fields = ScalarField(grid, g_coeffs)
        self.F1, self.F2, self.G1, self.G2 = float(F1), float(F2), float(G1), float(G2)
        self.f_modes = tuple(f_modes)
        self.g_modes = tuple(g_modes)
        self.f_constant = f_constant
        self.g_constant = g_constant

    @property
    def n_f(self) -> int:
        return self.f_fields.coeffs.shape[0]

    @property
    def n_g(self) -> int:
        return self.g_fields.coeffs.shape[0]

    @property
    def constants(self) -> dict[str, float]:
        return {"F1": self.F1, "F2": self.F2, "G1": self.G1, "G2": self.G2}

    @classmethod
    def empty(cls, grid: TorusGrid) -> "NoiseBasis":
        return build_noise_basis([], [], grid)

    @classmethod
    def from_fields(cls, grid: TorusGrid, f_fields: Sequence[ScalarField], g_fields: Sequence[ScalarField]) -> "NoiseBasis":
        """Wrap arbitrary coefficient fields; constants are their spatial means.

        No stationarity is enforced here, which is what makes this
        constructor useful for exercising ``verify_stationarity``.
        """

        def stack(fields):
            if not fields:
                return np.zeros((0,) + grid.shape, dtype=np.complex128)
            return np.stack([f.coeffs for f in fields])

        fc, gc = stack(list(f_fields)), stack(list(g_fields))
        ksq = (TWO_PI**2) * wavenumber_squared(grid.m)
        F1 = float(np.sum(np.abs(fc) ** 2))
        F2 = float(np.sum(ksq * np.abs(fc) ** 2))
        G1 = float(np.sum(np.abs(gc) ** 2))
        G2 = float(np.sum(ksq * np.abs(gc) ** 2))
        return cls(grid, fc, gc, F1, F2, G1, G2)

    def matrix_field(self, dB: np.ndarray) -> np.ndarray:
        """Coefficients of sum_n f_n dB_n, shape (*batch, 3, 3, K, K, K)."""
        return _contract(self.f_fields.coeffs, dB, 2)

    def vector_field(self, dW: np.ndarray) -> np.ndarray:
        """Coefficients of sum_n g_n dW_n, shape (*batch, 3, K, K, K)."""
        return _contract(self.g_fields.coeffs, dW, 1)

    def __repr__(self):
        return (f"NoiseBasis(n_f={self.n_f}, n_g={self.n_g}, F1={self.F1:.6g}, F2={self.F2:.6g}, "
                f"G1={self.G1:.6g}, G2={self.G2:.6g})")


def _contract(fields: np.ndarray, increments: np.ndarray, rank: int) -> np.ndarray:
    n = fields.shape[0]
    spatial = fields.shape[1:]
    batch = increments.shape[: increments.ndim - 1 - rank]
    comp = increments.shape[increments.ndim - rank:]
    if n == 0:
        return np.zeros(batch + comp + spatial, dtype=np.complex128)
    inc = np.asarray(increments, dtype=float).reshape(batch + (n, -1))
    inc = np.swapaxes(inc, -1, -2)
    out = inc @ fields.reshape(n, -1)
    return out.reshape(batch + comp + spatial)


def build_noise_basis(f_spec, g_spec, grid: TorusGrid, f_constant: float | None = None,
                      g_constant: float | None = None) -> NoiseBasis:
    """Cos/sin-pair families with F1 = sum a^2 (+ c^2) and F2 = sum 4 pi^2 |k|^2 a^2."""
    f_modes = _normalise_modes(f_spec, grid, "f_modes")
    g_modes = _normalise_modes(g_spec, grid, "g_modes")
    for name, c in (("f_constant", f_constant), ("g_constant", g_constant)):
        if c is not None and not math.isfinite(c):
            raise InvalidModeError(f"{name} must be finite, got {c}")

    def constants(modes, c):
        first = sum(a * a for _, a in modes) + (c * c if c else 0.0)
        second = sum(TWO_PI**2 * (k[0] ** 2 + k[1] ** 2 + k[2] ** 2) * a * a for k, a in modes)
        return first, second

    F1, F2 = constants(f_modes, f_constant)
    G1, G2 = constants(g_modes, g_constant)
    return NoiseBasis(
        grid,
        _pair_coefficients(grid, f_modes, f_constant),
        _pair_coefficients(grid, g_modes, g_constant),
        F1, F2, G1, G2,
        f_modes, g_modes, f_constant or None, g_constant or None,
    )


@dataclass(frozen=True)
class StationarityReport:
    residuals: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(r <= self.tol for r in self.residuals.values())

    @property
    def worst(self) -> float:
        return max(self.residuals.values())


def _family_residuals(coeffs: np.ndarray, first: float, second: float, n: int):
    if coeffs.shape[0] == 0:
        return abs(first), 0.0, abs(second)
    m = (coeffs.shape[-1] - 1) // 2
    values = synthesize(coeffs, n)
    grads = synthesize(coeffs[:, None] * derivative_factors(m), n)
    square_sum = np.sum(values**2, axis=0)
    cross = np.sum(values[:, None] * grads, axis=0)
    grad_square_sum = np.sum(grads**2, axis=(0, 1))
    return (
        float(np.max(np.abs(square_sum - first))),
        float(np.max(np.sqrt(np.sum(cross**2, axis=0)))),
        float(np.max(np.abs(grad_square_sum - second))),
    )


def verify_stationarity(basis: NoiseBasis, tol: float = 1e-12) -> StationarityReport:
    """Sup-norm residuals of the six stationarity identities on the collocation grid."""
    n = basis.grid.n
    f = _family_residuals(basis.f_fields.coeffs, basis.F1, basis.F2, n)
    g = _family_residuals(basis.g_fields.coeffs, basis.G1, basis.G2, n)
    names = ("square_sum", "cross_sum", "gradient_square_sum")
    residuals = {f"f_{k}": v for k, v in zip(names, f)}
    residuals.update({f"g_{k}": v for k, v in zip(names, g)})
    return StationarityReport(residuals, tol)


# ---------------------------------------------------------------------------
# Brownian increments


@dataclass(frozen=True)
class NoiseIncrement:
    """One time step of Brownian increments.

    dB has shape (*batch, n_f, 3, 3) and is exactly symmetric; dW has shape
    (*batch, n_g, 3).
    """

    dt: float
    dB: np.ndarray
    dW: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidOperandError(f"dt must be > 0, got {self.dt}")

    @classmethod
    def zero(cls, basis: NoiseBasis, dt: float, batch: tuple[int, ...] = ()) -> "NoiseIncrement":
        return cls(dt, np.zeros(batch + (basis.n_f, 3, 3)), np.zeros(batch + (basis.n_g, 3)))

    def take(self, index) -> "NoiseIncrement":
        return NoiseIncrement(self.dt, self.dB[index], self.dW[index])


def symmetric_increment(normals: np.ndarray, dt: float) -> np.ndarray:
    """(A + A^T) / sqrt 2 * sqrt dt for standard normal matrices A (last two axes)."""
    return (normals + np.swapaxes(normals, -1, -2)) * (math.sqrt(dt) / math.sqrt(2.0))


class NoiseStreams:
    """Independent random streams of one path, one per coefficient function.

    Stream (path, family, index) is seeded from ``SeedSequence(seed,
    spawn_key=(path, family, index))`` with the Philox counter generator, so
    draws do not depend on how many paths or modes are simulated alongside.
    """

    def __init__(self, seed: int, n_f: int, n_g: int, path: int = 0):
        self.seed = int(seed)
        self.path = int(path)
        self._f = [self._generator(FAMILY_F, i) for i in range(n_f)]
        self._g = [self._generator(FAMILY_G, i) for i in range(n_g)]

    def _generator(self, family: int, index: int) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.path, family, index))
        return np.random.Generator(np.random.Philox(seq))

    def standard_normals(self, steps: int) -> tuple[np.ndarray, np.ndarray]:
        """Matrices A (steps, n_f, 3, 3) and vectors Z (steps, n_g, 3) of standard normals."""
        a = np.empty((steps, len(self._f), 3, 3))
        z = np.empty((steps, len(self._g), 3))
        for i, gen in enumerate(self._f):
            a[:, i] = gen.standard_normal((steps, 3, 3))
        for i, gen in enumerate(self._g):
            z[:, i] = gen.standard_normal((steps, 3))
        return a, z


def sample_increments(basis: NoiseBasis, dt: float, rng_stream) -> NoiseIncrement:
    """Draw one increment: dB = (A + A^T)/sqrt 2 sqrt dt, dW = sqrt dt N(0, I_3).

    ``rng_stream`` is a NoiseStreams (per-mode streams) or a numpy Generator.
    """
    if not dt > 0:
        raise InvalidOperandError(f"dt must be > 0, got {dt}")
    if isinstance(rng_stream, NoiseStreams):
        a, z = rng_stream.standard_normals(1)
        a, z = a[0], z[0]
    else:
        a = rng_stream.standard_normal((basis.n_f, 3, 3))
        z = rng_stream.standard_normal((basis.n_g, 3))
    return NoiseIncrement(dt, symmetric_increment(a, dt), z * math.sqrt(dt))


def noise_diffusion_fields(basis: NoiseBasis, state, increment: NoiseIncrement, formulation: str = "psi_system"):
    """Stochastic increments of the velocity and scalar equations for one step.

    For the psi-system: velocity -(1/sqrt 2) sum Pi div(psi f_n dB_n); scalar
    -sum div(psi g_n dW_n) + 1/2 sum psi div(g_n dW_n) - (1/sqrt 2) sum grad u : f_n dB_n.
    With ``formulation="theta_system"`` the state is a ThetaState and the
    theta-equation noise is returned instead.
    """
    from .kernels import assemble_fields

    return assemble_fields(formulation, state, basis, None, drift_scale=0.0, increment=increment)


@dataclass(frozen=True)
class CovarianceReport:
    """Empirical covariance of vec(dB)/sqrt(dt) against delta_ik delta_jl + delta_il delta_jk."""

    empirical: np.ndarray
    expected: np.ndarray
    standard_error: np.ndarray
    n_samples: int
    threshold: float = 3.0

    @property
    def z_scores(self) -> np.ndarray:
        """|empirical - expected| / SE on the 45 distinct entries (upper triangle of the 9x9 matrix)."""
        rows, cols = np.triu_indices(9)
        return np.abs(self.empirical[rows, cols] - self.expected[rows, cols]) / self.standard_error[rows, cols]

    @property
    def max_z(self) -> float:
        return float(self.z_scores.max())

    @property
    def passed(self) -> bool:
        return bool(np.all(self.z_scores <= self.threshold))


def expected_increment_covariance() -> np.ndarray:
    eye = np.eye(3)
    cov = np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye)
    return cov.reshape(9, 9)


def increment_covariance(n_samples: int = 100_000, dt: float = 1e-3, seed: int = 0,
                         threshold: float = 3.0) -> CovarianceReport:
    """Sample dB of one mode n_samples times and compare its covariance with the exact one."""
    a, _ = NoiseStreams(seed, 1, 0).standard_normals(n_samples)
    x = symmetric_increment(a[:, 0], dt).reshape(n_samples, 9) / math.sqrt(dt)
    products = x[:, :, None] * x[:, None, :]
    empirical = products.mean(axis=0)
    se = products.std(axis=0, ddof=1) / math.sqrt(n_samples)
    return CovarianceReport(empirical, expected_increment_covariance(), se, n_samples, threshold)
