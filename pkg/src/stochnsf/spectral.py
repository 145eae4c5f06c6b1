"""Fourier representation of real fields on the unit 3-torus.

Fields are stored as centred coefficient cubes: index ``i`` along each of
the last three axes carries wavenumber ``i - m``.  The torus has unit
volume, so the spatial mean of a field equals its zero-mode coefficient and
Parseval sums need no extra weights.  Any number of leading batch axes is
allowed, which is how ensembles of paths are vectorised.

Transforms go through ``scipy.fft`` real-to-complex routines with
``norm="forward"``, so ``f(x) = sum_k c_k exp(2 pi i k.x)`` holds literally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.fft

from .errors import (
    GridMismatchError,
    InvalidCutoffError,
    InvalidOperandError,
    NonfiniteEvaluationError,
)

TWO_PI = 2.0 * math.pi
DIVERGENCE_TOLERANCE = 1e-12

DIFFERENTIAL_KINDS = ("gradient", "divergence", "laplacian", "biharmonic", "sym_gradient")


def _is_fast_even(n: int) -> bool:
    return n % 2 == 0 and scipy.fft.next_fast_len(n, real=True) == n


def default_resolution(m: int) -> int:
    """Smallest even, FFT-friendly grid size that dealiases quadratic products."""
    n = math.ceil(3 * (2 * m + 1) / 2)
    while not _is_fast_even(n):
        n += 1
    return n


@dataclass(frozen=True)
class TorusGrid:
    """Spectral cutoff and collocation resolution.

    Args:
        m: largest retained |k_i| per axis (max-norm cutoff).
        n: collocation points per axis; defaults to a dealiasing size.
        fine_factor: refinement used for non-polynomial evaluations.
    """

    m: int
    n: int | None = None
    fine_factor: int = 2

    def __post_init__(self):
        if not isinstance(self.m, (int, np.integer)) or self.m < 1:
            raise InvalidCutoffError(f"cutoff m must be an integer >= 1, got {self.m!r}")
        n = default_resolution(int(self.m)) if self.n is None else int(self.n)
        if n < 2 * self.m + 1:
            raise InvalidCutoffError(f"resolution n={n} cannot hold cutoff m={self.m} (need n >= {2 * self.m + 1})")
        if int(self.fine_factor) < 1:
            raise InvalidCutoffError(f"fine_factor must be >= 1, got {self.fine_factor}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "fine_factor", int(self.fine_factor))

    @property
    def size(self) -> int:
        return 2 * self.m + 1

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.size,) * 3

    @property
    def dealias_n(self) -> int:
        """Resolution at which quadratic products are free of aliasing below the cutoff."""
        return max(self.n, math.ceil(3 * (2 * self.m + 1) / 2))

    @property
    def fine_n(self) -> int:
        return self.fine_factor * self.n

    def points(self, n: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Collocation coordinates x_j = j/n as three broadcastable arrays."""
        n = self.n if n is None else n
        x = np.arange(n) / n
        return x[:, None, None], x[None, :, None], x[None, None, :]

    def with_cutoff(self, m: int) -> "TorusGrid":
        return TorusGrid(m, max(self.n, 2 * m + 1), self.fine_factor)


# ---------------------------------------------------------------------------
# cached index tables


@lru_cache(maxsize=None)
def wavenumbers(m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    k = np.arange(-m, m + 1, dtype=float)
    k.setflags(write=False)
    return k[:, None, None], k[None, :, None], k[None, None, :]


@lru_cache(maxsize=None)
def wavenumber_squared(m: int) -> np.ndarray:
    k1, k2, k3 = wavenumbers(m)
    out = k1**2 + k2**2 + k3**2
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def max_norm(m: int) -> np.ndarray:
    k1, k2, k3 = wavenumbers(m)
    out = np.maximum(np.maximum(np.abs(k1), np.abs(k2)), np.abs(k3))
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def derivative_factors(m: int) -> np.ndarray:
    """Array of shape (3, K, K, K) holding 2 pi i k_j."""
    k1, k2, k3 = wavenumbers(m)
    shape = (2 * m + 1,) * 3
    out = 1j * TWO_PI * np.stack([np.broadcast_to(k, shape) for k in (k1, k2, k3)])
    out.setflags(write=False)
    return out


def _pad_axis(a: np.ndarray, axis: int, m: int, n: int) -> np.ndarray:
    shape = list(a.shape)
    shape[axis] = n
    out = np.zeros(shape, dtype=np.complex128)
    src = np.moveaxis(a, axis, 0)
    dst = np.moveaxis(out, axis, 0)
    dst[: m + 1] = src[m:]
    dst[n - m:] = src[:m]
    return out


def _crop_axis(a: np.ndarray, axis: int, m: int) -> np.ndarray:
    return np.take(a, np.arange(-m, m + 1) % a.shape[axis], axis=axis)


def synthesize(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Real collocation values on an n^3 grid from centred coefficients.

    Transforms run axis by axis on the non-zero lines only.
    """
    m = (coeffs.shape[-1] - 1) // 2
    if n < 2 * m + 1:
        raise InvalidCutoffError(f"grid of {n} points cannot represent cutoff {m}")
    a = scipy.fft.ifft(_pad_axis(coeffs[..., m:], -3, m, n), axis=-3, norm="forward")
    a = scipy.fft.ifft(_pad_axis(a, -2, m, n), axis=-2, norm="forward")
    return scipy.fft.irfft(a, n=n, axis=-1, norm="forward")


def analyze(values: np.ndarray, m: int) -> np.ndarray:
    """Centred coefficients up to cutoff m of real collocation values.

    The result is exactly Hermitian: negative k3 entries are conjugate
    copies and the k3 = 0 plane is symmetrised.
    """
    n = values.shape[-1]
    if n < 2 * m + 1:
        raise InvalidCutoffError(f"grid of {n} points cannot represent cutoff {m}")
    a = scipy.fft.rfft(values, axis=-1, norm="forward")[..., : m + 1]
    a = _crop_axis(scipy.fft.fft(a, axis=-2, norm="forward"), -2, m)
    half = _crop_axis(scipy.fft.fft(a, axis=-3, norm="forward"), -3, m)
    out = np.empty(values.shape[:-3] + (2 * m + 1,) * 3, dtype=np.complex128)
    out[..., m:] = half
    out[..., :m] = np.conj(half[..., ::-1, ::-1, m:0:-1])
    plane = out[..., m]
    out[..., m] = 0.5 * (plane + np.conj(plane[..., ::-1, ::-1]))
    return out


def resize_coefficients(coeffs: np.ndarray, m_new: int) -> np.ndarray:
    """Zero-pad or truncate a centred coefficient cube to another cutoff."""
    m_old = (coeffs.shape[-1] - 1) // 2
    if m_new == m_old:
        return coeffs
    if m_new < m_old:
        s = slice(m_old - m_new, m_old + m_new + 1)
        return coeffs[..., s, s, s]
    out = np.zeros(coeffs.shape[:-3] + (2 * m_new + 1,) * 3, dtype=np.complex128)
    s = slice(m_new - m_old, m_new + m_old + 1)
    out[..., s, s, s] = coeffs
    return out


# ---------------------------------------------------------------------------
# field types


class Field:
    """Immutable band-limited real field (base class; use the rank-specific subclasses)."""

    rank = 0
    __slots__ = ("grid", "coeffs")

    def __init__(self, grid: TorusGrid, coeffs, *, copy: bool = True):
        if copy:
            arr = np.array(coeffs, dtype=np.complex128)
        else:
            arr = np.asarray(coeffs, dtype=np.complex128).view()
        if arr.ndim < 3 + self.rank or arr.shape[-3:] != grid.shape:
            raise InvalidOperandError(
                f"coefficient array of shape {arr.shape} does not match grid cutoff {grid.m}"
            )
        if arr.shape[arr.ndim - 3 - self.rank : arr.ndim - 3] != (3,) * self.rank:
            raise InvalidOperandError(f"rank-{self.rank} field needs {self.rank} component axes of length 3")
        arr.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "coeffs", arr)

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    # construction helpers -------------------------------------------------

    @classmethod
    def zeros(cls, grid: TorusGrid, batch: tuple[int, ...] = ()):
        return cls(grid, np.zeros(tuple(batch) + (3,) * cls.rank + grid.shape), copy=False)

    @classmethod
    def from_values(cls, grid: TorusGrid, values, **kwargs):
        """Interpolate collocation values (any resolution n >= 2m+1) onto the grid cutoff."""
        values = np.asarray(values, dtype=float)
        return cls(grid, analyze(values, grid.m), copy=False, **kwargs)

    def _new(self, coeffs):
        return type(self)(self.grid, coeffs, copy=False)

    # views --------------------------------------------------------------

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[: self.coeffs.ndim - 3 - self.rank]

    def values(self, n: int | None = None) -> np.ndarray:
        return synthesize(self.coeffs, self.grid.n if n is None else n)

    def take(self, index):
        """Select batch entries (e.g. one path of an ensemble)."""
        return self._new(self.coeffs[index])

    def norm(self):
        return np.sqrt(inner_product(self, self))

    def support_cutoff(self, tol: float = 0.0) -> int:
        """Largest max-norm |k| carrying a coefficient of modulus above tol."""
        mags = np.abs(self.coeffs).reshape(-1, *self.grid.shape).max(axis=0)
        active = mags > tol
        if not active.any():
            return 0
        return int(max_norm(self.grid.m)[active].max())

    # arithmetic ---------------------------------------------------------

    def _check_same(self, other):
        if type(other) is not type(self):
            raise InvalidOperandError(f"cannot combine {type(self).__name__} with {type(other).__name__}")
        if other.grid != self.grid:
            raise GridMismatchError(f"grids differ: {self.grid} vs {other.grid}")

    def _scale_array(self, factor):
        f = np.asarray(factor)
        if f.ndim:
            f = f.reshape(f.shape + (1,) * (self.rank + 3))
        return f

    def __add__(self, other):
        self._check_same(other)
        return self._new(self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_same(other)
        return self._new(self.coeffs - other.coeffs)

    def __neg__(self):
        return self._new(-self.coeffs)

    def __mul__(self, factor):
        if isinstance(factor, Field):
            return NotImplemented
        return self._new(self.coeffs * self._scale_array(factor))

    __rmul__ = __mul__

    def __truediv__(self, factor):
        return self._new(self.coeffs / self._scale_array(factor))

    def __repr__(self):
        return f"{type(self).__name__}(m={self.grid.m}, batch={self.batch_shape})"


class ScalarField(Field):
    """Real scalar field; coefficients of shape (*batch, K, K, K)."""

    rank = 0
    __slots__ = ()

    @classmethod
    def from_function(cls, grid: TorusGrid, fn: Callable):
        """Sample fn(x1, x2, x3) on the collocation grid and interpolate."""
        x1, x2, x3 = grid.points()
        values = np.broadcast_to(np.asarray(fn(x1, x2, x3), dtype=float), (grid.n,) * 3)
        return cls.from_values(grid, values)

    @classmethod
    def constant(cls, grid: TorusGrid, value: float):
        c = np.zeros(grid.shape, dtype=np.complex128)
        c[grid.m, grid.m, grid.m] = value
        return cls(grid, c, copy=False)

    def mean(self):
        m = self.grid.m
        return self.coeffs[..., m, m, m].real


class VectorField(Field):
    """Real vector field; coefficients of shape (*batch, 3, K, K, K).

    ``divergence_free=True`` is checked on construction: every mode must
    satisfy |k . v(k)| <= 1e-12 ||v||.
    """

    rank = 1
    __slots__ = ("divergence_free",)

    def __init__(self, grid: TorusGrid, coeffs, *, divergence_free: bool = False, copy: bool = True,
                 check: bool = True):
        super().__init__(grid, coeffs, copy=copy)
        if divergence_free and check:
            residual = divergence_residual(self.grid, self.coeffs)
            scale = float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))
            if residual > DIVERGENCE_TOLERANCE * max(scale, np.finfo(float).tiny):
                raise InvalidOperandError(
                    f"field tagged divergence-free has |k.v(k)| = {residual:.3e} (norm {scale:.3e})"
                )
        object.__setattr__(self, "divergence_free", bool(divergence_free))

    def _new(self, coeffs, divergence_free: bool = False):
        # linear combinations of solenoidal fields stay solenoidal; skip the rounding-sensitive recheck
        return VectorField(self.grid, coeffs, divergence_free=divergence_free, copy=False, check=False)

    def __add__(self, other):
        self._check_same(other)
        return self._new(self.coeffs + other.coeffs, self.divergence_free and other.divergence_free)

    def __sub__(self, other):
        self._check_same(other)
        return self._new(self.coeffs - other.coeffs, self.divergence_free and other.divergence_free)

    def __neg__(self):
        return self._new(-self.coeffs, self.divergence_free)

    def __mul__(self, factor):
        if isinstance(factor, Field):
            return NotImplemented
        return self._new(self.coeffs * self._scale_array(factor), self.divergence_free)

    __rmul__ = __mul__

    def __truediv__(self, factor):
        return self._new(self.coeffs / self._scale_array(factor), self.divergence_free)

    def take(self, index):
        return self._new(self.coeffs[index], self.divergence_free)

    @classmethod
    def from_function(cls, grid: TorusGrid, fn: Callable, divergence_free: bool = False):
        """Sample fn(x1, x2, x3) -> (v1, v2, v3) on the grid and interpolate."""
        x1, x2, x3 = grid.points()
        values = np.stack(
            [np.broadcast_to(np.asarray(c, dtype=float), (grid.n,) * 3) for c in fn(x1, x2, x3)]
        )
        return cls(grid, analyze(values, grid.m), divergence_free=divergence_free, copy=False)

    @classmethod
    def from_components(cls, components, divergence_free: bool = False):
        comps = list(components)
        grid = comps[0].grid
        for c in comps:
            if c.grid != grid:
                raise GridMismatchError("components live on different grids")
        coeffs = np.stack([c.coeffs for c in comps], axis=-4)
        return cls(grid, coeffs, divergence_free=divergence_free, copy=False)

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.coeffs[..., i, :, :, :], copy=False)


class TensorField(Field):
    """Real 3x3 matrix field; coefficients of shape (*batch, 3, 3, K, K, K)."""

    rank = 2
    __slots__ = ()

    def component(self, i: int, j: int) -> ScalarField:
        return ScalarField(self.grid, self.coeffs[..., i, j, :, :, :], copy=False)

    def transpose(self) -> "TensorField":
        return self._new(np.swapaxes(self.coeffs, -5, -4))


_BY_RANK = {0: ScalarField, 1: VectorField, 2: TensorField}


def divergence_residual(grid: TorusGrid, coeffs: np.ndarray) -> float:
    """max_k |k . v(k)| for a vector coefficient array."""
    k1, k2, k3 = wavenumbers(grid.m)
    dot = k1 * coeffs[..., 0, :, :, :] + k2 * coeffs[..., 1, :, :, :] + k3 * coeffs[..., 2, :, :, :]
    return float(np.max(np.abs(dot))) if dot.size else 0.0


def _require_same_grid(a: Field, b: Field):
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


# ---------------------------------------------------------------------------
# projections


def fourier_mask(m: int, cutoff: int) -> np.ndarray:
    return max_norm(m) <= cutoff


def fourier_project(fld: Field, cutoff: int) -> Field:
    """Zero every coefficient whose max-norm wavenumber exceeds ``cutoff``."""
    if cutoff < 0:
        raise InvalidCutoffError(f"projection cutoff must be >= 0, got {cutoff}")
    if cutoff > fld.grid.m:
        raise InvalidCutoffError(f"projection cutoff {cutoff} exceeds grid cutoff {fld.grid.m}")
    coeffs = fld.coeffs * fourier_mask(fld.grid.m, cutoff)
    if isinstance(fld, VectorField):
        return fld._new(coeffs, fld.divergence_free)
    return fld._new(coeffs)


def leray_coefficients(m: int, coeffs: np.ndarray) -> np.ndarray:
    """Apply I - k k^T / |k|^2 mode-wise; the zero mode passes through."""
    k1, k2, k3 = wavenumbers(m)
    ksq = wavenumber_squared(m)
    inv = np.divide(1.0, ksq, out=np.zeros_like(ksq), where=ksq > 0)
    dot = (k1 * coeffs[..., 0, :, :, :] + k2 * coeffs[..., 1, :, :, :] + k3 * coeffs[..., 2, :, :, :]) * inv
    out = np.empty_like(coeffs)
    out[..., 0, :, :, :] = coeffs[..., 0, :, :, :] - k1 * dot
    out[..., 1, :, :, :] = coeffs[..., 1, :, :, :] - k2 * dot
    out[..., 2, :, :, :] = coeffs[..., 2, :, :, :] - k3 * dot
    return out


def leray_project(v: VectorField) -> VectorField:
    """Helmholtz projection onto divergence-free fields."""
    if not isinstance(v, VectorField):
        raise InvalidOperandError("leray_project expects a VectorField")
    return VectorField(v.grid, leray_coefficients(v.grid.m, v.coeffs), divergence_free=True, copy=False, check=False)


def stokes_project(v: VectorField, cutoff: int) -> VectorField:
    """Leray projection restricted to modes with max-norm |k| <= cutoff."""
    return leray_project(fourier_project(v, cutoff))


def stokes_eigenvalues(grid: TorusGrid) -> np.ndarray:
    """Eigenvalue 4 pi^2 |k|^2 of the Stokes operator for every mode of the grid."""
    return (TWO_PI**2) * wavenumber_squared(grid.m)


def stokes_operator(v: VectorField) -> VectorField:
    """-Pi Laplacian of v."""
    return leray_project(-differentiate(v, "laplacian"))


# ---------------------------------------------------------------------------
# differentiation


def differentiate(fld: Field, kind: str) -> Field:
    """Exact spectral derivative.

    kinds: ``gradient`` (scalar -> vector, vector -> tensor with entries
    d_i v_j), ``divergence`` (vector -> scalar, tensor -> vector contracting
    the first index), ``laplacian`` and ``biharmonic`` (any rank), and
    ``sym_gradient`` (vector -> symmetric tensor).
    """
    if kind not in DIFFERENTIAL_KINDS:
        raise InvalidOperandError(f"unknown derivative kind {kind!r}")
    grid = fld.grid
    c = fld.coeffs
    if kind == "laplacian":
        return fld._new(c * (-(TWO_PI**2) * wavenumber_squared(grid.m)))
    if kind == "biharmonic":
        return fld._new(c * (TWO_PI**2 * wavenumber_squared(grid.m)) ** 2)
    ik = derivative_factors(grid.m)
    if kind == "gradient":
        if fld.rank == 0:
            return VectorField(grid, c[..., None, :, :, :] * ik, copy=False)
        if fld.rank == 1:
            return TensorField(grid, ik[:, None] * c[..., None, :, :, :, :], copy=False)
        raise InvalidOperandError("gradient needs a scalar or vector field")
    if kind == "divergence":
        if fld.rank == 1:
            return ScalarField(grid, np.sum(ik * c, axis=-4), copy=False)
        if fld.rank == 2:
            return VectorField(grid, np.sum(ik[:, None] * c, axis=-5), copy=False)
        raise InvalidOperandError("divergence needs a vector or tensor field")
    # sym_gradient
    if fld.rank != 1:
        raise InvalidOperandError("sym_gradient needs a vector field")
    g = ik[:, None] * c[..., None, :, :, :, :]
    return TensorField(grid, 0.5 * (g + np.swapaxes(g, -5, -4)), copy=False)


# ---------------------------------------------------------------------------
# products and pointwise evaluation


def multiply(a: Field, b: Field, dealias: bool = True) -> Field:
    """Pointwise product truncated to the grid cutoff.

    One factor must be scalar.  With ``dealias`` the product is formed on a
    grid large enough that no aliased mode lands inside the cutoff, so the
    result equals the exact truncated convolution.
    """
    _require_same_grid(a, b)
    if a.rank and b.rank:
        raise InvalidOperandError("multiply needs at least one scalar factor; use outer for tensor products")
    if a.rank:
        a, b = b, a
    grid = a.grid
    n = grid.dealias_n if dealias else grid.n
    av = synthesize(a.coeffs, n)
    av = av.reshape(av.shape[:-3] + (1,) * b.rank + av.shape[-3:])
    prod = av * synthesize(b.coeffs, n)
    return _BY_RANK[b.rank](grid, analyze(prod, grid.m), copy=False)


def outer(a: VectorField, b: VectorField, dealias: bool = True) -> TensorField:
    """Tensor product (a ⊗ b)_ij = a_i b_j, truncated to the cutoff."""
    _require_same_grid(a, b)
    if a.rank != 1 or b.rank != 1:
        raise InvalidOperandError("outer expects two vector fields")
    n = a.grid.dealias_n if dealias else a.grid.n
    av = synthesize(a.coeffs, n)
    bv = synthesize(b.coeffs, n)
    prod = av[..., :, None, :, :, :] * bv[..., None, :, :, :, :]
    return TensorField(a.grid, analyze(prod, a.grid.m), copy=False)


def check_finite(values: np.ndarray, n: int, what: str = "evaluation"):
    """Raise NonfiniteEvaluationError at the first non-finite collocation value."""
    bad = ~np.isfinite(values)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        location = tuple(i / n for i in idx[-3:])
        raise NonfiniteEvaluationError(
            f"{what} is not finite at x={location}: {values[idx]}", location=location, value=values[idx]
        )


def evaluate_nonlinear(fld: ScalarField, fn: Callable[[np.ndarray], np.ndarray], fine_factor: int | None = None) -> ScalarField:
    """Apply fn pointwise on a refined collocation grid and truncate back to the cutoff."""
    if not isinstance(fld, ScalarField):
        raise InvalidOperandError("evaluate_nonlinear expects a ScalarField")
    factor = fld.grid.fine_factor if fine_factor is None else int(fine_factor)
    if factor < 1:
        raise InvalidCutoffError(f"fine_factor must be >= 1, got {factor}")
    n = factor * fld.grid.n
    with np.errstate(all="ignore"):
        out = np.asarray(fn(synthesize(fld.coeffs, n)), dtype=float)
    check_finite(out, n, "nonlinear evaluation")
    return ScalarField(fld.grid, analyze(out, fld.grid.m), copy=False)


def inner_product(a: Field, b: Field):
    """L2 pairing over the unit torus (Parseval); one value per batch entry."""
    _require_same_grid(a, b)
    if a.rank != b.rank:
        raise InvalidOperandError("inner product needs fields of equal rank")
    axes = tuple(range(-3 - a.rank, 0))
    out = np.sum((a.coeffs * np.conj(b.coeffs)).real, axis=axes)
    return float(out) if np.ndim(out) == 0 else out


def resample(fld: Field, grid: TorusGrid) -> Field:
    """Represent a field on another grid, padding with zeros or truncating."""
    coeffs = resize_coefficients(fld.coeffs, grid.m)
    if isinstance(fld, VectorField):
        return VectorField(grid, coeffs, divergence_free=fld.divergence_free, copy=True)
    return type(fld)(grid, coeffs, copy=True)
