"""Pseudospectral simulation and verification of stochastic Navier-Stokes-Fourier flow on the 3-torus."""

from .errors import (
    BlowUpError,
    ConfigError,
    GridMismatchError,
    InsufficientHeadroomError,
    InvalidCutoffError,
    InvalidModeError,
    InvalidOperandError,
    NonfiniteEvaluationError,
    PositivityViolationError,
    StochNSFError,
)
from .noise import NoiseBasis, NoiseIncrement, build_noise_basis, sample_increments, verify_stationarity
from .spectral import ScalarField, TensorField, TorusGrid, VectorField
from .state import ModelParams, SystemState, ThetaState

__version__ = "0.1.0"

__all__ = [
    "BlowUpError",
    "ConfigError",
    "GridMismatchError",
    "InsufficientHeadroomError",
    "InvalidCutoffError",
    "InvalidModeError",
    "InvalidOperandError",
    "ModelParams",
    "NoiseBasis",
    "NoiseIncrement",
    "NonfiniteEvaluationError",
    "PositivityViolationError",
    "ScalarField",
    "StochNSFError",
    "SystemState",
    "TensorField",
    "ThetaState",
    "TorusGrid",
    "VectorField",
    "build_noise_basis",
    "sample_increments",
    "verify_stationarity",
]
