"""Experiment orchestration and on-disk artifacts.

A run directory holds::

    metadata.json          config echo, code version, noise constants, warnings, wall time
    summary.json           per-path status and ensemble statistics
    paths/path_0000.csv    diagnostics at every saved time
    states/path_0000.txt   terminal coefficients (see write_coefficients)

Everything except the wall time in metadata.json is a deterministic function
of the configuration, so a replay from metadata reproduces the files byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, build_config, load_yaml, parse_config
from .diagnostics import (
    CSV_COLUMNS,
    DiagnosticRecord,
    admissibility_margin,
    gronwall_envelope,
    relative_energy,
)
from .errors import ConfigError, InvalidOperandError
from .integrators import SchemeSpec, Trajectory, couple_paths, run_ensemble
from .spectral import ScalarField, TorusGrid, VectorField, wavenumbers
from .state import ModelParams, SystemState, ThetaState

METADATA_FILE = "metadata.json"
SUMMARY_FILE = "summary.json"
COEFFICIENT_HEADER = "# stochnsf coefficients v1"


# ---------------------------------------------------------------------------
# coefficient files


def write_coefficients(path, state) -> None:
    """Plain-text terminal state.

    Header lines start with '#': format tag, grid (m n fine_factor), time,
    state kind.  Each block starts with ``field NAME`` followed by one line
    ``k1 k2 k3 real imag`` per mode, in repr precision, so reading back is
    lossless.
    """
    path = Path(path)
    grid = state.grid
    scalar_name = "theta" if isinstance(state, ThetaState) else "psi"
    k1, k2, k3 = (np.broadcast_to(k, grid.shape).ravel().astype(int) for k in wavenumbers(grid.m))
    lines = [
        COEFFICIENT_HEADER,
        f"# grid m={grid.m} n={grid.n} fine_factor={grid.fine_factor}",
        f"# t={state.t!r}",
        f"# kind={type(state).__name__}",
    ]
    blocks = [(f"u{i + 1}", state.u.coeffs[i]) for i in range(3)]
    blocks.append((scalar_name, (state.theta if scalar_name == "theta" else state.psi).coeffs))
    for name, coeffs in blocks:
        lines.append(f"field {name}")
        flat = coeffs.ravel()
        lines.extend(
            f"{a} {b} {c} {float(z.real)!r} {float(z.imag)!r}" for a, b, c, z in zip(k1, k2, k3, flat)
        )
    path.write_text("\n".join(lines) + "\n")


def read_coefficients(path):
    """Inverse of :func:`write_coefficients`."""
    header = {}
    blocks: dict[str, list] = {}
    current = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            for token in line[1:].split():
                if "=" in token:
                    key, value = token.split("=", 1)
                    header[key] = value
            continue
        if line.startswith("field "):
            current = line.split()[1]
            blocks[current] = []
            continue
        if line.strip():
            parts = line.split()
            blocks[current].append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4])))
    grid = TorusGrid(int(header["m"]), int(header["n"]), int(header["fine_factor"]))
    m = grid.m

    def cube(rows):
        out = np.zeros(grid.shape, dtype=np.complex128)
        for a, b, c, re, im in rows:
            out[a + m, b + m, c + m] = complex(re, im)
        return out

    u = VectorField(grid, np.stack([cube(blocks[f"u{i}"]) for i in (1, 2, 3)]), divergence_free=True)
    t = float(header["t"])
    if header.get("kind") == "ThetaState":
        return ThetaState(u, ScalarField(grid, cube(blocks["theta"])), t)
    return SystemState(u, ScalarField(grid, cube(blocks["psi"])), t)


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunOutput:
    directory: Path | None
    metadata: dict
    summary: dict
    trajectories: list[Trajectory] = field(repr=False, default_factory=list)


def _records_csv(records: list[DiagnosticRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow(rec.as_row())
    return buf.getvalue()


def _stats(values) -> dict:
    values = [v for v in values if v is not None and math.isfinite(v)]
    if not values:
        return {"count": 0, "mean": None, "variance": None, "standard_error": None}
    arr = np.asarray(values, dtype=float)
    var = float(arr.var(ddof=1)) if arr.size > 1 else 0.0
    return {
        "count": int(arr.size),
        "mean": float(arr.mean()),
        "variance": var,
        "standard_error": math.sqrt(var / arr.size),
    }


def summarize(trajectories: list[Trajectory]) -> dict:
    paths = []
    for tr in trajectories:
        paths.append({
            "path": tr.path,
            "status": "ok" if tr.completed else "failed",
            "error": tr.error,
            "error_message": tr.error_message,
            "error_step": tr.error_step,
            "final_time": tr.times[-1],
            "final_energy": tr.energies[-1],
            "budget_integral": tr.budget_integral[-1],
            "admissibility_margin": admissibility_margin(tr),
        })
    ok = [p for p in paths if p["status"] == "ok"]
    return {
        "n_paths": len(paths),
        "completed": len(ok),
        "failed": len(paths) - len(ok),
        "all_failed": not ok,
        "final_energy": _stats([p["final_energy"] for p in ok]),
        "budget_integral": _stats([p["budget_integral"] for p in ok]),
        "min_admissibility_margin": min((p["admissibility_margin"] for p in paths), default=None),
        "paths": paths,
    }


def build_metadata(config: RunConfig, wall_time: float | None = None) -> dict:
    basis = config.basis
    return {
        "format": "stochnsf-run",
        "code_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "python_version": platform.python_version(),
        "config": config.raw,
        "seed": config.seed,
        "n_paths": config.n_paths,
        "scheme": config.scheme.as_dict(),
        "constants": {"F1": basis.F1, "F2": basis.F2, "G1": basis.G1, "G2": basis.G2},
        "warnings": list(config.warnings),
        "wall_time_seconds": wall_time,
    }


def _dump_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_run(directory, config: RunConfig, trajectories: list[Trajectory], wall_time: float | None) -> RunOutput:
    directory = Path(directory)
    (directory / "paths").mkdir(parents=True, exist_ok=True)
    (directory / "states").mkdir(parents=True, exist_ok=True)
    for tr in trajectories:
        (directory / "paths" / f"path_{tr.path:04d}.csv").write_text(_records_csv(tr.records))
        write_coefficients(directory / "states" / f"path_{tr.path:04d}.txt", tr.final_state)
    metadata = build_metadata(config, wall_time)
    summary = summarize(trajectories)
    _dump_json(directory / METADATA_FILE, metadata)
    _dump_json(directory / SUMMARY_FILE, summary)
    return RunOutput(directory, metadata, summary, trajectories)


def simulate(config: RunConfig, *, keep_states: bool = False, record: bool = True) -> list[Trajectory]:
    return run_ensemble(config.initial, config.scheme, config.basis, config.params, config.seed,
                        n_paths=config.n_paths, save_every=config.save_every, keep_states=keep_states,
                        record=record)


def run_experiment(config: RunConfig, out=None) -> RunOutput:
    """Run every path of the configuration and write the artifacts to ``out`` (or config.output)."""
    start = time.perf_counter()
    trajectories = simulate(config)
    wall = time.perf_counter() - start
    directory = Path(out) if out is not None else config.output
    return write_run(directory, config, trajectories, wall)


def load_run_config(path) -> RunConfig:
    """A YAML run configuration, or the metadata.json of an earlier run (for replay)."""
    path = Path(path)
    if path.suffix == ".json":
        try:
            meta = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"{path}: cannot read run metadata ({exc})"]) from None
        if not isinstance(meta, dict) or meta.get("format") != "stochnsf-run":
            raise ConfigError([f"{path}: not a stochnsf run metadata file"])
        return build_config(meta["config"], source=str(path))
    return parse_config(path)


def replay(metadata_path, out) -> RunOutput:
    """Re-run an ensemble from its metadata.json into ``out``."""
    return run_experiment(load_run_config(metadata_path), out)


def compare_run_directories(a, b) -> list[str]:
    """Relative paths of artifacts whose bytes differ.

    metadata.json is compared as JSON without its wall time and output
    directory; every other file must match byte for byte.
    """
    a, b = Path(a), Path(b)
    names = sorted({p.relative_to(a) for p in a.rglob("*") if p.is_file()}
                   | {p.relative_to(b) for p in b.rglob("*") if p.is_file()})
    diffs = []
    for name in names:
        pa, pb = a / name, b / name
        if not (pa.exists() and pb.exists()):
            diffs.append(str(name))
        elif name.name == METADATA_FILE:
            if _timeless(pa) != _timeless(pb):
                diffs.append(str(name))
        elif pa.read_bytes() != pb.read_bytes():
            diffs.append(str(name))
    return diffs


def _timeless(path: Path) -> dict:
    meta = json.loads(path.read_text())
    meta.pop("wall_time_seconds", None)
    meta.get("config", {}).pop("output", None)
    return meta


# ---------------------------------------------------------------------------
# budget bound


def budget_bound(energy0: float, F2: float, G2: float, T: float, epsilon: float) -> float:
    """(1 + (4 F2 + G2) T / 8) * (E0 + 2 eps T)^(1/2), E0 = 1/2 int |u0|^2 + psi0^2."""
    return (1.0 + (4.0 * F2 + G2) * T / 8.0) * math.sqrt(energy0 + 2.0 * epsilon * T)


@dataclass
class BudgetReport:
    mean: float
    standard_error: float
    bound: float
    n_paths: int
    failed: int

    @property
    def margin(self) -> float:
        return self.bound + 3.0 * self.standard_error - self.mean

    @property
    def passed(self) -> bool:
        return self.n_paths > self.failed and self.margin >= 0.0

    def as_dict(self) -> dict:
        return {
            "empirical_mean": self.mean,
            "standard_error": self.standard_error,
            "bound": self.bound,
            "margin": self.margin,
            "n_paths": self.n_paths,
            "failed": self.failed,
            "passed": self.passed,
        }


def mc_budget_check(config: RunConfig, out=None) -> BudgetReport:
    """Monte Carlo mean of the time-integrated Galerkin dissipation budget against its bound."""
    if config.scheme.formulation != "galerkin":
        raise InvalidOperandError("the budget check needs the galerkin formulation")
    trajectories = simulate(config, record=out is not None)
    done = [tr for tr in trajectories if tr.completed]
    values = np.asarray([tr.budget_integral[-1] for tr in done])
    if values.size:
        mean = float(values.mean())
        se = float(math.sqrt(values.var(ddof=1) / values.size)) if values.size > 1 else 0.0
    else:
        mean = se = float("nan")
    b = config.basis
    e0 = trajectories[0].energies[0]
    report = BudgetReport(mean, se, budget_bound(e0, b.F2, b.G2, config.final_time, config.params.epsilon),
                          len(trajectories), len(trajectories) - len(done))
    if out is not None:
        write_run(out, config, trajectories, None)
        _dump_json(Path(out) / "budget.json", report.as_dict())
    return report


# ---------------------------------------------------------------------------
# weak-strong


def perturb_psi(state: SystemState, amplitude: float, k=(1, 0, 0)) -> SystemState:
    """psi + amplitude cos(2 pi k.x)."""
    grid = state.grid
    bump = ScalarField.from_function(
        grid, lambda x1, x2, x3: amplitude * np.cos(2 * math.pi * (k[0] * x1 + k[1] * x2 + k[2] * x3))
    )
    return SystemState(state.u, state.psi + bump, state.t)


@dataclass
class WeakStrongReport:
    amplitude: float
    max_relative_energy: float
    max_ratio: float | None
    per_path_ratio: list
    failed_paths: list
    times: list
    tolerance_ratio: float = 1.2
    tolerance_zero: float = 1e-10

    @property
    def passed(self) -> bool:
        if self.failed_paths:
            return False
        if self.amplitude == 0:
            return self.max_relative_energy <= self.tolerance_zero
        return self.max_ratio is not None and self.max_ratio <= self.tolerance_ratio

    def as_dict(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "max_relative_energy": self.max_relative_energy,
            "max_ratio_to_envelope": self.max_ratio,
            "per_path_ratio": self.per_path_ratio,
            "failed_paths": self.failed_paths,
            "passed": self.passed,
        }


def weak_strong_experiment(config: RunConfig, perturbation_amplitude: float, k=(1, 0, 0), out=None) -> WeakStrongReport:
    """Reference and perturbed runs on identical noise; relative energy against the Gronwall envelope."""
    if config.scheme.formulation != "psi_system":
        raise InvalidOperandError("the weak-strong experiment integrates the psi_system formulation")
    common = dict(n_paths=config.n_paths, save_every=config.save_every, keep_states=True, record=False)
    reference = run_ensemble(config.initial, config.scheme, config.basis, config.params, config.seed, **common)
    perturbed_initial = perturb_psi(config.initial, perturbation_amplitude, k)
    perturbed = run_ensemble(perturbed_initial, config.scheme, config.basis, config.params, config.seed, **common)
    ratios, failed, worst = [], [], 0.0
    rows = []
    for ref, per in zip(reference, perturbed):
        if not (ref.completed and per.completed):
            failed.append(ref.path)
            ratios.append(None)
            continue
        rel = [float(relative_energy(a, b)) for a, b in zip(per.states, ref.states)]
        worst = max(worst, max(rel))
        envelope = gronwall_envelope(ref, rel[0])
        env = [envelope(s.t) for s in ref.states]
        path_ratio = max((r / e for r, e in zip(rel, env) if e > 0), default=None)
        ratios.append(path_ratio)
        rows.extend((ref.path, s.t, r, e) for s, r, e in zip(ref.states, rel, env))
    finite = [r for r in ratios if r is not None]
    report = WeakStrongReport(perturbation_amplitude, worst, max(finite) if finite else None, ratios, failed,
                              [s.t for s in reference[0].states])
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["path", "t", "relative_energy", "envelope"])
        writer.writerows([p, repr(t), repr(r), repr(e)] for p, t, r, e in rows)
        (out / "weak_strong.csv").write_text(buf.getvalue())
        _dump_json(out / "weak_strong.json", report.as_dict())
        _dump_json(out / METADATA_FILE, build_metadata(config))
    return report


# ---------------------------------------------------------------------------
# scheme comparisons


GALERKIN_DELTAS = (1e-1, 1e-2, 1e-3)


@dataclass
class SchemeComparison:
    tables: dict
    galerkin: list

    @property
    def galerkin_monotone(self) -> bool:
        errs = [row["error"] for row in self.galerkin]
        return all(b <= a for a, b in zip(errs, errs[1:]))

    def as_dict(self) -> dict:
        return {
            "pairings": {
                name: {"dt": t.dt, "errors": t.errors, "order": t.order, "monotone": t.monotone,
                       "failed_paths": t.failed_paths}
                for name, t in self.tables.items()
            },
            "galerkin_delta": {"rows": self.galerkin, "monotone_nonincreasing": self.galerkin_monotone},
        }


def compare_schemes(config: RunConfig, dt_list, n_paths: int | None = None, deltas=GALERKIN_DELTAS,
                    out=None) -> SchemeComparison:
    """Itô-psi vs Heun-Stratonovich, Itô-psi vs Itô-theta, and Galerkin(delta) vs Itô-psi.

    The final time is the configured T.  The Galerkin sequence runs at the
    finest dt with epsilon = 0, so its gap to the exact-1/psi run measures
    only the h_delta regularisation.
    """
    dt_list = sorted((float(d) for d in dt_list), reverse=True)
    T = config.final_time
    n_paths = config.n_paths if n_paths is None else n_paths
    steps = round(T / dt_list[0])
    ito = SchemeSpec("euler_maruyama_ito", "psi_system", dt_list[0], steps)
    strat = SchemeSpec("heun_stratonovich", "psi_system", dt_list[0], steps)
    theta = SchemeSpec("euler_maruyama_ito", "theta_system", dt_list[0], steps)
    args = (config.initial,)
    tables = {
        "ito_psi_vs_stratonovich": couple_paths(*args, ito, strat, config.basis, None, config.seed, dt_list, n_paths),
        "ito_psi_vs_ito_theta": couple_paths(*args, ito, theta, config.basis, None, config.seed, dt_list, n_paths),
    }
    fine = dt_list[-1]
    fine_steps = round(T / fine)
    galerkin_rows = []
    for delta in deltas:
        params = ModelParams(delta=delta, epsilon=0.0, include_nonlinear=config.params.include_nonlinear)
        gal = SchemeSpec("euler_maruyama_ito", "galerkin", fine, fine_steps)
        table = couple_paths(*args, gal, SchemeSpec("euler_maruyama_ito", "psi_system", fine, fine_steps),
                             config.basis, params, config.seed, [fine], n_paths, paramsB=None)
        galerkin_rows.append({"delta": delta, "dt": fine, "error": table.errors[0]})
    result = SchemeComparison(tables, galerkin_rows)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for name, t in tables.items():
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["dt", "error"])
            writer.writerows([repr(d), repr(e)] for d, e in zip(t.dt, t.errors))
            (out / f"convergence_{name}.csv").write_text(buf.getvalue())
        _dump_json(out / "compare_schemes.json", result.as_dict())
    return result


__all__ = [
    "BudgetReport",
    "RunOutput",
    "SchemeComparison",
    "WeakStrongReport",
    "budget_bound",
    "compare_run_directories",
    "compare_schemes",
    "load_run_config",
    "load_yaml",
    "mc_budget_check",
    "perturb_psi",
    "read_coefficients",
    "replay",
    "run_experiment",
    "summarize",
    "weak_strong_experiment",
    "write_coefficients",
]
