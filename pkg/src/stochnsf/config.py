"""Run configuration: YAML parsing and validation with line-numbered errors.

Only numerical and I/O cosmetics have defaults (grid resolution,
``fine_factor``, ``save_every``, output directory).  Every physics parameter
must be given explicitly.

Example::

    grid: {m: 4, n: 16}
    model: {delta: 0.01, epsilon: 0.001}
    noise:
      f: [{k: [1, 0, 0], amplitude: 0.3}]
      g: []
    scheme: {kind: imex_ito, formulation: galerkin, dt: 1.0e-4, T: 0.01}
    initial:
      u: {preset: taylor-green, amplitude: 0.5}
      psi: {preset: constant-plus-mode, c: 2.0, a: 0.5}
    seed: 7
    n_paths: 4
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, InvalidModeError, StochNSFError
from .integrators import FORMULATIONS, KINDS, SchemeSpec, stability_warning
from .noise import NoiseBasis, build_noise_basis
from .spectral import ScalarField, TorusGrid, VectorField, leray_project
from .state import ModelParams, SystemState

DEFAULT_FINE_FACTOR = 2
DEFAULT_SAVE_EVERY = 10
DEFAULT_OUTPUT = "runs"

U_PRESETS = ("taylor-green", "zero", "modes")
PSI_PRESETS = ("constant-plus-mode", "modes")


@dataclass
class RunConfig:
    """Validated run description; ``raw`` is the normalised mapping echoed into metadata."""

    grid: TorusGrid
    params: ModelParams
    basis: NoiseBasis
    scheme: SchemeSpec
    save_every: int
    initial: SystemState
    seed: int
    n_paths: int
    output: Path
    raw: dict
    warnings: list[str] = field(default_factory=list)
    source: str | None = None

    @property
    def final_time(self) -> float:
        return self.scheme.final_time

    def with_overrides(self, *, seed: int | None = None, n_paths: int | None = None,
                       output: str | Path | None = None) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if n_paths is not None:
            raw["n_paths"] = int(n_paths)
        if output is not None:
            raw["output"] = str(output)
        return build_config(raw, source=self.source)


# ---------------------------------------------------------------------------
# YAML with line numbers


def _line_map(node, path=(), out=None) -> dict:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            _line_map(value, path + (key.value,), out)
            out.setdefault(path + (key.value,), key.start_mark.line + 1)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_map(item, path + (i,), out)
    return out


class _Problems:
    def __init__(self, lines: dict):
        self.lines = lines
        self.items: list[str] = []

    def add(self, path: tuple, message: str):
        name = ".".join(str(p) for p in path) or "<root>"
        line = None
        probe = path
        while probe and line is None:
            line = self.lines.get(probe)
            probe = probe[:-1]
        where = f"line {line}: " if line is not None else ""
        self.items.append(f"{where}{name}: {message}")

    def raise_if_any(self):
        if self.items:
            raise ConfigError(self.items)


def load_yaml(text: str) -> tuple[dict, dict]:
    """Parse YAML text into (data, line map); syntax errors become ConfigError."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError([f"{where}YAML syntax error: {getattr(exc, 'problem', exc)}"]) from None
    if node is None or data is None:
        raise ConfigError(["<root>: configuration is empty"])
    if not isinstance(data, dict):
        raise ConfigError(["<root>: configuration must be a mapping"])
    return data, _line_map(node)


def parse_config(path) -> RunConfig:
    """Read and validate a YAML run configuration; all problems are reported together."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read configuration ({exc.strerror})"]) from None
    data, lines = load_yaml(text)
    return build_config(data, lines, source=str(path))


# ---------------------------------------------------------------------------
# validation helpers


def _section(data, key, problems, required=True) -> dict:
    value = data.get(key)
    if value is None:
        if required:
            problems.add((key,), "missing required section")
        return {}
    if not isinstance(value, dict):
        problems.add((key,), "must be a mapping")
        return {}
    return value


def _number(section, name, path, problems, *, required=True, default=None, integer=False, check=None, what=None):
    if name not in section or section[name] is None:
        if required:
            problems.add(path + (name,), "missing required value")
        return default
    value = section[name]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        problems.add(path + (name,), f"must be a number, got {value!r}")
        return default
    if integer and int(value) != value:
        problems.add(path + (name,), f"must be an integer, got {value!r}")
        return default
    value = int(value) if integer else float(value)
    if not math.isfinite(value):
        problems.add(path + (name,), "must be finite")
        return default
    if check is not None and not check(value):
        problems.add(path + (name,), f"{value!r} is not {what}")
        return default
    return value


def _unknown(section, allowed, path, problems):
    for key in section:
        if key not in allowed:
            problems.add(path + (key,), f"unknown key (allowed: {', '.join(allowed)})")


def _wavevector(value, path, problems, m):
    if not (isinstance(value, (list, tuple)) and len(value) == 3
            and all(isinstance(c, int) and not isinstance(c, bool) for c in value)):
        problems.add(path, f"wavevector must be three integers, got {value!r}")
        return None
    if max(abs(c) for c in value) > m:
        problems.add(path, f"{InvalidModeError.code}: mode {tuple(value)} lies outside the cutoff m={m}")
        return None
    return tuple(value)


def _noise_family(noise, name, problems, m):
    path = ("noise", name)
    if name not in noise:
        problems.add(path, "missing required list (use [] for no modes)")
        return []
    entries = noise[name]
    if entries is None:
        entries = []
    if not isinstance(entries, list):
        problems.add(path, "must be a list of {k, amplitude} entries")
        return []
    out = []
    for i, entry in enumerate(entries):
        p = path + (i,)
        if not isinstance(entry, dict):
            problems.add(p, "must be a mapping with k and amplitude")
            continue
        _unknown(entry, ("k", "amplitude"), p, problems)
        k = _wavevector(entry.get("k"), p + ("k",), problems, m)
        amp = _number(entry, "amplitude", p, problems)
        if k is not None and amp is not None:
            out.append((k, amp))
    return out


# ---------------------------------------------------------------------------
# initial conditions


def taylor_green(grid: TorusGrid, amplitude: float) -> VectorField:
    """A (sin 2 pi x1 cos 2 pi x2, -cos 2 pi x1 sin 2 pi x2, 0), divergence-free."""
    two_pi = 2 * math.pi
    return VectorField.from_function(
        grid,
        lambda x1, x2, x3: (
            amplitude * np.sin(two_pi * x1) * np.cos(two_pi * x2),
            -amplitude * np.cos(two_pi * x1) * np.sin(two_pi * x2),
            0.0,
        ),
        divergence_free=True,
    )


def constant_plus_mode(grid: TorusGrid, c: float, a: float, k=(1, 0, 0)) -> ScalarField:
    """c + a sin(2 pi k.x)."""
    k = np.asarray(k, dtype=float)
    return ScalarField.from_function(
        grid, lambda x1, x2, x3: c + a * np.sin(2 * math.pi * (k[0] * x1 + k[1] * x2 + k[2] * x3))
    )


def _trig_modes(grid, entries, path, problems, rank):
    """Sum of cos/sin modes; vector amplitudes for rank 1."""
    if not isinstance(entries, list):
        problems.add(path, "must be a list of {k, cos, sin} entries")
        return None
    x1, x2, x3 = grid.points()
    total = np.zeros((3,) * rank + (grid.n,) * 3)
    ok = True
    for i, entry in enumerate(entries):
        p = path + (i,)
        if not isinstance(entry, dict):
            problems.add(p, "must be a mapping")
            ok = False
            continue
        _unknown(entry, ("k", "cos", "sin"), p, problems)
        k = _wavevector(entry.get("k"), p + ("k",), problems, grid.m)
        phase = None if k is None else 2 * math.pi * (k[0] * x1 + k[1] * x2 + k[2] * x3)
        for name, fn in (("cos", np.cos), ("sin", np.sin)):
            if name not in entry:
                continue
            amp = entry[name]
            if rank == 1:
                valid = isinstance(amp, list) and len(amp) == 3 and all(
                    isinstance(a, (int, float)) and not isinstance(a, bool) for a in amp)
            else:
                valid = isinstance(amp, (int, float)) and not isinstance(amp, bool)
            if not valid:
                problems.add(p + (name,), "must be " + ("three numbers" if rank else "a number"))
                ok = False
                continue
            if k is None:
                ok = False
                continue
            if rank == 1:
                if abs(sum(a * kk for a, kk in zip(amp, k))) > 0:
                    problems.add(p + (name,), f"amplitude {amp} is not orthogonal to k={k} (u must be divergence-free)")
                    ok = False
                    continue
                total += np.asarray(amp, dtype=float)[:, None, None, None] * fn(phase)
            else:
                total += float(amp) * fn(phase)
    return total if ok else None


def _initial_u(spec, grid, problems):
    path = ("initial", "u")
    if not isinstance(spec, dict) or "preset" not in spec:
        problems.add(path, f"needs a preset ({', '.join(U_PRESETS)})")
        return None
    preset = spec["preset"]
    if preset == "taylor-green":
        _unknown(spec, ("preset", "amplitude"), path, problems)
        amp = _number(spec, "amplitude", path, problems)
        return None if amp is None else taylor_green(grid, amp)
    if preset == "zero":
        _unknown(spec, ("preset",), path, problems)
        return VectorField.zeros(grid)
    if preset == "modes":
        _unknown(spec, ("preset", "modes"), path, problems)
        values = _trig_modes(grid, spec.get("modes"), path + ("modes",), problems, 1)
        if values is None:
            return None
        return leray_project(VectorField.from_values(grid, values))
    problems.add(path + ("preset",), f"unknown preset {preset!r} (choose from {', '.join(U_PRESETS)})")
    return None


def _initial_psi(spec, grid, problems):
    path = ("initial", "psi")
    if not isinstance(spec, dict) or "preset" not in spec:
        problems.add(path, f"needs a preset ({', '.join(PSI_PRESETS)})")
        return None
    preset = spec["preset"]
    if preset == "constant-plus-mode":
        _unknown(spec, ("preset", "c", "a", "k"), path, problems)
        c = _number(spec, "c", path, problems)
        a = _number(spec, "a", path, problems)
        k = (1, 0, 0)
        if "k" in spec:
            k = _wavevector(spec["k"], path + ("k",), problems, grid.m)
        if c is None or a is None or k is None:
            return None
        if not c > abs(a):
            problems.add(path, f"needs c > |a| for a strictly positive psi, got c={c}, a={a}")
            return None
        return constant_plus_mode(grid, c, a, k)
    if preset == "modes":
        _unknown(spec, ("preset", "mean", "modes"), path, problems)
        mean = _number(spec, "mean", path, problems)
        values = _trig_modes(grid, spec.get("modes", []), path + ("modes",), problems, 0)
        if values is None or mean is None:
            return None
        return ScalarField.from_values(grid, values + mean)
    problems.add(path + ("preset",), f"unknown preset {preset!r} (choose from {', '.join(PSI_PRESETS)})")
    return None


# ---------------------------------------------------------------------------
# assembly


TOP_LEVEL = ("grid", "model", "noise", "scheme", "initial", "seed", "n_paths", "output")


def build_config(data: dict, lines: dict | None = None, source: str | None = None) -> RunConfig:
    """Validate a configuration mapping; raises ConfigError listing every problem."""
    problems = _Problems(lines or {})
    _unknown(data, TOP_LEVEL, (), problems)

    g = _section(data, "grid", problems)
    _unknown(g, ("m", "n", "fine_factor"), ("grid",), problems)
    m = _number(g, "m", ("grid",), problems, integer=True, check=lambda v: v >= 1, what="a cutoff >= 1")
    n = _number(g, "n", ("grid",), problems, required=False, integer=True)
    fine = _number(g, "fine_factor", ("grid",), problems, required=False, integer=True,
                   default=DEFAULT_FINE_FACTOR, check=lambda v: v >= 1, what=">= 1")
    grid = None
    if m is not None:
        if n is not None and n < 2 * m + 1:
            problems.add(("grid", "n"), f"n={n} cannot hold cutoff m={m} (need n >= {2 * m + 1})")
        else:
            grid = TorusGrid(m, n, fine if fine is not None else DEFAULT_FINE_FACTOR)

    md = _section(data, "model", problems)
    _unknown(md, ("delta", "epsilon", "truncation_radius", "cutoff", "include_nonlinear"), ("model",), problems)
    delta = _number(md, "delta", ("model",), problems, check=lambda v: 0 < v < 1, what="in (0, 1)")
    eps = _number(md, "epsilon", ("model",), problems, check=lambda v: 0 <= v < 1, what="in [0, 1)")
    radius = _number(md, "truncation_radius", ("model",), problems, required=False,
                     check=lambda v: v > 0, what="> 0")
    cutoff = _number(md, "cutoff", ("model",), problems, required=False, integer=True,
                     check=lambda v: v >= 1 and (m is None or v <= m), what="within 1..m")
    nonlinear = md.get("include_nonlinear", True)
    if not isinstance(nonlinear, bool):
        problems.add(("model", "include_nonlinear"), "must be true or false")
        nonlinear = True
    params = None
    if delta is not None and eps is not None:
        params = ModelParams(delta=delta, epsilon=eps, cutoff=cutoff, truncation_radius=radius,
                             include_nonlinear=nonlinear)

    nz = _section(data, "noise", problems)
    _unknown(nz, ("f", "g", "f_constant", "g_constant"), ("noise",), problems)
    basis = None
    if grid is not None:
        f_spec = _noise_family(nz, "f", problems, grid.m)
        g_spec = _noise_family(nz, "g", problems, grid.m)
        f_const = _number(nz, "f_constant", ("noise",), problems, required=False)
        g_const = _number(nz, "g_constant", ("noise",), problems, required=False)
        if not problems.items:
            try:
                basis = build_noise_basis(f_spec, g_spec, grid, f_constant=f_const, g_constant=g_const)
            except StochNSFError as exc:
                problems.add(("noise",), str(exc))

    sc = _section(data, "scheme", problems)
    _unknown(sc, ("kind", "formulation", "dt", "T", "save_every"), ("scheme",), problems)
    kind = sc.get("kind")
    if kind is None:
        problems.add(("scheme", "kind"), "missing required value")
    elif kind not in KINDS:
        problems.add(("scheme", "kind"), f"unknown kind {kind!r} (choose from {', '.join(KINDS)})")
    formulation = sc.get("formulation")
    if formulation is None:
        problems.add(("scheme", "formulation"), "missing required value")
    elif formulation not in FORMULATIONS:
        problems.add(("scheme", "formulation"),
                     f"unknown formulation {formulation!r} (choose from {', '.join(FORMULATIONS)})")
    elif kind == "heun_stratonovich" and formulation == "theta_system":
        problems.add(("scheme", "formulation"), "heun_stratonovich pairs with psi_system or galerkin")
    dt = _number(sc, "dt", ("scheme",), problems, check=lambda v: v > 0, what="> 0")
    T = _number(sc, "T", ("scheme",), problems, check=lambda v: v >= 0, what=">= 0")
    save_every = _number(sc, "save_every", ("scheme",), problems, required=False, integer=True,
                         default=DEFAULT_SAVE_EVERY, check=lambda v: v >= 1, what=">= 1")
    steps = None
    if dt is not None and T is not None:
        steps = round(T / dt)
        if not math.isclose(steps * dt, T, rel_tol=1e-9, abs_tol=1e-15):
            problems.add(("scheme", "T"), f"T={T} is not an integer multiple of dt={dt}")
            steps = None

    ini = _section(data, "initial", problems)
    _unknown(ini, ("u", "psi"), ("initial",), problems)
    initial = None
    if grid is not None:
        u0 = _initial_u(ini.get("u"), grid, problems)
        psi0 = _initial_psi(ini.get("psi"), grid, problems)
        if u0 is not None and psi0 is not None:
            initial = SystemState(u0, psi0)

    seed = _number(data, "seed", (), problems, integer=True, check=lambda v: v >= 0, what=">= 0")
    n_paths = _number(data, "n_paths", (), problems, integer=True, check=lambda v: v >= 1, what=">= 1")
    output = data.get("output", DEFAULT_OUTPUT)
    if not isinstance(output, str):
        problems.add(("output",), "must be a path string")

    problems.raise_if_any()
    scheme = SchemeSpec(kind, formulation, dt, steps)
    notes = []
    message = stability_warning(scheme, basis, grid.m)
    if message:
        notes.append(message)

    raw = copy.deepcopy(data)
    raw.setdefault("grid", {})
    raw["grid"]["n"] = grid.n
    raw["grid"]["fine_factor"] = grid.fine_factor
    raw["scheme"]["save_every"] = save_every
    raw["output"] = output
    return RunConfig(grid, params, basis, scheme, save_every, initial, seed, n_paths, Path(output),
                     raw, notes, source)
