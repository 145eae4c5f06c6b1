"""Time stepping, single paths, ensembles and coupled-path convergence studies."""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from .errors import BlowUpError, InvalidOperandError, NonfiniteEvaluationError, PositivityViolationError
from .kernels import assemble, linear_coefficients
from .noise import NoiseBasis, NoiseIncrement, NoiseStreams, symmetric_increment
from .spectral import TWO_PI, ScalarField, VectorField, leray_coefficients, wavenumber_squared
from .state import ModelParams, SystemState, ThetaState

KINDS = ("euler_maruyama_ito", "heun_stratonovich", "imex_ito")
FORMULATIONS = ("psi_system", "theta_system", "galerkin")
WORKERS_ENV = "STOCHNSF_WORKERS"
CHUNK_SIZE = 8
BLOCK_STEPS = 64

PATH_FAILURES = (PositivityViolationError, NonfiniteEvaluationError, BlowUpError)


class StabilityWarning(UserWarning):
    """dt exceeds the linear stability guard of an explicit scheme."""


@dataclass(frozen=True)
class SchemeSpec:
    """Time-stepping scheme.

    ``heun_stratonovich`` integrates Stratonovich drifts: of the (u, psi)
    equations for ``psi_system`` and of the regularised scheme for
    ``galerkin``.  The other kinds integrate Itô drifts of any formulation.
    """

    kind: str
    formulation: str
    dt: float
    steps: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidOperandError(f"unknown scheme kind {self.kind!r}; choose from {KINDS}")
        if self.formulation not in FORMULATIONS:
            raise InvalidOperandError(f"unknown formulation {self.formulation!r}; choose from {FORMULATIONS}")
        if self.kind == "heun_stratonovich" and self.formulation == "theta_system":
            raise InvalidOperandError("heun_stratonovich pairs with psi_system or galerkin")
        if not self.dt > 0:
            raise InvalidOperandError(f"dt must be > 0, got {self.dt}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise InvalidOperandError(f"steps must be a non-negative integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def system(self) -> str:
        if self.kind == "heun_stratonovich":
            return "galerkin_stratonovich" if self.formulation == "galerkin" else "psi_stratonovich"
        return {"psi_system": "psi_ito", "theta_system": "theta_ito", "galerkin": "galerkin"}[self.formulation]

    @property
    def final_time(self) -> float:
        return self.dt * self.steps

    @property
    def explicit(self) -> bool:
        return self.kind != "imex_ito"

    def with_dt(self, dt: float, steps: int) -> "SchemeSpec":
        return SchemeSpec(self.kind, self.formulation, dt, steps)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "formulation": self.formulation, "dt": self.dt, "steps": self.steps}


def stability_number(scheme: SchemeSpec, basis: NoiseBasis, m: int) -> float:
    """dt (1 + F1/2 + G1/2) 4 pi^2 3 m^2; explicit schemes are guarded at 2."""
    return scheme.dt * (1 + basis.F1 / 2 + basis.G1 / 2) * TWO_PI**2 * 3 * m * m


def stability_warning(scheme: SchemeSpec, basis: NoiseBasis, m: int) -> str | None:
    if not scheme.explicit:
        return None
    number = stability_number(scheme, basis, m)
    if number > 2:
        return f"dt={scheme.dt:g} gives stability number {number:.3g} > 2 for an explicit scheme"
    return None


# ---------------------------------------------------------------------------
# one step


def _scalar(state):
    return state.theta if isinstance(state, ThetaState) else state.psi


def _state_type(scheme: SchemeSpec):
    return ThetaState if scheme.formulation == "theta_system" else SystemState


def _integrating_factors(scheme, basis, params, m):
    u_sym, s_sym = linear_coefficients(scheme.system, basis, params).symbols(m)
    return np.exp(u_sym * scheme.dt), np.exp(s_sym * scheme.dt)


def _advance(scheme: SchemeSpec, grid, basis, params, u, s, dB, dW, factors=None):
    system, kind, dt = scheme.system, scheme.kind, scheme.dt
    if kind == "imex_ito":
        a = assemble(system, grid, basis, params, u, s, drift_scale=dt, dB=dB, dW=dW, linear=False)
        u_new, s_new = factors[0] * (u + a.du), factors[1] * (s + a.ds)
        budget = a.budget
    elif kind == "euler_maruyama_ito":
        a = assemble(system, grid, basis, params, u, s, drift_scale=dt, dB=dB, dW=dW)
        u_new, s_new = u + a.du, s + a.ds
        budget = a.budget
    else:
        a = assemble(system, grid, basis, params, u, s, drift_scale=dt, dB=dB, dW=dW)
        b = assemble(system, grid, basis, params, u + a.du, s + a.ds, drift_scale=dt, dB=dB, dW=dW)
        u_new = u + 0.5 * (a.du + b.du)
        s_new = s + 0.5 * (a.ds + b.ds)
        budget = None if a.budget is None else 0.5 * (a.budget + b.budget)
    return leray_coefficients(grid.m, u_new), s_new, budget


def step(state, scheme: SchemeSpec, basis: NoiseBasis, params: ModelParams | None, increment: NoiseIncrement):
    """Advance one step of size scheme.dt and re-project the velocity.

    Euler-Maruyama: x + a(x) dt + b(x) dXi.  Heun: predictor x~ = x + a dt + b dXi,
    corrector x + (a(x) + a(x~)) dt / 2 + (b(x) + b(x~)) dXi / 2.  IMEX: the
    constant-coefficient linear part through exact mode-wise exponentials,
    the rest explicit.
    """
    if not math.isclose(increment.dt, scheme.dt, rel_tol=1e-12):
        raise InvalidOperandError(f"increment dt {increment.dt} differs from scheme dt {scheme.dt}")
    expected = _state_type(scheme)
    if not isinstance(state, expected):
        raise InvalidOperandError(f"{scheme.formulation} steps a {expected.__name__}")
    grid = state.grid
    factors = _integrating_factors(scheme, basis, params, grid.m) if scheme.kind == "imex_ito" else None
    u, s, _ = _advance(scheme, grid, basis, params, state.u.coeffs, _scalar(state).coeffs,
                       increment.dB, increment.dW, factors)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(s))):
        raise BlowUpError("step produced non-finite coefficients")
    return expected(VectorField(grid, u, divergence_free=True, copy=False, check=False),
                    ScalarField(grid, s, copy=False), state.t + scheme.dt)


# ---------------------------------------------------------------------------
# Brownian sources


class BrownianPath:
    """Fine-resolution increments of several paths, summable to coarser steps.

    Normals come from the per-path, per-mode streams of :class:`NoiseStreams`,
    so path p is the same whether it is drawn alone or within a group.
    """

    def __init__(self, basis: NoiseBasis, seed: int, paths, dt_fine: float, steps_fine: int):
        self.basis = basis
        self.dt_fine = float(dt_fine)
        self.steps_fine = int(steps_fine)
        self.paths = list(paths)
        dB, dW = [], []
        for p in self.paths:
            a, z = NoiseStreams(seed, basis.n_f, basis.n_g, path=p).standard_normals(self.steps_fine)
            dB.append(symmetric_increment(a, self.dt_fine))
            dW.append(z * math.sqrt(self.dt_fine))
        self.dB = np.stack(dB, axis=1) if dB else np.zeros((self.steps_fine, 0, basis.n_f, 3, 3))
        self.dW = np.stack(dW, axis=1) if dW else np.zeros((self.steps_fine, 0, basis.n_g, 3))

    def coarse(self, step: int, ratio: int) -> tuple[np.ndarray, np.ndarray]:
        """Sum of fine increments ratio*step ... ratio*(step+1)-1, accumulated left to right."""
        start = step * ratio
        dB = self.dB[start].copy()
        dW = self.dW[start].copy()
        for j in range(start + 1, start + ratio):
            dB += self.dB[j]
            dW += self.dW[j]
        return dB, dW

    def increment(self, step: int, ratio: int, path_index: int = 0) -> NoiseIncrement:
        dB, dW = self.coarse(step, ratio)
        return NoiseIncrement(self.dt_fine * ratio, dB[path_index], dW[path_index])


class _StreamSource:
    def __init__(self, basis, seed, paths, dt):
        self.streams = [NoiseStreams(seed, basis.n_f, basis.n_g, path=p) for p in paths]
        self.dt = dt
        self.start = 0
        self.stop = 0
        self.basis = basis

    def __call__(self, step: int):
        if step >= self.stop:
            draws = [s.standard_normals(BLOCK_STEPS) for s in self.streams]
            self.dB = symmetric_increment(np.stack([a for a, _ in draws], axis=1), self.dt)
            self.dW = np.stack([z for _, z in draws], axis=1) * math.sqrt(self.dt)
            self.start, self.stop = step, step + BLOCK_STEPS
        return self.dB[step - self.start], self.dW[step - self.start]


class _CoupledSource:
    def __init__(self, path: BrownianPath, ratio: int):
        self.path = path
        self.ratio = ratio

    def __call__(self, step: int):
        return self.path.coarse(step, self.ratio)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Saved states and diagnostics of one path.

    ``bracket_max`` holds the running maximum over every step of
    E(t) + eps * int_0^t (||Δu||^2 + ||Δpsi||^2), the quantity bounded by the
    pathwise energy inequality.
    """

    scheme: SchemeSpec
    seed: int
    path: int
    epsilon: float
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    records: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    budget_integral: list = field(default_factory=list)
    hyper_integral: list = field(default_factory=list)
    bracket_max: list = field(default_factory=list)
    error: str | None = None
    error_message: str | None = None
    error_step: int | None = None

    @property
    def completed(self) -> bool:
        return self.error is None

    @property
    def final_state(self):
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return self.times[-1]


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _batched(initial, count):
    return (np.repeat(initial.u.coeffs[None], count, axis=0),
            np.repeat(_scalar(initial).coeffs[None], count, axis=0))


def _prepare_initial(initial, scheme: SchemeSpec):
    if initial.batch_shape:
        raise InvalidOperandError("initial state must be a single (unbatched) state")
    if scheme.formulation == "theta_system" and isinstance(initial, SystemState):
        from .dynamics import psi_theta_convert

        return psi_theta_convert(initial, "psi_to_theta")
    if scheme.formulation != "theta_system" and isinstance(initial, ThetaState):
        from .dynamics import psi_theta_convert

        return psi_theta_convert(initial, "theta_to_psi")
    return initial


def _integrate(initial, scheme: SchemeSpec, basis, params, seed, paths, source, save_every,
               keep_states=True, record=True) -> list[Trajectory]:
    grid = initial.grid
    kind = _state_type(scheme)
    eps = params.epsilon if (params is not None and scheme.formulation == "galerkin") else 0.0
    lam2 = ((TWO_PI**2) * wavenumber_squared(grid.m)) ** 2
    count = len(paths)
    u, s = _batched(initial, count)
    trajs = [Trajectory(scheme, seed, p, eps) for p in paths]
    active = np.ones(count, dtype=bool)
    factors = _integrating_factors(scheme, basis, params, grid.m) if scheme.kind == "imex_ito" else None

    def energies(uu, ss):
        kinetic = 0.5 * np.sum(np.abs(uu) ** 2, axis=(-4, -3, -2, -1))
        m = grid.m
        if kind is ThetaState:
            return kinetic + ss[..., m, m, m].real
        return kinetic + 0.5 * np.sum(np.abs(ss) ** 2, axis=(-3, -2, -1))

    def hyper(uu, ss):
        return np.sum(lam2 * np.abs(uu) ** 2, axis=(-4, -3, -2, -1)) + np.sum(lam2 * np.abs(ss) ** 2, axis=(-3, -2, -1))

    energy = energies(u, s)
    e0 = energy.copy()
    budget_int = np.zeros(count)
    hyper_int = np.zeros(count)
    bracket_max = energy.copy()

    def save(i, t):
        st = kind(VectorField(grid, u[i], divergence_free=True, check=False), ScalarField(grid, s[i]), t)
        tr = trajs[i]
        if keep_states or not tr.states:
            tr.states.append(st)
        else:
            tr.states = [tr.states[0], st]
        tr.times.append(t)
        tr.energies.append(float(energy[i]))
        tr.budget_integral.append(float(budget_int[i]))
        tr.hyper_integral.append(float(hyper_int[i]))
        tr.bracket_max.append(float(bracket_max[i]))
        if record:
            margin = e0[i] + eps * t - bracket_max[i]
            tr.records.append(diagnostics.record_for(st, params=params if scheme.formulation == "galerkin" else None,
                                                     margin=margin))

    for i in range(count):
        save(i, initial.t)

    t = initial.t
    for n in range(scheme.steps):
        dB_all, dW_all = source(n)
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        rate = hyper(u[idx], s[idx])
        try:
            u_new, s_new, budget = _advance(scheme, grid, basis, params, u[idx], s[idx],
                                            dB_all[idx], dW_all[idx], factors)
        except PATH_FAILURES:
            u_new = np.empty_like(u[idx])
            s_new = np.empty_like(s[idx])
            budget = None if scheme.system == "theta_ito" else np.zeros(idx.size)
            for j, p in enumerate(idx):
                try:
                    uj, sj, bj = _advance(scheme, grid, basis, params, u[p:p + 1], s[p:p + 1],
                                          dB_all[p:p + 1], dW_all[p:p + 1], factors)
                    u_new[j], s_new[j] = uj[0], sj[0]
                    if budget is not None:
                        budget[j] = bj[0]
                except PATH_FAILURES as exc:
                    trajs[p].error = exc.code
                    trajs[p].error_message = str(exc)
                    trajs[p].error_step = n
                    active[p] = False
                    u_new[j], s_new[j] = u[p], s[p]
        finite = np.all(np.isfinite(u_new), axis=(-4, -3, -2, -1)) & np.all(np.isfinite(s_new), axis=(-3, -2, -1))
        for j, p in enumerate(idx):
            if active[p] and not finite[j]:
                trajs[p].error = BlowUpError.code
                trajs[p].error_message = f"non-finite coefficients at step {n}"
                trajs[p].error_step = n
                active[p] = False
        live = active[idx]
        keep = idx[live]
        u[keep] = u_new[live]
        s[keep] = s_new[live]
        if budget is not None:
            budget_int[keep] += scheme.dt * np.asarray(budget)[live]
        hyper_int[keep] += scheme.dt * rate[live]
        energy[keep] = energies(u[keep], s[keep])
        bracket_max[keep] = np.maximum(bracket_max[keep], energy[keep] + eps * hyper_int[keep])
        t = initial.t + (n + 1) * scheme.dt
        last = n + 1 == scheme.steps
        if (n + 1) % save_every == 0 or last:
            for p in keep:
                save(p, t)
    return trajs


def run_ensemble(initial, scheme: SchemeSpec, basis: NoiseBasis, params: ModelParams | None, seed: int,
                 n_paths: int = 1, save_every: int = 10, first_path: int = 0, keep_states: bool = True,
                 record: bool = True, workers: int | None = None) -> list[Trajectory]:
    """Independent paths first_path ... first_path + n_paths - 1.

    Paths are vectorised in fixed chunks of CHUNK_SIZE and chunks run on a
    thread pool (size from the STOCHNSF_WORKERS environment variable); the
    chunking does not depend on the worker count, so results do not either.
    """
    if save_every < 1:
        raise InvalidOperandError(f"save_every must be >= 1, got {save_every}")
    if n_paths < 1:
        raise InvalidOperandError(f"n_paths must be >= 1, got {n_paths}")
    message = stability_warning(scheme, basis, initial.grid.m)
    if message:
        warnings.warn(message, StabilityWarning, stacklevel=2)
    start_state = _prepare_initial(initial, scheme)
    path_ids = list(range(first_path, first_path + n_paths))
    chunks = [path_ids[i:i + CHUNK_SIZE] for i in range(0, n_paths, CHUNK_SIZE)]

    def run_chunk(chunk):
        source = _StreamSource(basis, seed, chunk, scheme.dt)
        return _integrate(start_state, scheme, basis, params, seed, chunk, source, save_every, keep_states, record)

    workers = _worker_count() if workers is None else max(1, workers)
    if workers == 1 or len(chunks) == 1:
        results = [run_chunk(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chunk, chunks))
    return [tr for chunk in results for tr in chunk]


def run_path(initial, scheme: SchemeSpec, basis: NoiseBasis, params: ModelParams | None, seed: int,
             save_every: int = 10, path: int = 0, keep_states: bool = True) -> Trajectory:
    """One path; failures end the trajectory with an error marker instead of raising."""
    return run_ensemble(initial, scheme, basis, params, seed, 1, save_every, first_path=path,
                        keep_states=keep_states)[0]


def run_with_increments(initial, scheme: SchemeSpec, basis, params, brownian: BrownianPath, ratio: int,
                        save_every: int | None = None, record: bool = False, keep_states: bool = False):
    """Integrate every path of a BrownianPath with increments summed ``ratio`` at a time."""
    start_state = _prepare_initial(initial, scheme)
    return _integrate(start_state, scheme, basis, params, None, brownian.paths,
                      _CoupledSource(brownian, ratio), save_every or max(scheme.steps, 1),
                      keep_states=keep_states, record=record)


# ---------------------------------------------------------------------------
# coupled convergence studies


@dataclass
class ConvergenceTable:
    """Terminal L2 differences of two schemes driven by one Brownian path per sample."""

    dt: list[float]
    errors: list[float]
    per_path: np.ndarray
    order: float | None
    monotone: bool
    failed_paths: list[int]

    def rows(self):
        return [{"dt": d, "error": e} for d, e in zip(self.dt, self.errors)]


def _psi_variables(state):
    if isinstance(state, ThetaState):
        from .dynamics import psi_theta_convert

        return psi_theta_convert(state, "theta_to_psi")
    return state


def state_difference(a, b) -> float:
    """sqrt(||u_a - u_b||^2 + ||psi_a - psi_b||^2), comparing in psi variables."""
    a, b = _psi_variables(a), _psi_variables(b)
    du = a.u.coeffs - b.u.coeffs
    ds = a.psi.coeffs - b.psi.coeffs
    return float(math.sqrt(np.sum(np.abs(du) ** 2) + np.sum(np.abs(ds) ** 2)))


def fitted_order(dt, errors) -> float | None:
    """Least-squares slope of log(error) against log(dt)."""
    dt = np.asarray(dt, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(dt) < 2 or np.any(errors <= 0) or not np.all(np.isfinite(errors)):
        return None
    slope, _ = np.polyfit(np.log(dt), np.log(errors), 1)
    return float(slope)


def couple_paths(initial, schemeA: SchemeSpec, schemeB: SchemeSpec, basis: NoiseBasis, params,
                 seed: int, dt_list, n_paths: int = 1, paramsB=None) -> ConvergenceTable:
    """Run both schemes on identical Brownian paths at every dt and tabulate terminal differences.

    The final time is ``schemeA.dt * schemeA.steps``.  Increments are drawn at
    the finest dt and summed for coarser steps.  ``errors`` holds the root
    mean square over paths that completed at every dt.
    """
    dt_list = [float(d) for d in dt_list]
    if any(b >= a for a, b in zip(dt_list, dt_list[1:])):
        raise InvalidOperandError("dt_list must be strictly decreasing")
    T = schemeA.final_time
    if not math.isclose(T, schemeB.final_time, rel_tol=1e-9):
        raise InvalidOperandError("both schemes must share the final time")
    fine = dt_list[-1]
    fine_steps = round(T / fine)
    if not math.isclose(fine_steps * fine, T, rel_tol=1e-9):
        raise InvalidOperandError(f"finest dt {fine} does not divide the final time {T}")
    ratios = []
    for d in dt_list:
        r = round(d / fine)
        if not math.isclose(r * fine, d, rel_tol=1e-9) or fine_steps % r:
            raise InvalidOperandError(f"dt {d} is not a divisor-compatible multiple of {fine}")
        ratios.append(r)
    paramsB = params if paramsB is None else paramsB
    paths = list(range(n_paths))
    brownian = BrownianPath(basis, seed, paths, fine, fine_steps)
    per_path = np.full((len(dt_list), n_paths), np.nan)
    failed: set[int] = set()
    for row, (d, r) in enumerate(zip(dt_list, ratios)):
        steps = fine_steps // r
        runs_a = run_with_increments(initial, schemeA.with_dt(d, steps), basis, params, brownian, r)
        if schemeB == schemeA and paramsB is params:
            runs_b = runs_a
        else:
            runs_b = run_with_increments(initial, schemeB.with_dt(d, steps), basis, paramsB, brownian, r)
        for p, (ta, tb) in enumerate(zip(runs_a, runs_b)):
            if ta.completed and tb.completed:
                per_path[row, p] = state_difference(ta.final_state, tb.final_state)
            else:
                failed.add(p)
    good = [p for p in paths if p not in failed]
    if good:
        errors = [float(np.sqrt(np.mean(per_path[row, good] ** 2))) for row in range(len(dt_list))]
    else:
        errors = [float("nan")] * len(dt_list)
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    return ConvergenceTable(dt_list, errors, per_path, fitted_order(dt_list, errors), monotone, sorted(failed))
