"""
═══════════════════════════════════════════════════════════
DYNAMICS — master equation integration and steady states
═══════════════════════════════════════════════════════════
Methods:
    rk4     fixed-step classical RK4 on the full generator (reference, deterministic)
    rk4_ip  fixed-step RK4 with an integrating factor for the diagonal of the static
            H_eff; the free-rotor phase e^{-iħℓ²t/2I} is exact, so the step is set by
            couplings and rates, not by ħ l_max²/2I
    rk45    scipy solve_ivp (Dormand-Prince) with rtol/atol, opt-in

The state is never renormalized; trace drift is a diagnostic.  Every step checks
for non-finite entries and rotor edge population.

Exported:
    IntegratorConfig, TimeSeries, Diagnostics, EvolutionResult, SteadyStateReport
    integrate, steady_state, default_step, edge_population, cutoff_population
═══════════════════════════════════════════════════════════
"""

import logging
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp

import config
from engines import ModelSpec, default_initial_state
from errors import (
    ConfigurationError, LayoutError, NumericalBlowupError, StateValidityError,
    TruncationOverflowError,
)
from qspace import DensityMatrix, Operator, Oscillator, SpaceLayout
from run_tracker import run_tracker
from shared_constants import (
    BLOWUP_BOUND, EDGE_ABORT, EDGE_WARN, NEGATIVITY_FAIL, STEADY_CHECK_INTERVAL,
    STEADY_CONSECUTIVE, STEP_FACTOR,
)

logger = logging.getLogger(__name__)

_METHODS = ("rk4", "rk4_ip", "rk45")

Observer = Union[Operator, Callable[[ModelSpec, float, DensityMatrix], Union[float, Dict[str, float]]]]
RateHook = Callable[[ModelSpec, float, np.ndarray, np.ndarray], float]


# ════════════════════════════════════════════════════════════
# CONFIG & RESULTS
# ════════════════════════════════════════════════════════════

@dataclass
class IntegratorConfig:
    method: str = field(default_factory=config.get_default_method)
    dt: Optional[float] = None            # None -> default_step(model, method)
    t_end: float = 10.0
    record_every: int = 1
    edge_warn: float = EDGE_WARN
    edge_abort: float = EDGE_ABORT
    rtol: float = 1e-8
    atol: float = 1e-10
    check_positivity: bool = True

    def validate(self) -> "IntegratorConfig":
        if self.method not in _METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}, expected one of {_METHODS}",
                                     "integrator.method")
        if self.dt is not None and not (self.dt > 0 and np.isfinite(self.dt)):
            raise ConfigurationError(f"dt must be > 0, got {self.dt}", "integrator.dt")
        if not (self.t_end >= 0 and np.isfinite(self.t_end)):
            raise ConfigurationError(f"t_end must be >= 0, got {self.t_end}", "integrator.t_end")
        if int(self.record_every) < 1:
            raise ConfigurationError("record_every must be >= 1", "integrator.record_every")
        if not (0 < self.edge_warn < 1):
            raise ConfigurationError("edge_warn must lie in (0, 1)", "integrator.edge_warn")
        if not (0 < self.edge_abort < 1):
            raise ConfigurationError("edge_abort must lie in (0, 1)", "integrator.edge_abort")
        if self.edge_warn >= self.edge_abort:
            raise ConfigurationError("edge_warn must be below edge_abort", "integrator.edge_warn")
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigurationError("rtol and atol must be > 0", "integrator.rtol")
        return self


@dataclass
class TimeSeries:
    """Column store of recorded observables; missing entries are NaN."""
    times: List[float] = field(default_factory=list)
    values: Dict[str, List[float]] = field(default_factory=dict)

    def append(self, t: float, sample: Dict[str, float]):
        n = len(self.times)
        for key in sample:
            if key not in self.values:
                self.values[key] = [float("nan")] * n
        for key, col in self.values.items():
            col.append(float(sample.get(key, float("nan"))))
        self.times.append(float(t))

    def column(self, name: str) -> np.ndarray:
        if name == "t":
            return np.asarray(self.times)
        if name not in self.values:
            return np.full(len(self.times), np.nan)
        return np.asarray(self.values[name])

    def set_column(self, name: str, data: Sequence[float]):
        if len(data) != len(self.times):
            raise ValueError(f"column {name} has {len(data)} values for {len(self.times)} samples")
        self.values[name] = [float(x) for x in data]

    def to_rows(self, columns: Sequence[str]) -> List[List[float]]:
        cols = [self.column(c) for c in columns]
        return [[float(c[i]) for c in cols] for i in range(len(self.times))]

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class Diagnostics:
    method: str
    dt: float
    steps: int = 0
    max_trace_error: float = 0.0
    max_hermiticity_defect: float = 0.0
    max_edge_population: Tuple[float, float] = (0.0, 0.0)
    max_cutoff_population: float = 0.0
    min_eigenvalue: float = float("inf")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "dt": self.dt,
            "steps": self.steps,
            "max_trace_error": self.max_trace_error,
            "max_hermiticity_defect": self.max_hermiticity_defect,
            "max_edge_population": list(self.max_edge_population),
            "max_cutoff_population": self.max_cutoff_population,
            "min_eigenvalue": self.min_eigenvalue,
        }


@dataclass
class EvolutionResult:
    series: TimeSeries
    diagnostics: Diagnostics
    final_state: DensityMatrix
    states: Optional[List[DensityMatrix]] = None
    accumulated: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.series.times)


@dataclass
class SteadyStateReport:
    rho_ss: DensityMatrix
    residual: float
    elapsed: float
    converged: bool
    diagnostics: Diagnostics


# ════════════════════════════════════════════════════════════
# HEALTH MONITORS
# ════════════════════════════════════════════════════════════

def _marginal(data: np.ndarray, layout: SpaceLayout, index: int) -> np.ndarray:
    pops = np.real(np.diag(data)).reshape(layout.dims)
    axes = tuple(i for i in range(len(layout.dims)) if i != index)
    return pops.sum(axis=axes) if axes else pops


def edge_population(rho: Union[DensityMatrix, np.ndarray],
                    layout: Optional[SpaceLayout] = None) -> Tuple[float, float]:
    """Population of the l_min and l_max rotor levels."""
    layout = layout if layout is not None else rho.layout
    data = rho.data if isinstance(rho, DensityMatrix) else rho
    idx = layout.rotor_index()
    if idx is None:
        raise LayoutError("edge population needs a rotor factor")
    marg = _marginal(data, layout, idx)
    return float(marg[0]), float(marg[-1])


def cutoff_population(rho: Union[DensityMatrix, np.ndarray],
                      layout: Optional[SpaceLayout] = None) -> float:
    """Largest population of the top level over all oscillator factors (0 without oscillators)."""
    layout = layout if layout is not None else rho.layout
    data = rho.data if isinstance(rho, DensityMatrix) else rho
    top = 0.0
    for i, f in enumerate(layout.factors):
        if isinstance(f, Oscillator):
            top = max(top, float(_marginal(data, layout, i)[-1]))
    return top


class _Monitor:
    """Per-run state checks; warns once per boundary."""

    def __init__(self, m: ModelSpec, cfg: IntegratorConfig, diag: Diagnostics):
        self.layout = m.layout
        self.cfg = cfg
        self.diag = diag
        self.has_rotor = m.rotor_index is not None
        self.has_osc = any(isinstance(f, Oscillator) for f in m.layout.factors)
        self.warned = set()

    def check(self, rho: np.ndarray, t: float):
        if not np.isfinite(rho).all() or np.abs(rho).max() > BLOWUP_BOUND:
            raise NumericalBlowupError(f"state diverged at t={t:.6g} (non-finite or unbounded entries)")
        err = abs(np.trace(rho) - 1.0)
        if err > self.diag.max_trace_error:
            self.diag.max_trace_error = float(err)
        if self.has_rotor:
            lo, hi = edge_population(rho, self.layout)
            prev = self.diag.max_edge_population
            self.diag.max_edge_population = (max(prev[0], lo), max(prev[1], hi))
            for boundary, pop in (("l_min", lo), ("l_max", hi)):
                if pop > self.cfg.edge_abort:
                    logger.error(f"[EDGE] {boundary} population {pop:.3e} > {self.cfg.edge_abort} at t={t:.6g}")
                    raise TruncationOverflowError(boundary, pop, t)
                if pop > self.cfg.edge_warn and boundary not in self.warned:
                    self.warned.add(boundary)
                    logger.warning(f"[EDGE] {boundary} population {pop:.3e} above {self.cfg.edge_warn} "
                                   f"at t={t:.6g}")
        if self.has_osc:
            top = cutoff_population(rho, self.layout)
            self.diag.max_cutoff_population = max(self.diag.max_cutoff_population, top)
            if top > self.cfg.edge_warn and "cutoff" not in self.warned:
                self.warned.add("cutoff")
                logger.warning(f"[EDGE] oscillator cutoff population {top:.3e} at t={t:.6g}")

    def check_sample(self, rho: np.ndarray, t: float):
        norm = np.linalg.norm(rho)
        defect = float(np.linalg.norm(rho - rho.conj().T) / norm) if norm else 0.0
        self.diag.max_hermiticity_defect = max(self.diag.max_hermiticity_defect, defect)
        if self.cfg.check_positivity:
            lam = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
            self.diag.min_eigenvalue = min(self.diag.min_eigenvalue, lam)
            if lam < -NEGATIVITY_FAIL:
                raise StateValidityError(f"state lost positivity at t={t:.6g}: eigenvalue {lam:.3e}")


# ════════════════════════════════════════════════════════════
# STEP SIZE
# ════════════════════════════════════════════════════════════

def default_step(m: ModelSpec, method: Optional[str] = None) -> float:
    """dt = STEP_FACTOR / ω_max over coherent frequencies and dissipative rates."""
    method = method or config.get_default_method()
    gen = m.generator
    terms = [gen.offdiagonal_norm()]
    if method != "rk4_ip":
        # diagonal spread; ħ l_max²/2I for the bare rotor
        diag = gen.static_diagonal()
        terms.append(float(np.ptp(diag.real)) if diag.size else 0.0)
    rates = np.zeros((m.layout.dim, m.layout.dim), dtype=complex)
    for ch in m.channels:
        for w, op in ch.lindblad_ops:
            rates += w * (op.data.conj().T @ op.data)
    terms.append(float(np.linalg.norm(rates, 2)))
    p = m.params
    for name in ("G", "g"):
        if hasattr(p, name):
            terms.append(abs(getattr(p, name)))
    if "load_gamma" in m.bookkeeping:
        terms.append(m.bookkeeping["load_gamma"] * m.bookkeeping["load_T_R"] * m.I / m.hbar ** 2)
    if m.drive is not None:
        terms.append(abs(m.drive.omega))
        h_int = m.drive.h_int_of_angle(m.drive.phase).data / m.hbar
        terms.append(float(np.linalg.norm(h_int, 2)))
    omega_max = max(terms)
    if omega_max <= 0:
        omega_max = 1.0
    return STEP_FACTOR / omega_max


# ════════════════════════════════════════════════════════════
# STEPPERS
# ════════════════════════════════════════════════════════════

class _FixedStepper:
    """One RK4 step of the state plus any accumulated rates, sharing the same stages."""

    def __init__(self, m: ModelSpec, method: str, dt: float, accumulators: Dict[str, RateHook]):
        self.m = m
        self.f = m.generator.apply
        self.dt = dt
        self.hooks = list(accumulators.values())
        self.omega = None
        if method == "rk4_ip":
            h = m.generator.static_diagonal()
            self.omega = -1j * (h[:, None] - np.conj(h)[None, :])
            self.half = np.exp(0.5 * dt * self.omega)
            self.full = self.half * self.half

    def _rates(self, t: float, s: np.ndarray, ds: np.ndarray) -> np.ndarray:
        return np.array([hook(self.m, t, s, ds) for hook in self.hooks], dtype=float)

    def step(self, t: float, rho: np.ndarray, acc: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        h = self.dt
        f = self.f
        if self.omega is None:
            d1 = f(rho, t)
            s2 = rho + 0.5 * h * d1
            d2 = f(s2, t + 0.5 * h)
            s3 = rho + 0.5 * h * d2
            d3 = f(s3, t + 0.5 * h)
            s4 = rho + h * d3
            d4 = f(s4, t + h)
            new = rho + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        else:
            e1, e2, om = self.half, self.full, self.omega
            d1 = f(rho, t)
            n1 = d1 - om * rho
            s2 = e1 * (rho + 0.5 * h * n1)
            d2 = f(s2, t + 0.5 * h)
            n2 = d2 - om * s2
            s3 = e1 * rho + 0.5 * h * n2
            d3 = f(s3, t + 0.5 * h)
            n3 = d3 - om * s3
            s4 = e2 * rho + h * e1 * n3
            d4 = f(s4, t + h)
            n4 = d4 - om * s4
            new = e2 * rho + (h / 6.0) * (e2 * n1 + 2.0 * e1 * (n2 + n3) + n4)
        if self.hooks:
            r = (self._rates(t, rho, d1) + 2.0 * self._rates(t + 0.5 * h, s2, d2)
                 + 2.0 * self._rates(t + 0.5 * h, s3, d3) + self._rates(t + h, s4, d4))
            acc = acc + (h / 6.0) * r
        return new, acc


class _AdaptiveStepper:
    """solve_ivp over a span; accumulators ride along as extra components of y."""

    def __init__(self, m: ModelSpec, cfg: IntegratorConfig, accumulators: Dict[str, RateHook]):
        self.m = m
        self.cfg = cfg
        self.d = m.layout.dim
        self.hooks = list(accumulators.values())
        self.nfev = 0

    def _rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        rho = y[: self.d * self.d].reshape(self.d, self.d)
        drho = self.m.generator.apply(rho, t)
        rates = [hook(self.m, t, rho, drho) for hook in self.hooks]
        return np.concatenate([drho.ravel(), np.asarray(rates, dtype=complex)])

    def advance(self, t0: float, t1: float, rho: np.ndarray, acc: np.ndarray):
        y0 = np.concatenate([rho.ravel(), acc.astype(complex)])
        sol = solve_ivp(self._rhs, (t0, t1), y0, method="RK45",
                        rtol=self.cfg.rtol, atol=self.cfg.atol)
        if not sol.success:
            raise NumericalBlowupError(f"adaptive integrator failed at t={t0:.6g}: {sol.message}")
        self.nfev += sol.nfev
        y = sol.y[:, -1]
        return y[: self.d * self.d].reshape(self.d, self.d), np.real(y[self.d * self.d:])


# ════════════════════════════════════════════════════════════
# INTEGRATE
# ════════════════════════════════════════════════════════════

def _sample(m: ModelSpec, t: float, state: DensityMatrix,
            observers: Dict[str, Observer]) -> Dict[str, float]:
    out: Dict[str, float] = {}
    for name, obs in observers.items():
        if isinstance(obs, Operator):
            out[name] = float(np.real(np.einsum("ij,ji->", state.data, obs.data)))
            continue
        value = obs(m, t, state)
        if isinstance(value, dict):
            out.update(value)
        else:
            out[name] = float(value)
    return out


def _prepare(m: ModelSpec, rho0: Optional[DensityMatrix]) -> DensityMatrix:
    if rho0 is None:
        return default_initial_state(m)
    if rho0.layout != m.layout:
        raise LayoutError(
            f"initial state layout '{rho0.layout.descriptor()}' does not match model "
            f"'{m.layout.descriptor()}'"
        )
    return rho0.validate()


def _step_count(t_end: float, dt: float) -> int:
    return max(1, int(np.ceil(t_end / dt - 1e-9))) if t_end > 0 else 0


def integrate(m: ModelSpec, rho0: Optional[DensityMatrix] = None,
              cfg: Optional[IntegratorConfig] = None,
              observers: Optional[Dict[str, Observer]] = None,
              accumulators: Optional[Dict[str, RateHook]] = None,
              keep_states: bool = False, run_id: Optional[str] = None) -> EvolutionResult:
    """
    Propagate rho0 to cfg.t_end.

    observers:    name -> Operator (records Re tr(ρ·op)) or hook(m, t, ρ) returning a float
                  or a dict of columns
    accumulators: name -> rate(m, t, ρ, dρ/dt); integrated with the same stages as the state,
                  reported as cumulative values at every recorded time
    """
    cfg = (cfg or IntegratorConfig()).validate()
    observers = observers or {}
    accumulators = accumulators or {}
    run_id = run_id or f"run-{uuid.uuid4().hex[:8]}"
    state = _prepare(m, rho0)

    dt = cfg.dt if cfg.dt is not None else default_step(m, cfg.method)
    n_steps = _step_count(cfg.t_end, dt)
    if n_steps:
        dt = cfg.t_end / n_steps
    stride = int(cfg.record_every)
    diag = Diagnostics(method=cfg.method, dt=dt)
    monitor = _Monitor(m, cfg, diag)
    logger.info(f"[INTEGRATE] {m.kind} dim={m.layout.dim} method={cfg.method} dt={dt:.4g} "
                f"steps={n_steps} t_end={cfg.t_end:.6g}")

    series = TimeSeries()
    states: Optional[List[DensityMatrix]] = [] if keep_states else None
    acc_names = list(accumulators)
    acc_trace: Dict[str, List[float]] = {name: [] for name in acc_names}

    rho = state.data.copy()
    acc = np.zeros(len(acc_names))

    def record(step: int):
        t = step * dt
        monitor.check_sample(rho, t)
        snap = DensityMatrix(m.layout, rho.copy())
        sample = _sample(m, t, snap, observers)
        for i, name in enumerate(acc_names):
            sample[name] = acc[i]
            acc_trace[name].append(float(acc[i]))
        series.append(t, sample)
        if states is not None:
            states.append(snap)

    wall0 = time.perf_counter()
    monitor.check(rho, 0.0)
    record(0)
    if cfg.method == "rk45":
        stepper = _AdaptiveStepper(m, cfg, accumulators)
        step = 0
        while step < n_steps:
            nxt = min(step + stride, n_steps)
            rho, acc = stepper.advance(step * dt, nxt * dt, rho, acc)
            step = nxt
            monitor.check(rho, step * dt)
            record(step)
        diag.steps = stepper.nfev
    else:
        stepper = _FixedStepper(m, cfg.method, dt, accumulators)
        for step in range(1, n_steps + 1):
            rho, acc = stepper.step((step - 1) * dt, rho, acc)
            monitor.check(rho, step * dt)
            if step % stride == 0 or step == n_steps:
                record(step)
        diag.steps = n_steps
    wall = time.perf_counter() - wall0

    run_tracker.record(run_id, cfg.method, diag.steps, cfg.t_end, wall, stage="integrate")
    return EvolutionResult(
        series=series,
        diagnostics=diag,
        final_state=DensityMatrix(m.layout, rho),
        states=states,
        accumulated={name: np.asarray(vals) for name, vals in acc_trace.items()},
    )


# ════════════════════════════════════════════════════════════
# STEADY STATE
# ════════════════════════════════════════════════════════════

def _residual(m: ModelSpec, rho: np.ndarray) -> float:
    return float(np.linalg.norm(m.generator.apply(rho, 0.0)) / np.linalg.norm(rho))


def steady_state(m: ModelSpec, rho0: Optional[DensityMatrix] = None, tol: float = 1e-8,
                 t_max: float = 1000.0, cfg: Optional[IntegratorConfig] = None,
                 run_id: Optional[str] = None) -> SteadyStateReport:
    """Relax until ‖𝓛ρ‖_F < tol·‖ρ‖_F on STEADY_CONSECUTIVE consecutive checks."""
    if m.is_time_dependent:
        raise ConfigurationError("steady state needs a time-independent model", "drive.omega")
    if not (tol > 0 and t_max > 0):
        raise ConfigurationError("steady state needs tol > 0 and t_max > 0", "steady")
    cfg = (cfg or IntegratorConfig()).validate()
    run_id = run_id or f"steady-{uuid.uuid4().hex[:8]}"
    state = _prepare(m, rho0)
    dt = cfg.dt if cfg.dt is not None else default_step(m, cfg.method)
    diag = Diagnostics(method=cfg.method, dt=dt)
    monitor = _Monitor(m, cfg, diag)
    chunk = STEADY_CHECK_INTERVAL * dt
    logger.info(f"[STEADY] {m.kind} dim={m.layout.dim} method={cfg.method} dt={dt:.4g} "
                f"tol={tol:g} t_max={t_max:g}")

    rho = state.data.copy()
    acc = np.zeros(0)
    fixed = _FixedStepper(m, cfg.method, dt, {}) if cfg.method != "rk45" else None
    adaptive = _AdaptiveStepper(m, cfg, {}) if cfg.method == "rk45" else None
    monitor.check(rho, 0.0)

    t = 0.0
    passing = 0
    residual = _residual(m, rho)
    wall0 = time.perf_counter()
    while t < t_max and passing < STEADY_CONSECUTIVE:
        if adaptive is not None:
            rho, acc = adaptive.advance(t, t + chunk, rho, acc)
            t += chunk
            monitor.check(rho, t)
        else:
            for _ in range(STEADY_CHECK_INTERVAL):
                rho, acc = fixed.step(t, rho, acc)
                t += dt
                diag.steps += 1
                monitor.check(rho, t)
        residual = _residual(m, rho)
        passing = passing + 1 if residual < tol else 0
    wall = time.perf_counter() - wall0
    if adaptive is not None:
        diag.steps = adaptive.nfev

    monitor.check_sample(rho, t)
    converged = passing >= STEADY_CONSECUTIVE
    if converged:
        logger.info(f"[STEADY] converged t={t:.6g} residual={residual:.3e}")
    else:
        logger.warning(f"[STEADY] not converged by t_max={t_max:g}: residual={residual:.3e} (tol {tol:g})")
    run_tracker.record(run_id, cfg.method, diag.steps, t, wall, stage="steady")
    return SteadyStateReport(
        rho_ss=DensityMatrix(m.layout, rho),
        residual=residual,
        elapsed=t,
        converged=converged,
        diagnostics=diag,
    )
