"""
═══════════════════════════════════════════════════════════
ROTORCTL — scenario-driven command line for rotor engines
═══════════════════════════════════════════════════════════
Subcommands:
    simulate   integrate a scenario, write timeseries.csv + summary.json
    steady     relax to the steady state, write summary.json + steady_state.rqdm
    sweep      steady state (or driven cycle) per value of one parameter, write sweep.csv
    driven     clock-driven fluid, write driven.csv with cumulative work and heat
    ergotropy  ergotropy of a saved RQDM1 state against L̂²/2I
    predict    closed-form predictions for the scenario's model

Exit codes: 0 ok, 2 configuration, 3 truncation overflow, 4 numerical blowup,
5 steady state not converged.

Usage:
    python rotorctl.py simulate --scenario scenarios/mill_kick.json --out out/
    python rotorctl.py sweep --scenario scenarios/piston_gamma_sweep.json --workers 4
    python rotorctl.py steady --scenario s.json --override load.gamma=0.05
═══════════════════════════════════════════════════════════
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from copy import deepcopy
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from dynamics import IntegratorConfig, default_step, integrate, steady_state
from engines import (
    LoadParams, MillParams, ModelSpec, PistonParams, attach_load, build_effective_mill,
    build_free_rotor, build_mill, build_piston, driven_model,
)
from errors import (
    ConfigurationError, InputError, LayoutError, RotorEngineError, StateFormatError,
    SteadyStateNotConvergedError,
)
from metrics import (
    DRIVEN_ACCUMULATORS, cycle_summary, driven_work_heat, ergotropy_rate, heat_flows,
    ideal_cycle_work, intrinsic_power, output_power, predictors, rotor_ergotropy, work_record,
    work_record_sample,
)
from qspace import (
    DensityMatrix, Oscillator, Qubit, SpaceLayout, expectation, number_op, partial_trace,
)
from run_tracker import run_tracker
from shared_constants import (
    DEFAULT_ROTOR, MIN_SAMPLES_PER_CYCLE, OSCILLATOR_CUTOFF, TV_MIN_SAMPLES,
)

logger = logging.getLogger(__name__)

TIMESERIES_COLUMNS = (
    "t", "L_mean", "L2_mean", "W_kin_rate", "W_int_rate", "W_net_rate", "ergotropy",
    "ergotropy_rate", "W_out_rate", "Q_hot_rate", "Q_cold_rate", "excitation",
    "edge_lo", "edge_hi", "trace_err",
)
DRIVEN_COLUMNS = ("t", "W", "Q", "energy", "work_rate", "excitation", "trace_err")
SWEEP_COLUMNS = (
    "index", "parameter", "value", "W_out_rate", "W_int_rate", "efficiency", "L_mean",
    "residual", "converged", "error",
)

RQDM_MAGIC = b"RQDM1"


# ════════════════════════════════════════════════════════════
# SCENARIO SCHEMA
# ════════════════════════════════════════════════════════════

_TOP_KEYS = {"model", "load", "drive", "integrator", "steady", "sweep", "outputs", "seed", "tv_alpha"}
_MODEL_KEYS = {
    "mill": {"kind", "G", "kappa", "n_hot", "n_cold", "delta", "omega0", "rotor", "I", "fluid", "n_max"},
    "effective_mill": {"kind", "G", "kappa", "n_hot", "n_cold", "delta", "omega0", "rotor", "I",
                       "fluid", "n_max"},
    "piston": {"kind", "g", "kappa", "n_hot", "n_cold", "omega0", "rotor", "I", "fluid", "n_max"},
    "free_rotor": {"kind", "rotor", "I"},
}
_MODEL_REQUIRED = {
    "mill": ("G", "kappa", "n_hot", "n_cold"),
    "effective_mill": ("G", "kappa", "n_hot", "n_cold"),
    "piston": ("g", "kappa", "n_hot", "n_cold"),
    "free_rotor": (),
}
_LOAD_KEYS = {"gamma", "T_R"}
_DRIVE_KEYS = {"omega", "phase", "cycles", "samples_per_cycle"}
_INTEGRATOR_KEYS = {"method", "dt", "t_end", "record_every", "edge_warn", "edge_abort",
                    "rtol", "atol", "check_positivity"}
_STEADY_KEYS = {"tol", "t_max"}
_SWEEP_KEYS = {"parameter", "values", "range"}
_RANGE_KEYS = {"start", "stop", "num", "scale"}


@dataclass
class SweepSpec:
    parameter: str
    values: List[float]


@dataclass
class Scenario:
    raw: Dict[str, Any]
    kind: str
    params: Any
    rotor: Tuple[int, int]
    I: float
    load: Optional[LoadParams] = None
    drive: Optional[Dict[str, float]] = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    steady_tol: float = 1e-8
    steady_t_max: float = 1000.0
    outputs: Tuple[str, ...] = TIMESERIES_COLUMNS
    seed: int = 0
    tv_alpha: Optional[float] = None
    sweep: Optional[SweepSpec] = None

    def canonical(self) -> str:
        return canonical_json(self.raw)


def canonical_json(data: Dict[str, Any]) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _key(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check_keys(block: Any, allowed: set, path: str):
    if not isinstance(block, dict):
        raise ConfigurationError("expected an object", path)
    for key in block:
        if key not in allowed:
            raise ConfigurationError(f"unknown key {key!r}", _key(path, key))


def _number(block: Dict[str, Any], key: str, path: str, default=None) -> float:
    if key not in block:
        if default is None:
            raise ConfigurationError("required value missing", _key(path, key))
        return default
    value = block[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"expected a number, got {value!r}", _key(path, key))
    if not math.isfinite(value):
        raise ConfigurationError("expected a finite number", _key(path, key))
    return float(value)


def _integer(block: Dict[str, Any], key: str, path: str, default: int) -> int:
    value = block.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"expected an integer, got {value!r}", _key(path, key))
    return value


def _revalidate(exc: ConfigurationError, prefix: str) -> ConfigurationError:
    key = f"{prefix}.{exc.key_path}" if exc.key_path else prefix
    return ConfigurationError(exc.detail, key)


def _parse_rotor(model: Dict[str, Any]) -> Tuple[int, int]:
    if "rotor" not in model:
        return DEFAULT_ROTOR
    value = model["rotor"]
    if (not isinstance(value, list) or len(value) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
        raise ConfigurationError(f"expected [l_min, l_max] integers, got {value!r}", "model.rotor")
    return int(value[0]), int(value[1])


def _parse_fluid(model: Dict[str, Any]):
    name = model.get("fluid", "qubit")
    if name == "qubit":
        if "n_max" in model:
            raise ConfigurationError("n_max only applies to an oscillator fluid", "model.n_max")
        return Qubit()
    if name == "oscillator":
        n_max = _integer(model, "n_max", "model", OSCILLATOR_CUTOFF)
        if n_max < 0:
            raise ConfigurationError("must be >= 0", "model.n_max")
        return Oscillator(n_max)
    raise ConfigurationError(f"unknown fluid {name!r} (qubit | oscillator)", "model.fluid")


def _parse_model(model: Any):
    if not isinstance(model, dict):
        raise ConfigurationError("expected an object", "model")
    kind = model.get("kind")
    if kind not in _MODEL_KEYS:
        raise ConfigurationError(f"unknown model kind {kind!r}, expected one of {sorted(_MODEL_KEYS)}",
                                 "model.kind")
    _check_keys(model, _MODEL_KEYS[kind], "model")
    for key in _MODEL_REQUIRED[kind]:
        if key not in model:
            raise ConfigurationError("required value missing", f"model.{key}")
    rotor = _parse_rotor(model)
    I = _number(model, "I", "model", 1.0)
    try:
        if kind in ("mill", "effective_mill"):
            params = MillParams(
                G=_number(model, "G", "model"),
                kappa=_number(model, "kappa", "model"),
                n_hot=_number(model, "n_hot", "model"),
                n_cold=_number(model, "n_cold", "model"),
                delta=_number(model, "delta", "model", 0.0),
                omega0=_number(model, "omega0", "model", 100.0),
                rotor=rotor, I=I, fluid=_parse_fluid(model),
            ).validate()
            if kind == "effective_mill":
                build_effective_mill(params)
        elif kind == "piston":
            params = PistonParams(
                g=_number(model, "g", "model"),
                kappa=_number(model, "kappa", "model"),
                n_hot=_number(model, "n_hot", "model"),
                n_cold=_number(model, "n_cold", "model"),
                omega0=_number(model, "omega0", "model", 100.0),
                rotor=rotor, I=I, fluid=_parse_fluid(model),
            ).validate()
        else:
            params = None
            build_free_rotor(rotor, I)
    except ConfigurationError as e:
        if e.key_path and e.key_path.startswith("model."):
            raise
        raise _revalidate(e, "model") from e
    except LayoutError as e:
        raise ConfigurationError(str(e), "model.rotor") from e
    return kind, params, rotor, I


def _parse_sweep(block: Any) -> SweepSpec:
    _check_keys(block, _SWEEP_KEYS, "sweep")
    parameter = block.get("parameter")
    if not isinstance(parameter, str) or "." not in parameter:
        raise ConfigurationError("expected a dotted path such as 'load.gamma'", "sweep.parameter")
    if ("values" in block) == ("range" in block):
        raise ConfigurationError("give exactly one of 'values' or 'range'", "sweep")
    if "values" in block:
        values = block["values"]
        if not isinstance(values, list) or not values:
            raise ConfigurationError("expected a non-empty list", "sweep.values")
        for i, v in enumerate(values):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigurationError(f"expected a number, got {v!r}", f"sweep.values.{i}")
        return SweepSpec(parameter, [float(v) for v in values])
    rng = block["range"]
    _check_keys(rng, _RANGE_KEYS, "sweep.range")
    start = _number(rng, "start", "sweep.range")
    stop = _number(rng, "stop", "sweep.range")
    num = _integer(rng, "num", "sweep.range", 0)
    scale = rng.get("scale", "linear")
    if num < 1:
        raise ConfigurationError("must be >= 1", "sweep.range.num")
    if scale == "log":
        if start <= 0 or stop <= 0:
            raise ConfigurationError("log range needs positive bounds", "sweep.range")
        values = np.logspace(np.log10(start), np.log10(stop), num)
    elif scale == "linear":
        values = np.linspace(start, stop, num)
    else:
        raise ConfigurationError(f"unknown scale {scale!r} (linear | log)", "sweep.range.scale")
    return SweepSpec(parameter, [float(v) for v in values])


def scenario_from_dict(data: Any) -> Scenario:
    """Validate a decoded scenario; every error names its key path."""
    if not isinstance(data, dict) or "model" not in data:
        raise ConfigurationError("scenario needs a model block", "model")
    _check_keys(data, _TOP_KEYS, "")
    kind, params, rotor, I = _parse_model(data["model"])

    load = None
    if "load" in data:
        _check_keys(data["load"], _LOAD_KEYS, "load")
        try:
            load = LoadParams(
                gamma=_number(data["load"], "gamma", "load"),
                T_R=_number(data["load"], "T_R", "load"),
            ).validate()
        except ConfigurationError as e:
            if e.key_path and e.key_path.startswith("load."):
                raise
            raise _revalidate(e, "load") from e

    drive = None
    if "drive" in data:
        block = data["drive"]
        _check_keys(block, _DRIVE_KEYS, "drive")
        if kind not in ("mill", "piston"):
            raise ConfigurationError(f"cannot drive a {kind} model", "drive")
        if "rotor" in data["model"]:
            raise ConfigurationError("drive replaces the rotor; remove model.rotor", "drive")
        if load is not None:
            raise ConfigurationError("drive and load are mutually exclusive (no rotor to load)", "drive")
        drive = {
            "omega": _number(block, "omega", "drive"),
            "phase": _number(block, "phase", "drive", 0.0),
            "cycles": _integer(block, "cycles", "drive", 10),
            "samples_per_cycle": _integer(block, "samples_per_cycle", "drive", MIN_SAMPLES_PER_CYCLE),
        }
        if drive["cycles"] < 1:
            raise ConfigurationError("must be >= 1", "drive.cycles")
        if drive["samples_per_cycle"] < 3:
            raise ConfigurationError("must be >= 3", "drive.samples_per_cycle")

    block = data.get("integrator", {})
    _check_keys(block, _INTEGRATOR_KEYS, "integrator")
    method = block.get("method", config.get_default_method())
    check_pos = block.get("check_positivity", True)
    if not isinstance(check_pos, bool):
        raise ConfigurationError("expected true or false", "integrator.check_positivity")
    integrator = IntegratorConfig(
        method=method,
        dt=_number(block, "dt", "integrator") if "dt" in block else None,
        t_end=_number(block, "t_end", "integrator", 10.0),
        record_every=_integer(block, "record_every", "integrator", 1),
        edge_warn=_number(block, "edge_warn", "integrator", IntegratorConfig.edge_warn),
        edge_abort=_number(block, "edge_abort", "integrator", IntegratorConfig.edge_abort),
        rtol=_number(block, "rtol", "integrator", IntegratorConfig.rtol),
        atol=_number(block, "atol", "integrator", IntegratorConfig.atol),
        check_positivity=check_pos,
    ).validate()

    block = data.get("steady", {})
    _check_keys(block, _STEADY_KEYS, "steady")
    tol = _number(block, "tol", "steady", 1e-8)
    t_max = _number(block, "t_max", "steady", 1000.0)
    if tol <= 0 or t_max <= 0:
        raise ConfigurationError("tol and t_max must be > 0", "steady")

    outputs = data.get("outputs", list(TIMESERIES_COLUMNS))
    if not isinstance(outputs, list):
        raise ConfigurationError("expected a list of column names", "outputs")
    for i, name in enumerate(outputs):
        if name not in TIMESERIES_COLUMNS:
            raise ConfigurationError(f"unknown output {name!r}", f"outputs.{i}")
    ordered = tuple(c for c in TIMESERIES_COLUMNS if c == "t" or c in outputs)

    seed = _integer(data, "seed", "", 0)
    tv_alpha = _number(data, "tv_alpha", "") if data.get("tv_alpha") is not None else None
    sweep = _parse_sweep(data["sweep"]) if "sweep" in data else None

    return Scenario(
        raw=deepcopy(data), kind=kind, params=params, rotor=rotor, I=I, load=load, drive=drive,
        integrator=integrator, steady_tol=tol, steady_t_max=t_max, outputs=ordered, seed=seed,
        tv_alpha=tv_alpha, sweep=sweep,
    )


def parse_scenario(path: str, overrides: Sequence[str] = ()) -> Scenario:
    if not os.path.isfile(path):
        raise ConfigurationError(f"scenario file not found: {path}", "scenario")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        raise ConfigurationError("scenario needs a model block (file is empty)", "model")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"invalid JSON: {e}", "scenario") from e
    for item in overrides:
        apply_override(data, item)
    scenario = scenario_from_dict(data)
    logger.info(f"[SCENARIO] {path}: kind={scenario.kind} load={scenario.load is not None} "
                f"drive={scenario.drive is not None} overrides={len(overrides)}")
    return scenario


def apply_override(data: Dict[str, Any], item: str) -> Dict[str, Any]:
    """In-place dot-path assignment 'a.b=value'; value parsed as JSON, else kept as a string."""
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not key=value", "override")
    path, raw = item.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigurationError(f"override {item!r} has an empty key", "override")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = data
    for key in keys[:-1]:
        nxt = node.setdefault(key, {})
        if not isinstance(nxt, dict):
            raise ConfigurationError(f"cannot descend into non-object {key!r}", path)
        node = nxt
    node[keys[-1]] = value
    return data


# ════════════════════════════════════════════════════════════
# MODEL ASSEMBLY
# ════════════════════════════════════════════════════════════

def build_model(s: Scenario) -> ModelSpec:
    if s.kind == "mill":
        m = build_mill(s.params)
    elif s.kind == "effective_mill":
        m = build_effective_mill(s.params)
    elif s.kind == "piston":
        m = build_piston(s.params)
    else:
        m = build_free_rotor(s.rotor, s.I)
    if s.load is not None:
        m = attach_load(m, s.load)
    if s.drive is not None:
        m = driven_model(m, s.drive["omega"], s.drive["phase"])
    return m


# ════════════════════════════════════════════════════════════
# OUTPUT HELPERS
# ════════════════════════════════════════════════════════════

def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), config.csv_float_format())
    return "" if value is None else str(value)


def write_csv(path: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _clean(obj: Any) -> Any:
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_summary(path: str, summary: Dict[str, Any]):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(summary), fh, sort_keys=True, indent=2)
        fh.write("\n")


# ════════════════════════════════════════════════════════════
# STATE FILES (RQDM1)
# ════════════════════════════════════════════════════════════

def save_state(rho: DensityMatrix, path: str):
    """Magic line, layout descriptor line, then little-endian float64 re/im pairs, row-major."""
    payload = np.ascontiguousarray(rho.data, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(RQDM_MAGIC + b"\n")
        fh.write(rho.layout.descriptor().encode("ascii") + b"\n")
        fh.write(payload)
    logger.info(f"[STATE_IO] saved {rho.layout.descriptor()!r} to {path}")


def load_state(path: str, validate: bool = True) -> DensityMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 2)
    if len(parts) < 3 or parts[0] != RQDM_MAGIC:
        raise StateFormatError(f"{path}: missing RQDM1 magic line")
    try:
        layout = SpaceLayout.from_descriptor(parts[1].decode("ascii"))
    except (LayoutError, UnicodeDecodeError) as e:
        raise StateFormatError(f"{path}: bad layout descriptor: {e}") from e
    expected = layout.dim * layout.dim * 16
    if len(parts[2]) != expected:
        kind = "truncated payload" if len(parts[2]) < expected else "payload larger than layout"
        raise StateFormatError(f"{path}: {kind} ({len(parts[2])} bytes, expected {expected})")
    data = np.frombuffer(parts[2], dtype="<c16").reshape(layout.dim, layout.dim).astype(complex)
    rho = DensityMatrix(layout, data)
    logger.info(f"[STATE_IO] loaded {layout.descriptor()!r} from {path}")
    return rho.validate() if validate else rho


# ════════════════════════════════════════════════════════════
# COMMANDS
# ════════════════════════════════════════════════════════════

def run_simulation(s: Scenario, run_id: str = "simulate") -> Tuple[List[List[float]], Dict[str, Any]]:
    """Integrate an autonomous scenario; returns CSV rows and the summary."""
    m = build_model(s)
    if m.drive is not None:
        raise ConfigurationError("scenario has a drive block; use the driven subcommand", "drive")
    result = integrate(m, cfg=s.integrator, observers={"work": work_record_sample}, run_id=run_id)
    series = result.series
    if len(series) >= TV_MIN_SAMPLES:
        try:
            series.set_column("ergotropy_rate",
                              ergotropy_rate(series.column("ergotropy"), series.column("t"), s.tv_alpha))
        except InputError as e:
            # last record is off-stride when t_end is not a multiple of record_every·dt
            logger.warning(f"[SCENARIO] ergotropy_rate left empty: {e}")
    rows = series.to_rows(s.outputs)
    final = {c: series.column(c)[-1] for c in TIMESERIES_COLUMNS}
    summary = {
        "command": "simulate",
        "scenario": json.loads(s.canonical()),
        "diagnostics": result.diagnostics.to_dict(),
        "final": final,
        "run": run_tracker.finish(run_id),
    }
    return rows, summary


def _steady_metrics(m: ModelSpec, rho: DensityMatrix) -> Dict[str, float]:
    out = {"W_out_rate": float("nan"), "W_int_rate": float("nan"), "efficiency": float("nan"),
           "L_mean": float("nan"), "kinetic_energy": float("nan")}
    if m.rotor_index is None:
        return out
    out["W_int_rate"] = intrinsic_power(m, rho)
    out["L_mean"] = float(np.real(expectation(rho, m.angular_momentum)))
    out["kinetic_energy"] = float(np.real(expectation(rho, m.kinetic)))
    if m.load_channel() is not None:
        out["W_out_rate"] = output_power(m, rho)
        if any(ch.bookkeeping_hamiltonian is not None for ch in m.bath_channels()):
            flows = heat_flows(m, rho)
            out.update(Q_hot_rate=flows.q_hot, Q_cold_rate=flows.q_cold, efficiency=flows.efficiency)
    return out


def run_steady(s: Scenario, run_id: str = "steady"):
    m = build_model(s)
    report = steady_state(m, tol=s.steady_tol, t_max=s.steady_t_max, cfg=s.integrator, run_id=run_id)
    metrics = _steady_metrics(m, report.rho_ss)
    if m.rotor_index is not None:
        metrics.update({k: v for k, v in work_record(m, report.elapsed, report.rho_ss).to_dict().items()
                        if k in ("L2_mean", "ergotropy", "edge_lo", "edge_hi")})
    summary = {
        "command": "steady",
        "scenario": json.loads(s.canonical()),
        "converged": report.converged,
        "residual": report.residual,
        "elapsed": report.elapsed,
        "diagnostics": report.diagnostics.to_dict(),
        "final": metrics,
        "run": run_tracker.finish(run_id),
    }
    return report, summary


def _driven_grid(m: ModelSpec, s: Scenario) -> IntegratorConfig:
    """dt = τ/(N·k) so that every cycle boundary is a recorded sample."""
    omega = s.drive["omega"]
    if omega == 0:
        return s.integrator
    period = 2.0 * math.pi / abs(omega)
    n = s.drive["samples_per_cycle"]
    base = s.integrator.dt if s.integrator.dt is not None else default_step(m, s.integrator.method)
    k = max(1, int(math.ceil(period / n / base)))
    return replace(s.integrator, dt=period / (n * k), record_every=k,
                   t_end=s.drive["cycles"] * period)


def run_driven(s: Scenario, run_id: str = "driven"):
    if s.drive is None:
        raise ConfigurationError("driven command needs a drive block", "drive")
    m = build_model(s)
    cfg = _driven_grid(m, s)
    result = integrate(m, cfg=cfg, keep_states=True, accumulators=DRIVEN_ACCUMULATORS, run_id=run_id)
    times = result.times
    acct = driven_work_heat(m, times, result.states)
    n_op = number_op(m.layout, 0)
    excitation = [float(np.real(expectation(st, n_op))) for st in result.states]
    trace_err = [abs(st.trace() - 1.0) for st in result.states]
    rows = [
        [times[i], acct.W[i], acct.Q[i], acct.energy[i], acct.work_rate[i], excitation[i], trace_err[i]]
        for i in range(len(times))
    ]
    summary = {
        "command": "driven",
        "scenario": json.loads(s.canonical()),
        "diagnostics": result.diagnostics.to_dict(),
        "stage_work": result.accumulated["W"][-1],
        "stage_heat": result.accumulated["Q"][-1],
        "run": run_tracker.finish(run_id),
    }
    if s.drive["omega"] != 0:
        cycles = cycle_summary(times, acct.W, acct.Q, acct.energy, s.drive["omega"])
        summary["period"] = cycles.period
        summary["stationary_power"] = cycles.stationary_power
        summary["max_first_law_defect"] = cycles.max_defect
        summary["cycles"] = [
            {"index": c.index, "work": c.work, "heat": c.heat, "delta_energy": c.delta_energy,
             "defect": c.defect}
            for c in cycles.cycles
        ]
        if s.kind == "piston":
            summary["ideal_cycle_work"] = ideal_cycle_work(s.params)
    return rows, summary


def _sweep_point(task: Tuple[int, Dict[str, Any], str, float]) -> Dict[str, Any]:
    """One sweep point; failures are recorded in the row, never raised."""
    index, raw, parameter, value = task
    row = {c: float("nan") for c in SWEEP_COLUMNS}
    row.update(index=index, parameter=parameter, value=value, converged=False, error="")
    try:
        data = apply_override(deepcopy(raw), f"{parameter}={json.dumps(value)}")
        data.pop("sweep", None)
        s = scenario_from_dict(data)
        run_id = f"sweep-{index}"
        if s.drive is not None:
            _, summary = run_driven(s, run_id=run_id)
            row.update(W_out_rate=summary.get("stationary_power", float("nan")), converged=True)
        else:
            report, summary = run_steady(s, run_id=run_id)
            final = summary["final"]
            row.update(W_out_rate=final["W_out_rate"], W_int_rate=final["W_int_rate"],
                       efficiency=final["efficiency"], L_mean=final["L_mean"],
                       residual=report.residual, converged=report.converged)
    except RotorEngineError as e:
        logger.warning(f"[SWEEP] point {index} ({parameter}={value}) failed: {type(e).__name__}: {e}")
        row["error"] = f"{type(e).__name__}: {e}"
        run_tracker.remove_run(f"sweep-{index}")
    return row


def run_sweep(s: Scenario, workers: int = 1) -> List[Dict[str, Any]]:
    if s.sweep is None:
        raise ConfigurationError("sweep command needs a sweep block", "sweep")
    # resolve the path once so a typo fails before any work starts
    first_point = apply_override(deepcopy(s.raw), f"{s.sweep.parameter}={json.dumps(s.sweep.values[0])}")
    first_point.pop("sweep", None)
    scenario_from_dict(first_point)
    tasks = [(i, s.raw, s.sweep.parameter, v) for i, v in enumerate(s.sweep.values)]
    logger.info(f"[SWEEP] {s.sweep.parameter}: {len(tasks)} points, workers={workers}")
    if workers <= 1 or len(tasks) == 1:
        return [_sweep_point(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(_sweep_point, tasks))


# ════════════════════════════════════════════════════════════
# ENTRY POINT
# ════════════════════════════════════════════════════════════

def build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rotorctl", description="Quantum rotor heat engine simulations.")
    p.add_argument("command", choices=["simulate", "steady", "sweep", "driven", "ergotropy", "predict"])
    p.add_argument("--scenario", help="JSON scenario file.")
    p.add_argument("--out", default="out", help="Output directory (default: out).")
    p.add_argument("--workers", type=int, default=None,
                   help="Sweep worker processes (default: ROTOR_WORKERS or 1).")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="Dot-path scenario override, e.g. load.gamma=0.05 (repeatable).")
    p.add_argument("--state", help="RQDM1 state file (ergotropy command).")
    p.add_argument("--inertia", type=float, default=1.0, help="Moment of inertia for ergotropy (default 1).")
    return p


def _require_scenario(args) -> Scenario:
    if not args.scenario:
        raise ConfigurationError("--scenario is required for this command", "scenario")
    return parse_scenario(args.scenario, args.override)


def _dispatch(args) -> int:
    if args.command == "ergotropy":
        if not args.state:
            raise ConfigurationError("--state is required for the ergotropy command", "state")
        rho = load_state(args.state)
        idx = rho.layout.rotor_index()
        if idx is None:
            raise ConfigurationError("state has no rotor factor", "state")
        rotor = rho.layout.factor(idx)
        free = build_free_rotor((rotor.l_min, rotor.l_max), I=args.inertia)
        reduced = rho if len(rho.layout.factors) == 1 else partial_trace(rho, idx)
        result = rotor_ergotropy(free, reduced)
        print(json.dumps(_clean({
            "ergotropy": result.ergotropy,
            "current_energy": result.current_energy,
            "passive_energy": result.passive_energy,
        }), sort_keys=True, indent=2))
        return 0

    s = _require_scenario(args)
    if args.command == "predict":
        if s.params is None:
            raise ConfigurationError("free rotor has no closed-form predictions", "model.kind")
        print(json.dumps(_clean(predictors(s.params, s.load).to_dict()), sort_keys=True, indent=2))
        return 0

    os.makedirs(args.out, exist_ok=True)
    if args.command == "simulate" and s.drive is not None:
        args.command = "driven"
    if args.command == "simulate":
        rows, summary = run_simulation(s)
        write_csv(os.path.join(args.out, "timeseries.csv"), s.outputs, rows)
        write_summary(os.path.join(args.out, "summary.json"), summary)
    elif args.command == "steady":
        report, summary = run_steady(s)
        save_state(report.rho_ss, os.path.join(args.out, "steady_state.rqdm"))
        write_summary(os.path.join(args.out, "summary.json"), summary)
        if not report.converged:
            raise SteadyStateNotConvergedError(
                f"residual {report.residual:.3e} above tol {s.steady_tol:g} at t_max={s.steady_t_max:g}"
            )
    elif args.command == "driven":
        rows, summary = run_driven(s)
        write_csv(os.path.join(args.out, "driven.csv"), DRIVEN_COLUMNS, rows)
        write_summary(os.path.join(args.out, "summary.json"), summary)
    elif args.command == "sweep":
        workers = args.workers if args.workers is not None else config.get_workers()
        rows = run_sweep(s, workers)
        write_csv(os.path.join(args.out, "sweep.csv"), SWEEP_COLUMNS,
                  [[r[c] for c in SWEEP_COLUMNS] for r in rows])
        write_summary(os.path.join(args.out, "summary.json"),
                      {"command": "sweep", "scenario": json.loads(s.canonical()), "rows": rows})
    logger.info(f"[RUN] {args.command} done, outputs in {args.out}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=config.get_log_level(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_arg_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except RotorEngineError as e:
        logger.error(f"[RUN] {args.command} failed: {type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
