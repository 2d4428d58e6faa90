"""
═══════════════════════════════════════════════════════════
METRICS — work, ergotropy, heat and closed-form predictions
═══════════════════════════════════════════════════════════
Four rotor work measures (autonomous models):
    kinetic    tr[(L̂²/2I)·𝓛ρ]                       stored kinetic energy rate
    intrinsic  ⟨{L̂, F̂}⟩/2I                          work of the torque
    net        (⟨L̂⟩/I)·(⟨F̂⟩ + Σ_bath ⟨𝓓_bath† L̂⟩)     rate of ⟨L̂⟩²/2I (load drift optional)
    ergotropy  of the reduced rotor state against L̂²/2I

kinetic − intrinsic = Σ_ch ⟨𝓓_ch† L̂²⟩/2I (backaction diffusion; zero for the mill
because its dissipators do not touch the rotor).

Driven mode uses the clock angle ωt: Ẇ = ω⟨F̂(ωt)⟩, Q̇ = tr[ρ̇ H(t)], so that
Q(t) − W(t) = ⟨H(t)⟩ − ⟨H(0)⟩.

Exported:
    WorkRecord, PassiveDecomposition, PredictorSet, HeatFlows, DrivenAccounting,
    CycleRecord, CycleSummary
    kinetic_power, intrinsic_power, net_kinetic_power, backaction_diffusion
    ergotropy, rotor_ergotropy, ergotropy_boost_bound, ergotropy_rate
    output_power, output_power_explicit, heat_flows
    driven_work_rate, driven_heat_rate, driven_energy, driven_work_heat, cycle_summary,
    DRIVEN_ACCUMULATORS
    ideal_cycle_work, excitation_profile, predictors, tv_derivative
    work_record, work_record_sample
═══════════════════════════════════════════════════════════
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import qutip
from scipy import integrate as sp_integrate
from scipy import linalg as sp_linalg
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, cg

import config
from engines import (
    BathLabel, LoadParams, MillParams, ModelSpec, PistonParams, channel_apply,
    adjoint_channel_apply, coupling_value, kick_rate,
)
from errors import ConfigurationError, InputError, StateValidityError
from qspace import (
    DensityMatrix, Operator, Oscillator, angular_momentum_op, number_op, partial_trace,
)
from dynamics import edge_population
from shared_constants import (
    HERMITICITY_TOL, LOAD_CHECK_TOL, MIN_SAMPLES_PER_CYCLE, NEGATIVITY_TOL, SIMPSON_PANELS,
    TV_ALPHA_SCALE, TV_DENSE_LIMIT, TV_EPSILON, TV_MAX_ITER, TV_MIN_SAMPLES, TV_REL_CHANGE,
)

logger = logging.getLogger(__name__)

State = Union[DensityMatrix, np.ndarray]


def _data(rho: State) -> np.ndarray:
    return rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)


def _ev(rho: np.ndarray, op: np.ndarray) -> float:
    """Re tr(ρ·op)."""
    return float(np.real(np.einsum("ij,ji->", rho, op)))


def _require_rotor(m: ModelSpec, what: str):
    if m.rotor_index is None:
        raise ConfigurationError(f"{what} needs an autonomous model with a rotor", m.kind)


# ════════════════════════════════════════════════════════════
# WORK MEASURES
# ════════════════════════════════════════════════════════════

def kinetic_power(m: ModelSpec, rho: State, drho: Optional[np.ndarray] = None) -> float:
    """tr[(L̂²/2I)·𝓛ρ] with the full generator."""
    _require_rotor(m, "kinetic power")
    data = _data(rho)
    if drho is None:
        drho = m.generator.apply(data, 0.0)
    return _ev(drho, m.kinetic.data)


def intrinsic_power(m: ModelSpec, rho: State) -> float:
    """⟨{L̂, F̂}⟩/2I."""
    _require_rotor(m, "intrinsic power")
    data = _data(rho)
    L = m.angular_momentum.data
    F = m.torque.data
    return _ev(data, L @ F + F @ L) / (2.0 * m.I)


def _channel_drift(m: ModelSpec, data: np.ndarray, include_load: bool = False) -> float:
    L = m.angular_momentum
    total = 0.0
    for ch in m.channels:
        if ch.bath_label == BathLabel.LOAD and not include_load:
            continue
        total += _ev(data, adjoint_channel_apply(ch, L).data)
    return total


def net_kinetic_power(m: ModelSpec, rho: State, include_load: bool = False) -> float:
    """(⟨L̂⟩/I)·⟨F̂ + Σ_bath 𝓓†L̂⟩; include_load=True adds the load drift."""
    _require_rotor(m, "net kinetic power")
    data = _data(rho)
    l_mean = _ev(data, m.angular_momentum.data)
    if l_mean == 0.0:
        return 0.0
    force = _ev(data, m.torque.data) + _channel_drift(m, data, include_load)
    return l_mean / m.I * force


def backaction_diffusion(m: ModelSpec, rho: State) -> float:
    """Σ_bath ⟨𝓓†(L̂²/2I)⟩: the kinetic power not produced by the torque."""
    _require_rotor(m, "backaction diffusion")
    data = _data(rho)
    total = 0.0
    for ch in m.bath_channels():
        total += _ev(data, adjoint_channel_apply(ch, m.kinetic).data)
    return total


# ════════════════════════════════════════════════════════════
# ERGOTROPY
# ════════════════════════════════════════════════════════════

@dataclass
class PassiveDecomposition:
    rho_eigs: np.ndarray          # descending
    energies: np.ndarray          # ascending
    passive_energy: float
    current_energy: float

    @property
    def ergotropy(self) -> float:
        return self.current_energy - self.passive_energy


def ergotropy(rho_reduced: DensityMatrix, H: Operator) -> PassiveDecomposition:
    """Maximal unitary work: tr(ρH) − Σ ε_n↑ p_n↓."""
    if rho_reduced.layout != H.layout:
        raise ConfigurationError("state and Hamiltonian layouts differ", "ergotropy")
    defect = rho_reduced.hermiticity_defect()
    if defect > HERMITICITY_TOL:
        raise StateValidityError(f"ergotropy needs a Hermitian state (defect {defect:.3e})")
    if not H.is_hermitian():
        raise ConfigurationError("ergotropy needs a Hermitian Hamiltonian", "ergotropy")
    dims = rho_reduced.layout.qutip_dims
    rho_q = qutip.Qobj(0.5 * (rho_reduced.data + rho_reduced.data.conj().T), dims=dims)
    h_q = qutip.Qobj(0.5 * (H.data + H.data.conj().T), dims=dims)
    p = np.real(rho_q.eigenenergies(sort="high"))
    if p[-1] < -NEGATIVITY_TOL:
        raise StateValidityError(f"ergotropy needs a positive state (eigenvalue {p[-1]:.3e})")
    eps = np.real(h_q.eigenenergies(sort="low"))
    return PassiveDecomposition(
        rho_eigs=p,
        energies=eps,
        passive_energy=float(np.dot(eps, p)),
        current_energy=float(qutip.expect(h_q, rho_q)),
    )


def rotor_ergotropy(m: ModelSpec, rho: DensityMatrix) -> PassiveDecomposition:
    """Ergotropy of the reduced rotor state against L̂²/2I."""
    _require_rotor(m, "rotor ergotropy")
    reduced = rho if len(m.layout.factors) == 1 else partial_trace(rho, m.rotor_index)
    L = angular_momentum_op(reduced.layout, 0, hbar=m.hbar)
    return ergotropy(reduced, (L @ L) * (1.0 / (2.0 * m.I)))


def ergotropy_boost_bound(L_mean: float, I: float = 1.0, hbar: Optional[float] = None) -> float:
    """max_k (ħk⟨L̂⟩ − ħ²k²/2)/I over integer k: energy removed by the shift e^{−ikφ̂}."""
    hb = config.get_hbar() if hbar is None else hbar
    x = L_mean / hb
    best = 0.0
    for k in (math.floor(x), math.ceil(x)):
        best = max(best, (hb * k * L_mean - 0.5 * hb * hb * k * k) / I)
    return best


def ergotropy_rate(series: Sequence[float], times: Sequence[float],
                   alpha: Optional[float] = None) -> np.ndarray:
    """TV-regularized time derivative of a sampled ergotropy series."""
    return tv_derivative(series, times, alpha)


# ════════════════════════════════════════════════════════════
# LOAD & HEAT
# ════════════════════════════════════════════════════════════

def _load(m: ModelSpec):
    ch = m.load_channel()
    if ch is None:
        raise ConfigurationError("output power needs a load channel", "load")
    return ch


def output_power_explicit(m: ModelSpec, rho: State) -> float:
    """γ⟨L̂²/I − k_BT_R − (ħ²/16Ik_BT_R)(L̂²/I − Ĥ_int)⟩."""
    _load(m)
    data = _data(rho)
    gamma = m.bookkeeping["load_gamma"]
    T = m.bookkeeping["load_T_R"]
    l2_over_i = 2.0 * _ev(data, m.kinetic.data)
    h_int = _ev(data, m.interaction.data)
    corr = m.hbar ** 2 / (16.0 * m.I * T)
    return gamma * (l2_over_i - T - corr * (l2_over_i - h_int))


def output_power(m: ModelSpec, rho: State) -> float:
    """−tr{[L̂²/2I + Ĥ_int]·𝓛_R ρ}, cross-checked against the explicit form."""
    ch = _load(m)
    data = _data(rho)
    value = -_ev(channel_apply(ch, data), (m.kinetic + m.interaction).data)
    explicit = output_power_explicit(m, data)
    if abs(value - explicit) > LOAD_CHECK_TOL * max(1.0, abs(value)):
        logger.warning(f"[LOAD_CHECK] trace form {value:.12g} vs explicit {explicit:.12g} "
                       f"(edge population too large?)")
    return value


class HeatFlows(NamedTuple):
    q_hot: float
    q_cold: float
    efficiency: float      # (Ẇ_out/Q̇_hot) in units of κ/ω₀; NaN without a load


def heat_flows(m: ModelSpec, rho: State, full: bool = False, t: float = 0.0) -> HeatFlows:
    """Per-bath heat rates tr{Ĥ₀𝓛_jρ}; full=True uses Ĥ₀ + H(t) instead of Ĥ₀."""
    data = _data(rho)
    angle = m.angle_at(t)
    rates = {}
    for ch in m.bath_channels():
        if ch.bookkeeping_hamiltonian is None:
            raise ConfigurationError("heat flows need bookkeeping Ĥ₀ metadata", m.kind)
        h = ch.bookkeeping_hamiltonian
        if full:
            h = h + m.hamiltonian_at(t)
        rates[ch.bath_label] = _ev(channel_apply(ch, data, angle), h.data)
    if BathLabel.HOT not in rates:
        raise ConfigurationError("heat flows need a hot bath channel", m.kind)
    q_hot = rates[BathLabel.HOT]
    q_cold = rates.get(BathLabel.COLD, 0.0)
    efficiency = float("nan")
    if m.load_channel() is not None and q_hot != 0.0:
        w_out = output_power(m, data)
        kappa = getattr(m.params, "kappa", float("nan"))
        efficiency = (w_out / q_hot) * m.bookkeeping["hot"] / kappa
    return HeatFlows(q_hot, q_cold, efficiency)


# ════════════════════════════════════════════════════════════
# WORK RECORD
# ════════════════════════════════════════════════════════════

@dataclass
class WorkRecord:
    t: float
    L_mean: float
    L2_mean: float
    W_kin_rate: float
    W_int_rate: float
    W_net_rate: float
    ergotropy: float
    ergotropy_rate: float = float("nan")
    W_out_rate: float = float("nan")
    Q_hot_rate: float = float("nan")
    Q_cold_rate: float = float("nan")
    excitation: float = float("nan")
    edge_lo: float = float("nan")
    edge_hi: float = float("nan")
    trace_err: float = float("nan")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _excitation(m: ModelSpec, data: np.ndarray) -> float:
    fluids = m.layout.fluid_indices()
    if not fluids:
        return float("nan")
    return _ev(data, number_op(m.layout, fluids[0]).data)


def work_record(m: ModelSpec, t: float, rho: DensityMatrix) -> WorkRecord:
    """Every rotor metric at one sample (ergotropy_rate is filled after the run)."""
    _require_rotor(m, "work record")
    data = rho.data
    drho = m.generator.apply(data, 0.0)
    L = m.angular_momentum.data
    q_hot = q_cold = w_out = float("nan")
    if m.load_channel() is not None:
        w_out = output_power(m, data)
    if any(ch.bookkeeping_hamiltonian is not None for ch in m.bath_channels()):
        flows = heat_flows(m, data)
        q_hot, q_cold = flows.q_hot, flows.q_cold
    lo, hi = edge_population(data, m.layout)
    return WorkRecord(
        t=float(t),
        L_mean=_ev(data, L),
        L2_mean=_ev(data, L @ L),
        W_kin_rate=kinetic_power(m, data, drho),
        W_int_rate=intrinsic_power(m, data),
        W_net_rate=net_kinetic_power(m, data, include_load=True),
        ergotropy=rotor_ergotropy(m, rho).ergotropy,
        W_out_rate=w_out,
        Q_hot_rate=q_hot,
        Q_cold_rate=q_cold,
        excitation=_excitation(m, data),
        edge_lo=lo,
        edge_hi=hi,
        trace_err=float(abs(np.trace(data) - 1.0)),
    )


def work_record_sample(m: ModelSpec, t: float, rho: DensityMatrix) -> Dict[str, float]:
    """Observer hook for dynamics.integrate."""
    row = work_record(m, t, rho).to_dict()
    row.pop("t")
    return row


# ════════════════════════════════════════════════════════════
# DRIVEN MODE
# ════════════════════════════════════════════════════════════

def _require_drive(m: ModelSpec):
    if m.drive is None:
        raise ConfigurationError("driven-mode quantity requested for an autonomous model", m.kind)


def driven_work_rate(m: ModelSpec, t: float, rho: State) -> float:
    """Ẇ = ω⟨F̂(ωt)⟩ (positive = work delivered to the drive)."""
    _require_drive(m)
    return m.drive.omega * _ev(_data(rho), m.torque_at(t).data)


def driven_energy(m: ModelSpec, t: float, rho: State) -> float:
    _require_drive(m)
    return _ev(_data(rho), m.hamiltonian_at(t).data)


def driven_heat_rate(m: ModelSpec, t: float, rho: State, drho: Optional[np.ndarray] = None) -> float:
    """Q̇ = tr[ρ̇·H(t)]."""
    _require_drive(m)
    data = _data(rho)
    if drho is None:
        drho = m.generator.apply(data, t)
    return _ev(drho, m.hamiltonian_at(t).data)


def _work_hook(m: ModelSpec, t: float, rho: np.ndarray, drho: np.ndarray) -> float:
    return driven_work_rate(m, t, rho)


def _heat_hook(m: ModelSpec, t: float, rho: np.ndarray, drho: np.ndarray) -> float:
    return driven_heat_rate(m, t, rho, drho)


# integrated on the RK4 stages by dynamics.integrate(accumulators=...)
DRIVEN_ACCUMULATORS = {"W": _work_hook, "Q": _heat_hook}


@dataclass
class DrivenAccounting:
    times: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    energy: np.ndarray
    work_rate: np.ndarray
    heat_rate: np.ndarray

    @property
    def first_law_defect(self) -> np.ndarray:
        return self.Q - self.W - (self.energy - self.energy[0])


def _cumulative(y: np.ndarray, x: np.ndarray, rule: str) -> np.ndarray:
    if rule == "simpson":
        if len(x) < 3:
            return sp_integrate.cumulative_trapezoid(y, x, initial=0.0)
        return sp_integrate.cumulative_simpson(y, x=x, initial=0.0)
    if rule == "trapezoid":
        return sp_integrate.cumulative_trapezoid(y, x, initial=0.0)
    raise ConfigurationError(f"unknown quadrature rule {rule!r}", "rule")


def driven_work_heat(m: ModelSpec, times: Sequence[float], states: Sequence[DensityMatrix],
                     rule: str = "simpson") -> DrivenAccounting:
    """Cumulative W(t) and Q(t) from a sampled trajectory."""
    _require_drive(m)
    t = np.asarray(times, dtype=float)
    if len(t) != len(states):
        raise InputError(f"{len(t)} times for {len(states)} states")
    if len(t) < 2:
        raise InputError("driven accounting needs at least two samples")
    omega = m.drive.omega
    if omega != 0.0:
        period = 2.0 * np.pi / abs(omega)
        per_cycle = period / float(np.mean(np.diff(t)))
        if per_cycle < MIN_SAMPLES_PER_CYCLE:
            logger.warning(f"[DRIVEN] {per_cycle:.0f} samples per cycle < {MIN_SAMPLES_PER_CYCLE}; "
                           f"first-law defect will grow")
    work_rate = np.array([driven_work_rate(m, ti, s) for ti, s in zip(t, states)])
    heat_rate = np.array([driven_heat_rate(m, ti, s) for ti, s in zip(t, states)])
    energy = np.array([driven_energy(m, ti, s) for ti, s in zip(t, states)])
    return DrivenAccounting(
        times=t,
        W=_cumulative(work_rate, t, rule),
        Q=_cumulative(heat_rate, t, rule),
        energy=energy,
        work_rate=work_rate,
        heat_rate=heat_rate,
    )


@dataclass
class CycleRecord:
    index: int
    t_start: float
    t_end: float
    work: float
    heat: float
    delta_energy: float

    @property
    def defect(self) -> float:
        return self.heat - self.work - self.delta_energy


@dataclass
class CycleSummary:
    period: float
    cycles: List[CycleRecord] = field(default_factory=list)

    @property
    def stationary_power(self) -> float:
        """Work per period of the last complete cycle."""
        if not self.cycles:
            return float("nan")
        return self.cycles[-1].work / self.period

    @property
    def max_defect(self) -> float:
        """Largest |Q − W − ΔE| over all cycles after the first."""
        later = self.cycles[1:]
        return max((abs(c.defect) for c in later), default=float("nan"))


def cycle_summary(times: Sequence[float], W: Sequence[float], Q: Sequence[float],
                  E: Sequence[float], omega: float) -> CycleSummary:
    """Per-cycle work, heat and first-law defect at t = kτ (interpolated between samples)."""
    if omega == 0:
        raise ConfigurationError("cycle summary needs a non-zero drive frequency", "drive.omega")
    t = np.asarray(times, dtype=float)
    period = 2.0 * np.pi / abs(omega)
    n_cycles = int(np.floor((t[-1] - t[0]) / period + 1e-9))
    bounds = t[0] + period * np.arange(n_cycles + 1)
    w = np.interp(bounds, t, W)
    q = np.interp(bounds, t, Q)
    e = np.interp(bounds, t, E)
    summary = CycleSummary(period=period)
    for k in range(n_cycles):
        summary.cycles.append(CycleRecord(
            index=k,
            t_start=float(bounds[k]),
            t_end=float(bounds[k + 1]),
            work=float(w[k + 1] - w[k]),
            heat=float(q[k + 1] - q[k]),
            delta_energy=float(e[k + 1] - e[k]),
        ))
    return summary


# ════════════════════════════════════════════════════════════
# CLOSED FORMS
# ════════════════════════════════════════════════════════════

def excitation_profile(p: Union[PistonParams, MillParams], phi):
    """Angle-conditioned fluid steady state: qubit p(φ) or oscillator n_ho(φ)."""
    fh2 = coupling_value("hot", phi) ** 2
    fc2 = coupling_value("cold", phi) ** 2
    num = p.n_hot * fh2 + p.n_cold * fc2
    if isinstance(p.fluid, Oscillator):
        return num / (fh2 + fc2)
    return num / ((2 * p.n_hot + 1) * fh2 + (2 * p.n_cold + 1) * fc2)


def _sin_moment(p) -> float:
    """∫₀^{2π} p(φ) sin φ dφ by composite Simpson."""
    phi = np.linspace(0.0, 2.0 * np.pi, SIMPSON_PANELS + 1)
    return float(sp_integrate.simpson(excitation_profile(p, phi) * np.sin(phi), x=phi))


def ideal_cycle_work(p: PistonParams, hbar: Optional[float] = None) -> float:
    """ħg∫p(φ) sin φ dφ: quasistatic work per cycle, independent of ω."""
    hb = config.get_hbar() if hbar is None else hbar
    return hb * p.g * _sin_moment(p)


@dataclass
class PredictorSet:
    xi: float = float("nan")
    dLdt_mill: float = float("nan")
    dVarLdt_mill: float = float("nan")
    net_power_slope: float = float("nan")
    t_snr: float = float("nan")
    L_ss: float = float("nan")
    VarL_ss: float = float("nan")
    dLdt_piston: float = float("nan")
    ideal_cycle_work: float = float("nan")
    G_match: float = float("nan")
    G_match_coeff: float = float("nan")
    g_osc_match: float = float("nan")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def predictors(params: Union[MillParams, PistonParams], load: Optional[LoadParams] = None,
               hbar: Optional[float] = None) -> PredictorSet:
    hbar = config.get_hbar() if hbar is None else hbar
    out = PredictorSet()
    dn = params.n_hot - params.n_cold
    spread = 2 * params.n_hot * params.n_cold + params.n_hot + params.n_cold
    out.g_osc_match = 2 * params.n_hot + 1
    if isinstance(params, MillParams):
        xi = kick_rate(params)
        out.xi = xi
        out.dLdt_mill = hbar * xi * dn
        out.dVarLdt_mill = hbar ** 2 * xi * spread
        out.net_power_slope = hbar ** 2 * xi ** 2 * dn ** 2 / params.I
        out.t_snr = spread / (xi * dn ** 2) if dn != 0 else float("inf")
        if load is not None:
            load.validate()
            if load.gamma > 0:
                out.L_ss = hbar * xi * dn / load.gamma
                out.VarL_ss = hbar ** 2 * xi * spread / (2.0 * load.gamma) + params.I * load.T_R
            else:
                out.L_ss = out.VarL_ss = float("inf")
        return out
    if isinstance(params, PistonParams):
        moment = _sin_moment(params)
        out.dLdt_piston = hbar * params.g * moment / (2.0 * np.pi)
        out.ideal_cycle_work = hbar * params.g * moment
        if dn == 0:
            raise ConfigurationError("coupling match undefined for n_hot == n_cold (no gain)", "n_hot")
        denom = (params.kappa * (params.n_hot + params.n_cold + 1)
                 * (2 * params.n_hot + 1) * (2 * params.n_cold + 1))
        out.G_match = float(np.sqrt(denom * params.g * moment / (4.0 * np.pi * dn)))
        out.G_match_coeff = out.G_match / float(np.sqrt(params.g * params.kappa))
        return out
    raise ConfigurationError(f"no predictors for {type(params).__name__}", "model")


# ════════════════════════════════════════════════════════════
# TV-REGULARIZED DIFFERENTIATION
# ════════════════════════════════════════════════════════════

def _antiderivative_matrix(n: int, h: float) -> np.ndarray:
    # trapezoid cumulative integral, row 0 zero
    a = np.tril(np.ones((n, n))) - 0.5 * np.eye(n)
    a[:, 0] -= 0.5
    return h * a


def tv_derivative(samples: Sequence[float], times: Sequence[float],
                  alpha: Optional[float] = None) -> np.ndarray:
    """
    Derivative u minimizing α·Σ|u_{i+1} − u_i| + ½·h·Σ(∫u − (f − f₀))²,
    by lagged diffusivity with ε-smoothed |·|.

    Dense solves up to TV_DENSE_LIMIT samples, conjugate gradients above.
    """
    f = np.asarray(samples, dtype=float)
    t = np.asarray(times, dtype=float)
    n = len(f)
    if n < TV_MIN_SAMPLES:
        raise InputError(f"TV derivative needs >= {TV_MIN_SAMPLES} samples, got {n}")
    if len(t) != n:
        raise InputError(f"{len(t)} times for {n} samples")
    steps = np.diff(t)
    h = float(steps[0])
    if h <= 0 or not np.allclose(steps, h, rtol=1e-9, atol=0.0):
        raise InputError("TV derivative needs uniformly spaced, increasing times")
    if alpha is None:
        alpha = TV_ALPHA_SCALE * float(np.ptp(f))
    if alpha < 0:
        raise InputError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        alpha = TV_ALPHA_SCALE

    g = f - f[0]
    D = sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")
    dense = n <= TV_DENSE_LIMIT
    if dense:
        A = _antiderivative_matrix(n, h)
        AtA = h * (A.T @ A)
        Atg = h * (A.T @ g)

        def a_op(x):
            return A @ x
    else:
        def a_op(x):
            return h * (np.cumsum(x) - 0.5 * (x + x[0]))

        def at_op(y):
            out = np.cumsum(y[::-1])[::-1] - 0.5 * y
            out[0] -= 0.5 * y.sum()
            return h * out

        Atg = h * at_op(g)

    u = np.gradient(f, h)
    for _ in range(TV_MAX_ITER):
        w = 1.0 / np.sqrt((D @ u) ** 2 + TV_EPSILON)
        Lw = (D.T @ sparse.diags(w) @ D).tocsr()
        if dense:
            grad = alpha * (Lw @ u) + AtA @ u - Atg
            if not np.any(grad):
                break
            s = sp_linalg.solve(alpha * Lw.toarray() + AtA, grad, assume_a="sym")
        else:
            grad = alpha * (Lw @ u) + h * at_op(a_op(u)) - Atg
            if not np.any(grad):
                break
            op = LinearOperator((n, n), matvec=lambda x, Lw=Lw: alpha * (Lw @ x) + h * at_op(a_op(x)),
                                dtype=float)
            s, _ = cg(op, grad, rtol=1e-10, maxiter=10 * n)
        u = u - s
        u_norm = np.linalg.norm(u)
        change = np.linalg.norm(s) / u_norm if u_norm > 0 else np.linalg.norm(s)
        if change < TV_REL_CHANGE:
            break
    return u
