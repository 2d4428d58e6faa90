"""
═══════════════════════════════════════════════════════════
ENGINES — rotor engine models as Hamiltonian + Lindblad channels
═══════════════════════════════════════════════════════════
Models are written in the frame rotating with the bare fluid frequency
(ω_C for the mill, ω₀ for the piston), so Ĥ₀ never enters the simulated
Hamiltonian; it is kept as bookkeeping metadata for heat flows only.

Dissipator pairing: the lowering (emission) operator carries κ(n̄+1) and the
raising (absorption) operator carries κn̄, so that every bath channel frozen at
a fixed angle has the fluid Gibbs state as its fixed point.

The Liouvillian is applied matrix-free with left/right dense products:
    dρ/dt = −i(H_eff ρ − ρ H_eff†) + Σ w AρA†,   H_eff = H/ħ − (i/2) Σ w A†A

Exported:
    BathLabel, ThermalChannel, MillParams, PistonParams, LoadParams, Drive, ModelSpec
    build_mill, build_piston, build_effective_mill, build_free_rotor
    build_load_channel, build_thermal_channel, attach_load
    driven_model, default_initial_state, kick_rate, coupling_coeffs
    liouvillian_apply, channel_apply, adjoint_channel_apply
═══════════════════════════════════════════════════════════
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property, partial
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import qutip

import config
from errors import ConfigurationError, LayoutError
from qspace import (
    COS, SIN, DensityMatrix, Operator, Oscillator, Qubit, Rotor, SpaceLayout,
    angle_poly_op, angular_momentum_op, fluid_gibbs,
    identity_op, lowering_op, number_op, product_state, shift_op, zero_op,
)
from shared_constants import (
    DEFAULT_ROTOR, HAMILTONIAN_HERMITICITY_TOL, MIN_ROTOR_SPAN,
)

logger = logging.getLogger(__name__)

Fluid = Union[Qubit, Oscillator]


# ════════════════════════════════════════════════════════════
# PARAMETERS
# ════════════════════════════════════════════════════════════

def _non_negative(name: str, value: float):
    if not np.isfinite(value) or value < 0:
        raise ConfigurationError(f"must be a finite number >= 0, got {value}", name)


def _positive(name: str, value: float):
    if not np.isfinite(value) or value <= 0:
        raise ConfigurationError(f"must be a finite number > 0, got {value}", name)


def _check_rotor(rotor: Tuple[int, int]):
    l_min, l_max = int(rotor[0]), int(rotor[1])
    if not (l_min <= 0 <= l_max):
        raise ConfigurationError(f"range [{l_min}, {l_max}] must contain ℓ=0", "rotor")
    if l_max - l_min < MIN_ROTOR_SPAN:
        raise ConfigurationError(
            f"range [{l_min}, {l_max}] too small (need l_max - l_min >= {MIN_ROTOR_SPAN})", "rotor"
        )


@dataclass(frozen=True)
class MillParams:
    """Two-fluid mill: hot and cold modes exchange excitations through the rotor at rate G."""
    G: float
    kappa: float
    n_hot: float
    n_cold: float
    delta: float = 0.0
    omega0: float = 100.0
    rotor: Tuple[int, int] = DEFAULT_ROTOR
    I: float = 1.0
    fluid: Fluid = field(default_factory=Qubit)

    def validate(self) -> "MillParams":
        _non_negative("G", self.G)
        _non_negative("kappa", self.kappa)
        _non_negative("n_cold", self.n_cold)
        _non_negative("n_hot", self.n_hot)
        if self.n_hot < self.n_cold:
            raise ConfigurationError(
                f"engine operation needs n_hot >= n_cold, got {self.n_hot} < {self.n_cold}", "n_hot"
            )
        _positive("I", self.I)
        _positive("omega0", self.omega0)
        if not np.isfinite(self.delta):
            raise ConfigurationError("must be finite", "delta")
        _check_rotor(self.rotor)
        return self


@dataclass(frozen=True)
class PistonParams:
    """Single-fluid piston with angle-modulated hot/cold couplings."""
    g: float
    kappa: float
    n_hot: float
    n_cold: float
    fluid: Fluid = field(default_factory=Qubit)
    omega0: float = 100.0
    rotor: Tuple[int, int] = DEFAULT_ROTOR
    I: float = 1.0

    def validate(self) -> "PistonParams":
        _non_negative("g", self.g)
        _non_negative("kappa", self.kappa)
        _non_negative("n_hot", self.n_hot)
        _non_negative("n_cold", self.n_cold)
        _positive("I", self.I)
        _positive("omega0", self.omega0)
        _check_rotor(self.rotor)
        return self


@dataclass(frozen=True)
class LoadParams:
    """Dissipative rotor load: damping rate γ and temperature k_B·T_R [ħ²/I]."""
    gamma: float
    T_R: float

    def validate(self) -> "LoadParams":
        _non_negative("gamma", self.gamma)
        _positive("T_R", self.T_R)
        return self


def kick_rate(p: MillParams) -> float:
    """ξ = 2G² / [κ(n̄_H+n̄_C+1)(2n̄_H+1)(2n̄_C+1)]."""
    if p.kappa <= 0:
        raise ConfigurationError("kick rate needs kappa > 0", "kappa")
    denom = p.kappa * (p.n_hot + p.n_cold + 1) * (2 * p.n_hot + 1) * (2 * p.n_cold + 1)
    return 2.0 * p.G ** 2 / denom


def coupling_coeffs(bath: str) -> Dict[int, complex]:
    """f_H = (1 + sin φ)/2 and f_C = (1 − sin φ)/2 as e^{ikφ} coefficients."""
    sign = 1.0 if bath == "hot" else -1.0
    return {0: 0.5, 1: sign * SIN[1] / 2, -1: sign * SIN[-1] / 2}


def coupling_value(bath: str, phi: float) -> float:
    sign = 1.0 if bath == "hot" else -1.0
    return 0.5 * (1.0 + sign * np.sin(phi))


def _coupling_squared(bath: str, phi: float) -> float:
    return coupling_value(bath, phi) ** 2


# ════════════════════════════════════════════════════════════
# CHANNELS & MODEL SPEC
# ════════════════════════════════════════════════════════════

class BathLabel(str, Enum):
    HOT = "hot"
    COLD = "cold"
    LOAD = "load"


@dataclass(frozen=True, eq=False)
class ThermalChannel:
    """Weighted Lindblad operators of one bath. `angle_profile` scales all weights in driven mode."""
    lindblad_ops: Tuple[Tuple[float, Operator], ...]
    bath_label: BathLabel
    bookkeeping_hamiltonian: Optional[Operator] = None
    angle_profile: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        object.__setattr__(self, "lindblad_ops", tuple(self.lindblad_ops))
        for w, op in self.lindblad_ops:
            if w < 0 or not np.isfinite(w):
                raise ConfigurationError(f"rate weight {w} must be finite and >= 0",
                                         f"{self.bath_label.value}")
        layouts = {op.layout for _, op in self.lindblad_ops}
        if len(layouts) > 1:
            raise LayoutError(f"{self.bath_label.value} channel mixes layouts")

    @property
    def layout(self) -> Optional[SpaceLayout]:
        return self.lindblad_ops[0][1].layout if self.lindblad_ops else None

    def weights_at(self, angle: Optional[float]) -> List[float]:
        scale = 1.0
        if self.angle_profile is not None and angle is not None:
            scale = float(self.angle_profile(angle))
        return [w * scale for w, _ in self.lindblad_ops]


@dataclass(frozen=True)
class Drive:
    """External clock replacing the rotor: φ → ωt + phase."""
    omega: float
    phase: float
    h_int_of_angle: Callable[[float], Operator]
    torque_of_angle: Callable[[float], Operator]

    def angle(self, t: float) -> float:
        return self.omega * t + self.phase


@dataclass(frozen=True, eq=False)
class ModelSpec:
    layout: SpaceLayout
    hamiltonian: Operator
    channels: Tuple[ThermalChannel, ...]
    torque: Operator
    interaction: Operator
    kind: str
    params: Any = None
    kinetic: Optional[Operator] = None
    drive: Optional[Drive] = None
    bookkeeping: Dict[str, float] = field(default_factory=dict)
    hbar: float = 1.0
    I: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        defect = self.hamiltonian.hermiticity_defect()
        if defect > HAMILTONIAN_HERMITICITY_TOL:
            raise ConfigurationError(f"Hamiltonian not Hermitian (defect {defect:.2e})", self.kind)
        has_rotor = self.layout.rotor_index() is not None
        if has_rotor == (self.drive is not None):
            raise ConfigurationError(
                "model needs exactly one of a rotor factor or an external drive", self.kind
            )
        for ch in self.channels:
            if ch.layout is not None and ch.layout != self.layout:
                raise LayoutError(f"{ch.bath_label.value} channel layout differs from model layout")

    @property
    def rotor_index(self) -> Optional[int]:
        return self.layout.rotor_index()

    @property
    def is_time_dependent(self) -> bool:
        return self.drive is not None and self.drive.omega != 0.0

    def load_channel(self) -> Optional[ThermalChannel]:
        for ch in self.channels:
            if ch.bath_label == BathLabel.LOAD:
                return ch
        return None

    def bath_channels(self) -> Tuple[ThermalChannel, ...]:
        return tuple(ch for ch in self.channels if ch.bath_label != BathLabel.LOAD)

    def angle_at(self, t: float) -> Optional[float]:
        return self.drive.angle(t) if self.drive is not None else None

    def hamiltonian_at(self, t: float) -> Operator:
        if self.drive is None:
            return self.hamiltonian
        return self.hamiltonian + self.drive.h_int_of_angle(self.drive.angle(t))

    def interaction_at(self, t: float) -> Operator:
        if self.drive is None:
            return self.interaction
        return self.drive.h_int_of_angle(self.drive.angle(t))

    def torque_at(self, t: float) -> Operator:
        if self.drive is None:
            return self.torque
        return self.drive.torque_of_angle(self.drive.angle(t))

    @cached_property
    def angular_momentum(self) -> Optional[Operator]:
        if self.rotor_index is None:
            return None
        return angular_momentum_op(self.layout, self.rotor_index, hbar=self.hbar)

    @cached_property
    def generator(self) -> "_Generator":
        return _Generator(self)


class _Generator:
    """Precomputed dense pieces of the Liouvillian; re-entrant, no mutable state after init."""

    def __init__(self, m: ModelSpec):
        self.hbar = m.hbar
        self.drive = m.drive
        self.static_h = m.hamiltonian.data / m.hbar
        d = m.layout.dim
        k_static = np.zeros((d, d), dtype=complex)
        jumps = []
        self.profiled = []
        for ch in m.channels:
            ops = [(w, op.data) for w, op in ch.lindblad_ops if w > 0]
            if not ops:
                continue
            k_ch = sum(w * (a.conj().T @ a) for w, a in ops) * 0.5
            stack = np.array([np.sqrt(w) * a for w, a in ops])
            if ch.angle_profile is None or m.drive is None:
                k_static += k_ch
                jumps.append(stack)
            else:
                self.profiled.append((ch.angle_profile, stack, k_ch))
        self.jumps = np.concatenate(jumps) if jumps else np.zeros((0, d, d), dtype=complex)
        self.jumps_dag = self.jumps.conj().transpose(0, 2, 1)
        self.h_eff_static = self.static_h - 1j * k_static

    def apply(self, rho: np.ndarray, t: float = 0.0) -> np.ndarray:
        h_eff = self.h_eff_static
        extra = None
        if self.drive is not None:
            angle = self.drive.angle(t)
            h_eff = h_eff + self.drive.h_int_of_angle(angle).data / self.hbar
            for profile, stack, k_ch in self.profiled:
                s = float(profile(angle))
                if s == 0.0:
                    continue
                h_eff = h_eff - 1j * s * k_ch
                term = s * np.sum(stack @ rho @ stack.conj().transpose(0, 2, 1), axis=0)
                extra = term if extra is None else extra + term
        # RK stages are not Hermitian, so ρH_eff† is formed explicitly
        out = -1j * (h_eff @ rho - rho @ h_eff.conj().T)
        if len(self.jumps):
            out = out + np.sum(self.jumps @ rho @ self.jumps_dag, axis=0)
        if extra is not None:
            out = out + extra
        return out

    def static_diagonal(self) -> np.ndarray:
        """Diagonal of the static H_eff (coherent energies / ħ minus i·damping)."""
        return np.diag(self.h_eff_static).copy()

    def offdiagonal_norm(self) -> float:
        """Spectral norm of the static H_eff with its diagonal removed."""
        off = self.h_eff_static - np.diag(np.diag(self.h_eff_static))
        return float(np.linalg.norm(off, 2)) if off.size else 0.0


# ════════════════════════════════════════════════════════════
# CHANNEL BUILDERS
# ════════════════════════════════════════════════════════════

def build_thermal_channel(layout: SpaceLayout, fluid_index: int, kappa: float, n_bar: float,
                          label: BathLabel, angle_op: Optional[Operator] = None,
                          bookkeeping_hamiltonian: Optional[Operator] = None,
                          angle_profile: Optional[Callable[[float], float]] = None) -> ThermalChannel:
    """κ(n̄+1)·𝓓[b f] + κn̄·𝓓[b† f]; f defaults to identity."""
    b = lowering_op(layout, fluid_index)
    f = angle_op if angle_op is not None else identity_op(layout)
    ops = (
        (kappa * (n_bar + 1.0), b @ f),
        (kappa * n_bar, b.dag() @ f),
    )
    return ThermalChannel(ops, label, bookkeeping_hamiltonian, angle_profile)


def build_load_channel(p: LoadParams, layout: SpaceLayout, rotor_index: int,
                       I: float = 1.0, hbar: Optional[float] = None) -> ThermalChannel:
    """Rotor damping-diffusion load, operators in the printed order (no symmetrization)."""
    if not (p.T_R > 0) or not np.isfinite(p.T_R):
        raise ConfigurationError(f"load temperature must be > 0, got {p.T_R}", "load.T_R")
    if p.gamma < 0 or not np.isfinite(p.gamma):
        raise ConfigurationError(f"damping rate must be >= 0, got {p.gamma}", "load.gamma")
    hb = config.get_hbar() if hbar is None else hbar
    weight = 2.0 * p.T_R * I * p.gamma / hb ** 2
    L = angular_momentum_op(layout, rotor_index, hbar=hb)
    cos = angle_poly_op(layout, rotor_index, COS)
    sin = angle_poly_op(layout, rotor_index, SIN)
    corr = 1j * hb / (4.0 * p.T_R * I)
    a1 = cos - corr * (sin @ L)
    a2 = sin + corr * (cos @ L)
    return ThermalChannel(((weight, a1), (weight, a2)), BathLabel.LOAD)


# ════════════════════════════════════════════════════════════
# MODEL BUILDERS
# ════════════════════════════════════════════════════════════

def _rotor_basics(layout: SpaceLayout, I: float, hbar: float):
    L = angular_momentum_op(layout, 0, hbar=hbar)
    kinetic = (L @ L) * (1.0 / (2.0 * I))
    return L, kinetic


def build_mill(p: MillParams, hbar: Optional[float] = None) -> ModelSpec:
    """Rotor ⊗ hot fluid ⊗ cold fluid, exchange coupling ħG(b_H b_C† e^{iφ̂} + h.c.)."""
    p.validate()
    hb = config.get_hbar() if hbar is None else hbar
    layout = SpaceLayout((Rotor(*p.rotor), p.fluid, p.fluid))
    _, kinetic = _rotor_basics(layout, p.I, hb)
    b_hot = lowering_op(layout, 1)
    b_cold = lowering_op(layout, 2)
    n_hot = number_op(layout, 1)
    n_cold = number_op(layout, 2)
    x = b_hot @ b_cold.dag() @ shift_op(layout, 0, 1)
    h_int = (x + x.dag()) * (hb * p.G)
    torque = (x - x.dag()) * (-1j * hb * p.G)
    hamiltonian = kinetic + n_hot * (hb * p.delta) + h_int
    h0 = (n_hot + n_cold) * (hb * p.omega0)
    channels = (
        build_thermal_channel(layout, 1, p.kappa, p.n_hot, BathLabel.HOT, bookkeeping_hamiltonian=h0),
        build_thermal_channel(layout, 2, p.kappa, p.n_cold, BathLabel.COLD, bookkeeping_hamiltonian=h0),
    )
    logger.debug(f"[MODEL] mill dim={layout.dim} G={p.G} kappa={p.kappa} delta={p.delta}")
    return ModelSpec(
        layout=layout, hamiltonian=hamiltonian, channels=channels, torque=torque,
        interaction=h_int, kind="mill", params=p, kinetic=kinetic,
        bookkeeping={"hot": p.omega0, "cold": p.omega0}, hbar=hb, I=p.I,
    )


def build_piston(p: PistonParams, hbar: Optional[float] = None) -> ModelSpec:
    """Rotor ⊗ fluid, pressure ħg n̂ cos φ̂ and baths gated by f_H(φ̂), f_C(φ̂)."""
    p.validate()
    hb = config.get_hbar() if hbar is None else hbar
    layout = SpaceLayout((Rotor(*p.rotor), p.fluid))
    _, kinetic = _rotor_basics(layout, p.I, hb)
    n = number_op(layout, 1)
    cos = angle_poly_op(layout, 0, COS)
    sin = angle_poly_op(layout, 0, SIN)
    h_int = (n @ cos) * (hb * p.g)
    torque = (n @ sin) * (hb * p.g)
    h0 = n * (hb * p.omega0)
    f_hot = angle_poly_op(layout, 0, coupling_coeffs("hot"))
    f_cold = angle_poly_op(layout, 0, coupling_coeffs("cold"))
    channels = (
        build_thermal_channel(layout, 1, p.kappa, p.n_hot, BathLabel.HOT, angle_op=f_hot,
                              bookkeeping_hamiltonian=h0),
        build_thermal_channel(layout, 1, p.kappa, p.n_cold, BathLabel.COLD, angle_op=f_cold,
                              bookkeeping_hamiltonian=h0),
    )
    logger.debug(f"[MODEL] piston dim={layout.dim} g={p.g} kappa={p.kappa}")
    return ModelSpec(
        layout=layout, hamiltonian=kinetic + h_int, channels=channels, torque=torque,
        interaction=h_int, kind="piston", params=p, kinetic=kinetic,
        bookkeeping={"hot": p.omega0, "cold": p.omega0}, hbar=hb, I=p.I,
    )


def build_effective_mill(p: MillParams, hbar: Optional[float] = None) -> ModelSpec:
    """Rotor-only kick model obtained after eliminating fast-thermalizing qubits."""
    p.validate()
    if p.delta != 0:
        raise ConfigurationError("effective mill model is only defined at resonance (delta = 0)", "delta")
    if not isinstance(p.fluid, Qubit):
        raise ConfigurationError("effective mill model is derived for a qubit fluid", "fluid")
    hb = config.get_hbar() if hbar is None else hbar
    layout = SpaceLayout((Rotor(*p.rotor),))
    _, kinetic = _rotor_basics(layout, p.I, hb)
    xi = kick_rate(p)
    up = shift_op(layout, 0, 1)
    down = shift_op(layout, 0, -1)
    channels = (
        ThermalChannel(((xi * p.n_hot * (p.n_cold + 1), up),), BathLabel.HOT),
        ThermalChannel(((xi * p.n_cold * (p.n_hot + 1), down),), BathLabel.COLD),
    )
    zero = zero_op(layout)
    logger.debug(f"[MODEL] effective mill dim={layout.dim} xi={xi:.6g}")
    return ModelSpec(
        layout=layout, hamiltonian=kinetic, channels=channels, torque=zero,
        interaction=zero, kind="effective_mill", params=p, kinetic=kinetic, hbar=hb, I=p.I,
    )


def build_free_rotor(rotor: Tuple[int, int] = DEFAULT_ROTOR, I: float = 1.0,
                     hbar: Optional[float] = None) -> ModelSpec:
    _check_rotor(rotor)
    _positive("I", I)
    hb = config.get_hbar() if hbar is None else hbar
    layout = SpaceLayout((Rotor(*rotor),))
    _, kinetic = _rotor_basics(layout, I, hb)
    zero = zero_op(layout)
    return ModelSpec(
        layout=layout, hamiltonian=kinetic, channels=(), torque=zero, interaction=zero,
        kind="free_rotor", params={"rotor": tuple(rotor), "I": I}, kinetic=kinetic, hbar=hb, I=I,
    )


def attach_load(m: ModelSpec, p: LoadParams) -> ModelSpec:
    if m.rotor_index is None:
        raise ConfigurationError("a load needs a rotor; driven models have none", "load")
    if m.load_channel() is not None:
        raise ConfigurationError("model already has a load channel", "load")
    p.validate()
    load = build_load_channel(p, m.layout, m.rotor_index, I=m.I, hbar=m.hbar)
    return replace(m, channels=m.channels + (load,), bookkeeping={**m.bookkeeping, "load_T_R": p.T_R,
                                                                  "load_gamma": p.gamma})


# ════════════════════════════════════════════════════════════
# DRIVEN MODE
# ════════════════════════════════════════════════════════════

def _mill_h_int(x0: Operator, scale: float, phi: float) -> Operator:
    e = np.exp(1j * phi)
    return (x0 * e + x0.dag() * np.conj(e)) * scale


def _mill_torque(x0: Operator, scale: float, phi: float) -> Operator:
    e = np.exp(1j * phi)
    return (x0 * e - x0.dag() * np.conj(e)) * (-1j * scale)


def _piston_h_int(n: Operator, scale: float, phi: float) -> Operator:
    return n * (scale * np.cos(phi))


def _piston_torque(n: Operator, scale: float, phi: float) -> Operator:
    return n * (scale * np.sin(phi))


def driven_model(m: ModelSpec, omega: float, phase: float = 0.0) -> ModelSpec:
    """Replace the rotor by an ideal clock φ = ωt + phase (ω = 0 freezes the angle)."""
    if m.drive is not None:
        raise ConfigurationError("model is already driven", "drive")
    if m.kind not in ("mill", "piston"):
        raise ConfigurationError(f"cannot drive a {m.kind} model", "drive")
    if not np.isfinite(omega):
        raise ConfigurationError("drive frequency must be finite", "drive.omega")
    hb = m.hbar
    p = m.params
    if m.kind == "mill":
        layout = SpaceLayout((p.fluid, p.fluid))
        b_hot = lowering_op(layout, 0)
        b_cold = lowering_op(layout, 1)
        n_hot = number_op(layout, 0)
        n_cold = number_op(layout, 1)
        x0 = b_hot @ b_cold.dag()
        h_of = partial(_mill_h_int, x0, hb * p.G)
        f_of = partial(_mill_torque, x0, hb * p.G)
        static = n_hot * (hb * p.delta)
        h0 = (n_hot + n_cold) * (hb * p.omega0)
        channels = (
            build_thermal_channel(layout, 0, p.kappa, p.n_hot, BathLabel.HOT, bookkeeping_hamiltonian=h0),
            build_thermal_channel(layout, 1, p.kappa, p.n_cold, BathLabel.COLD, bookkeeping_hamiltonian=h0),
        )
    else:
        layout = SpaceLayout((p.fluid,))
        n = number_op(layout, 0)
        h_of = partial(_piston_h_int, n, hb * p.g)
        f_of = partial(_piston_torque, n, hb * p.g)
        static = zero_op(layout)
        h0 = n * (hb * p.omega0)
        channels = (
            build_thermal_channel(layout, 0, p.kappa, p.n_hot, BathLabel.HOT, bookkeeping_hamiltonian=h0,
                                  angle_profile=partial(_coupling_squared, "hot")),
            build_thermal_channel(layout, 0, p.kappa, p.n_cold, BathLabel.COLD, bookkeeping_hamiltonian=h0,
                                  angle_profile=partial(_coupling_squared, "cold")),
        )
    drive = Drive(omega=float(omega), phase=float(phase), h_int_of_angle=h_of, torque_of_angle=f_of)
    logger.debug(f"[MODEL] driven {m.kind} omega={omega} phase={phase}")
    return ModelSpec(
        layout=layout, hamiltonian=static, channels=channels, torque=zero_op(layout),
        interaction=zero_op(layout), kind=f"driven_{m.kind}", params=p, drive=drive,
        bookkeeping=dict(m.bookkeeping), hbar=hb, I=m.I,
    )


# ════════════════════════════════════════════════════════════
# INITIAL STATE
# ════════════════════════════════════════════════════════════

def default_initial_state(m: ModelSpec) -> DensityMatrix:
    """Rotor at rest |ℓ=0⟩ ⊗ fluid Gibbs states (mill: own bath each; piston: φ=0 average)."""
    p = m.params
    locals_ = []
    fluid_count = 0
    for f in m.layout.factors:
        if isinstance(f, Rotor):
            locals_.append(qutip.fock_dm(f.dim, f.index_of(0)))
            continue
        if m.kind.endswith("mill"):
            n_bar = p.n_hot if fluid_count == 0 else p.n_cold
        else:
            n_bar = 0.5 * (p.n_hot + p.n_cold)
        locals_.append(fluid_gibbs(f, n_bar))
        fluid_count += 1
    return product_state(m.layout, locals_)


# ════════════════════════════════════════════════════════════
# SUPEROPERATORS
# ════════════════════════════════════════════════════════════

def _check_state(m: ModelSpec, rho):
    layout = getattr(rho, "layout", None)
    if layout is not None and layout != m.layout:
        raise LayoutError(
            f"state layout '{layout.descriptor()}' does not match model '{m.layout.descriptor()}'"
        )


def liouvillian_apply(m: ModelSpec, rho: Union[DensityMatrix, np.ndarray], t: float = 0.0) -> np.ndarray:
    """dρ/dt of the full master equation (never builds a dim²×dim² superoperator)."""
    _check_state(m, rho)
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    if data.shape != (m.layout.dim, m.layout.dim):
        raise LayoutError(f"state shape {data.shape} does not match model dim {m.layout.dim}")
    return m.generator.apply(data, t)


def channel_apply(ch: ThermalChannel, rho: Union[DensityMatrix, np.ndarray],
                  angle: Optional[float] = None) -> np.ndarray:
    """Σ w (AρA† − ½{A†A, ρ}) for one channel (Schrödinger picture)."""
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    if isinstance(rho, DensityMatrix) and ch.layout is not None and rho.layout != ch.layout:
        raise LayoutError("channel and state layouts differ")
    out = np.zeros_like(data, dtype=complex)
    for w, (_, op) in zip(ch.weights_at(angle), ch.lindblad_ops):
        if w == 0:
            continue
        a = op.data
        ad = a.conj().T
        ada = ad @ a
        out += w * (a @ data @ ad - 0.5 * (ada @ data + data @ ada))
    return out


def adjoint_channel_apply(ch: ThermalChannel, X: Operator, angle: Optional[float] = None) -> Operator:
    """Σ w (A†XA − ½{A†A, X}) (Heisenberg picture)."""
    if ch.layout is not None and X.layout != ch.layout:
        raise LayoutError(
            f"operator layout '{X.layout.descriptor()}' does not match channel '{ch.layout.descriptor()}'"
        )
    out = np.zeros_like(X.data)
    for w, (_, op) in zip(ch.weights_at(angle), ch.lindblad_ops):
        if w == 0:
            continue
        a = op.data
        ad = a.conj().T
        ada = ad @ a
        out += w * (ad @ X.data @ a - 0.5 * (ada @ X.data + X.data @ ada))
    return Operator(X.layout, out)
