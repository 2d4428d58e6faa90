"""
═══════════════════════════════════════════════════════════
QSPACE — operator algebra on truncated rotor/qubit/oscillator spaces
═══════════════════════════════════════════════════════════
Composite index is row-major over factors in declaration order; the rotor
basis is ordered by ascending ℓ, the qubit basis is (ground, excited) and the
oscillator basis is |0⟩..|n_max⟩.  e^{±iφ̂} annihilates edge states (hard
truncation, no periodic wrapping).

Elementary operators and states are built with qutip (destroy, num, qdiags,
tensor, thermal_dm, fock_dm) and kept as dense arrays for the matrix-free
integrators; qobj() hands them back to qutip for ptrace, expect and eigenenergies.

Exported:
    Rotor, Qubit, Oscillator, SpaceLayout, Operator, DensityMatrix
    angular_momentum_op, shift_op, angle_poly_op, qubit_lowering_op,
    oscillator_lowering_op, lowering_op, number_op, identity_op, zero_op, embed
    partial_trace, expectation
    angle_symbol, multiply_coeffs
    basis_state, product_state, fluid_gibbs, random_density_matrix
═══════════════════════════════════════════════════════════
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import qutip

import config
from errors import LayoutError, StateValidityError
from shared_constants import HERMITICITY_TOL, NEGATIVITY_TOL, TRACE_TOL

logger = logging.getLogger(__name__)


def _hbar(hbar: Optional[float]) -> float:
    return config.get_hbar() if hbar is None else float(hbar)


# ════════════════════════════════════════════════════════════
# FACTORS & LAYOUT
# ════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class Rotor:
    """Planar rotor truncated to l_min <= ℓ <= l_max."""
    l_min: int
    l_max: int

    def __post_init__(self):
        if not (self.l_min <= 0 <= self.l_max):
            raise LayoutError(
                f"rotor range [{self.l_min}, {self.l_max}] must contain ℓ=0"
            )

    @property
    def dim(self) -> int:
        return self.l_max - self.l_min + 1

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.l_min, self.l_max + 1)

    def index_of(self, ell: int) -> int:
        if not (self.l_min <= ell <= self.l_max):
            raise LayoutError(f"ℓ={ell} outside rotor range [{self.l_min}, {self.l_max}]")
        return ell - self.l_min

    def descriptor(self) -> str:
        return f"rotor {self.l_min} {self.l_max}"


@dataclass(frozen=True)
class Qubit:
    """Two-level working fluid, basis (ground, excited)."""

    @property
    def dim(self) -> int:
        return 2

    def descriptor(self) -> str:
        return "qubit"


@dataclass(frozen=True)
class Oscillator:
    """Harmonic working fluid truncated at n_max."""
    n_max: int

    def __post_init__(self):
        if self.n_max < 0:
            raise LayoutError(f"oscillator cutoff n_max={self.n_max} must be >= 0")

    @property
    def dim(self) -> int:
        return self.n_max + 1

    def descriptor(self) -> str:
        return f"oscillator {self.n_max}"


Factor = Union[Rotor, Qubit, Oscillator]


@dataclass(frozen=True)
class SpaceLayout:
    factors: Tuple[Factor, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise LayoutError("layout needs at least one factor")
        for f in self.factors:
            if not isinstance(f, (Rotor, Qubit, Oscillator)):
                raise LayoutError(f"unknown factor descriptor {f!r}")

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(f.dim for f in self.factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def qutip_dims(self):
        return [list(self.dims), list(self.dims)]

    def factor(self, index: int) -> Factor:
        if not (0 <= index < len(self.factors)):
            raise LayoutError(f"factor index {index} out of range for {len(self.factors)} factors")
        return self.factors[index]

    def rotor_index(self) -> Optional[int]:
        for i, f in enumerate(self.factors):
            if isinstance(f, Rotor):
                return i
        return None

    def fluid_indices(self) -> Tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.factors) if isinstance(f, (Qubit, Oscillator)))

    def descriptor(self) -> str:
        """Space-separated factor descriptors, e.g. 'rotor -50 250 qubit qubit'."""
        return " ".join(f.descriptor() for f in self.factors)

    @classmethod
    def from_descriptor(cls, text: str) -> "SpaceLayout":
        tokens = text.split()
        factors = []
        i = 0
        try:
            while i < len(tokens):
                tok = tokens[i]
                if tok == "rotor":
                    factors.append(Rotor(int(tokens[i + 1]), int(tokens[i + 2])))
                    i += 3
                elif tok == "qubit":
                    factors.append(Qubit())
                    i += 1
                elif tok == "oscillator":
                    factors.append(Oscillator(int(tokens[i + 1])))
                    i += 2
                else:
                    raise LayoutError(f"unknown factor token {tok!r}")
        except (IndexError, ValueError) as e:
            raise LayoutError(f"malformed layout descriptor {text!r}: {e}") from e
        return cls(tuple(factors))


def _require(layout: SpaceLayout, index: int, kind) -> Factor:
    f = layout.factor(index)
    if not isinstance(f, kind):
        raise LayoutError(f"factor {index} is {type(f).__name__}, expected {kind.__name__}")
    return f


# ════════════════════════════════════════════════════════════
# OPERATOR & DENSITY MATRIX
# ════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class Operator:
    layout: SpaceLayout
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.shape != (self.layout.dim, self.layout.dim):
            raise LayoutError(
                f"operator shape {data.shape} does not match layout dim {self.layout.dim}"
            )
        object.__setattr__(self, "data", data)

    def _check(self, other: "Operator"):
        if other.layout != self.layout:
            raise LayoutError(
                f"layout mismatch: '{self.layout.descriptor()}' vs '{other.layout.descriptor()}'"
            )

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.layout, self.data @ other.data)

    def __add__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.layout, self.data + other.data)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.layout, self.data - other.data)

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.layout, self.data * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "Operator":
        return Operator(self.layout, -self.data)

    def dag(self) -> "Operator":
        return Operator(self.layout, self.data.conj().T)

    def qobj(self) -> qutip.Qobj:
        return qutip.Qobj(self.data, dims=self.layout.qutip_dims)

    def hermiticity_defect(self) -> float:
        """||A - A^dag||_F / ||A||_F (0 for the zero operator)."""
        norm = np.linalg.norm(self.data)
        if norm == 0.0:
            return 0.0
        return float(np.linalg.norm(self.data - self.data.conj().T) / norm)

    def is_hermitian(self, tol: float = HERMITICITY_TOL) -> bool:
        return self.hermiticity_defect() <= tol


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    layout: SpaceLayout
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.shape != (self.layout.dim, self.layout.dim):
            raise LayoutError(
                f"state shape {data.shape} does not match layout dim {self.layout.dim}"
            )
        object.__setattr__(self, "data", data)

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def qobj(self) -> qutip.Qobj:
        return qutip.Qobj(self.data, dims=self.layout.qutip_dims)

    def hermiticity_defect(self) -> float:
        norm = np.linalg.norm(self.data)
        if norm == 0.0:
            return 0.0
        return float(np.linalg.norm(self.data - self.data.conj().T) / norm)

    def min_eigenvalue(self) -> float:
        herm = 0.5 * (self.data + self.data.conj().T)
        return float(np.linalg.eigvalsh(herm)[0])

    def validate(self, check_positivity: bool = False,
                 negativity_tol: float = NEGATIVITY_TOL) -> "DensityMatrix":
        """Raise StateValidityError unless Hermitian, unit trace and (optionally) positive."""
        defect = self.hermiticity_defect()
        if defect > HERMITICITY_TOL:
            raise StateValidityError(f"state not Hermitian: defect {defect:.3e}")
        tr = self.trace()
        if abs(tr - 1.0) > TRACE_TOL:
            raise StateValidityError(f"state trace {tr.real:.12g}{tr.imag:+.3e}j differs from 1")
        if check_positivity:
            lam = self.min_eigenvalue()
            if lam < -negativity_tol:
                raise StateValidityError(f"state not positive: smallest eigenvalue {lam:.3e}")
        return self


# ════════════════════════════════════════════════════════════
# ELEMENTARY OPERATORS
# ════════════════════════════════════════════════════════════

def _as_qobj(local) -> qutip.Qobj:
    return local if isinstance(local, qutip.Qobj) else qutip.Qobj(np.asarray(local, dtype=complex))


def embed(layout: SpaceLayout, index: int, local) -> Operator:
    """Tensor a single-factor operator (Qobj or array) with identities elsewhere."""
    f = layout.factor(index)
    local = _as_qobj(local)
    if local.shape != (f.dim, f.dim):
        raise LayoutError(f"local matrix {local.shape} does not fit factor {index} (dim {f.dim})")
    parts = [local if i == index else qutip.qeye(d) for i, d in enumerate(layout.dims)]
    return Operator(layout, qutip.tensor(parts).full())


def identity_op(layout: SpaceLayout) -> Operator:
    return Operator(layout, qutip.tensor([qutip.qeye(d) for d in layout.dims]).full())


def zero_op(layout: SpaceLayout) -> Operator:
    return Operator(layout, np.zeros((layout.dim, layout.dim), dtype=complex))


def angular_momentum_op(layout: SpaceLayout, rotor_index: int,
                        hbar: Optional[float] = None) -> Operator:
    """L̂ = Σ ħℓ |ℓ⟩⟨ℓ| on the addressed rotor."""
    rotor = _require(layout, rotor_index, Rotor)
    return embed(layout, rotor_index, qutip.qdiags(_hbar(hbar) * rotor.levels.astype(float), 0))


def _local_shift(rotor: Rotor, k: int) -> qutip.Qobj:
    # |ℓ⟩ -> |ℓ+k⟩ when both are inside the window
    if abs(k) >= rotor.dim:
        return qutip.qzero(rotor.dim)
    return qutip.qdiags(np.ones(rotor.dim - abs(k)), -k)


def shift_op(layout: SpaceLayout, rotor_index: int, k: int) -> Operator:
    """e^{ikφ̂} with hard truncation."""
    rotor = _require(layout, rotor_index, Rotor)
    return embed(layout, rotor_index, _local_shift(rotor, int(k)))


def angle_poly_op(layout: SpaceLayout, rotor_index: int,
                  coeffs: Dict[int, complex]) -> Operator:
    """Trigonometric polynomial Σ_k c_k e^{ikφ̂}."""
    rotor = _require(layout, rotor_index, Rotor)
    local = qutip.qzero(rotor.dim)
    for k, c in coeffs.items():
        if c != 0:
            local = local + c * _local_shift(rotor, int(k))
    return embed(layout, rotor_index, local)


def angle_symbol(coeffs: Dict[int, complex], phi: float) -> complex:
    """Classical value Σ_k c_k e^{ikφ}."""
    return complex(sum(c * np.exp(1j * k * phi) for k, c in coeffs.items()))


def multiply_coeffs(a: Dict[int, complex], b: Dict[int, complex]) -> Dict[int, complex]:
    """Coefficient convolution: the exact (untruncated) product of two angle polynomials."""
    out: Dict[int, complex] = {}
    for ka, ca in a.items():
        for kb, cb in b.items():
            out[ka + kb] = out.get(ka + kb, 0.0) + ca * cb
    return {k: c for k, c in out.items() if c != 0}


# Frequently used angle polynomials
COS = {1: 0.5, -1: 0.5}
SIN = {1: -0.5j, -1: 0.5j}


def qubit_lowering_op(layout: SpaceLayout, qubit_index: int) -> Operator:
    """σ̂⁻ in basis (ground, excited); σ̂⁺σ̂⁻ is the excited projector."""
    _require(layout, qubit_index, Qubit)
    return embed(layout, qubit_index, qutip.destroy(2))


def oscillator_lowering_op(layout: SpaceLayout, osc_index: int) -> Operator:
    """â with ⟨n−1|â|n⟩ = √n, hard truncation at n_max."""
    osc = _require(layout, osc_index, Oscillator)
    return embed(layout, osc_index, qutip.destroy(osc.dim))


def lowering_op(layout: SpaceLayout, index: int) -> Operator:
    f = layout.factor(index)
    if isinstance(f, Qubit):
        return qubit_lowering_op(layout, index)
    if isinstance(f, Oscillator):
        return oscillator_lowering_op(layout, index)
    raise LayoutError(f"factor {index} is a rotor, no lowering operator")


def number_op(layout: SpaceLayout, index: int) -> Operator:
    f = layout.factor(index)
    if isinstance(f, Rotor):
        raise LayoutError(f"factor {index} is a rotor, no number operator")
    return embed(layout, index, qutip.num(f.dim))


# ════════════════════════════════════════════════════════════
# STATES
# ════════════════════════════════════════════════════════════

def basis_state(layout: SpaceLayout, levels: Sequence[int]) -> DensityMatrix:
    """Pure product basis state; rotor entries are ℓ values, fluid entries are occupations."""
    if len(levels) != len(layout.factors):
        raise LayoutError(f"need {len(layout.factors)} levels, got {len(levels)}")
    parts = []
    for f, lev in zip(layout.factors, levels):
        if isinstance(f, Rotor):
            idx = f.index_of(int(lev))
        else:
            if not (0 <= lev < f.dim):
                raise LayoutError(f"level {lev} outside {f.descriptor()}")
            idx = int(lev)
        parts.append(qutip.fock_dm(f.dim, idx))
    return DensityMatrix(layout, qutip.tensor(parts).full())


def product_state(layout: SpaceLayout, locals_: Iterable) -> DensityMatrix:
    mats = [_as_qobj(m) for m in locals_]
    if len(mats) != len(layout.factors):
        raise LayoutError(f"need {len(layout.factors)} local states, got {len(mats)}")
    for f, m in zip(layout.factors, mats):
        if m.shape != (f.dim, f.dim):
            raise LayoutError(f"local state {m.shape} does not fit {f.descriptor()}")
    return DensityMatrix(layout, qutip.tensor(mats).full())


def fluid_gibbs(factor: Factor, n_bar: float) -> np.ndarray:
    """Thermal state with mean occupation n̄ (renormalized on a truncated oscillator)."""
    if isinstance(factor, Rotor):
        raise LayoutError("Gibbs state requested for a rotor factor")
    if n_bar == 0:
        return qutip.fock_dm(factor.dim, 0).full()
    rho = qutip.thermal_dm(factor.dim, n_bar)
    return (rho / rho.tr()).full()


def random_density_matrix(layout: SpaceLayout, rng: np.random.Generator,
                          rank: Optional[int] = None,
                          support: Optional[np.ndarray] = None) -> DensityMatrix:
    """Random full-rank (or given rank) state; `support` masks allowed basis indices."""
    n = layout.dim
    r = n if rank is None else rank
    g = rng.normal(size=(n, r)) + 1j * rng.normal(size=(n, r))
    if support is not None:
        g = g * np.asarray(support, dtype=float)[:, None]
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    return DensityMatrix(layout, rho)


# ════════════════════════════════════════════════════════════
# REDUCTION & EXPECTATION
# ════════════════════════════════════════════════════════════

def partial_trace(rho: DensityMatrix, keep: int) -> DensityMatrix:
    """Reduced state on one factor."""
    f = rho.layout.factor(keep)
    reduced = rho.qobj().ptrace(keep)
    return DensityMatrix(SpaceLayout((f,)), reduced.full())


def expectation(rho: DensityMatrix, op: Operator) -> complex:
    """tr(ρ·op)."""
    if rho.layout != op.layout:
        raise LayoutError(
            f"layout mismatch: state '{rho.layout.descriptor()}' vs operator '{op.layout.descriptor()}'"
        )
    return complex(qutip.expect(op.qobj(), rho.qobj()))
