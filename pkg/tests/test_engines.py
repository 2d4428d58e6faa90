"""Tests for engine model builders and superoperators."""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

import numpy as np
import pytest

from engines import (
    BathLabel, LoadParams, MillParams, ModelSpec, PistonParams, attach_load, build_effective_mill,
    build_free_rotor, build_load_channel, build_mill, build_piston, build_thermal_channel,
    adjoint_channel_apply, channel_apply, coupling_coeffs, coupling_value, default_initial_state,
    driven_model, kick_rate, liouvillian_apply,
)
from errors import ConfigurationError, LayoutError
from qspace import (
    Operator, Oscillator, Qubit, Rotor, SpaceLayout, angle_poly_op, expectation, fluid_gibbs,
    identity_op, number_op, partial_trace, random_density_matrix,
)


def _mill(**kw):
    base = dict(G=10.0, kappa=10.0, n_hot=1.0, n_cold=0.0, rotor=(-3, 3))
    base.update(kw)
    return MillParams(**base)


def _piston(**kw):
    base = dict(g=1.0, kappa=1.0, n_hot=1.0, n_cold=0.0, rotor=(-3, 3))
    base.update(kw)
    return PistonParams(**base)


# ════════════════════════════════════════════════════════════
# PARAMETERS
# ════════════════════════════════════════════════════════════

def test_negative_kappa_names_key():
    with pytest.raises(ConfigurationError) as exc:
        _mill(kappa=-1.0).validate()
    assert exc.value.key_path == "kappa"


def test_mill_needs_hot_above_cold():
    with pytest.raises(ConfigurationError) as exc:
        _mill(n_hot=0.0, n_cold=1.0).validate()
    assert exc.value.key_path == "n_hot"


def test_rotor_window_too_small():
    with pytest.raises(ConfigurationError) as exc:
        _piston(rotor=(0, 1)).validate()
    assert exc.value.key_path == "rotor"


def test_zero_coupling_allowed():
    m = build_mill(_mill(G=0.0))
    assert np.count_nonzero(m.interaction.data) == 0


def test_load_needs_positive_temperature():
    with pytest.raises(ConfigurationError):
        LoadParams(gamma=0.1, T_R=0.0).validate()


def test_kick_rate_value():
    p = _mill(G=10.0, kappa=50.0)
    assert abs(kick_rate(p) - 2.0 / 3.0) < 1e-14


def test_coupling_profiles():
    assert coupling_value("hot", np.pi / 2) == 1.0
    assert coupling_value("cold", np.pi / 2) == 0.0
    assert coupling_value("hot", 0.0) == 0.5


# ════════════════════════════════════════════════════════════
# CHANNELS
# ════════════════════════════════════════════════════════════

def test_qubit_gibbs_is_fixed_point():
    layout = SpaceLayout((Qubit(),))
    ch = build_thermal_channel(layout, 0, 1.0, 1.0, BathLabel.HOT)
    out = channel_apply(ch, fluid_gibbs(Qubit(), 1.0))
    assert np.abs(out).max() < 1e-15


def test_oscillator_gibbs_is_fixed_point():
    layout = SpaceLayout((Oscillator(7),))
    ch = build_thermal_channel(layout, 0, 2.0, 0.8, BathLabel.COLD)
    out = channel_apply(ch, fluid_gibbs(Oscillator(7), 0.8))
    assert np.abs(out).max() < 1e-13


def test_channels_preserve_trace():
    m = attach_load(build_piston(_piston()), LoadParams(gamma=0.1, T_R=2.0))
    ident = identity_op(m.layout)
    for ch in m.channels:
        assert np.abs(adjoint_channel_apply(ch, ident).data).max() < 1e-13


def test_load_weight():
    layout = SpaceLayout((Rotor(-2, 2),))
    ch = build_load_channel(LoadParams(gamma=0.3, T_R=2.0), layout, 0, I=1.5, hbar=1.0)
    weights = [w for w, _ in ch.lindblad_ops]
    assert np.allclose(weights, [2.0 * 2.0 * 1.5 * 0.3] * 2)
    assert ch.bath_label == BathLabel.LOAD


def test_adjoint_layout_checked():
    m = build_piston(_piston())
    with pytest.raises(LayoutError):
        adjoint_channel_apply(m.channels[0], identity_op(SpaceLayout((Qubit(),))))


# ════════════════════════════════════════════════════════════
# MODELS
# ════════════════════════════════════════════════════════════

def test_mill_layout_and_channels():
    m = build_mill(_mill())
    assert m.layout.descriptor() == "rotor -3 3 qubit qubit"
    assert m.hamiltonian.is_hermitian()
    assert [ch.bath_label for ch in m.channels] == [BathLabel.HOT, BathLabel.COLD]
    assert m.load_channel() is None


def test_piston_oscillator_fluid():
    m = build_piston(_piston(fluid=Oscillator(5)))
    assert m.layout.dims == (7, 6)


def test_liouvillian_preserves_trace_and_hermiticity():
    m = attach_load(build_mill(_mill(delta=0.4)), LoadParams(gamma=0.2, T_R=1.0))
    rho = random_density_matrix(m.layout, np.random.default_rng(1))
    drho = liouvillian_apply(m, rho)
    assert abs(np.trace(drho)) < 1e-11
    assert np.abs(drho - drho.conj().T).max() < 1e-11


def test_liouvillian_rejects_foreign_state():
    m = build_mill(_mill())
    rho = random_density_matrix(SpaceLayout((Rotor(-3, 3), Qubit())), np.random.default_rng(0))
    with pytest.raises(LayoutError):
        liouvillian_apply(m, rho)


def test_non_hermitian_hamiltonian_rejected():
    layout = SpaceLayout((Rotor(-1, 1),))
    bad = Operator(layout, np.triu(np.ones((3, 3))))
    zero = Operator(layout, np.zeros((3, 3)))
    with pytest.raises(ConfigurationError):
        ModelSpec(layout=layout, hamiltonian=bad, channels=(), torque=zero, interaction=zero,
                  kind="custom")


def test_effective_mill_restrictions():
    with pytest.raises(ConfigurationError):
        build_effective_mill(_mill(delta=1.0))
    with pytest.raises(ConfigurationError):
        build_effective_mill(_mill(fluid=Oscillator(3)))


def test_effective_mill_rates():
    m = build_effective_mill(_mill(G=10.0, kappa=50.0, n_hot=2.0, n_cold=1.0))
    xi = kick_rate(m.params)
    up, down = m.channels
    assert abs(up.lindblad_ops[0][0] - xi * 2.0 * 2.0) < 1e-14
    assert abs(down.lindblad_ops[0][0] - xi * 1.0 * 3.0) < 1e-14


def test_attach_load_rules():
    m = attach_load(build_free_rotor((-5, 5)), LoadParams(gamma=0.1, T_R=1.0))
    assert m.load_channel() is not None
    assert m.bookkeeping["load_gamma"] == 0.1
    with pytest.raises(ConfigurationError):
        attach_load(m, LoadParams(gamma=0.1, T_R=1.0))
    driven = driven_model(build_piston(_piston()), omega=1.0)
    with pytest.raises(ConfigurationError):
        attach_load(driven, LoadParams(gamma=0.1, T_R=1.0))


def test_default_initial_state_mill():
    m = build_mill(_mill(n_hot=1.0, n_cold=0.0))
    rho = default_initial_state(m)
    rho.validate(check_positivity=True)
    hot = partial_trace(rho, 1)
    assert abs(hot.data[1, 1].real - 1.0 / 3.0) < 1e-14
    rotor = partial_trace(rho, 0)
    assert rotor.data[3, 3].real == 1.0


# ════════════════════════════════════════════════════════════
# DRIVEN MODE
# ════════════════════════════════════════════════════════════

def test_driven_piston_removes_rotor():
    m = driven_model(build_piston(_piston()), omega=0.5, phase=0.2)
    assert m.layout.descriptor() == "qubit"
    assert m.rotor_index is None
    assert m.is_time_dependent
    assert m.kind == "driven_piston"
    assert abs(m.angle_at(2.0) - 1.2) < 1e-15


def test_frozen_drive_is_static():
    m = driven_model(build_mill(_mill()), omega=0.0, phase=1.0)
    assert m.layout.descriptor() == "qubit qubit"
    assert not m.is_time_dependent


def test_driven_interaction_follows_clock():
    p = _piston(g=2.0)
    m = driven_model(build_piston(p), omega=1.0)
    n = number_op(m.layout, 0).data
    assert np.allclose(m.interaction_at(0.0).data, 2.0 * n)
    assert np.allclose(m.torque_at(np.pi / 2).data, 2.0 * n)


def test_driven_hot_only_at_quarter_turn():
    m = driven_model(build_piston(_piston()), omega=0.0, phase=np.pi / 2)
    hot, cold = m.channels
    assert np.allclose(hot.weights_at(np.pi / 2), [2.0, 1.0])
    assert np.allclose(cold.weights_at(np.pi / 2), [0.0, 0.0], atol=1e-30)


def test_cannot_drive_effective_mill():
    with pytest.raises(ConfigurationError):
        driven_model(build_effective_mill(_mill()), omega=1.0)


def test_driven_mill_excitation_exchange():
    """At fixed angle the exchange term conserves n_H + n_C."""
    m = driven_model(build_mill(_mill()), omega=0.0, phase=0.7)
    total = number_op(m.layout, 0) + number_op(m.layout, 1)
    h = m.hamiltonian_at(0.0)
    assert np.abs((h @ total - total @ h).data).max() < 1e-13
    rho = default_initial_state(m)
    assert abs(expectation(rho, number_op(m.layout, 0)).real - 1.0 / 3.0) < 1e-14


# ════════════════════════════════════════════════════════════
# STRUCTURAL IDENTITIES
# ════════════════════════════════════════════════════════════

def test_adjoint_generator_duality():
    """tr(X·𝓛ρ) = tr(𝓛†[X]·ρ) with 𝓛†X = (i/ħ)[Ĥ, X] + Σ 𝓓†X."""
    m = attach_load(build_mill(_mill(delta=0.4)), LoadParams(gamma=0.2, T_R=1.0))
    rng = np.random.default_rng(2024)
    h = m.hamiltonian.data
    d = m.layout.dim
    for _ in range(50):
        rho = random_density_matrix(m.layout, rng)
        a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        X = Operator(m.layout, a + a.conj().T)
        lhs = np.trace(X.data @ liouvillian_apply(m, rho))
        adj = 1j / m.hbar * (h @ X.data - X.data @ h)
        for ch in m.channels:
            adj = adj + adjoint_channel_apply(ch, X).data
        rhs = np.trace(adj @ rho.data)
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_mill_conserves_momentum_plus_hot_excitations():
    m = build_mill(_mill(delta=0.4))
    conserved = m.angular_momentum + number_op(m.layout, 1) * m.hbar
    for h in (m.interaction, m.hamiltonian):
        comm = h @ conserved - conserved @ h
        assert np.abs(comm.data).max() < 1e-12


def test_piston_couplings_sum_to_one():
    layout = SpaceLayout((Rotor(-4, 4),))
    f_hot = angle_poly_op(layout, 0, coupling_coeffs("hot"))
    f_cold = angle_poly_op(layout, 0, coupling_coeffs("cold"))
    assert np.abs((f_hot + f_cold).data - identity_op(layout).data).max() < 1e-15
    phi = np.linspace(0.0, 2 * np.pi, 37)
    assert np.allclose(coupling_value("hot", phi) + coupling_value("cold", phi), 1.0)


@pytest.mark.parametrize("n_hot,n_cold", [(1.0, 1.0), (2.0, 1.0)])
def test_effective_mill_drift_is_gain(n_hot, n_cold):
    """Away from the window edges Σ 𝓓†L̂ = ħξ(n̄_H − n̄_C); symmetric baths give no drift."""
    m = build_effective_mill(_mill(G=10.0, kappa=50.0, n_hot=n_hot, n_cold=n_cold))
    drift = sum(adjoint_channel_apply(ch, m.angular_momentum).data for ch in m.channels)
    expected = m.hbar * kick_rate(m.params) * (n_hot - n_cold)
    inner = drift[1:-1, 1:-1]
    assert np.allclose(inner, expected * np.eye(inner.shape[0]), atol=1e-13)


if __name__ == "__main__":
    import pytest
    pytest.main([__file__, "-v"])
