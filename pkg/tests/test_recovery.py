import numpy as np
import pytest
from scipy.linalg import expm

from qunravel import operators as ops
from qunravel.equations import CanonicalMasterEquation, canonical_equation, integrate_density
from qunravel.errors import NegativeRateError
from qunravel.recovery import (build_reversal, excited_state, recover_by_embedding,
                               recover_by_martingale, recovery_series_by_embedding,
                               recovery_superoperator, round_trip, thermal_qubit_equation)
from qunravel.unraveling import simulate_trajectory

from conftest import SEED

H0 = 0.5 * ops.SIGMA_Z + 0.3 * ops.SIGMA_X


def unitary_equation():
    return CanonicalMasterEquation.build(H0, [ops.SIGMA_PLUS, ops.SIGMA_MINUS], [0.0, 0.0],
                                         povm_constant=1.0, canonical=False)


def test_thermal_reversal_rates():
    setup = build_reversal(thermal_qubit_equation(), 0.0, 1.0)
    c = 0.2 * np.e
    for t in (0.0, 0.37, 1.0):
        assert setup.c(t) == pytest.approx(c, rel=1e-14)
        assert np.allclose(setup.paired_rates(t), [c - 0.1, c - 0.1 * np.e], rtol=1e-14)
        assert np.allclose(setup.reversed.rates(t), [-0.1, -0.1 * np.e])
    assert c == pytest.approx(0.5436563657, abs=1e-10)
    assert np.allclose(setup.paired_rates(0.0), [0.44365637, 0.27182818], atol=1e-8)


def test_reversed_hamiltonian_is_mirrored():
    me = thermal_qubit_equation()
    setup = build_reversal(me, 0.0, 1.0)
    for t in (0.0, 0.2, 0.9):
        assert np.allclose(setup.reversed.hamiltonian(t), -me.hamiltonian(1.0 - t))


def test_reversed_equation_is_completely_bounded():
    setup = build_reversal(thermal_qubit_equation(), 0.0, 1.0)
    assert all(setup.reversed.rates(t).min() < 0 for t in np.linspace(0, 1, 11))
    r = np.array([setup.paired_rates(t) for t in np.linspace(0, 1, 11)])
    assert r.min() >= 0


def test_negative_forward_rate_rejected():
    me = canonical_equation(H0, [0.1, -0.1, 0.2])
    with pytest.raises(NegativeRateError):
        build_reversal(me, 0.0, 1.0)


def test_incomplete_povm_rejected():
    me = CanonicalMasterEquation.build(H0, [ops.SIGMA_MINUS], [0.1], povm_constant=1.0,
                                       canonical=False)
    with pytest.raises(ValueError):
        build_reversal(me, 0.0, 1.0)


def test_high_temperature_identity():
    me = canonical_equation(np.zeros((2, 2)), [1.0, 1.0, 1.0])
    setup = build_reversal(me, 0.0, 1.0)
    assert np.allclose(setup.paired_rates(0.5), 1.0)
    g = me.povm_constant
    for i in range(5):
        tr = simulate_trajectory(setup.pairing, np.array([1.0, 0.0]), 0.0, 1.0, 1e-3, SEED, index=i)
        ratio = tr.mu / tr.lam
        assert np.max(np.abs(ratio / np.exp(2 * g * tr.times) - 1)) <= 1e-10


def test_zero_duration_window():
    rho = ops.random_density(2, np.random.default_rng(SEED))
    assert np.array_equal(recover_by_embedding(thermal_qubit_equation(), rho, 0.5, 0.5), rho)
    assert np.allclose(recovery_superoperator(thermal_qubit_equation(), 0.5, 0.5), np.eye(4))


def test_unitary_recovery(rng):
    me = unitary_equation()
    U = expm(-1j * H0 * 0.8)
    rho0 = ops.random_density(2, rng)
    rho1 = U @ rho0 @ U.conj().T
    assert np.allclose(recover_by_embedding(me, rho1, 0.0, 0.8, 1e-3), rho0, atol=1e-10)
    # a pure input makes every path identical
    psi = ops.random_state(2, rng)
    pure1 = U @ np.outer(psi, psi.conj()) @ U.conj().T
    est = recover_by_martingale(me, pure1, 0.0, 0.8, 1e-3, 20, SEED, n_record=4)
    assert np.all(est.mu_mean == 1.0)
    assert np.allclose(est.rho_hat[-1], np.outer(psi, psi.conj()), atol=1e-10)


def test_thermal_qubit_recovery():
    me = thermal_qubit_equation()
    rho0 = excited_state()
    rho1 = integrate_density(me, rho0, 0.0, 1.0, 1e-4).final
    series = recovery_series_by_embedding(me, rho1, 0.0, 1.0, 1e-4, every=1000)
    assert ops.hs_distance(series.final, rho0) <= 1e-5
    assert series.min_eigenvalue >= -1e-10
    # intermediate readouts retrace the forward path
    fwd = integrate_density(me, rho0, 0.0, 1.0, 1e-4, every=1000).states
    assert np.max(np.abs(series.states - fwd[::-1])) <= 1e-5


def test_recovery_is_state_independent(rng):
    me = thermal_qubit_equation()
    R = recovery_superoperator(me, 0.0, 1.0, 1e-3)
    P = ops.propagator(me, 0.0, 1.0, 1e-3)
    assert np.max(np.abs(R @ P - np.eye(4))) <= 1e-6
    for _ in range(5):
        rho0 = ops.random_density(2, rng)
        rho1 = ops.apply_superoperator(P, rho0)
        assert ops.hs_distance(ops.apply_superoperator(R, rho1), rho0) <= 1e-6


def test_round_trip():
    rt = round_trip(thermal_qubit_equation(), 0.0, 1.0, 1e-3)
    assert rt.deviation <= 1e-7
    assert 1.0 < rt.condition < 10.0


def test_martingale_se_scaling():
    me = thermal_qubit_equation()
    rho1 = integrate_density(me, excited_state(), 0.0, 1.0, 1e-4).final
    se = []
    for n in (1_000, 10_000, 100_000):
        est = recover_by_martingale(me, rho1, 0.0, 1.0, 2e-3, n, SEED, n_record=2)
        se.append(np.max(est.se_rho_hat[-1]))
    ratios = np.array(se[:-1]) / np.array(se[1:])
    assert np.all((ratios > np.sqrt(10) / 2) & (ratios < 2 * np.sqrt(10)))
