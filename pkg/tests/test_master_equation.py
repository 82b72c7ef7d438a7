import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from qunravel import operators as ops
from qunravel.equations import (CanonicalMasterEquation, canonical_equation, gell_mann_basis,
                                integrate_density, min_isotropic_noise, optimal_c, pair,
                                povm_sum, shift_transform, spa_deformed_step, validate_canonical)
from qunravel.errors import IntegrationError, PairingError

from conftest import random_hermitian

E = np.e
EXCITED = np.diag([1.0, 0.0]).astype(complex)


def qubit_equation(w):
    return canonical_equation(0.5 * ops.SIGMA_Z, list(w))


# -- validation and the Gell-Mann basis -------------------------------------------------

def test_gell_mann_d3_validates():
    me = canonical_equation(np.zeros((3, 3)), [1.0] * 8)
    assert me.povm_constant == pytest.approx(8 / 3)
    rep = validate_canonical(me, [0.0, 0.5])
    assert rep.passed, rep.lines()


def test_ladder_pair_is_povm_but_not_canonical():
    me = CanonicalMasterEquation.build(np.zeros((2, 2)), [ops.SIGMA_PLUS, ops.SIGMA_MINUS], [1.0, 2.0])
    assert me.povm_constant == pytest.approx(1.0)
    assert not me.canonical
    rep = validate_canonical(me, [0.0])
    assert rep.passed and rep.povm < 1e-15 and rep.orthonormality < 1e-15
    assert not rep.channel_count_ok
    forced = CanonicalMasterEquation.build(np.zeros((2, 2)), [ops.SIGMA_PLUS, ops.SIGMA_MINUS],
                                           [1.0, 2.0], canonical=True)
    assert not validate_canonical(forced, [0.0]).passed


def test_duplicate_operator_fails_orthonormality():
    me = CanonicalMasterEquation.build(np.zeros((2, 2)), [ops.SIGMA_PLUS, ops.SIGMA_PLUS], [1.0, 1.0])
    rep = validate_canonical(me, [0.0])
    assert "operators not orthonormal" in rep.failures


def test_non_hermitian_hamiltonian_fails():
    me = CanonicalMasterEquation.build(ops.SIGMA_PLUS, [], [])
    assert "hamiltonian not Hermitian" in validate_canonical(me, [0.0]).failures


def test_gell_mann_d2_is_pauli():
    b = gell_mann_basis(2)
    for L, s in zip(b, (ops.SIGMA_X, ops.SIGMA_Y, ops.SIGMA_Z)):
        assert np.allclose(L, s / np.sqrt(2))
    assert np.allclose(povm_sum(b), 1.5 * np.eye(2))


@pytest.mark.parametrize("d", [3, 5])
def test_gell_mann_oracles(d):
    b = np.array(gell_mann_basis(d))
    assert len(b) == d * d - 1
    # direct summation and Gram matrix oracles
    total = sum(L.conj().T @ L for L in b)
    assert np.max(np.abs(total - (d * d - 1) / d * np.eye(d))) <= 1e-12
    gram = np.array([[np.trace(a.conj().T @ c) for c in b] for a in b])
    assert np.max(np.abs(gram - np.eye(d * d - 1))) <= 1e-12
    assert np.max(np.abs(np.trace(b, axis1=1, axis2=2))) <= 1e-12
    assert np.max(np.abs(sum(L @ L.conj().T for L in b) - total)) <= 1e-12


def test_gell_mann_rejects_small_d():
    with pytest.raises(ValueError):
        gell_mann_basis(1)


# -- dense integration ---------------------------------------------------------------

def test_integrate_constant_when_static():
    me = canonical_equation(np.zeros((2, 2)), [0.0, 0.0, 0.0])
    rho = np.array([[0.6, 0.1j], [-0.1j, 0.4]])
    ser = integrate_density(me, rho, 0.0, 1.0, 1e-2)
    assert np.allclose(ser.states, rho)


def test_integrate_piecewise_constant_unitary():
    # one integration per constant piece (RK4 is only first order across a jump in H)
    rng = np.random.default_rng(5)
    pieces = [(0.0, 0.3, random_hermitian(rng, 3)), (0.3, 0.75, random_hermitian(rng, 3)),
              (0.75, 1.0, random_hermitian(rng, 3))]
    rho = rho0 = ops.random_density(3, rng)
    U = np.eye(3)
    for a, b, H in pieces:
        rho = integrate_density(CanonicalMasterEquation.build(H, [], []), rho, a, b, 1e-4).final
        U = expm(-1j * H * (b - a)) @ U
    assert np.max(np.abs(rho - U @ rho0 @ U.conj().T)) <= 1e-8


def test_integrate_thermal_forward_properties():
    from qunravel.recovery import thermal_qubit_equation
    ser = integrate_density(thermal_qubit_equation(), EXCITED, 0.0, 1.0, 1e-4, every=100)
    assert len(ser.times) == 101 and ser.times[-1] == pytest.approx(1.0)
    tr = np.trace(ser.states, axis1=1, axis2=2)
    assert np.max(np.abs(tr - 1)) <= 1e-9
    assert min(ops.min_eigenvalue(s) for s in ser.states) >= -1e-7
    herm = np.max(np.abs(ser.states - ser.states.conj().transpose(0, 2, 1)))
    assert herm <= 1e-12
    # relaxation towards the ground state dominates: excited population drops
    assert ser.final[0, 0].real < 0.95


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_integrate_reports_non_finite():
    me = canonical_equation(np.zeros((2, 2)), [lambda t: np.inf if t > 0.5 else 0.0, 0.0, 0.0])
    with pytest.raises(IntegrationError) as info:
        integrate_density(me, EXCITED, 0.0, 1.0, 0.01)
    assert 0.5 <= info.value.time <= 0.52


# -- pairing and optimal shifts ---------------------------------------------------------

def test_optimal_c_examples():
    assert optimal_c(qubit_equation([0.5, -0.3, 0.2]), 0.0) == pytest.approx(0.6)
    assert optimal_c(qubit_equation([0.5, 0.3, 0.2]), 0.0) == 0.0
    rev = CanonicalMasterEquation.build(np.zeros((2, 2)), [ops.SIGMA_PLUS, ops.SIGMA_MINUS],
                                        [-0.1, -0.1 * E])
    assert optimal_c(rev, 0.0) == pytest.approx(0.543656365691809, abs=1e-12)


def test_pair_examples():
    me = qubit_equation([0.5, -0.3, 0.2])
    pr = pair(me, 0.6, grid=[0.0])
    assert np.allclose(pr.paired_rates(0.0), [1.1, 0.3, 0.8])
    assert pr.paired_cp.operator_fns == me.operator_fns
    assert pr.paired_cp.hamiltonian_fn is me.hamiltonian_fn
    cp = qubit_equation([0.5, 0.3, 0.2])
    assert np.allclose(pair(cp, 0.0).paired_rates(0.3), cp.rates(0.3))
    with pytest.raises(PairingError) as info:
        pair(me, 0.2, grid=[0.0, 1.0])
    assert info.value.margin == pytest.approx(-0.1)
    assert info.value.time == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_optimal_pairing_properties(w):
    me = qubit_equation(w)
    r = pair(me).paired_rates(0.0)
    assert r.min() >= -1e-15
    assert r.min() == pytest.approx(2 * max(0.0, -min(w)) + min(w), abs=1e-12)
    if min(w) < 0:
        assert r[int(np.argmin(w))] == pytest.approx(abs(min(w)))
    assert min_isotropic_noise(me, 0.0) == pytest.approx(optimal_c(me, 0.0), abs=1e-15)


def test_min_isotropic_noise(rng):
    assert min_isotropic_noise(qubit_equation([0.5, -0.3, 0.2]), 0.0) == pytest.approx(0.6)
    assert min_isotropic_noise(qubit_equation([0.5, 0.3, 0.2]), 0.0) == 0.0
    me3 = canonical_equation(np.zeros((3, 3)), list(rng.normal(size=8)))
    assert min_isotropic_noise(me3, 0.0) == pytest.approx(1.5 * optimal_c(me3, 0.0))


# -- structural physical approximation ----------------------------------------------------

def test_spa_step_zero_noise_is_euler():
    me = qubit_equation([0.5, -0.3, 0.2])
    dt = 1e-3
    step = spa_deformed_step(me, 0.0, dt, 0.0)
    assert np.allclose(step, np.eye(4) + dt * ops.generator_superoperator(me, 0.0))


def test_spa_noise_threshold():
    me = qubit_equation([0.5, -0.3, 0.2])
    n_star = min_isotropic_noise(me, 0.0)
    dts = np.array([1e-3, 5e-4, 2.5e-4])
    at = np.array([ops.min_eigenvalue(ops.choi_matrix(spa_deformed_step(me, 0.0, dt, n_star)))
                   for dt in dts])
    below = np.array([ops.min_eigenvalue(ops.choi_matrix(spa_deformed_step(me, 0.0, dt, 0.5 * n_star)))
                      for dt in dts])
    K = max(0.0, -at[0]) / dts[0] ** 2
    assert np.all(at >= -1.5 * K * dts ** 2 - 1e-15)
    c = -below / dts
    assert np.all(c > 0.05)
    # residual shrinks faster than linearly at the threshold
    assert abs(at[2]) <= abs(at[0]) / 3 + 1e-15


# -- shift transform ----------------------------------------------------------------------

def test_shift_transform_zero_is_identity(rng):
    me = canonical_equation(random_hermitian(rng, 2), [0.3, -0.2, 0.1])
    tr = shift_transform(me, [0, 0, 0])
    for t in (0.0, 0.7):
        assert np.allclose(ops.generator_superoperator(tr, t), ops.generator_superoperator(me, t))
        assert np.allclose(tr.hamiltonian(t), me.hamiltonian(t))


def test_shift_transform_sigma_minus():
    me = CanonicalMasterEquation.build(0.5 * ops.SIGMA_Z, [ops.SIGMA_MINUS], [0.7])
    tr = shift_transform(me, [1.0])
    assert np.max(np.abs(ops.generator_superoperator(tr, 0.0)
                         - ops.generator_superoperator(me, 0.0))) <= 1e-12
    assert abs(np.trace(tr.operators(0.0)[0])) == pytest.approx(2.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 3), st.integers(0, 2**32 - 1))
def test_shift_transform_invariance(d, seed):
    rng = np.random.default_rng(seed)
    me = canonical_equation(random_hermitian(rng, d), list(rng.normal(size=d * d - 1)))
    shifts = list(rng.normal(size=d * d - 1) + 1j * rng.normal(size=d * d - 1))
    tr = shift_transform(me, shifts)
    for _ in range(3):
        rho = ops.random_density(d, rng)
        assert np.max(np.abs(tr.rhs(rho, 0.2) - me.rhs(rho, 0.2))) <= 1e-10
    rep = validate_canonical(tr, [0.2])
    assert rep.tracelessness > 1e-3


def test_shift_transform_length_check():
    me = qubit_equation([0.1, 0.1, 0.1])
    with pytest.raises(ValueError):
        shift_transform(me, [1.0])
