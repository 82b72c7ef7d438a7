import numpy as np
import pytest

from qunravel import operators as ops
from qunravel.embedding import (ancilla_state, build_embedding, commutant_embedding_psd,
                                embedded_ensemble, extract_blocks, integrate_embedded,
                                series_blocks)
from qunravel.equations import (CanonicalMasterEquation, canonical_equation, integrate_density,
                                pair)
from qunravel.errors import PairingError

from conftest import SEED

RHO0 = np.array([[0.7, 0.3 - 0.2j], [0.3 + 0.2j, 0.3]])


def toy_equation(window=(0.0, 1.0)):
    return canonical_equation(0.5 * ops.SIGMA_Z, [1.0, 1.0, lambda t: -np.tanh(t)], window=window)


def single(w, c):
    me = CanonicalMasterEquation.build(0.5 * ops.SIGMA_Z, [ops.SIGMA_X], [w])
    return build_embedding(pair(me, c), grid=[0.0])


@pytest.mark.parametrize("w, c, cos, v", [
    (-0.3, 0.6, -1.0, (0.0, 0.3)),
    (0.5, 0.6, 5 / 11, (0.8, 0.3)),
    (0.5, 0.0, 1.0, (0.5, 0.0)),
])
def test_angles_and_rates(w, c, cos, v):
    eme = single(w, c)
    assert eme.cos_angles(0.0)[0] == pytest.approx(cos, abs=1e-14)
    assert np.allclose(eme.rates(0.0), v, atol=1e-14)
    assert eme.angles(0.0)[0] == pytest.approx(np.arccos(cos), abs=1e-7)


def test_zero_paired_rate_has_unit_cosine():
    eme = single(0.0, 0.0)
    assert eme.cos_angles(0.0)[0] == 1.0
    assert np.allclose(eme.rates(0.0), 0.0)


def test_insufficient_shift_is_rejected():
    me = CanonicalMasterEquation.build(0.5 * ops.SIGMA_Z, [ops.SIGMA_X], [-0.3])
    with pytest.raises(PairingError):
        build_embedding(pair(me, 0.5), grid=[0.0])


def test_rate_identities(rng):
    me = canonical_equation(0.2 * ops.SIGMA_Y, list(rng.normal(size=8)), d=3)
    pr = pair(me)
    eme = build_embedding(pr, grid=[0.0])
    v = eme.rates(0.0)
    w, r, c = pr.source_rates(0.0), pr.paired_rates(0.0), pr.c(0.0)
    cos = eme.cos_angles(0.0)
    assert np.all(v >= 0)
    assert np.allclose(v[0::2] + v[1::2], r, atol=1e-12)
    assert np.allclose(v[0::2] - v[1::2], w, atol=1e-12)
    assert np.allclose(r * cos, w, atol=1e-12)
    # operator order: (1 (x) L_l, sigma_z (x) L_l)
    Ls = me.operators(0.0)
    Vs = eme.equation.operators(0.0)
    for l, L in enumerate(Ls):
        assert np.allclose(Vs[2 * l], np.kron(np.eye(2), L))
        assert np.allclose(Vs[2 * l + 1], np.kron(ops.SIGMA_Z, L))
    assert eme.equation.povm_constant == pytest.approx(2 * me.povm_constant)


def test_blocks_follow_the_two_equations():
    me = toy_equation()
    pr = pair(me)
    eme = build_embedding(pr)
    series = integrate_embedded(eme, ancilla_state(RHO0), 0.0, 1.0, 1e-3, every=100)
    tilde, rho = series_blocks(eme, series)
    dense = integrate_density(me, RHO0, 0.0, 1.0, 1e-3, every=100).states
    dense_cp = integrate_density(pr.paired_cp, RHO0, 0.0, 1.0, 1e-3, every=100).states
    assert np.max(np.abs(rho - dense)) <= 1e-9
    assert np.max(np.abs(tilde - dense_cp)) <= 1e-10
    assert np.max(series.trace_error) <= 1e-10
    assert series.min_eigenvalues.min() >= -1e-10


def test_block_error_is_fourth_order():
    me = toy_equation()
    eme = build_embedding(pair(me))
    errs = []
    for dt in (2e-3, 1e-3):
        series = integrate_embedded(eme, ancilla_state(RHO0), 0.0, 1.0, dt)
        _, rho = extract_blocks(series.final, series.c_integral[-1], me.povm_constant)
        errs.append(np.max(np.abs(rho - integrate_density(me, RHO0, 0.0, 1.0, dt).final)))
    assert errs[0] / errs[1] == pytest.approx(16.0, rel=0.15)


def test_mixed_ancilla_evolves_paired_state():
    me = toy_equation()
    pr = pair(me)
    eme = build_embedding(pr)
    series = integrate_embedded(eme, ancilla_state(RHO0, "mixed"), 0.0, 1.0, 1e-3, every=1000)
    dense_cp = integrate_density(pr.paired_cp, RHO0, 0.0, 1.0, 1e-3, every=1000).states
    g11, g12, _, g22 = ops.blocks(series.final)
    assert np.allclose(2 * g11, dense_cp[-1], atol=1e-8)
    assert np.allclose(2 * g22, dense_cp[-1], atol=1e-8)
    assert np.allclose(g12, 0.0, atol=1e-12)


def test_extract_blocks_at_start(rng):
    rho = ops.random_density(3, rng)
    tilde, out = extract_blocks(ancilla_state(rho), 0.0, 8 / 3)
    assert np.allclose(tilde, rho) and np.allclose(out, rho)
    _, scaled = extract_blocks(ancilla_state(rho), 0.5, 2.0)
    assert np.allclose(scaled, np.e * rho)


def test_embedded_flow_is_cp():
    eme = build_embedding(pair(toy_equation()))
    P = ops.propagator(eme.equation, 0.0, 1.0, 1e-3)
    assert ops.min_eigenvalue(ops.choi_matrix(P)) >= -1e-6


def test_embedded_unraveling_matches_dense():
    eme = build_embedding(pair(toy_equation()))
    gamma0 = ancilla_state(RHO0)
    est = embedded_ensemble(eme, gamma0, 0.0, 1.0, 1e-3, 2000, SEED, n_record=5)
    dense = integrate_embedded(eme, gamma0, 0.0, 1.0, 1e-3, every=200).states
    assert np.allclose(est.mu_mean, 1.0)
    dist = np.linalg.norm(est.rho_hat - dense, axis=(1, 2))
    assert np.all(dist <= np.maximum(3.5 * est.hs_se_rho_hat, 1e-12))


@pytest.mark.parametrize("T, lam, psd", [
    (np.eye(2), 0.0, True),
    (1.5 * np.eye(2), -0.5, False),
    (np.diag([1.0, -0.4]), 0.0, True),
    (np.zeros((2, 2)), 1.0, True),
])
def test_commutant_criterion(T, lam, psd):
    chk = commutant_embedding_psd(T, 2)
    assert chk.min_eigenvalue == pytest.approx(lam, abs=1e-12)
    assert chk.psd is psd and chk.consistent


def test_commutant_random_contractions(rng):
    for _ in range(10):
        T = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        T *= rng.uniform(0.5, 1.5) / np.linalg.norm(T, 2)
        chk = commutant_embedding_psd(T, 2)
        assert chk.consistent
        assert chk.min_eigenvalue == pytest.approx(1 - chk.sigma_max, abs=1e-10)
