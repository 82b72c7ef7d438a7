"""Completely positive embedding of a signed-rate equation on ``C^2 (x) H``.

For a pairing with rates ``r_l = w_l + c`` the operators
``V_{2l-1} = 1 (x) L_l`` and ``V_{2l} = sigma_z (x) L_l`` at rates
``v_{2l-1} = (r_l + w_l)/2`` and ``v_{2l} = c/2`` generate a CP flow whose
diagonal blocks evolve the paired state ``rho_tilde`` and whose off-diagonal
blocks evolve ``exp(-g int c) rho``.
"""
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import operators as ops
from .equations import CanonicalMasterEquation, PairedEquations, integrate_density, pair
from .errors import PairingError
from .unraveling import ensemble_estimate


@dataclass(frozen=True)
class EmbeddedMasterEquation:
    """CP equation on the doubled space built from a pairing.

    ``equation`` is an ordinary :class:`CanonicalMasterEquation` of dimension
    ``2d`` (not flagged canonical), so every integrator and the jump engine
    accept it unchanged.
    """

    base: PairedEquations
    equation: CanonicalMasterEquation
    odd_rates: Sequence[Callable]
    even_rates: Sequence[Callable]

    @property
    def dim(self):
        return self.equation.dim

    def cos_angles(self, t):
        """``cos theta_l = w_l / (w_l + c)``; channels with ``r_l = 0`` get 1."""
        w = self.base.source_rates(t)
        r = self.base.paired_rates(t)
        out = np.ones_like(w)
        np.divide(w, r, out=out, where=r != 0.0)
        return out

    def angles(self, t):
        cos = self.cos_angles(t)
        if np.any(np.abs(cos) > 1.0 + 1e-12):
            raise PairingError(f"|cos theta| = {np.max(np.abs(cos)):.6g} > 1 at t={t:.6g}",
                               float(t), float(1.0 - np.max(np.abs(cos))))
        return np.arccos(np.clip(cos, -1.0, 1.0))

    def rates(self, t):
        """Embedded rates in channel order ``(v_1, v_2, ..., v_{2L})``."""
        return self.equation.rates(t)


def _odd_rate(pr, l):
    # (r + w)/2 = w + c/2
    w = pr.source.rate_fns[l]
    return lambda t: float(w(t)) + 0.5 * pr.c(t)


def _even_rate(pr):
    return lambda t: 0.5 * pr.c(t)


def build_embedding(pr, grid=None):
    """Embedded CP equation of the pairing ``pr``.

    ``grid`` (defaults to 101 points on the source window, if it has one)
    is scanned for ``|cos theta| <= 1``, i.e. ``c >= -2 w_l``.
    """
    me = pr.source
    if grid is None and me.window is not None:
        grid = np.linspace(me.window[0], me.window[1], 101)
    if grid is not None:
        for t in np.atleast_1d(grid):
            w = pr.source_rates(t)
            c = pr.c(t)
            # v_odd = w + c/2 and v_even = c/2 must be nonnegative
            margin = min(float(np.min(w, initial=np.inf)) + 0.5 * c, 0.5 * c)
            if margin < -1e-12:
                raise PairingError(f"embedding needs c >= max(0, -2 min w); "
                                   f"c({t:.6g}) = {c:.6g}", float(t), margin)

    eye2 = ops.IDENTITY_2
    sz = ops.SIGMA_Z
    v_ops, v_rates, odd, even = [], [], [], []
    even_fn = _even_rate(pr)
    for l, L in enumerate(me.operator_fns):
        odd_fn = _odd_rate(pr, l)
        v_ops.append(lambda t, L=L: ops.kron(eye2, L(t)))
        v_ops.append(lambda t, L=L: ops.kron(sz, L(t)))
        v_rates += [odd_fn, even_fn]
        odd.append(odd_fn)
        even.append(even_fn)
    H = me.hamiltonian_fn
    eq = CanonicalMasterEquation(2 * me.dim, lambda t: ops.kron(eye2, np.asarray(H(t))),
                                 tuple(v_ops), tuple(v_rates), 2.0 * me.povm_constant,
                                 False, me.window)
    return EmbeddedMasterEquation(pr, eq, tuple(odd), tuple(even))


# -- states --------------------------------------------------------------------

def ancilla_state(rho, ancilla="plus"):
    """``a (x) rho`` with ``a = (1 + sigma_x)/2`` ("plus") or ``1/2`` ("mixed")."""
    rho = np.asarray(rho, dtype=complex)
    if ancilla == "plus":
        a = 0.5 * (ops.IDENTITY_2 + ops.SIGMA_X)
    elif ancilla == "mixed":
        a = 0.5 * ops.IDENTITY_2
    else:
        raise ValueError(f"unknown ancilla state {ancilla!r}")
    return ops.kron(a, rho)


@dataclass(frozen=True)
class EmbeddedSeries:
    times: np.ndarray
    states: np.ndarray     # (T, 2d, 2d)
    c_integral: np.ndarray  # int_{t0}^t c ds at each recorded time

    @property
    def final(self):
        return self.states[-1]

    @property
    def trace_error(self):
        return np.abs(np.trace(self.states, axis1=1, axis2=2) - 1.0)

    @property
    def min_eigenvalues(self):
        return np.array([ops.min_eigenvalue(g) for g in self.states])


def shift_integral(pr, t0, t1, dt):
    """Grid times and the cumulative integral ``int_{t0}^t c ds``."""
    n = ops._n_steps(t0, t1, dt)
    if n == 0:
        return np.array([t0]), np.zeros(1)
    times = t0 + (t1 - t0) / n * np.arange(n + 1)
    return times, ops.cumulative_integral(pr.c, times)


def integrate_embedded(eme, gamma0, t0, t1, dt=1e-4, every=1):
    """Dense RK4 integration of the embedded equation."""
    gamma0 = ops.check_density(np.asarray(gamma0, dtype=complex))
    if gamma0.shape[0] != eme.dim:
        raise ValueError(f"gamma0 has dimension {gamma0.shape[0]}, expected {eme.dim}")
    series = integrate_density(eme.equation, gamma0, t0, t1, dt, every=every)
    grid, cint = shift_integral(eme.base, t0, t1, dt)
    if len(grid) == 1:
        return EmbeddedSeries(series.times, series.states, np.zeros(len(series.times)))
    idx = np.rint((series.times - t0) / (grid[1] - grid[0])).astype(int)
    return EmbeddedSeries(series.times, series.states, cint[idx])


def extract_blocks(gamma, c_integral, g):
    """``(rho_tilde, rho)`` from an embedded state.

    ``rho_tilde = 2 gamma_11``; ``rho = exp(g c_integral) 2 gamma_12``,
    averaged with the adjoint of ``2 gamma_21``.
    """
    g11, g12, g21, _ = ops.blocks(np.asarray(gamma))
    rho = np.exp(g * c_integral) * 0.5 * (2.0 * g12 + (2.0 * g21).conj().T)
    return 2.0 * g11, rho


def series_blocks(eme, series):
    """Apply :func:`extract_blocks` along an :class:`EmbeddedSeries`."""
    g = eme.base.source.povm_constant
    pairs = [extract_blocks(s, ci, g) for s, ci in zip(series.states, series.c_integral)]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def embedded_ensemble(eme, gamma0, t0, t1, dt, n_traj, seed, **kw):
    """Jump unraveling of the embedded equation (CP, so no shift)."""
    return ensemble_estimate(pair(eme.equation, c=0.0), gamma0, t0, t1, dt, n_traj, seed, **kw)


# -- commutant criterion -----------------------------------------------------------

@dataclass(frozen=True)
class CommutantCheck:
    min_eigenvalue: float
    psd: bool
    sigma_max: float
    consistent: bool  # eigenvalue verdict agrees with sigma_max <= 1


def commutant_embedding_psd(T, d, tol=1e-9):
    """Positivity of ``[[1 (x) 1_d, T (x) 1_d], [T^+ (x) 1_d, 1 (x) 1_d]]``.

    The block matrix has eigenvalues ``1 +- s_i(T)``, so it is PSD exactly
    when the largest singular value of ``T`` is at most one.
    """
    T = np.asarray(T, dtype=complex)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ValueError("T must be square")
    m = T.shape[0]
    eye_d = np.eye(d)
    one = np.eye(m * d)
    top = ops.kron(T, eye_d)
    M = np.block([[one, top], [top.conj().T, one]])
    lam = float(np.linalg.eigvalsh(M)[0])
    smax = float(np.linalg.svd(T, compute_uv=False)[0]) if m else 0.0
    psd = lam >= -tol
    return CommutantCheck(lam, psd, smax, psd == (smax <= 1.0 + tol))


__all__ = [
    "CommutantCheck", "EmbeddedMasterEquation", "EmbeddedSeries", "ancilla_state",
    "build_embedding", "commutant_embedding_psd", "embedded_ensemble", "extract_blocks",
    "integrate_embedded", "series_blocks", "shift_integral",
]
