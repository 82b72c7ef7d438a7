"""Reversal of a CP evolution by a completely bounded master equation.

For a forward equation with rates ``h_l >= 0`` on ``[t0, t1]`` the reversed
equation, evaluated at the mirrored time ``t_flat = t0 + t1 - t``, has
Hamiltonian ``-H(t_flat)``, operators ``L_l(t_flat)`` and rates
``w_l = -h_l(t_flat)``. Its flow over ``[t0, t1]`` inverts the forward flow.
It is run either through the CP embedding (deterministic) or through the
jump unraveling with the influence martingale.
"""
from dataclasses import dataclass

import numpy as np

from . import operators as ops
from .embedding import ancilla_state, build_embedding, integrate_embedded, shift_integral
from .equations import CanonicalMasterEquation, PairedEquations, integrate_density, pair, povm_sum
from .errors import NegativeRateError
from .tolerances import get_tolerances
from .unraveling import ensemble_estimate


def _grid(t0, t1, dt):
    n = ops._n_steps(t0, t1, dt)
    return np.linspace(t0, t1, n + 1) if n else np.array([t0])


@dataclass(frozen=True)
class ReversalSetup:
    forward: CanonicalMasterEquation
    window: tuple
    reversed: CanonicalMasterEquation
    pairing: PairedEquations

    def flat(self, t):
        t0, t1 = self.window
        return t0 + t1 - t

    def c(self, t):
        return self.pairing.c(t)

    def paired_rates(self, t):
        return self.pairing.paired_rates(t)


def build_reversal(forward, t0, t1, grid=None):
    """Reversed equation and its optimal pairing ``c = 2 max_l h_l(t_flat)``.

    Forward rates are checked for nonnegativity and the forward operators
    for the POVM-type condition on ``grid`` (101 points by default).
    """
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    grid = np.linspace(t0, t1, 101) if grid is None else np.atleast_1d(grid)
    tol = get_tolerances()
    eye = np.eye(forward.dim)
    for t in grid:
        h = forward.rates(t)
        if h.size and h.min() < 0.0:
            raise NegativeRateError(f"forward rate {h.min():.6g} < 0 at t={t:.6g}; "
                                    "the forward equation must be CP")
        if forward.n_channels:
            err = float(np.max(np.abs(povm_sum(forward.operators(t)) - forward.povm_constant * eye)))
            if err > tol.povm:
                raise ValueError(f"forward operators violate sum L^+L = g 1 by {err:.3g} at "
                                 f"t={t:.6g}; pad the operator set first")

    def flat(t):
        return t0 + t1 - t

    H = forward.hamiltonian_fn
    rev = CanonicalMasterEquation(
        forward.dim,
        lambda t: -np.asarray(H(flat(t)), dtype=complex),
        tuple((lambda t, L=L: L(flat(t))) for L in forward.operator_fns),
        tuple((lambda t, h=h: -float(h(flat(t)))) for h in forward.rate_fns),
        forward.povm_constant, forward.canonical, (t0, t1))

    def shift(t):
        h = forward.rates(flat(t))
        return 2.0 * max(0.0, float(np.max(h, initial=0.0)))

    return ReversalSetup(forward, (t0, t1), rev, pair(rev, shift))


# -- recovery by embedding -----------------------------------------------------------

@dataclass(frozen=True)
class RecoverySeries:
    """Recovered states against elapsed recovery time ``times - t0``."""

    times: np.ndarray
    states: np.ndarray
    min_eigenvalue: float   # over the integrated embedded states
    flow_condition: float = float("nan")

    @property
    def final(self):
        return self.states[-1]


def _readout(gamma, c_integral, g):
    rho = np.exp(g * c_integral) * ops.partial_trace_first(gamma, ops.SIGMA_X)
    return ops.hermitize(rho)


def recovery_series_by_embedding(forward, rho_t1, t0, t1, dt=1e-4, every=1, setup=None):
    """Run the embedding protocol and read out the state at every recorded time.

    At elapsed time ``s`` the readout equals the forward state at
    ``t1 - s``; at ``s = t1 - t0`` it is the forward initial state.
    """
    rho_t1 = np.asarray(rho_t1, dtype=complex)
    if t1 == t0:
        return RecoverySeries(np.array([0.0]), rho_t1[None].copy(), ops.min_eigenvalue(rho_t1))
    setup = build_reversal(forward, t0, t1) if setup is None else setup
    eme = build_embedding(setup.pairing, grid=_grid(t0, t1, max(dt, (t1 - t0) / 1000)))
    series = integrate_embedded(eme, ancilla_state(rho_t1), t0, t1, dt, every=every)
    g = forward.povm_constant
    states = np.array([_readout(s, ci, g) for s, ci in zip(series.states, series.c_integral)])
    return RecoverySeries(series.times - t0, states, float(series.min_eigenvalues.min()))


def recover_by_embedding(forward, rho_t1, t0, t1, dt=1e-4):
    """Forward initial state recovered from ``rho_t1`` through the CP embedding."""
    rho_t1 = np.asarray(rho_t1, dtype=complex)
    if t1 == t0:
        return rho_t1.copy()
    return recovery_series_by_embedding(forward, rho_t1, t0, t1, dt, every=10**9).final


def recovery_superoperator(forward, t0, t1, dt=1e-4, setup=None):
    """Linear map ``rho_t1 -> recovered rho_t0`` of the embedding protocol.

    The embedded propagator is computed once; the readout is applied on the
    basis ``E_ij`` so the result can recover any number of states.
    """
    d = forward.dim
    if t1 == t0:
        return ops.identity_superoperator(d)
    setup = build_reversal(forward, t0, t1) if setup is None else setup
    eme = build_embedding(setup.pairing, grid=_grid(t0, t1, max(dt, (t1 - t0) / 1000)))
    P = ops.propagator(eme.equation, t0, t1, dt)
    _, cint = shift_integral(setup.pairing, t0, t1, dt)
    g = forward.povm_constant

    def fn(E):
        gamma = ops.apply_superoperator(P, ancilla_state(E))
        return np.exp(g * cint[-1]) * ops.partial_trace_first(gamma, ops.SIGMA_X)

    return ops.superoperator_from_map(fn, d)


# -- recovery by the martingale ------------------------------------------------------

def recover_by_martingale(forward, rho_t1, t0, t1, dt, n_traj, seed, n_record=20,
                          setup=None, **kw):
    """Ensemble estimate of the reversed equation started from ``rho_t1``.

    Trajectories start from the eigenvectors of ``rho_t1``; ``rho_hat`` at
    the final time estimates the forward initial state.
    """
    setup = build_reversal(forward, t0, t1) if setup is None else setup
    return ensemble_estimate(setup.pairing, rho_t1, t0, t1, dt, n_traj, seed,
                             n_record=n_record, **kw)


# -- flows -------------------------------------------------------------------------------

@dataclass(frozen=True)
class RoundTrip:
    forward: np.ndarray
    reversed: np.ndarray
    deviation: float        # max |P_rev P_fwd - I|
    condition: float        # condition number of the forward flow


def round_trip(forward, t0, t1, dt=1e-4, setup=None):
    setup = build_reversal(forward, t0, t1) if setup is None else setup
    P = ops.propagator(forward, t0, t1, dt)
    Q = ops.propagator(setup.reversed, t0, t1, dt)
    dev = float(np.max(np.abs(Q @ P - ops.identity_superoperator(forward.dim))))
    return RoundTrip(P, Q, dev, ops.flow_condition(P))


# -- the driven thermal qubit -------------------------------------------------------

def thermal_qubit_equation(g=0.1, beta=1.0, omega=1.0, drive=3.0, frequency=15.0):
    """Driven qubit in a thermal bath:
    ``H_t = (omega/2) sigma_z + drive sin(frequency t) sigma_x`` with rates
    ``g`` on ``sigma_+`` and ``g exp(beta omega)`` on ``sigma_-``."""
    sz, sx = ops.SIGMA_Z, ops.SIGMA_X

    def H(t):
        return 0.5 * omega * sz + drive * np.sin(frequency * t) * sx

    return CanonicalMasterEquation.build(H, [ops.SIGMA_PLUS, ops.SIGMA_MINUS],
                                         [g, g * np.exp(beta * omega)], povm_constant=1.0,
                                         canonical=False)


def excited_state():
    return np.diag([1.0, 0.0]).astype(complex)


@dataclass(frozen=True)
class ThermalQubitRun:
    forward_times: np.ndarray
    forward_states: np.ndarray
    recovery_times: np.ndarray    # absolute times on [t1, 2 t1 - t0]
    recovered_states: np.ndarray
    error: float                  # HS distance of the final readout to rho0


def thermal_qubit_experiment(rho0=None, t0=0.0, t1=1.0, dt=1e-4, every=100, equation=None):
    """Forward evolution on ``[t0, t1]`` then recovery on ``[t1, 2 t1 - t0]``."""
    me = thermal_qubit_equation() if equation is None else equation
    rho0 = excited_state() if rho0 is None else np.asarray(rho0, dtype=complex)
    fwd = integrate_density(me, rho0, t0, t1, dt, every=every)
    rec = recovery_series_by_embedding(me, fwd.final, t0, t1, dt, every=every)
    return ThermalQubitRun(fwd.times, fwd.states, t1 + rec.times, rec.states,
                           ops.hs_distance(rec.final, rho0))


__all__ = [
    "RecoverySeries", "ReversalSetup", "RoundTrip", "ThermalQubitRun", "build_reversal",
    "excited_state", "recover_by_embedding", "recover_by_martingale",
    "recovery_series_by_embedding", "recovery_superoperator", "round_trip",
    "thermal_qubit_equation", "thermal_qubit_experiment",
]
