"""Time-local master equations: representation, validation, pairing, dense
integration and the isotropic-noise deformation of the short-time flow."""
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import operators as ops
from .errors import IntegrationError, PairingError
from .tolerances import get_tolerances


def _as_matrix_fn(x):
    if callable(x):
        return x
    m = np.array(x, dtype=complex)
    return lambda t: m


def _as_scalar_fn(x):
    if callable(x):
        return x
    v = float(x)
    return lambda t: v


def povm_sum(operators):
    """``sum_l L_l^dagger L_l`` for a stack of operators."""
    operators = np.asarray(operators)
    return np.einsum("lji,ljk->ik", operators.conj(), operators)


@dataclass(frozen=True)
class CanonicalMasterEquation:
    """``d rho/dt = -i[H_t, rho] + sum_l w_l(t) D_{L_l(t)}(rho)``.

    Hamiltonian, operators and rates may be given as constants or as
    callables of time. ``povm_constant`` is the ``g`` in
    ``sum_l L_l^dagger L_l = g 1``; when omitted it is read off the operators
    at ``reference_time``.
    """

    dim: int
    hamiltonian_fn: Callable
    operator_fns: Sequence[Callable]
    rate_fns: Sequence[Callable]
    povm_constant: float
    canonical: bool = False
    window: tuple = None

    @classmethod
    def build(cls, hamiltonian, operators, rates, povm_constant=None,
              canonical=None, window=None, reference_time=0.0):
        op_fns = [_as_matrix_fn(L) for L in operators]
        rate_fns = [_as_scalar_fn(w) for w in rates]
        if len(op_fns) != len(rate_fns):
            raise ValueError(f"{len(op_fns)} operators but {len(rate_fns)} rates")
        h_fn = _as_matrix_fn(hamiltonian)
        dim = np.asarray(h_fn(reference_time)).shape[0]
        if povm_constant is None:
            if op_fns:
                s = povm_sum([f(reference_time) for f in op_fns])
                povm_constant = float(np.max(np.linalg.eigvalsh(ops.hermitize(s))))
            else:
                povm_constant = 0.0
        if canonical is None:
            canonical = len(op_fns) == dim * dim - 1
        return cls(dim, h_fn, tuple(op_fns), tuple(rate_fns), float(povm_constant),
                   bool(canonical), window)

    @property
    def n_channels(self):
        return len(self.operator_fns)

    def hamiltonian(self, t):
        return np.asarray(self.hamiltonian_fn(t), dtype=complex)

    def operators(self, t):
        if not self.operator_fns:
            return np.zeros((0, self.dim, self.dim), dtype=complex)
        return np.array([f(t) for f in self.operator_fns], dtype=complex)

    def rates(self, t):
        return np.array([f(t) for f in self.rate_fns], dtype=float)

    def rhs(self, rho, t):
        """Direct evaluation of the right-hand side (no vectorization)."""
        H = self.hamiltonian(t)
        out = -1j * (H @ rho - rho @ H)
        for L, w in zip(self.operators(t), self.rates(t)):
            out = out + w * ops.dissipator(L, rho)
        return out

    def with_rates(self, rates, canonical=None):
        return CanonicalMasterEquation(
            self.dim, self.hamiltonian_fn, self.operator_fns,
            tuple(_as_scalar_fn(r) for r in rates), self.povm_constant,
            self.canonical if canonical is None else canonical, self.window)

    def with_operators(self, operators, hamiltonian=None, povm_constant=None, canonical=False):
        return CanonicalMasterEquation.build(
            self.hamiltonian_fn if hamiltonian is None else hamiltonian,
            operators, self.rate_fns, povm_constant=povm_constant,
            canonical=canonical, window=self.window)


@dataclass
class ValidationReport:
    tracelessness: float = 0.0
    orthonormality: float = 0.0
    povm: float = 0.0
    hamiltonian_hermiticity: float = 0.0
    channel_count_ok: bool = True
    rates_finite: bool = True
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures

    def lines(self):
        return [
            f"tracelessness    max |Tr L|            = {self.tracelessness:.3e}",
            f"orthonormality   max |Tr L^+K - delta| = {self.orthonormality:.3e}",
            f"povm             max |sum L^+L - g 1|  = {self.povm:.3e}",
            f"hamiltonian      max |H - H^+|         = {self.hamiltonian_hermiticity:.3e}",
            f"channel count ok = {self.channel_count_ok}",
            f"rates finite     = {self.rates_finite}",
            "PASS" if self.passed else "FAIL: " + "; ".join(self.failures),
        ]


def validate_canonical(me, grid):
    """Check the canonical-form conditions on every time in ``grid``.

    Orthonormality and tracelessness are only *required* when
    ``me.canonical`` is set, but their violations are always measured.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    tol = get_tolerances()
    rep = ValidationReport()
    d = me.dim
    eye = np.eye(d)
    for t in grid:
        H = me.hamiltonian(t)
        rep.hamiltonian_hermiticity = max(rep.hamiltonian_hermiticity,
                                          float(np.max(np.abs(H - H.conj().T))))
        Ls = me.operators(t)
        if len(Ls):
            rep.tracelessness = max(rep.tracelessness,
                                    float(np.max(np.abs(np.trace(Ls, axis1=1, axis2=2)))))
            gram = np.einsum("lji,kji->lk", Ls.conj(), Ls)
            rep.orthonormality = max(rep.orthonormality,
                                     float(np.max(np.abs(gram - np.eye(len(Ls))))))
            rep.povm = max(rep.povm, float(np.max(np.abs(povm_sum(Ls) - me.povm_constant * eye))))
        if not np.all(np.isfinite(me.rates(t))):
            rep.rates_finite = False
    rep.channel_count_ok = me.n_channels == d * d - 1
    if rep.hamiltonian_hermiticity > tol.hermitian:
        rep.failures.append("hamiltonian not Hermitian")
    if rep.povm > tol.povm:
        rep.failures.append("povm condition violated")
    if not rep.rates_finite:
        rep.failures.append("non-finite rate")
    if me.canonical:
        if rep.tracelessness > tol.orthonormal:
            rep.failures.append("operators not traceless")
        if rep.orthonormality > tol.orthonormal:
            rep.failures.append("operators not orthonormal")
        if not rep.channel_count_ok:
            rep.failures.append(f"canonical form needs {d * d - 1} channels, got {me.n_channels}")
    elif rep.orthonormality > tol.orthonormal:
        # orthonormality is still reported for non-canonical sets
        rep.failures.append("operators not orthonormal")
    return rep


def gell_mann_basis(d):
    """Traceless Hermitian basis of ``M_d`` normalised to ``Tr(L L) = 1``."""
    if d < 2:
        raise ValueError("d must be at least 2")
    basis = []
    for j in range(d):
        for k in range(j + 1, d):
            s = np.zeros((d, d), dtype=complex)
            s[j, k] = s[k, j] = 1.0
            basis.append(s / np.sqrt(2))
            a = np.zeros((d, d), dtype=complex)
            a[j, k] = -1j
            a[k, j] = 1j
            basis.append(a / np.sqrt(2))
    for l in range(1, d):
        diag = np.zeros(d, dtype=complex)
        diag[:l] = 1.0
        diag[l] = -l
        basis.append(np.diag(diag) / np.sqrt(l * (l + 1)))
    return basis


def canonical_equation(hamiltonian, rates, d=None, window=None):
    """Canonical equation on the generalised Gell-Mann basis."""
    if d is None:
        d = np.asarray(hamiltonian(0.0) if callable(hamiltonian) else hamiltonian).shape[0]
    return CanonicalMasterEquation.build(hamiltonian, gell_mann_basis(d), rates,
                                         povm_constant=(d * d - 1) / d, canonical=True,
                                         window=window)


@dataclass(frozen=True)
class DensitySeries:
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self):
        return self.states[-1]


def integrate_density(me, rho0, t0, t1, dt=1e-4, every=1):
    """RK4 integration of ``me`` on the vectorized state.

    Records every ``every``-th grid point (the end point is always kept).
    No trace renormalisation is applied.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    d = rho0.shape[0]
    times, states = [], []
    n = ops._n_steps(t0, t1, dt)

    def record(k, t, y):
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at t={t:.6g}", t)
        if k % every == 0 or k == n:
            times.append(t)
            states.append(ops.unvec(y, d))

    ops.rk4_linear(lambda t: ops.generator_superoperator(me, t), ops.vec(rho0),
                   t0, t1, dt, callback=record)
    return DensitySeries(np.array(times), np.array(states))


def optimal_c(me, t):
    """``2 max(0, -min_l w_l(t))``, the shift minimising the variance bound."""
    w = me.rates(t)
    if w.size == 0:
        return 0.0
    return 2.0 * max(0.0, -float(np.min(w)))


def min_isotropic_noise(me, t):
    """Smallest depolarizing rate making the short-time flow CP: ``d |w_min|``."""
    w = me.rates(t)
    if w.size == 0:
        return 0.0
    return me.dim * max(0.0, -float(np.min(w)))


@dataclass(frozen=True)
class PairedEquations:
    """A signed-rate equation and its CP partner with rates ``w + c``."""

    source: CanonicalMasterEquation
    shift: Callable
    paired_cp: CanonicalMasterEquation

    def c(self, t):
        return float(self.shift(t))

    def source_rates(self, t):
        return self.source.rates(t)

    def paired_rates(self, t):
        return self.paired_cp.rates(t)


def pair(me, c=None, grid=None):
    """Pair ``me`` with the CP equation of rates ``w_l + c``.

    ``c`` may be a constant, a callable, or ``None`` for the optimal
    ``c*(t)``. The constraint ``c >= -min w`` is checked on ``grid``.
    """
    if c is None:
        shift = lambda t: optimal_c(me, t)  # noqa: E731
    else:
        shift = _as_scalar_fn(c)
    if grid is not None:
        for t in np.atleast_1d(grid):
            w = me.rates(t)
            if w.size == 0:
                continue
            margin = float(shift(t)) + float(np.min(w))
            if margin < -1e-12:
                raise PairingError(
                    f"c({t:.6g}) = {float(shift(t)):.6g} is below -min w = {-float(np.min(w)):.6g}",
                    float(t), margin)
    paired_rates = [(lambda t, f=f: f(t) + float(shift(t))) for f in me.rate_fns]
    paired_cp = me.with_rates(paired_rates)
    return PairedEquations(me, shift, paired_cp)


def spa_deformed_step(me, t, dt, n):
    """First-order short-time map mixed with isotropic noise at rate ``n``:
    ``(1 - dt n)(Id + dt L_t) + dt n Tr(.) 1/d``."""
    d = me.dim
    G = ops.generator_superoperator(me, t)
    one = ops.vec(np.eye(d, dtype=complex))
    depol = np.outer(one, one.conj()) / d
    return (1.0 - dt * n) * (ops.identity_superoperator(d) + dt * G) + dt * n * depol


def shift_transform(me, shifts):
    """Shift ``L_l -> L_l + c_l 1`` with the compensating Hamiltonian
    ``H -> H - (i/2) sum_l w_l (conj(c_l) L_l - c_l L_l^dagger)``.

    The generator is unchanged; the shifted operators are in general neither
    traceless nor POVM-complete.
    """
    shifts = [s if callable(s) else (lambda t, v=complex(s): v) for s in shifts]
    if len(shifts) != me.n_channels:
        raise ValueError(f"need {me.n_channels} shifts, got {len(shifts)}")
    eye = np.eye(me.dim, dtype=complex)

    def new_op(l):
        return lambda t: me.operator_fns[l](t) + shifts[l](t) * eye

    def new_h(t):
        H = me.hamiltonian(t).copy()
        for L, w, s in zip(me.operators(t), me.rates(t), shifts):
            c = complex(s(t))
            H = H - 0.5j * w * (np.conj(c) * L - c * L.conj().T)
        return H

    return CanonicalMasterEquation.build(new_h, [new_op(l) for l in range(me.n_channels)],
                                         me.rate_fns, canonical=False, window=me.window)
