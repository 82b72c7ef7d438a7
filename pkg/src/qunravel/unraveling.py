"""Monte Carlo jump unraveling with the influence martingale.

Each trajectory carries a unit state vector ``psi_t`` driven by the paired CP
rates ``r_l = w_l + c`` and a step process ``lambda_t`` multiplied by
``w_l / r_l`` at every jump in channel ``l``. The influence martingale is
``mu_t = exp(g int c ds) lambda_t``; its exponential factor is path
independent and is kept separately (log domain) so it never overflows the
per-path state.

Ensemble averages give ``E[mu psi psi^+]`` (the signed-rate solution) and
``E[psi psi^+]`` (the paired CP solution).

Time stepping: at most one jump per step, drawn with probability
``r_l ||L_l psi||^2 dt`` from the state at the start of the step. Without a
jump the state is advanced by a tabulated RK4 propagator of the linear
no-jump equation and renormalised, which reproduces the nonlinear no-jump
drift to fourth order.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from . import operators as ops
from .equations import CanonicalMasterEquation, PairedEquations, optimal_c, pair, povm_sum
from .errors import NotPSDError, StepSizeError
from .tolerances import get_tolerances

MAX_SEED = 2**64 - 1


# -- random numbers ---------------------------------------------------------

def trajectory_uniforms(seed, index, size):
    """Uniform variates for one trajectory.

    Philox is counter based; keying it by ``(seed, index)`` gives each
    trajectory its own stream regardless of batching or thread count.
    """
    if not 0 <= seed <= MAX_SEED:
        raise ValueError("seed must be an unsigned 64-bit integer")
    key = np.array([seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).random(size)


# -- initial states ---------------------------------------------------------

class InitialStateSampler:
    """Draws ``psi0`` so that ``E[psi0 psi0^+]`` equals the given state.

    A 1-d input is a pure state; a 2-d input is a density matrix sampled
    through its eigen-decomposition.
    """

    def __init__(self, state):
        state = np.asarray(state, dtype=complex)
        if state.ndim == 1:
            norm = np.linalg.norm(state)
            if abs(norm - 1.0) > 1e-9:
                raise ValueError(f"initial state has norm {norm:.12g}, expected 1")
            self.vectors = state[None, :] / norm
            self.weights = np.ones(1)
        elif state.ndim == 2:
            ops.check_density(state)
            vals, vecs = np.linalg.eigh(ops.hermitize(state))
            if vals[0] < -get_tolerances().psd:
                raise NotPSDError(f"initial density matrix has eigenvalue {vals[0]:.3e}")
            vals = np.clip(vals, 0.0, None)
            keep = vals > 0.0
            self.vectors = vecs[:, keep].T.copy()
            self.weights = vals[keep] / vals[keep].sum()
        else:
            raise ValueError("initial state must be a vector or a density matrix")
        self._cum = np.cumsum(self.weights)
        self._cum[-1] = 1.0

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def density(self):
        return np.einsum("k,ki,kj->ij", self.weights, self.vectors, self.vectors.conj())

    def pick(self, u):
        idx = np.searchsorted(self._cum, np.asarray(u), side="right")
        return self.vectors[np.minimum(idx, len(self.weights) - 1)]


# -- tabulation of the paired equation on the step grid ----------------------

@dataclass
class _Tables:
    times: np.ndarray        # (S+1,)
    dt: float
    M: np.ndarray            # (S, d, d) no-jump step propagators
    Lops: np.ndarray         # (S, nL, d, d)
    rates: np.ndarray        # (S, nL) paired rates
    factors: np.ndarray      # (S, nL) w / r
    log_growth: np.ndarray   # (S+1,) g int_0^t c ds (Simpson)
    log_envelope: np.ndarray  # (S+1,) g int c^2 / (c + min w) ds
    povm_constant: float


def _no_jump_generator(pr, t):
    me = pr.source
    Ls = me.operators(t)
    r = np.clip(pr.paired_rates(t), 0.0, None)
    return -1j * me.hamiltonian(t) - 0.5 * np.einsum("l,lji,ljk->ik", r, Ls.conj(), Ls)


def _tabulate(pr, t0, t1, dt):
    n = ops._n_steps(t0, t1, dt)
    if n == 0:
        raise ValueError("empty time window")
    h = (t1 - t0) / n
    times = t0 + h * np.arange(n + 1)
    me = pr.source
    d, nL = me.dim, me.n_channels
    eye = np.eye(d, dtype=complex)
    M = np.empty((n, d, d), dtype=complex)
    Lops = np.empty((n, nL, d, d), dtype=complex)
    rates = np.empty((n, nL))
    factors = np.zeros((n, nL))
    env_rate = np.zeros(n + 1)
    g = me.povm_constant
    K_start = _no_jump_generator(pr, times[0])
    for k, t in enumerate(times):
        c = pr.c(t)
        w = me.rates(t)
        if c > 0.0 and w.size and c + w.min() > 0.0:
            env_rate[k] = g * c * c / (c + w.min())
        elif c > 0.0:
            env_rate[k] = np.inf
        if k == n:
            break
        r = w + c
        if np.any(r < -1e-12):
            raise ValueError(f"negative paired rate {r.min():.3g} at t={t:.6g}")
        r = np.clip(r, 0.0, None)
        Lops[k] = me.operators(t)
        rates[k] = r
        np.divide(w, r, out=factors[k], where=r > 0.0)
        # one RK4 step of d psi/dt = K(t) psi as a matrix
        K_mid = _no_jump_generator(pr, t + 0.5 * h)
        K_end = _no_jump_generator(pr, times[k + 1])
        k1 = K_start
        k2 = K_mid @ (eye + 0.5 * h * k1)
        k3 = K_mid @ (eye + 0.5 * h * k2)
        k4 = K_end @ (eye + h * k3)
        M[k] = eye + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        K_start = K_end
    log_growth = g * ops.cumulative_integral(pr.c, times)
    with np.errstate(invalid="ignore"):
        log_envelope = np.concatenate([[0.0], np.cumsum(0.5 * h * (env_rate[1:] + env_rate[:-1]))])
    return _Tables(times, h, M, Lops, rates, factors, log_growth, log_envelope, g)


def _check_step(tab):
    worst = float(np.max(tab.rates, initial=0.0)) * tab.povm_constant * tab.dt
    if worst >= 0.05:
        raise StepSizeError(f"max_l r_l * g * dt = {worst:.3g} >= 0.05; reduce dt")


def _record_steps(n_steps, n_record):
    if n_record is None or n_record >= n_steps:
        return np.arange(n_steps + 1, dtype=np.int64)
    steps = np.round(np.linspace(0, n_steps, n_record + 1)).astype(np.int64)
    return np.unique(steps)


# -- drift ---------------------------------------------------------------------

def drift(pr, psi, t):
    """Norm-preserving no-jump drift of the state vector at time ``t``."""
    psi = np.asarray(psi, dtype=complex)
    me = pr.source
    f = -1j * (me.hamiltonian(t) @ psi)
    for L, r in zip(me.operators(t), pr.paired_rates(t)):
        Lpsi = L @ psi
        f -= 0.5 * r * (L.conj().T @ Lpsi - np.vdot(Lpsi, Lpsi).real * psi)
    return f


# -- single trajectories -------------------------------------------------------

@dataclass
class Trajectory:
    times: np.ndarray
    psi: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    jumps: list
    seed: int
    index: int = 0

    @property
    def growth(self):
        """``mu / lambda``, the path-independent factor ``exp(g int c)``."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.mu / self.lam


def _run(tab, psi0, uniforms, record_steps, record_jumps, backend):
    kernel = _backend.get_kernel(backend)[1] if backend else _backend.simulate_batch
    return kernel(np.ascontiguousarray(psi0, dtype=complex), tab.M, tab.Lops,
                  tab.rates, tab.factors, np.ascontiguousarray(uniforms),
                  float(tab.dt), np.ascontiguousarray(record_steps, dtype=np.int64),
                  record_jumps)


def simulate_trajectory(pr, psi0, t0, t1, dt, seed, index=0, record_every=1, backend=None):
    """One realisation of the unraveling.

    ``psi0`` may be a state vector or a density matrix (sampled with the
    trajectory's own first variate). Trajectory ``index`` of an ensemble run
    with the same seed follows exactly this path.
    """
    tab = _tabulate(pr, t0, t1, dt)
    _check_step(tab)
    S = len(tab.times) - 1
    sampler = InitialStateSampler(psi0)
    if sampler.dim != pr.source.dim:
        raise ValueError("initial state dimension does not match the equation")
    u = trajectory_uniforms(seed, index, S + 1)
    start = sampler.pick(u[:1])
    steps = np.unique(np.append(np.arange(0, S + 1, record_every), S)).astype(np.int64)
    psi_rec, lam_rec, _, _, jumps = _run(tab, start, u[None, 1:], steps, True, backend)
    k_jump = np.flatnonzero(jumps[0] >= 0)
    jump_list = [(float(tab.times[k + 1]), int(jumps[0, k])) for k in k_jump]
    lam = lam_rec[0]
    mu = np.exp(tab.log_growth[steps]) * lam
    return Trajectory(tab.times[steps], psi_rec[0], mu, lam, jump_list, seed, index)


# -- ensembles -------------------------------------------------------------------

@dataclass
class EnsembleEstimate:
    """Sample means on the record grid.

    Standard errors of complex quantities are stored as complex numbers whose
    real (imaginary) part is the standard error of the real (imaginary) part.
    """

    times: np.ndarray
    rho_hat: np.ndarray
    rho_tilde_hat: np.ndarray
    mu_mean: np.ndarray
    mu_sq_mean: np.ndarray
    n_traj: int
    se_rho_hat: np.ndarray
    se_rho_tilde_hat: np.ndarray
    se_mu: np.ndarray
    se_mu_sq: np.ndarray
    omega_hat: np.ndarray       # mean of (mu - 1) psi psi^+
    se_omega_hat: np.ndarray
    growth: np.ndarray          # exp(g int c)
    envelope: np.ndarray        # analytic bound on E[mu^2] - 1
    lambda_abs_max: float
    jump_counts: np.ndarray
    killed: int = 0             # paths whose step process reached exactly zero
    backend: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def hs_se_rho_hat(self):
        """Frobenius combination of entrywise standard errors."""
        return np.sqrt(np.sum(self.se_rho_hat.real ** 2 + self.se_rho_hat.imag ** 2, axis=(1, 2)))

    @property
    def hs_se_rho_tilde_hat(self):
        return np.sqrt(np.sum(self.se_rho_tilde_hat.real ** 2 + self.se_rho_tilde_hat.imag ** 2, axis=(1, 2)))


class _Accumulator:
    def __init__(self, R, d):
        self.n = 0
        z = lambda *s: np.zeros(s)  # noqa: E731
        self.s = {k: z(R, d, d) for k in ("mr_re", "mr_im", "r_re", "r_im", "om_re", "om_im")}
        self.q = {k: z(R, d, d) for k in self.s}
        self.mu = z(R)
        self.mu2 = z(R)
        self.mu4 = z(R)
        self.lam_max = 0.0
        self.killed = 0
        self.counts = None

    def add(self, psi_rec, mu, lam_max, counts, lam_final):
        P = np.einsum("nri,nrj->nrij", psi_rec, psi_rec.conj())
        parts = {"r": P, "mr": mu[:, :, None, None] * P, "om": (mu - 1.0)[:, :, None, None] * P}
        for name, arr in parts.items():
            for suffix, comp in (("re", arr.real), ("im", arr.imag)):
                self.s[f"{name}_{suffix}"] += comp.sum(axis=0)
                self.q[f"{name}_{suffix}"] += (comp * comp).sum(axis=0)
        self.mu += mu.sum(axis=0)
        mu2 = mu * mu
        self.mu2 += mu2.sum(axis=0)
        self.mu4 += (mu2 * mu2).sum(axis=0)
        self.lam_max = max(self.lam_max, float(lam_max.max(initial=0.0)))
        self.killed += int(np.count_nonzero(lam_final == 0.0))
        c = counts.sum(axis=0)
        self.counts = c if self.counts is None else self.counts + c
        self.n += psi_rec.shape[0]


def _mean_se(s, q, n):
    mean = s / n
    if n < 2:
        return mean, np.zeros_like(mean)
    var = np.clip((q / n - mean * mean) * n / (n - 1), 0.0, None)
    return mean, np.sqrt(var / n)


def _complex_stats(acc, name):
    m_re, se_re = _mean_se(acc.s[name + "_re"], acc.q[name + "_re"], acc.n)
    m_im, se_im = _mean_se(acc.s[name + "_im"], acc.q[name + "_im"], acc.n)
    return m_re + 1j * m_im, se_re + 1j * se_im


def ensemble_estimate(pr, initial, t0, t1, dt, n_traj, seed, n_record=100,
                      batch_size=None, threads=1, backend=None):
    """Run ``n_traj`` trajectories and return ensemble means with errors.

    ``initial`` is a state vector or a density matrix. Batches are reduced
    in index order, so results do not depend on ``threads``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    tab = _tabulate(pr, t0, t1, dt)
    _check_step(tab)
    S = len(tab.times) - 1
    sampler = InitialStateSampler(initial)
    if sampler.dim != pr.source.dim:
        raise ValueError("initial state dimension does not match the equation")
    steps = _record_steps(S, n_record)
    growth = np.exp(tab.log_growth[steps])
    d = pr.source.dim
    if batch_size is None:
        batch_size = int(max(64, min(4096, 4_000_000 // (S + 1))))
    name = backend or _backend.BACKEND

    def work(start):
        stop = min(n_traj, start + batch_size)
        u = np.stack([trajectory_uniforms(seed, i, S + 1) for i in range(start, stop)])
        psi0 = sampler.pick(u[:, 0])
        out = _run(tab, psi0, u[:, 1:], steps, False, backend)
        return out

    acc = _Accumulator(len(steps), d)
    starts = range(0, n_traj, batch_size)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = pool.map(work, starts)
            for psi_rec, lam_rec, lam_max, counts, _ in results:
                acc.add(psi_rec, growth * lam_rec, lam_max, counts, lam_rec[:, -1])
    else:
        for start in starts:
            psi_rec, lam_rec, lam_max, counts, _ = work(start)
            acc.add(psi_rec, growth * lam_rec, lam_max, counts, lam_rec[:, -1])

    rho_hat, se_rho_hat = _complex_stats(acc, "mr")
    rho_tilde, se_rho_tilde = _complex_stats(acc, "r")
    omega, se_omega = _complex_stats(acc, "om")
    mu_mean, se_mu = _mean_se(acc.mu, acc.mu2, acc.n)
    mu_sq, se_mu_sq = _mean_se(acc.mu2, acc.mu4, acc.n)
    envelope = np.expm1(tab.log_envelope[steps])
    return EnsembleEstimate(
        tab.times[steps], rho_hat, rho_tilde, mu_mean, mu_sq, acc.n,
        se_rho_hat, se_rho_tilde, se_mu, se_mu_sq, omega, se_omega,
        growth, envelope, acc.lam_max, acc.counts, acc.killed, name)


# -- variance bound --------------------------------------------------------------

@dataclass
class BoundReport:
    times: np.ndarray
    distance_sq: np.ndarray      # Tr(rho_hat - rho_tilde_hat)^2
    mu_sq_excess: np.ndarray     # E[mu^2] - 1
    difference: np.ndarray       # excess - distance
    envelope: np.ndarray         # analytic bound on the excess
    combined_se: np.ndarray
    violations: np.ndarray       # distance exceeds excess by > 3 SE
    envelope_violations: np.ndarray
    warnings: list

    @property
    def ok(self):
        return not (self.violations.any() or self.envelope_violations.any())


def variance_bound_check(est, n_sigma=3.0):
    """Compare the squared HS distance of the two estimates with the
    martingale variance and with its analytic growth envelope."""
    delta = est.rho_hat - est.rho_tilde_hat
    dist2 = np.sum(np.abs(delta) ** 2, axis=(1, 2))
    # delta method on sum |omega_ij|^2, omega = rho_hat - rho_tilde_hat sample-wise
    om = est.omega_hat
    se_dist = 2.0 * np.sqrt(np.sum((om.real * est.se_omega_hat.real) ** 2
                                   + (om.imag * est.se_omega_hat.imag) ** 2, axis=(1, 2)))
    excess = est.mu_sq_mean - 1.0
    comb = np.sqrt(se_dist ** 2 + est.se_mu_sq ** 2)
    warnings = []
    if est.n_traj < 2:
        warnings.append("n_traj < 2: standard errors are undefined; the check is not meaningful")
    violations = dist2 > excess + n_sigma * comb + 1e-12
    env_viol = excess > est.envelope + n_sigma * est.se_mu_sq + 1e-9 * (1.0 + est.envelope)
    return BoundReport(est.times, dist2, excess, excess - dist2, est.envelope, comb,
                       violations, env_viol, warnings)


# -- non-canonical sets: POVM padding ---------------------------------------------

def pad_povm(operators, grid, margin=1e-6):
    """Complete ``{L_l}`` with ``L_0`` so that ``sum_{l>=0} L^+L = g' 1``.

    Returns ``(padded operator callables with L_0 first, g')``.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    fns = [f if callable(f) else (lambda t, m=np.array(f, dtype=complex): m) for f in operators]
    top = 0.0
    for t in grid:
        s = povm_sum([f(t) for f in fns])
        top = max(top, float(np.linalg.eigvalsh(ops.hermitize(s))[-1]))
    g_prime = (1.0 + margin) * top
    d = np.asarray(fns[0](grid[0])).shape[0]
    eye = np.eye(d)

    def L0(t):
        rem = g_prime * eye - povm_sum([f(t) for f in fns])
        try:
            return ops.psd_sqrt(ops.hermitize(rem))
        except NotPSDError as exc:
            raise NotPSDError(f"padding remainder not PSD at t={t:.6g}: {exc}") from None

    return [L0] + fns, g_prime


def padded_equation(me, grid, margin=1e-6):
    """``me`` with the padding channel ``L_0`` prepended at rate ``w_0 = 0``."""
    padded, g_prime = pad_povm(me.operator_fns, grid, margin)
    return CanonicalMasterEquation(me.dim, me.hamiltonian_fn, tuple(padded),
                                   (lambda t: 0.0,) + tuple(me.rate_fns), g_prime,
                                   False, me.window)


def _padded_pair(me, t0, t1, dt, c, margin):
    n = ops._n_steps(t0, t1, dt)
    grid = np.linspace(t0, t1, n + 1)
    padded = padded_equation(me, grid, margin)
    if c is None:
        c = lambda t: optimal_c(me, t)  # noqa: E731
    return pair(padded, c, grid=grid)


def simulate_noncanonical(me, psi0, t0, t1, dt, seed, c=None, margin=1e-6, **kw):
    """Trajectory of a POVM-incomplete equation via padding.

    Channel 0 is the padding operator with ``w_0 = 0``, so a jump there
    sets the martingale to zero.
    """
    return simulate_trajectory(_padded_pair(me, t0, t1, dt, c, margin), psi0, t0, t1, dt, seed, **kw)


def ensemble_noncanonical(me, initial, t0, t1, dt, n_traj, seed, c=None, margin=1e-6, **kw):
    return ensemble_estimate(_padded_pair(me, t0, t1, dt, c, margin), initial, t0, t1, dt,
                             n_traj, seed, **kw)


__all__ = [
    "BoundReport", "EnsembleEstimate", "InitialStateSampler", "PairedEquations", "Trajectory",
    "drift", "ensemble_estimate", "ensemble_noncanonical", "pad_povm", "padded_equation",
    "simulate_noncanonical", "simulate_trajectory", "trajectory_uniforms", "variance_bound_check",
]

