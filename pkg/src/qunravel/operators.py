"""Dense complex linear algebra and superoperators.

Operators are plain ``numpy`` complex arrays. Superoperators act on
column-stacked operators, so ``X -> A X B^dagger`` is ``kron(conj(B), A)``.
"""
import math

import numpy as np

from .errors import DimensionError, IllConditionedError, NotHermitianError, NotPSDError
from .tolerances import get_tolerances

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# basis ordering (|e>, |g>): sigma_z |e> = +|e>
SIGMA_PLUS = (SIGMA_X + 1j * SIGMA_Y) / 2
SIGMA_MINUS = (SIGMA_X - 1j * SIGMA_Y) / 2
IDENTITY_2 = np.eye(2, dtype=complex)


def _square(a, name="matrix"):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


def dagger(a):
    return np.conj(np.swapaxes(a, -1, -2))


def is_hermitian(a, tol=None):
    tol = get_tolerances().hermitian if tol is None else tol
    a = np.asarray(a)
    return bool(np.max(np.abs(a - dagger(a)), initial=0.0) <= tol)


def hermitize(a):
    return 0.5 * (a + dagger(a))


def hs_inner(a, b):
    """Hilbert-Schmidt inner product ``Tr(a^dagger b)``."""
    a = _square(a, "a")
    b = _square(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def hs_norm(a):
    return float(np.linalg.norm(a))


def hs_distance(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def kron(a, b):
    """Kronecker product of two matrices (broadcast form; ``np.kron`` is slow
    for the small operands used here)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    (m, n), (p, q) = a.shape, b.shape
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(m * p, n * q)


def partial_trace_first(g, weight):
    """``Tr_1((weight (x) 1) g)`` for ``g`` acting on ``C^2 (x) H``."""
    g = _square(g, "g")
    weight = np.asarray(weight)
    if weight.shape != (2, 2):
        raise DimensionError("weight must be 2x2")
    if g.shape[0] % 2:
        raise DimensionError(f"dimension {g.shape[0]} is not even")
    d = g.shape[0] // 2
    blocks = g.reshape(2, d, 2, d)
    return np.einsum("ji,iajb->ab", weight, blocks)


def blocks(g):
    """Split a ``2d x 2d`` matrix into its four ``d x d`` blocks."""
    g = _square(g, "g")
    d = g.shape[0] // 2
    return g[:d, :d], g[:d, d:], g[d:, :d], g[d:, d:]


def dissipator(L, rho):
    """``D_L(rho) = L rho L^dagger - {L^dagger L, rho}/2``."""
    L = _square(L, "L")
    rho = _square(rho, "rho")
    if L.shape != rho.shape:
        raise DimensionError(f"shape mismatch {L.shape} vs {rho.shape}")
    Ld = L.conj().T
    LdL = Ld @ L
    return L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)


def vec(a):
    return np.asarray(a).reshape(-1, order="F")


def unvec(v, d=None):
    v = np.asarray(v)
    if d is None:
        d = math.isqrt(v.shape[0])
    return v.reshape(d, d, order="F")


def sandwich_superoperator(A, B=None):
    """Superoperator of ``X -> A X B^dagger`` (``B`` defaults to ``A``)."""
    B = A if B is None else B
    return kron(np.conj(B), A)


def identity_superoperator(d):
    return np.eye(d * d, dtype=complex)


def apply_superoperator(P, x):
    d = x.shape[0]
    return unvec(P @ vec(x), d)


def generator_superoperator(me, t):
    """Matrix of the full master-equation right-hand side at time ``t``.

    ``me`` needs ``dim``, ``hamiltonian(t)``, ``operators(t)`` and
    ``rates(t)``.
    """
    d = me.dim
    eye = np.eye(d, dtype=complex)
    # K = -iH - 1/2 sum w L^+L;  X -> K X + X K^+  plus the jump terms
    K = -1j * np.asarray(me.hamiltonian(t), dtype=complex)
    G = np.zeros((d * d, d * d), dtype=complex)
    for L, w in zip(me.operators(t), me.rates(t)):
        if w == 0.0:
            continue
        K -= 0.5 * w * (L.conj().T @ L)
        G += w * kron(L.conj(), L)
    G += kron(eye, K) + kron(K.conj(), eye)
    return G


def _n_steps(t0, t1, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    span = t1 - t0
    return max(1, math.ceil(span / dt - 1e-9)) if span > 0 else 0


def cumulative_integral(f, times):
    """``int_{times[0]}^{t} f`` at every grid time, by Simpson's rule on each
    step (``f`` is also sampled at the step midpoints)."""
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        return np.zeros(times.size)
    h = np.diff(times)
    ends = np.array([f(t) for t in times], dtype=float)
    mids = np.array([f(t) for t in times[:-1] + 0.5 * h], dtype=float)
    steps = h / 6.0 * (ends[:-1] + 4.0 * mids + ends[1:])
    return np.concatenate([[0.0], np.cumsum(steps)])


def rk4_linear(generator, y0, t0, t1, dt, callback=None):
    """Classic fixed-step RK4 for ``dy/dt = generator(t) @ y``.

    The step is shrunk so an integer number of steps spans ``[t0, t1]``.
    ``callback(k, t, y)`` is invoked at every grid point including ``t0``.
    Returns the final ``y``.
    """
    n = _n_steps(t0, t1, dt)
    y = np.array(y0, dtype=complex)
    if callback is not None:
        callback(0, t0, y)
    if n == 0:
        return y
    h = (t1 - t0) / n
    g_start = generator(t0)
    for k in range(n):
        t = t0 + k * h
        g_mid = generator(t + 0.5 * h)
        g_end = generator(t0 + (k + 1) * h)
        k1 = g_start @ y
        k2 = g_mid @ (y + 0.5 * h * k1)
        k3 = g_mid @ (y + 0.5 * h * k2)
        k4 = g_end @ (y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        g_start = g_end
        if callback is not None:
            callback(k + 1, t0 + (k + 1) * h, y)
    return y


def propagator(me, t0, t1, dt):
    """Time-ordered flow of ``me`` from ``t0`` to ``t1`` as a superoperator."""
    d = me.dim
    return rk4_linear(lambda t: generator_superoperator(me, t),
                      identity_superoperator(d), t0, t1, dt)


def inverse_flow(P, max_condition=1e12):
    P = _square(P, "flow")
    cond = float(np.linalg.cond(P))
    if not np.isfinite(cond) or cond > max_condition:
        raise IllConditionedError(f"flow condition number {cond:.3e} exceeds {max_condition:.1e}", cond)
    return np.linalg.inv(P)


def flow_condition(P):
    return float(np.linalg.cond(P))


def choi_matrix(P):
    """``C = sum_ij E_ij (x) p(E_ij)`` for the superoperator ``P``."""
    P = _square(P, "superoperator")
    d = math.isqrt(P.shape[0])
    if d * d != P.shape[0]:
        raise DimensionError("superoperator size is not a perfect square")
    # P[(b*d + a), (j*d + i)] = p(E_ij)[a, b]  (column stacking)
    return P.reshape(d, d, d, d).transpose(3, 1, 2, 0).reshape(d * d, d * d)


def superoperator_from_map(fn, d):
    """Build the matrix of an arbitrary linear map on ``d x d`` matrices."""
    P = np.empty((d * d, d * d), dtype=complex)
    for j in range(d):
        for i in range(d):
            E = np.zeros((d, d), dtype=complex)
            E[i, j] = 1.0
            P[:, j * d + i] = vec(fn(E))
    return P


def min_eigenvalue(a):
    return float(np.linalg.eigvalsh(hermitize(np.asarray(a)))[0])


def psd_sqrt(a):
    """Hermitian square root of a positive semidefinite matrix.

    Eigenvalues in ``[-psd_tol, 0)`` are clipped to zero.
    """
    a = _square(a)
    tol = get_tolerances()
    if not is_hermitian(a, tol.hermitian * max(1.0, np.max(np.abs(a), initial=0.0))):
        raise NotHermitianError("psd_sqrt needs a Hermitian matrix")
    vals, vecs = np.linalg.eigh(hermitize(a))
    if vals[0] < -tol.psd:
        raise NotPSDError(f"matrix has eigenvalue {vals[0]:.3e} < -{tol.psd:.0e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def random_density(d, rng, rank=None):
    """Random density matrix (Ginibre ensemble of the given rank)."""
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_state(d, rng):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def check_density(rho, trace=1.0):
    """Raise if ``rho`` is not Hermitian with the given trace."""
    rho = _square(rho, "rho")
    tol = get_tolerances()
    if not is_hermitian(rho):
        raise NotHermitianError("density matrix is not Hermitian")
    tr = np.trace(rho)
    if abs(tr - trace) > tol.trace:
        raise ValueError(f"trace {tr.real:.12g} differs from {trace}")
    return rho
