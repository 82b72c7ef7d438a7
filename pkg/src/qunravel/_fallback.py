"""Pure numpy implementation of the jump-trajectory kernel.

Vectorized over the trajectories of a batch, looping over time steps. It is
bit-for-bit the same algorithm as the compiled kernel; results agree to
floating-point round-off.

Arguments of :func:`simulate_batch`
-----------------------------------
psi0 : (n, d) complex
    Initial states.
M : (S, d, d) complex
    No-jump step propagator of ``d psi/dt = K psi`` with
    ``K = -i H - 1/2 sum_l r_l L_l^dagger L_l``; the state is renormalised
    after applying it.
Lops : (S, nL, d, d) complex
    Jump operators at the start of each step.
rates : (S, nL) float
    Paired (nonnegative) jump rates ``r_l``.
factors : (S, nL) float
    Step-process factor ``w_l / r_l`` applied on a jump in channel ``l``.
uniforms : (n, S) float
    One uniform variate per trajectory and step.
dt : float
record_steps : (R,) int
    Sorted step indices in ``[0, S]`` at which the state is recorded.
record_jumps : bool
    Also return the (n, S) array of jump channels (-1 for no jump).
"""
import numpy as np

from .errors import IntegrationError, StepSizeError


def simulate_batch(psi0, M, Lops, rates, factors, uniforms, dt, record_steps,
                   record_jumps=False):
    psi = np.array(psi0, dtype=complex)
    n, d = psi.shape
    S, nL = rates.shape
    R = len(record_steps)
    psi_rec = np.zeros((n, R, d), dtype=complex)
    lam_rec = np.zeros((n, R))
    lam = np.ones(n)
    lam_max = np.ones(n)
    counts = np.zeros((n, nL), dtype=np.int64)
    jumps = np.full((n, S), -1, dtype=np.int32) if record_jumps else None
    rows = np.arange(n)

    rec = 0
    while rec < R and record_steps[rec] == 0:
        psi_rec[:, rec] = psi
        lam_rec[:, rec] = lam
        rec += 1

    for k in range(S):
        lpsi = np.einsum("lij,nj->nli", Lops[k], psi)
        nrm2 = np.einsum("nli,nli->nl", lpsi.real, lpsi.real) + np.einsum("nli,nli->nl", lpsi.imag, lpsi.imag)
        p = rates[k] * nrm2 * dt
        cum = np.cumsum(p, axis=1)
        total = cum[:, -1] if nL else np.zeros(n)
        if np.any(total > 0.5):
            i = int(np.argmax(total > 0.5))
            raise StepSizeError(f"trajectory {i}, step {k}: total jump probability "
                                f"{total[i]:.3g} exceeds 0.5; reduce dt")
        u = uniforms[:, k]
        jumped = u < total

        stay = ~jumped
        if np.any(stay):
            ps = psi[stay]
            new = ps @ M[k].T
            norm = np.sqrt(np.einsum("ni,ni->n", new.real, new.real) + np.einsum("ni,ni->n", new.imag, new.imag))
            if not np.all(np.isfinite(norm)) or np.any(norm == 0.0):
                i = int(np.flatnonzero(stay)[np.argmax(~np.isfinite(norm) | (norm == 0.0))])
                raise IntegrationError(f"trajectory {i}: non-finite state at step {k}", k * dt)
            psi[stay] = new / norm[:, None]

        if np.any(jumped):
            idx = rows[jumped]
            live = (p[idx] > 0.0)
            hit = live & (u[idx, None] < cum[idx])
            chosen = np.where(hit.any(axis=1), hit.argmax(axis=1),
                              nL - 1 - np.argmax(live[:, ::-1], axis=1))
            norm = np.sqrt(nrm2[idx, chosen])
            psi[idx] = lpsi[idx, chosen] / norm[:, None]
            lam[idx] *= factors[k, chosen]
            counts[idx, chosen] += 1
            if record_jumps:
                jumps[idx, k] = chosen
        np.maximum(lam_max, np.abs(lam), out=lam_max)

        while rec < R and record_steps[rec] == k + 1:
            psi_rec[:, rec] = psi
            lam_rec[:, rec] = lam
            rec += 1

    return psi_rec, lam_rec, lam_max, counts, jumps
