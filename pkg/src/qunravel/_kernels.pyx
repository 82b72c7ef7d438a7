# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled jump-trajectory kernel.

Same contract as ``qunravel._fallback.simulate_batch``; see that module for
the argument layout. Complex arrays are walked as interleaved (re, im)
doubles.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, isfinite
from libc.stdlib cimport malloc, free

from qunravel.errors import IntegrationError, StepSizeError

cnp.import_array()

ctypedef double complex cplx


cdef inline void matvec(const double* M, const double* x, double* out, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t a, j
    cdef double re, im, mr, mi, xr, xi
    for a in range(d):
        re = 0.0
        im = 0.0
        for j in range(d):
            mr = M[2 * (a * d + j)]
            mi = M[2 * (a * d + j) + 1]
            xr = x[2 * j]
            xi = x[2 * j + 1]
            re += mr * xr - mi * xi
            im += mr * xi + mi * xr
        out[2 * a] = re
        out[2 * a + 1] = im


def simulate_batch(cplx[:, ::1] psi0,
                   cplx[:, :, ::1] M,
                   cplx[:, :, :, ::1] Lops,
                   double[:, ::1] rates,
                   double[:, ::1] factors,
                   double[:, ::1] uniforms,
                   double dt,
                   long[::1] record_steps,
                   bint record_jumps=False):
    cdef Py_ssize_t n = psi0.shape[0]
    cdef Py_ssize_t d = psi0.shape[1]
    cdef Py_ssize_t S = M.shape[0]
    cdef Py_ssize_t nL = Lops.shape[1]
    cdef Py_ssize_t R = record_steps.shape[0]

    psi_rec_np = np.zeros((n, R, d), dtype=np.complex128)
    lam_rec_np = np.zeros((n, R), dtype=np.float64)
    lam_max_np = np.zeros(n, dtype=np.float64)
    counts_np = np.zeros((n, max(nL, 1)), dtype=np.int64)
    jumps_np = np.full((n, S if record_jumps else 0), -1, dtype=np.int32)
    cdef double[:, ::1] lam_rec = lam_rec_np
    cdef double[::1] lam_max = lam_max_np
    cdef long[:, ::1] counts = counts_np
    cdef int[:, ::1] jumps = jumps_np

    cdef double* rec_base = <double*> cnp.PyArray_DATA(psi_rec_np)
    cdef const double* psi0_base = <const double*> &psi0[0, 0] if n > 0 else NULL
    cdef const double* M_base = <const double*> &M[0, 0, 0] if S > 0 else NULL
    cdef const double* L_base = <const double*> &Lops[0, 0, 0, 0] if (S > 0 and nL > 0) else NULL

    cdef double* psi = <double*> malloc(2 * d * sizeof(double))
    cdef double* tmp = <double*> malloc(2 * d * sizeof(double))
    cdef double* lpsi = <double*> malloc(2 * (nL * d + 1) * sizeof(double))
    cdef double* nrm2 = <double*> malloc((nL + 1) * sizeof(double))
    cdef Py_ssize_t i, k, l, a, rec, chosen
    cdef Py_ssize_t dd2 = 2 * d * d
    cdef double lam, total, u, cum, norm, p, s
    cdef const double* Mk
    cdef const double* Lk
    cdef int status = 0
    cdef Py_ssize_t bad_traj = -1, bad_step = -1
    cdef double bad_value = 0.0

    try:
        with nogil:
            for i in range(n):
                for a in range(2 * d):
                    psi[a] = psi0_base[2 * d * i + a]
                lam = 1.0
                lam_max[i] = 1.0
                rec = 0
                while rec < R and record_steps[rec] == 0:
                    for a in range(2 * d):
                        rec_base[2 * d * (i * R + rec) + a] = psi[a]
                    lam_rec[i, rec] = lam
                    rec += 1
                for k in range(S):
                    Lk = L_base + k * nL * dd2
                    total = 0.0
                    for l in range(nL):
                        matvec(Lk + l * dd2, psi, lpsi + 2 * l * d, d)
                        s = 0.0
                        for a in range(2 * d):
                            s += lpsi[2 * l * d + a] * lpsi[2 * l * d + a]
                        nrm2[l] = s
                        total += rates[k, l] * s * dt
                    if total > 0.5:
                        status = 1
                        bad_traj = i
                        bad_step = k
                        bad_value = total
                        break
                    u = uniforms[i, k]
                    if u < total:
                        cum = 0.0
                        chosen = -1
                        for l in range(nL):
                            p = rates[k, l] * nrm2[l] * dt
                            cum += p
                            if p > 0.0 and u < cum:
                                chosen = l
                                break
                        if chosen < 0:
                            # round-off: u fell in [cum, total); take the last live channel
                            for l in range(nL):
                                if rates[k, l] * nrm2[l] > 0.0:
                                    chosen = l
                        norm = sqrt(nrm2[chosen])
                        for a in range(2 * d):
                            psi[a] = lpsi[2 * chosen * d + a] / norm
                        lam = lam * factors[k, chosen]
                        counts[i, chosen] += 1
                        if record_jumps:
                            jumps[i, k] = <int> chosen
                    else:
                        Mk = M_base + k * dd2
                        matvec(Mk, psi, tmp, d)
                        norm = 0.0
                        for a in range(2 * d):
                            norm += tmp[a] * tmp[a]
                        norm = sqrt(norm)
                        if not isfinite(norm) or norm == 0.0:
                            status = 2
                            bad_traj = i
                            bad_step = k
                            break
                        for a in range(2 * d):
                            psi[a] = tmp[a] / norm
                    if fabs(lam) > lam_max[i]:
                        lam_max[i] = fabs(lam)
                    while rec < R and record_steps[rec] == k + 1:
                        for a in range(2 * d):
                            rec_base[2 * d * (i * R + rec) + a] = psi[a]
                        lam_rec[i, rec] = lam
                        rec += 1
                if status != 0:
                    break
    finally:
        free(psi)
        free(tmp)
        free(lpsi)
        free(nrm2)

    if status == 1:
        raise StepSizeError(f"trajectory {bad_traj}, step {bad_step}: total jump "
                            f"probability {bad_value:.3g} exceeds 0.5; reduce dt")
    if status == 2:
        raise IntegrationError(f"trajectory {bad_traj}: non-finite state at step {bad_step}",
                               bad_step * dt)
    return psi_rec_np, lam_rec_np, lam_max_np, counts_np[:, :nL], (jumps_np if record_jumps else None)
