# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled accumulation kernel; see sympconj.kernels.fallback for the contract."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline void matmul(double[:, ::1] out, double[:, ::1] A,
                        double[:, ::1] B, int m) noexcept nogil:
    cdef int i, j, k
    cdef double acc
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for k in range(m):
                acc += A[i, k] * B[k, j]
            out[i, j] = acc


cdef inline double defect(double[:, ::1] E, double[:, ::1] Phi,
                          double[:, ::1] J, double[:, ::1] scratch,
                          int m) noexcept nogil:
    # E = Phi^T J Phi - J, returns max-abs of E
    cdef int i, j, k
    cdef double acc, mx = 0.0
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for k in range(m):
                acc += J[i, k] * Phi[k, j]
            scratch[i, j] = acc
    for i in range(m):
        for j in range(m):
            acc = -J[i, j]
            for k in range(m):
                acc += Phi[k, i] * scratch[k, j]
            E[i, j] = acc
            if acc > mx:
                mx = acc
            elif -acc > mx:
                mx = -acc
    return mx


def accumulate(double[:, :, ::1] steps, double[:, ::1] J, double trigger,
               double ceiling, int max_fix_iters):
    cdef Py_ssize_t N = steps.shape[0]
    cdef int m = <int> steps.shape[1]
    cdef cnp.ndarray Phi_arr = np.empty((N + 1, m, m), dtype=np.float64)
    cdef double[:, :, ::1] Phi = Phi_arr
    cdef double[:, ::1] cur = np.eye(m)
    cdef double[:, ::1] tmp = np.empty((m, m))
    cdef double[:, ::1] E = np.empty((m, m))
    cdef double[:, ::1] scratch = np.empty((m, m))
    cdef double[:, ::1] invT = np.empty((m, m))
    cdef bint monitor = J.shape[0] > 0 and trigger == trigger and trigger != float("inf")
    cdef double max_drift = 0.0, d
    cdef bint ok = True
    cdef Py_ssize_t k
    cdef int i, j, it

    for i in range(m):
        for j in range(m):
            Phi[0, i, j] = cur[i, j]

    with nogil:
        for k in range(N):
            matmul(tmp, steps[k], cur, m)
            cur[:, :] = tmp
            if monitor:
                d = defect(E, cur, J, scratch, m)
                if d > trigger:
                    for it in range(max_fix_iters):
                        # invT = -J cur J  (symplectic inverse transpose)
                        matmul(scratch, cur, J, m)
                        matmul(invT, J, scratch, m)
                        for i in range(m):
                            for j in range(m):
                                invT[i, j] = -invT[i, j]
                        # cur += 1/2 J (invT E)
                        matmul(scratch, invT, E, m)
                        matmul(tmp, J, scratch, m)
                        for i in range(m):
                            for j in range(m):
                                cur[i, j] += 0.5 * tmp[i, j]
                        d = defect(E, cur, J, scratch, m)
                        if d <= trigger:
                            break
                if d > max_drift:
                    max_drift = d
                if d > ceiling:
                    ok = False
            for i in range(m):
                for j in range(m):
                    Phi[k + 1, i, j] = cur[i, j]

    return Phi_arr, max_drift, ok
