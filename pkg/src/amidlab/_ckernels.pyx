# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see ``amidlab.kernels`` for the numpy fallbacks."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def enumerate_expectation(double[::1] coef, double[::1] base, double[::1] kappa, double[::1] prob):
    """Exact E_O[sum_i coef_i * (base_i + o_i * kappa_i)] by summing over all 2^n outcomes."""
    cdef Py_ssize_t n = coef.shape[0]
    cdef Py_ssize_t i
    cdef unsigned long long mask, n_out = 1ULL << n
    cdef double w, est, total = 0.0, const_part = 0.0
    for i in range(n):
        const_part += coef[i] * base[i]
    for mask in range(n_out):
        w = 1.0
        est = const_part
        for i in range(n):
            if (mask >> i) & 1ULL:
                w *= prob[i]
                est += coef[i] * kappa[i]
            else:
                w *= 1.0 - prob[i]
        total += w * est
    return total


def mc_estimates(double[::1] coef, double[::1] base, double[::1] kappa, double[::1] prob,
                 double[:, ::1] uniforms):
    """Estimator value for each row of uniforms, with o_i = [u_i < p_i]."""
    cdef Py_ssize_t m = uniforms.shape[0], n = uniforms.shape[1]
    cdef Py_ssize_t r, i
    cdef double const_part = 0.0, est
    out = np.empty(m, dtype=np.float64)
    step_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    cdef double[::1] step = step_arr
    for i in range(n):
        const_part += coef[i] * base[i]
        step[i] = coef[i] * kappa[i]
    for r in range(m):
        est = const_part
        for i in range(n):
            # branch-free: the comparison is random, so a branch mispredicts half the time
            est += step[i] * (uniforms[r, i] < prob[i])
        res[r] = est
    return out


def similarity_max(double[:, :, ::1] left, double[:, :, ::1] right,
                   cnp.uint8_t[:, ::1] left_mask, cnp.uint8_t[:, ::1] right_mask):
    """max_{t,s valid} <left[i,t], right[j,s]> for every (i, j); 0 where nothing is valid."""
    cdef Py_ssize_t b1 = left.shape[0], b2 = right.shape[0]
    cdef Py_ssize_t T1 = left.shape[1], T2 = right.shape[1], d = left.shape[2]
    cdef Py_ssize_t i, j, t, s, k
    cdef double best, dot
    cdef bint any_valid
    out = np.zeros((b1, b2), dtype=np.float64)
    cdef double[:, ::1] res = out
    for i in range(b1):
        for j in range(b2):
            any_valid = False
            best = 0.0
            for t in range(T1):
                if not left_mask[i, t]:
                    continue
                for s in range(T2):
                    if not right_mask[j, s]:
                        continue
                    dot = 0.0
                    for k in range(d):
                        dot += left[i, t, k] * right[j, s, k]
                    if not any_valid or dot > best:
                        best = dot
                        any_valid = True
            res[i, j] = best
    return out
