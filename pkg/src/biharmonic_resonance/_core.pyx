# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled angular moment kernel.

For each radius pair (rho, R) and each n in 0..nterms-1 computes the weighted
angular sums of D^(p0+n) and D^(p0+n) log D, where D is the distance between
points of radii rho and R separated by the polar angle theta.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, sin, log, pow

cnp.import_array()

cdef enum:
    MAX_TERMS = 96


def power_log_moments(double[::1] rho, double[::1] big, double[::1] theta,
                      double[::1] weights, double p0, int nterms, bint with_log=True,
                      int threads=1):
    """Angular moments of D^(p0+n) and D^(p0+n) log D.

    Returns
    -------
    pow_avg, log_avg : ndarray, shape (nterms, npairs)
    """
    cdef Py_ssize_t npairs = rho.shape[0]
    cdef Py_ssize_t nq = theta.shape[0]
    cdef Py_ssize_t i, q
    if nterms > MAX_TERMS:
        raise ValueError("too many moment terms")
    cdef double[::1] s2 = np.empty(nq)
    pow_out = np.zeros((nterms, npairs))
    log_out = np.zeros((nterms, npairs))
    cdef double[:, ::1] pw = pow_out
    cdef double[:, ::1] lg = log_out
    for q in range(nq):
        s2[q] = sin(0.5 * theta[q]) ** 2
    for i in prange(npairs, nogil=True, num_threads=threads, schedule="static"):
        _pair_moments(rho[i], big[i], s2, weights, p0, nterms, with_log, pw, lg, i)
    return pow_out, log_out


cdef void _pair_moments(double a, double b, double[::1] s2, double[::1] weights,
                        double p0, int nterms, bint with_log, double[:, ::1] pw,
                        double[:, ::1] lg, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t q
    cdef int n
    cdef double dist, ld, term
    cdef double accp[MAX_TERMS]
    cdef double accl[MAX_TERMS]
    for n in range(nterms):
        accp[n] = 0.0
        accl[n] = 0.0
    for q in range(s2.shape[0]):
        dist = sqrt((b - a) * (b - a) + 4.0 * a * b * s2[q])
        if dist <= 0.0:
            continue
        term = pow(dist, p0) * weights[q]
        if with_log:
            ld = log(dist)
            for n in range(nterms):
                accp[n] += term
                accl[n] += term * ld
                term = term * dist
        else:
            for n in range(nterms):
                accp[n] += term
                term = term * dist
    for n in range(nterms):
        pw[n, i] = accp[n]
        lg[n, i] = accl[n]
