# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops for compound-loss simulation.

Both kernels consume a pre-drawn uniform stream so the random state stays in
numpy and the pure-python fallback sees exactly the same draws.  Severities
are never materialised: each event is transformed and accumulated in place,
which is what makes these loops worth compiling.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()


def pot_compound_sums(double[::1] uniforms, long long[::1] counts,
                      double mu, double tau, double threshold):
    """Per-simulation totals of ``threshold + mu*((1-u)^(-1/tau) - 1)``.

    ``uniforms`` holds the concatenated event draws; simulation ``j`` owns the
    next ``counts[j]`` entries.
    """
    cdef Py_ssize_t n_sims = counts.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(n_sims, dtype=np.float64)
    cdef double[::1] totals = out
    cdef Py_ssize_t j, k, pos = 0
    cdef double acc, inv_tau = -1.0 / tau
    with nogil:
        for j in range(n_sims):
            acc = 0.0
            for k in range(counts[j]):
                acc += threshold + mu * (pow(1.0 - uniforms[pos], inv_tau) - 1.0)
                pos += 1
            totals[j] = acc
    return out


def pot_compound_capped_sums(double[::1] uniforms, long long[::1] counts,
                             double mu, double tau, double threshold, double cap):
    """Per-simulation totals and per-event-capped totals in one pass.

    Returns ``(totals, covered)`` where ``covered`` caps each event severity at
    ``cap`` before summing.
    """
    cdef Py_ssize_t n_sims = counts.shape[0]
    cdef cnp.ndarray[double, ndim=1] out_t = np.zeros(n_sims, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] out_c = np.zeros(n_sims, dtype=np.float64)
    cdef double[::1] totals = out_t
    cdef double[::1] covered = out_c
    cdef Py_ssize_t j, k, pos = 0
    cdef double sev, acc_t, acc_c, inv_tau = -1.0 / tau
    with nogil:
        for j in range(n_sims):
            acc_t = 0.0
            acc_c = 0.0
            for k in range(counts[j]):
                sev = threshold + mu * (pow(1.0 - uniforms[pos], inv_tau) - 1.0)
                acc_t += sev
                acc_c += sev if sev < cap else cap
                pos += 1
            totals[j] = acc_t
            covered[j] = acc_c
    return out_t, out_c
