# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the probe quadratures.

Same signatures and results as :mod:`mfgcorner._ext.pykernels`.
"""

from libc.math cimport exp, cos, sin

import numpy as np
cimport numpy as cnp


def exp_sum(double tau,
            const double[::1] r, const double[::1] wr,
            const double[::1] zr, const double[::1] zi, const double[::1] wz):
    """sum_k wz[k] * sum_j wr[j] * exp(tau * r[j] * (zr[k] + 1j*zi[k]))"""
    cdef Py_ssize_t j, k, nj = r.shape[0], nk = zr.shape[0]
    cdef double sre = 0.0, sim = 0.0, are, aim, a, b, e, tr
    with nogil:
        for k in range(nk):
            are = 0.0
            aim = 0.0
            a = tau * zr[k]
            b = tau * zi[k]
            for j in range(nj):
                tr = r[j]
                e = wr[j] * exp(a * tr)
                are = are + e * cos(b * tr)
                aim = aim + e * sin(b * tr)
            sre = sre + wz[k] * are
            sim = sim + wz[k] * aim
    return complex(sre, sim)


def exp_dot(double tau, const double[:, ::1] pts, const double[::1] apex,
            const double[::1] xi, const double[::1] xi_perp,
            const double[::1] wre, const double[::1] wim):
    """sum_k (wre[k] + 1j*wim[k]) * exp(tau * (xi + 1j*xi_perp) . (pts[k] - apex))"""
    cdef Py_ssize_t k, d, nk = pts.shape[0], nd = pts.shape[1]
    cdef double sre = 0.0, sim = 0.0, a, b, dx, e, c, s
    with nogil:
        for k in range(nk):
            a = 0.0
            b = 0.0
            for d in range(nd):
                dx = pts[k, d] - apex[d]
                a = a + xi[d] * dx
                b = b + xi_perp[d] * dx
            e = exp(tau * a)
            c = e * cos(tau * b)
            s = e * sin(tau * b)
            sre = sre + wre[k] * c - wim[k] * s
            sim = sim + wre[k] * s + wim[k] * c
    return complex(sre, sim)
