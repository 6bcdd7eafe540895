# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner kernels for the Metropolis-within-Gibbs sweep.

Same contracts as ``_kernels_py``; see that module for documentation.
"""
from libc.math cimport exp, log, log1p, fmin, fmax, nextafter, INFINITY, NAN, isnan
from scipy.special.cython_special cimport log_ndtr, ndtri_exp

import numpy as np


cdef inline double _log_sigmoid(double u) noexcept nogil:
    if u >= 0:
        return -log1p(exp(-u))
    return u - log1p(exp(u))


cdef inline double _sigmoid(double u) noexcept nogil:
    cdef double e
    if u >= 0:
        return 1.0 / (1.0 + exp(-u))
    e = exp(u)
    return e / (1.0 + e)


cdef inline double _ordinal_ll(long y, double eta, const double[::1] cuts, long K) noexcept nogil:
    cdef double hi, lo, r
    if y == 1:
        return _log_sigmoid(cuts[0] + eta)
    if y == K:
        return _log_sigmoid(-(cuts[K - 2] + eta))
    hi = cuts[y - 1] + eta
    lo = cuts[y - 2] + eta
    r = _log_sigmoid(hi) + _log_sigmoid(-lo) + log1p(-exp(lo - hi))
    if isnan(r):
        return -INFINITY
    return r


cdef inline double _truncnorm(double mean, double sd, double bound, int upper, double u) noexcept nogil:
    cdef double b = (bound - mean) / sd
    cdef double x, res
    if upper:
        b = -b
    x = ndtri_exp(log(u) + log_ndtr(b))
    if upper:
        x = -x
    res = mean + sd * x
    if upper:
        return fmax(res, nextafter(bound, INFINITY))
    return fmin(res, bound)


def log_sigmoid(u):
    cdef double[::1] a = np.ascontiguousarray(u, dtype=np.float64).ravel()
    out = np.empty(a.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        o[i] = _log_sigmoid(a[i])
    return out.reshape(np.shape(u))


def sigmoid(u):
    cdef double[::1] a = np.ascontiguousarray(u, dtype=np.float64).ravel()
    out = np.empty(a.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        o[i] = _sigmoid(a[i])
    return out.reshape(np.shape(u))


def truncnorm_draw(mean, sd, bound, upper, u, double[::1] out):
    cdef Py_ssize_t n = out.shape[0], i
    cdef const double[::1] m = np.ascontiguousarray(np.broadcast_to(mean, (n,)), dtype=np.float64)
    cdef const double[::1] s = np.ascontiguousarray(np.broadcast_to(sd, (n,)), dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(np.broadcast_to(bound, (n,)), dtype=np.float64)
    cdef const signed char[::1] up = np.ascontiguousarray(np.broadcast_to(upper, (n,)), dtype=np.int8)
    cdef const double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    for i in range(n):
        out[i] = _truncnorm(m[i], s[i], b[i], up[i], uu[i])
    return np.asarray(out)


def ordinal_loglik(y, eta, cuts, double[::1] out):
    cdef const long[::1] yy = np.ascontiguousarray(y, dtype=np.int_)
    cdef const double[::1] e = np.ascontiguousarray(eta, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(cuts, dtype=np.float64)
    cdef long K = c.shape[0] + 1
    cdef Py_ssize_t i
    for i in range(out.shape[0]):
        out[i] = _ordinal_ll(yy[i], e[i], c, K)
    return np.asarray(out)


def ordinal_cumsum(eta, cuts, double[::1] out):
    cdef const double[::1] e = np.ascontiguousarray(eta, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(cuts, dtype=np.float64)
    cdef Py_ssize_t i, k
    cdef double acc
    for i in range(out.shape[0]):
        acc = 0.0
        for k in range(c.shape[0]):
            acc += _sigmoid(c[k] + e[i])
        out[i] = acc
    return np.asarray(out)


def stratum_mh_ordinal(double[::1] s, y, eta_base, double gamma, cuts, mean,
                       double sd, bound, upper, u_prop, u_acc):
    cdef Py_ssize_t n = s.shape[0], i
    cdef const long[::1] yy = np.ascontiguousarray(y, dtype=np.int_)
    cdef const double[::1] e = np.ascontiguousarray(eta_base, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(cuts, dtype=np.float64)
    cdef const double[::1] m = np.ascontiguousarray(mean, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(bound, dtype=np.float64)
    cdef const signed char[::1] up = np.ascontiguousarray(upper, dtype=np.int8)
    cdef const double[::1] up_u = np.ascontiguousarray(u_prop, dtype=np.float64)
    cdef const double[::1] acc_u = np.ascontiguousarray(u_acc, dtype=np.float64)
    cdef long K = c.shape[0] + 1
    cdef long accepted = 0
    cdef double prop, diff
    for i in range(n):
        prop = _truncnorm(m[i], sd, b[i], up[i], up_u[i])
        diff = _ordinal_ll(yy[i], e[i] + gamma * prop, c, K) - _ordinal_ll(yy[i], e[i] + gamma * s[i], c, K)
        if log(acc_u[i]) < diff:
            s[i] = prop
            accepted += 1
    return accepted
