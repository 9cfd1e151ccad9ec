# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Negative binomial log-likelihood kernels (compiled hot path).

Mean/dispersion parameterization: y ~ NB(eta, gamma) with E[y] = eta and
Var[y] = eta + eta^2/gamma, i.e. size gamma and success probability
gamma/(gamma+eta).
"""

from libc.math cimport INFINITY, isfinite, lgamma, log
from libc.stdint cimport int64_t


cdef inline double _term(double yv, double eta, double gamma,
                         double lg_gamma, double log_gamma) noexcept nogil:
    cdef double lt = log(gamma + eta)
    cdef double out = lgamma(yv + gamma) - lg_gamma - lgamma(yv + 1.0)
    out += gamma * (log_gamma - lt)
    if yv > 0.0:
        out += yv * (log(eta) - lt)
    return out


def nb_loglik_sum(double[::1] eta, double gamma, int64_t[::1] y):
    """Sum of NB log-pmf values; -inf when any eta is non-finite or <= 0."""
    cdef Py_ssize_t i, n = eta.shape[0]
    cdef double total = 0.0
    cdef double lg_gamma, log_gamma
    if n != y.shape[0]:
        raise ValueError("eta and y length mismatch")
    if not (gamma > 0.0) or not isfinite(gamma):
        return -INFINITY
    lg_gamma = lgamma(gamma)
    log_gamma = log(gamma)
    with nogil:
        for i in range(n):
            if not isfinite(eta[i]) or eta[i] <= 0.0:
                total = -INFINITY
                break
            total += _term(<double> y[i], eta[i], gamma, lg_gamma, log_gamma)
    return total


def nb_logpmf_out(double[::1] eta, double gamma, int64_t[::1] y, double[::1] out):
    """Per-point NB log-pmf written into ``out``; invalid eta maps to -inf."""
    cdef Py_ssize_t i, n = eta.shape[0]
    cdef double lg_gamma, log_gamma
    if n != y.shape[0] or n != out.shape[0]:
        raise ValueError("array length mismatch")
    if not (gamma > 0.0) or not isfinite(gamma):
        with nogil:
            for i in range(n):
                out[i] = -INFINITY
        return
    lg_gamma = lgamma(gamma)
    log_gamma = log(gamma)
    with nogil:
        for i in range(n):
            if not isfinite(eta[i]) or eta[i] <= 0.0:
                out[i] = -INFINITY
            else:
                out[i] = _term(<double> y[i], eta[i], gamma, lg_gamma, log_gamma)
