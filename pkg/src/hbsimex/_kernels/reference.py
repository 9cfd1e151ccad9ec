"""Pure-numpy twin of the compiled negative binomial kernels.

Selected automatically when the extension is unavailable (or forced via
HBSIMEX_PURE_PYTHON=1). Must stay numerically equivalent to _nbloglik.pyx.
"""

import numpy as np
from scipy.special import gammaln


def _logpmf(eta: np.ndarray, gamma: float, y: np.ndarray) -> np.ndarray:
    lt = np.log(gamma + eta)
    out = gammaln(y + gamma) - gammaln(gamma) - gammaln(y + 1.0)
    out += gamma * (np.log(gamma) - lt)
    pos = y > 0
    if np.any(pos):
        out[pos] += y[pos] * (np.log(eta[pos]) - lt[pos])
    return out


def nb_loglik_sum(eta, gamma: float, y) -> float:
    """Sum of NB log-pmf values; -inf when any eta is non-finite or <= 0."""
    eta = np.asarray(eta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if eta.shape[0] != y.shape[0]:
        raise ValueError("eta and y length mismatch")
    if not (gamma > 0.0) or not np.isfinite(gamma):
        return -np.inf
    if eta.size and (not np.all(np.isfinite(eta)) or np.any(eta <= 0.0)):
        return -np.inf
    return float(np.sum(_logpmf(eta, gamma, y)))


def nb_logpmf_out(eta, gamma: float, y, out) -> None:
    """Per-point NB log-pmf written into ``out``; invalid eta maps to -inf."""
    eta = np.asarray(eta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if eta.shape[0] != y.shape[0] or eta.shape[0] != out.shape[0]:
        raise ValueError("array length mismatch")
    if not (gamma > 0.0) or not np.isfinite(gamma):
        out[:] = -np.inf
        return
    bad = ~np.isfinite(eta) | (eta <= 0.0)
    safe = np.where(bad, 1.0, eta)
    out[:] = _logpmf(safe, gamma, y)
    out[bad] = -np.inf
