"""Small numeric helpers: log-space binomials, integer-part rules, stable trig."""
import math

import numpy as np
from scipy.special import gammaln

SNAP_TOL = 1e-12


def ceil_plus(x: float) -> int:
    """Smallest integer strictly larger than ``x``."""
    return math.floor(x) + 1


def snap(u, tol: float = SNAP_TOL):
    """Round ``u`` to the nearest integer when it is within ``tol`` of it."""
    u = np.asarray(u, dtype=float)
    r = np.round(u)
    return np.where(np.abs(u - r) < tol, r, u)


def log_binom(n, k):
    """log C(n, k) for integer arrays with 0 <= k <= n (``-inf`` where k > n).

    For small ``k`` the product form sum(log(n - i)) - log k! is used since it
    keeps full relative precision; otherwise log-gamma.
    """
    n = np.asarray(n, dtype=float)
    k_arr = np.asarray(k, dtype=float)
    out = np.full(np.broadcast(n, k_arr).shape, -np.inf)
    n_b, k_b = np.broadcast_arrays(n, k_arr)
    ok = (k_b >= 0) & (k_b <= n_b)
    if np.ndim(k) == 0 and 0 <= int(k) <= 64:
        kk = int(k)
        i = np.arange(kk, dtype=float)
        vals = np.log(np.maximum(n_b[ok][:, None] - i, 1.0)).sum(axis=1) - math.lgamma(kk + 1)
    else:
        nn, kk = n_b[ok], k_b[ok]
        vals = gammaln(nn + 1) - gammaln(kk + 1) - gammaln(nn - kk + 1)
    out[ok] = vals
    return out if out.ndim else float(out)


def poly_binom(x: float, m: int) -> float:
    """Generalized binomial coefficient C(x, m) = x(x-1)...(x-m+1)/m! for real x."""
    out = 1.0
    for i in range(m):
        out *= (x - i) / (i + 1)
    return out


def sin_minus_id(y):
    """sin(y) - y without cancellation for small |y|."""
    y = np.asarray(y, dtype=float)
    out = np.sin(y) - y
    small = np.abs(y) < 0.5
    if np.any(small):
        ys = y[small]
        y2 = ys * ys
        # alternating series -y^3/3! + y^5/5! - ...; 10 terms suffice below 0.5
        term = -ys * y2 / 6.0
        acc = term.copy()
        for j in range(2, 12):
            term = -term * y2 / ((2 * j) * (2 * j + 1))
            acc += term
        out[small] = acc
    return out


def cos_minus_one(y):
    s = np.sin(0.5 * np.asarray(y, dtype=float))
    return -2.0 * s * s


def logsumexp_signed(log_abs, signs):
    """Return (log|sum|, sign) of sum(sign_i * exp(log_abs_i))."""
    log_abs = np.asarray(log_abs, dtype=float)
    if log_abs.size == 0 or np.all(np.isneginf(log_abs)):
        return -np.inf, 0.0
    m = np.max(log_abs)
    total = math.fsum(np.asarray(signs) * np.exp(log_abs - m))
    if total == 0.0:
        return -np.inf, 0.0
    return m + math.log(abs(total)), math.copysign(1.0, total)
