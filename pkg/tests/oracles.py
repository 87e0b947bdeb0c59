"""Brute-force reference computations in extended precision (mpmath).

Nothing here imports the package: every value is recomputed from the
defining sums so the tests compare two independent code paths.
"""
from __future__ import annotations

import mpmath as mp

mp.mp.dps = 40


def geom_pmf(c, w):
    """P(W = w) = (1 - c) c^(w-1), w >= 1."""
    c = mp.mpf(c)
    return (1 - c) * c ** (w - 1) if w >= 1 else mp.mpf(0)


def negbin_pmf(r, c, w):
    """P(W = w) = C(w-1, r-1) (1-c)^r c^(w-r), w >= r (number of trials to r successes)."""
    c = mp.mpf(c)
    if w < r:
        return mp.mpf(0)
    return mp.binomial(w - 1, r - 1) * (1 - c) ** r * c ** (w - r)


def thinned(pmf, q, s, w_max=3000):
    """sum_w P(W = w) C(w, s) q^s (1-q)^(w-s), truncated at w_max."""
    q = mp.mpf(q)
    return mp.fsum(pmf(w) * mp.binomial(w, s) * q**s * (1 - q) ** (w - s)
                   for w in range(max(s, 1), w_max + 1))


def even_tail(pmf_s, x, s_max=4000):
    """P(W_q / 2 >= x, W_q even) from a p.m.f. of W_q."""
    start = int(mp.ceil(x))
    return mp.fsum(pmf_s(2 * s) for s in range(max(start, 1), s_max))


def odd_tail(pmf_s, x, s_max=4000):
    start = int(mp.ceil(x))
    return mp.fsum(pmf_s(2 * s + 1) for s in range(max(start, 0), s_max))


def summand(s, q, w):
    q = mp.mpf(q)
    if s < w:
        return mp.mpf(0)
    return mp.binomial(s, w) * (-1) ** (s - w) * q ** (-s) * (1 - q) ** (s - w)


def r_qw_geometric(c, q, w, s_max=6000):
    """E[X^2] by the defining double sum, with f_Wq(s) from the thinning sum in closed
    form of the inner binomial series (so only the outer sum is truncated)."""
    c, q = mp.mpf(c), mp.mpf(q)
    cq = c * q / (1 - c * (1 - q))

    def f(s):
        return cq / c * cq ** (s - 1) * (1 - cq)

    return mp.fsum(summand(s, q, w) ** 2 * f(s) for s in range(w, s_max))


def geometric_cq(c, q):
    c, q = mp.mpf(c), mp.mpf(q)
    return c * q / (1 - c * (1 - q))


def alpha_geometric(c, q):
    return mp.log(1 / geometric_cq(c, q)) / mp.log(1 / mp.mpf(q) - 1)


# ---------------------------------------------------------------- float brute force
# Log-space sums over the binomial thinning kernel, independent of the package's
# closed forms; used where mpmath would be too slow for a large grid.

def brute_log_thinned(log_pw, q, s_max):
    """log f_{W_q}(s), s = 0..s_max, from log P(W = w), w = 0..len(log_pw)-1."""
    import numpy as np
    from scipy import special, stats

    w = np.arange(len(log_pw))
    s = np.arange(s_max + 1)
    kern = stats.binom.logpmf(s[:, None], w[None, :], q)
    return special.logsumexp(kern + np.asarray(log_pw)[None, :], axis=1)


def geometric_log_pmf(c, w_max):
    import numpy as np

    w = np.arange(w_max + 1, dtype=float)
    out = np.log1p(-c) + (w - 1) * np.log(c)
    out[0] = -np.inf
    return out


def brute_log_summand_sq(s, q, w):
    """log X(s)^2 for s >= w (the alternating sign drops out)."""
    import numpy as np
    from scipy import special

    s = np.asarray(s, dtype=float)
    lb = special.gammaln(s + 1) - special.gammaln(w + 1) - special.gammaln(s - w + 1)
    return 2.0 * (lb - s * np.log(q) + (s - w) * np.log1p(-q))
