"""Inversion estimator of f_W(w) from thinned counts, its variance functional and regime."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._numerics import log_binom
from .dist_core import (
    MAX_TERMS,
    SERIES_TOL,
    SampledPmf,
    SizePmf,
    _series_sum,
    _thinned_logpmf,
    check_inversion_condition,
    extract_tail_decomposition,
    thin_pmf,
    thinned_c,
)
from .errors import DivergenceError, InconclusiveError, NotInScopeError

BOUNDARY_TOL = 1e-9
REGIMES = ("gaussian_clt", "semistable_01", "semistable_12", "boundary", "out_of_theory")


@dataclass(frozen=True)
class EstimatorInput:
    samples: np.ndarray
    q: float
    w: int

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 1 or s.size < 1:
            raise ValueError("need at least one sample")
        if not np.issubdtype(s.dtype, np.integer):
            if not np.all(np.equal(np.mod(s, 1), 0)):
                raise ValueError("samples must be integers")
            s = s.astype(np.int64)
        if np.any(s < 0):
            raise ValueError("samples must be nonnegative")
        if not 0.0 < self.q <= 1.0:
            raise ValueError("q must lie in (0, 1]")
        if int(self.w) != self.w or self.w < 1:
            raise ValueError("w must be a positive integer")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)


def log_abs_summand(s, q: float, w: int):
    """(log|X(s)|, sign) for the per-sample summand; log|X| is -inf for s < w."""
    s = np.asarray(s, dtype=np.int64)
    sign = np.where((s - w) % 2 == 0, 1.0, -1.0)
    if q == 1.0:
        la = np.where(s == w, 0.0, -np.inf)
    else:
        la = log_binom(s, w) - s * math.log(q) + (s - w) * math.log1p(-q)
    la = np.where(s >= w, la, -np.inf)
    return la, np.where(s >= w, sign, 0.0)


def summand_X(s, q: float, w: int):
    """C(s, w) (-1)^(s-w) q^-s (1-q)^(s-w) for s >= w, else 0."""
    la, sign = log_abs_summand(s, q, w)
    out = sign * np.exp(la)
    # away from overflow the direct product is at least as accurate (exact for dyadic q)
    s_arr = np.atleast_1d(np.asarray(s, dtype=np.int64))
    out = np.atleast_1d(out)
    direct = (s_arr >= w) & (s_arr <= 1000) & (np.atleast_1d(la) < 600.0)
    if q < 1.0 and np.any(direct):
        ratio = (1.0 - q) / q
        with np.errstate(over="ignore"):
            vals = np.array([math.comb(int(v), w) for v in s_arr[direct]], dtype=float) \
                * q ** (-w) * ratio ** (s_arr[direct] - w)
        ok = np.isfinite(vals)
        idx = np.nonzero(direct)[0][ok]
        out[idx] = np.atleast_1d(sign)[idx] * vals[ok]
    return out if np.ndim(s) else float(out[0])


def estimate_fw_counts(counts, q: float, w: int) -> float:
    """Estimate from a histogram: ``counts[s]`` samples took the value s."""
    counts = np.asarray(counts)
    n = counts.sum()
    if n < 1:
        raise ValueError("need at least one sample")
    s = np.nonzero(counts)[0]
    s = s[s >= w]
    if s.size == 0:
        return 0.0
    x = summand_X(s, q, w)
    # fsum is exact-rounded, so grouping by value and ordering do not matter
    return math.fsum((counts[s] * x).tolist()) / float(n)


def estimate_fw(inp: EstimatorInput) -> float:
    """(1/N) sum_i X(W_q^(i)) with terms grouped by sample value."""
    return estimate_fw_counts(np.bincount(inp.samples), inp.q, inp.w)


def _series_mp(f_W: SizePmf, q: float, w: int, n_terms: int, cond: float) -> float:
    """The inversion series for a closed-form law summed with mpmath.

    Working precision covers the observed cancellation (``cond``) plus 20 digits.
    """
    import mpmath

    with mpmath.workdps(20 + int(math.ceil(math.log10(max(cond, 10.0))))):
        qm, cm = mpmath.mpf(q), mpmath.mpf(f_W.c)
        cq = cm * qm / (1 - cm * (1 - qm))
        if f_W.family == "geometric":
            def pmf(s):
                return cq**s * (1 - cq) / cm
        else:
            r = int(f_W.r)
            p0 = (1 - qm) * (1 - cm) / (1 - cm * (1 - qm))
            coef = [p0**j * ((1 - cq) / cm) ** (r - j) * mpmath.binomial(r, j) for j in range(r)]

            def pmf(s):
                return cq**s * mpmath.fsum(coef[j] * mpmath.binomial(s - 1, r - j - 1)
                                           for j in range(r) if s - 1 >= r - j - 1)
        ratio = (1 - qm) / qm
        total = mpmath.fsum((-1) ** (s - w) * mpmath.binomial(s, w) * qm ** (-w)
                            * ratio ** (s - w) * pmf(s) for s in range(w, w + n_terms))
        return float(total)


def invert_pmf(f_Wq: SampledPmf, w: int, tol: float = SERIES_TOL,
               max_terms: int = MAX_TERMS, check: bool = True) -> float:
    """Recover f_W(w) from the thinned p.m.f. by the alternating inversion series.

    Summation stops once the absolute term has stayed below ``tol`` and kept
    decreasing for 5 consecutive indices.  With a known source law the
    convergence condition is checked first and ``DivergenceError`` raised if
    it fails.
    """
    q = f_Wq.q
    if q == 1.0:
        return float(f_Wq.pmf(w))
    src = f_Wq.source
    if src is not None and check:
        if math.isinf(check_inversion_condition(src, q, w)):
            raise DivergenceError(
                f"inversion series diverges for q={q}, w={w}: "
                "sum_w C(w,n) 2^(w-n) (1-q)^(w-n) f_W(w) is infinite")
    if src is None or not src.closed_form:
        pmf = f_Wq if src is None else f_Wq.extended(max(f_Wq.s_max, src.table[-1][0]))
        s = np.arange(w, pmf.s_max + 1)
        la, sign = log_abs_summand(s, q, w)
        with np.errstate(divide="ignore"):
            lf = np.log(pmf.probs[w:])
        return math.fsum((sign * np.exp(la + lf)).tolist())

    terms: list[float] = []
    run = 0
    prev = math.inf
    start, chunk = w, 256
    while start - w < max_terms:
        s = np.arange(start, start + chunk)
        la, sign = log_abs_summand(s, q, w)
        vals = sign * np.exp(la + _thinned_logpmf(src, q, s))
        for v in vals.tolist():
            terms.append(v)
            a = abs(v)
            run = run + 1 if (a < tol and a < prev) else 0
            prev = a
            if run >= 5:
                total = math.fsum(terms)
                mass = math.fsum(abs(t) for t in terms)
                # each term carries ~1e-15 relative error; redo in extended precision
                # when cancellation would leave less than ~12 correct digits
                if mass * 1e-15 > 1e-12 * max(abs(total), 1e-3):
                    return _series_mp(src, q, w, len(terms), mass / max(abs(total), 1e-300))
                return total
        start += chunk
    raise DivergenceError(f"inversion series envelope did not fall below {tol} "
                          f"within {max_terms} terms")


# ---------------------------------------------------------------- variance functional

def _geometric_rho(c: float, q: float) -> float:
    return (1.0 / q - 1.0) * c * (1.0 - q) / (1.0 - c * (1.0 - q))


def compute_Rqw(f_W: SizePmf, q: float, w: int, tol: float = SERIES_TOL,
                max_terms: int = MAX_TERMS) -> float:
    """R_{q,w} = E[X^2]; ``inf`` when the series diverges.

    Geometric laws use the closed form d_w sum_s C(s,w)^2 rho^s; other laws
    sum C(s,w)^2 (1-q)^(2(s-w)) q^(-2s) f_{W_q}(s) directly.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    if q == 1.0:
        return float(f_W.pmf(w))
    lr = 2.0 * math.log1p(-q) - 2.0 * math.log(q)
    if f_W.family == "geometric":
        c = f_W.c
        rho = _geometric_rho(c, q)
        if rho >= 1.0:
            return math.inf
        log_d = math.log((1.0 - c) / c) - 2 * w * math.log1p(-q) - math.log1p(-c * (1.0 - q))
        lrho = math.log(rho)
        return _series_sum(lambda s: log_d + 2 * log_binom(s, w) + s * lrho, w, tol, max_terms)
    if f_W.family == "negbin":
        if (1.0 / q - 1.0) ** 2 * thinned_c(f_W.c, q) >= 1.0:
            return math.inf

        def log_term(s):
            return 2 * log_binom(s, w) + s * lr - 2 * w * math.log1p(-q) \
                + _thinned_logpmf(f_W, q, s)

        return _series_sum(log_term, w, tol, max_terms)
    if f_W.tail_mass > 0.0:
        raise InconclusiveError("tabulated law has an unspecified tail beyond its atoms")
    pmf = thin_pmf(f_W, q, f_W.table[-1][0])
    s = np.arange(w, pmf.s_max + 1)
    with np.errstate(divide="ignore"):
        lt = 2 * log_binom(s, w) + s * lr - 2 * w * math.log1p(-q) + np.log(pmf.probs[w:])
    return math.fsum(np.exp(lt).tolist())


@dataclass(frozen=True)
class RegimeReport:
    alpha: float | None
    beta: float
    regime: str
    r_qw: float
    nu: float | None = None

    @property
    def r_finite(self) -> bool:
        return math.isfinite(self.r_qw)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "regime": self.regime,
                "r_qw": self.r_qw if self.r_finite else None,
                "r_qw_diverges": not self.r_finite, "nu": self.nu}


def classify_regime(f_W: SizePmf, q: float, w: int) -> RegimeReport:
    """Gaussian, semi-stable (alpha in (0,1) or (1,2)), boundary or out of theory.

    ``alpha = nu / (2 beta)`` with ``beta = log(1/q - 1)``; it is reported
    whenever ``q < 1/2`` and the tail rate can be obtained.
    """
    beta = math.log(1.0 / q - 1.0) if q < 1.0 else -math.inf
    alpha = nu = None
    if 0.0 < q < 0.5:
        try:
            nu = extract_tail_decomposition(f_W, q).nu
            alpha = nu / (2.0 * beta)
        except NotInScopeError:
            alpha = None
    near_edge = alpha is not None and (abs(alpha - 1.0) < BOUNDARY_TOL
                                       or abs(alpha - 2.0) < BOUNDARY_TOL)
    try:
        r = compute_Rqw(f_W, q, w)
    except InconclusiveError:
        if not near_edge:
            raise
        r = math.inf
    if near_edge:
        regime = "boundary"
        r = math.inf
    elif math.isfinite(r):
        regime = "gaussian_clt"
    elif alpha is None:
        regime = "out_of_theory"
    elif 0.0 < alpha < 1.0:
        regime = "semistable_01"
    elif 1.0 < alpha < 2.0:
        regime = "semistable_12"
    else:
        regime = "out_of_theory"
    return RegimeReport(alpha=alpha, beta=beta, regime=regime, r_qw=r, nu=nu)


def asymptotic_variance(f_W: SizePmf, q: float, w: int) -> float:
    """R_{q,w} - f_W(w)^2, the limiting variance of sqrt(N)(f_hat - f)."""
    r = compute_Rqw(f_W, q, w)
    return r - float(f_W.pmf(w)) ** 2
