"""Size distributions, binomial thinning and the tail structure of the thinned size.

A size law ``SizePmf`` lives on the positive integers.  Thinning each of the
``W`` points independently with probability ``q`` gives ``W_q ~ Bin(W, q)``,
whose p.m.f. is held by ``SampledPmf``.  The even/odd tails of ``W_q`` decay
at a geometric rate ``exp(-nu)`` modulated by ``h1``/``h2``; that structure is
what ``extract_tail_decomposition`` returns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import stats

from ._numerics import log_binom, poly_binom
from .errors import (
    DivergenceError,
    InconclusiveError,
    InsufficientSupportError,
    NotInScopeError,
)

SERIES_TOL = 1e-12
MAX_TERMS = 10**6
FAMILIES = ("geometric", "negbin", "tabulated")


@dataclass(frozen=True)
class SizePmf:
    """Law of the number of points ``W`` (support on 1, 2, ...).

    Use the ``geometric``, ``negbin`` and ``tabulated`` constructors rather than
    the raw initializer.  ``tail_mass`` is an explicitly declared remainder for
    a tabulated law whose listed atoms do not sum to one.
    """

    family: str
    c: float | None = None
    r: int | None = None
    table: tuple[tuple[int, float], ...] = ()
    tail_mass: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family in ("geometric", "negbin"):
            if self.c is None or not 0.0 < self.c < 1.0:
                raise ValueError("c must lie in (0, 1)")
        if self.family == "geometric" and self.r not in (None, 1):
            raise ValueError("geometric law has no r parameter")
        if self.family == "negbin":
            if self.r is None or int(self.r) != self.r or self.r < 1:
                raise ValueError("r must be an integer >= 1")
        if self.family == "tabulated":
            if not self.table:
                raise ValueError("tabulated law needs at least one atom")
            ws = [w for w, _ in self.table]
            if any(int(w) != w or w < 1 for w in ws) or len(set(ws)) != len(ws):
                raise ValueError("atoms must be distinct positive integers")
            ps = [p for _, p in self.table]
            if any(not 0.0 <= p <= 1.0 for p in ps):
                raise ValueError("atom probabilities must lie in [0, 1]")
            if not 0.0 <= self.tail_mass <= 1.0:
                raise ValueError("tail_mass must lie in [0, 1]")
            total = math.fsum(ps)
            if total > 1.0 + 1e-12:
                raise ValueError(f"atoms sum to {total!r} > 1")
            if abs(total + self.tail_mass - 1.0) > 1e-9:
                raise ValueError(
                    f"atoms sum to {total!r}; declare the remainder as tail_mass"
                )

    @classmethod
    def geometric(cls, c: float) -> "SizePmf":
        return cls("geometric", c=float(c))

    @classmethod
    def negbin(cls, r: int, c: float) -> "SizePmf":
        return cls("negbin", c=float(c), r=int(r))

    @classmethod
    def tabulated(cls, atoms: Mapping[int, float], tail_mass: float = 0.0) -> "SizePmf":
        table = tuple(sorted((int(w), float(p)) for w, p in atoms.items()))
        return cls("tabulated", table=table, tail_mass=float(tail_mass))

    @property
    def closed_form(self) -> bool:
        return self.family != "tabulated"

    @property
    def support_min(self) -> int:
        if self.family == "geometric":
            return 1
        if self.family == "negbin":
            return int(self.r)
        return self.table[0][0]

    @property
    def support_max(self) -> float:
        if self.family == "tabulated" and self.tail_mass == 0.0:
            return self.table[-1][0]
        return math.inf

    def logpmf(self, w):
        w = np.asarray(w)
        if self.family == "geometric":
            c = self.c
            out = np.where(w >= 1, math.log1p(-c) + (w - 1) * math.log(c), -np.inf)
        elif self.family == "negbin":
            out = stats.nbinom.logpmf(w - self.r, self.r, 1.0 - self.c)
        else:
            lookup = dict(self.table)
            flat = [math.log(lookup[int(v)]) if lookup.get(int(v), 0.0) > 0 else -math.inf
                    for v in np.ravel(w)]
            out = np.reshape(np.array(flat, dtype=float), np.shape(w))
        return out if np.ndim(out) else float(out)

    def pmf(self, w):
        return np.exp(self.logpmf(w))

    def sf(self, w):
        """P(W > w) over the listed atoms (declared tail mass added for tabulated)."""
        w = np.asarray(w)
        if self.family == "geometric":
            out = np.where(w >= 0, self.c ** np.maximum(w, 0), 1.0)
        elif self.family == "negbin":
            out = stats.nbinom.sf(w - self.r, self.r, 1.0 - self.c)
        else:
            ws = np.array([a for a, _ in self.table])
            ps = np.array([p for _, p in self.table])
            out = np.array([math.fsum(ps[ws > v]) for v in np.ravel(w)]) + self.tail_mass
            out = np.reshape(out, np.shape(w))
        return out if np.ndim(out) else float(out)

    def atoms_upto(self, w_max: int) -> tuple[np.ndarray, np.ndarray]:
        """Atoms (w, f_W(w)) for w <= w_max."""
        if self.family == "tabulated":
            ws = np.array([w for w, _ in self.table if w <= w_max], dtype=np.int64)
            ps = np.array([p for w, p in self.table if w <= w_max], dtype=float)
            return ws, ps
        ws = np.arange(self.support_min, max(w_max, self.support_min - 1) + 1, dtype=np.int64)
        return ws, self.pmf(ws)

    def mean(self) -> float:
        if self.family == "geometric":
            return 1.0 / (1.0 - self.c)
        if self.family == "negbin":
            return self.r / (1.0 - self.c)
        return math.fsum(w * p for w, p in self.table)

    def to_dict(self) -> dict:
        if self.family == "geometric":
            return {"family": "geometric", "c": self.c}
        if self.family == "negbin":
            return {"family": "negbin", "r": self.r, "c": self.c}
        d = {"family": "tabulated", "atoms": {str(w): p for w, p in self.table}}
        if self.tail_mass:
            d["tail_mass"] = self.tail_mass
        return d

    @classmethod
    def from_dict(cls, spec: Mapping) -> "SizePmf":
        fam = spec.get("family")
        if fam == "geometric":
            return cls.geometric(spec["c"])
        if fam == "negbin":
            return cls.negbin(spec["r"], spec["c"])
        if fam == "tabulated":
            atoms = {int(k): float(v) for k, v in spec["atoms"].items()}
            return cls.tabulated(atoms, spec.get("tail_mass", 0.0))
        raise ValueError(f"unknown family {fam!r}")


def thinned_c(c: float, q: float) -> float:
    """Geometric parameter c_q = cq / (1 - c(1 - q)) of the thinned size given W_q >= 1."""
    return c * q / (1.0 - c * (1.0 - q))


@dataclass(frozen=True)
class SampledPmf:
    """p.m.f. of ``W_q`` on 0..s_max together with the mass beyond ``s_max``.

    ``source`` is the generating ``SizePmf`` or ``None`` for an empirical law;
    with a source the support can be extended on demand.
    """

    q: float
    probs: np.ndarray
    tail_mass: float = 0.0
    source: SizePmf | None = None

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ValueError("q must lie in (0, 1]")
        probs = np.asarray(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def s_max(self) -> int:
        return len(self.probs) - 1

    @property
    def is_empirical(self) -> bool:
        return self.source is None

    def pmf(self, s):
        s = np.asarray(s)
        if np.any(s > self.s_max):
            need = int(np.max(s))
            if self.source is None:
                raise InsufficientSupportError(f"empirical p.m.f. has no atom beyond {self.s_max}")
            return self.extended(need).pmf(s)
        out = np.where(s >= 0, self.probs[np.clip(s, 0, self.s_max)], 0.0)
        return out if np.ndim(out) else float(out)

    def extended(self, s_max: int) -> "SampledPmf":
        if s_max <= self.s_max:
            return self
        if self.source is None:
            raise InsufficientSupportError("cannot extend an empirical p.m.f.")
        return thin_pmf(self.source, self.q, s_max)

    @classmethod
    def empirical(cls, samples, q: float) -> "SampledPmf":
        counts = np.bincount(np.asarray(samples, dtype=np.int64))
        return cls(q=q, probs=counts / counts.sum(), tail_mass=0.0, source=None)


# ---------------------------------------------------------------- thinning

def _negbin_thinned_parts(c: float, r: int, q: float):
    cq = thinned_c(c, q)
    p0 = (1.0 - q) * (1.0 - c) / (1.0 - c * (1.0 - q))
    return cq, p0


def _negbin_pstar_coeffs(c: float, r: int, q: float):
    """Weights a_j with p*(s) = c_q * sum_j a_j C(s-1, r-j-1)."""
    cq, p0 = _negbin_thinned_parts(c, r, q)
    a = [p0**j * ((1.0 - cq) / c) ** (r - j) * math.comb(r, j) for j in range(r)]
    return cq, a


def _negbin_logpmf_pos(c: float, r: int, q: float, s: np.ndarray) -> np.ndarray:
    """log f_{W_q}(s) for s >= 1, summed over j in log space."""
    cq, p0 = _negbin_thinned_parts(c, r, q)
    s = np.asarray(s, dtype=float)
    log_terms = []
    for j in range(r):
        lt = (j * math.log(p0) if j else 0.0) + (r - j) * math.log((1.0 - cq) / c) \
            + math.log(math.comb(r, j)) + log_binom(s - 1, r - j - 1)
        log_terms.append(lt)
    stacked = np.vstack(log_terms)
    return s * math.log(cq) + np.logaddexp.reduce(stacked, axis=0)


def _thinned_logpmf(f_W: SizePmf, q: float, s: np.ndarray) -> np.ndarray:
    """Closed-form log f_{W_q}(s) for geometric and negative binomial laws."""
    s = np.asarray(s, dtype=np.int64)
    out = np.empty(s.shape, dtype=float)
    zero = s == 0
    pos = ~zero
    if q == 1.0:
        out[zero] = -np.inf
        out[pos] = f_W.logpmf(s[pos])
        return out
    c = f_W.c
    if f_W.family == "geometric":
        cq = thinned_c(c, q)
        out[zero] = math.log1p(-q) + math.log1p(-c) - math.log1p(-c * (1.0 - q))
        out[pos] = -math.log(c) + s[pos] * math.log(cq) + math.log1p(-cq)
    else:
        cq, p0 = _negbin_thinned_parts(c, f_W.r, q)
        out[zero] = f_W.r * math.log(p0)
        out[pos] = _negbin_logpmf_pos(c, f_W.r, q, s[pos])
    return out


def _closed_tail(f_W: SizePmf, q: float, s_max: int, tol: float, max_terms: int) -> float:
    """P(W_q > s_max) for closed-form families."""
    if q == 1.0:
        return float(f_W.sf(s_max))
    if f_W.family == "geometric":
        cq = thinned_c(f_W.c, q)
        return cq ** (s_max + 1) / f_W.c
    # negative binomial: sum the tail directly in chunks
    total, start = [], s_max + 1
    chunk = 256
    while start - s_max < max_terms:
        s = np.arange(start, start + chunk)
        vals = np.exp(_thinned_logpmf(f_W, q, s))
        total.extend(vals.tolist())
        if vals[-1] < tol * 1e-3 and vals[-1] <= vals[0]:
            return math.fsum(total)
        start += chunk
    raise DivergenceError("thinned tail did not fall below tolerance within the iteration budget")


def thin_pmf(f_W: SizePmf, q: float, s_max: int, tol: float = SERIES_TOL,
             max_terms: int = MAX_TERMS) -> SampledPmf:
    """p.m.f. of W_q = Bin(W, q) on s = 0..s_max.

    Closed forms are used for the geometric and negative binomial families; a
    tabulated law is thinned by the finite sum over its atoms.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    if s_max < 0:
        raise ValueError("s_max must be >= 0")
    s = np.arange(s_max + 1)
    if f_W.closed_form:
        probs = np.exp(_thinned_logpmf(f_W, q, s))
        tail = _closed_tail(f_W, q, s_max, tol, max_terms)
    else:
        ws, ps = f_W.atoms_upto(f_W.table[-1][0])
        # column w contributes f_W(w) * Binom(s; w, q)
        probs = (stats.binom.pmf(s[:, None], ws[None, :], q) * ps[None, :]).sum(axis=1)
        tail = float(np.dot(stats.binom.sf(s_max, ws, q), ps)) + f_W.tail_mass
    return SampledPmf(q=float(q), probs=probs, tail_mass=float(tail), source=f_W)


def thin_pmf_to_tol(f_W: SizePmf, q: float, tol: float = 1e-16, s_min: int = 64,
                    max_terms: int = MAX_TERMS) -> SampledPmf:
    """Thin with the support grown until the mass beyond it is below ``tol``."""
    s_max = s_min
    while True:
        pmf = thin_pmf(f_W, q, s_max)
        if pmf.tail_mass <= tol or (f_W.family == "tabulated" and s_max >= f_W.table[-1][0]):
            return pmf
        if s_max > max_terms:
            raise DivergenceError(
                f"tail mass {pmf.tail_mass:.3g} still above {tol:.3g} at s_max={s_max}")
        s_max *= 2


# ---------------------------------------------------------------- sampling

@dataclass(frozen=True)
class RngSeed:
    """Seed stream: the pair (master_seed, stream_index) fixes every draw."""

    master_seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.PCG64(ss))


def stream_generator(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for an arbitrary tuple-valued stream key, e.g. (level, replicate)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def _size_cdf_table(f_W: SizePmf, tol: float = 1e-17):
    w_hi = max(f_W.support_min + 64, 64)
    if f_W.family == "tabulated":
        ws, ps = f_W.atoms_upto(f_W.table[-1][0])
        return ws, np.cumsum(ps)
    while f_W.sf(w_hi) > tol:
        w_hi *= 2
    ws, ps = f_W.atoms_upto(w_hi)
    return ws, np.cumsum(ps)


def sample_sizes(f_W: SizePmf, rng: np.random.Generator, count: int) -> np.ndarray:
    """Inverse-CDF draws of W from its atoms."""
    ws, cdf = _size_cdf_table(f_W)
    u = rng.random(count)
    idx = np.searchsorted(cdf, u, side="right")
    over = idx >= len(ws)
    if np.any(over):
        if f_W.family == "tabulated":
            # uniform fell into the declared remainder or rounding slack: use the last atom
            idx[over] = len(ws) - 1
        else:
            w_hi = int(ws[-1])
            while np.any(over):
                w_hi *= 2
                ws, pw = f_W.atoms_upto(w_hi)
                cdf = np.cumsum(pw)
                idx[over] = np.searchsorted(cdf, u[over], side="right")
                over = idx >= len(ws)
    return ws[idx]


def sample_Wq(f_W: SizePmf, q: float, seed: RngSeed, count: int) -> np.ndarray:
    """Two-stage draws: W from ``f_W`` by inverse CDF, then Binomial(W, q)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    rng = seed.generator()
    w = sample_sizes(f_W, rng, count)
    return rng.binomial(w, q)


# ---------------------------------------------------------------- tails

def _tail_start(x: float) -> int:
    if not x > 0:
        raise ValueError("x must be > 0")
    return math.ceil(x)


def _parity_tail(f_Wq: SampledPmf, first: int, tol: float) -> float:
    """Sum f_Wq(first), f_Wq(first+2), ... with the unseen remainder bounded by ``tol``."""
    pmf = f_Wq
    while pmf.tail_mass > tol:
        if pmf.source is None or (pmf.source.family == "tabulated"
                                  and pmf.s_max >= pmf.source.table[-1][0]):
            raise InsufficientSupportError(
                f"support ends at {pmf.s_max} with tail mass {pmf.tail_mass:.3g} > {tol:.3g}")
        pmf = pmf.extended(2 * pmf.s_max + 2)
    if first > pmf.s_max:
        return 0.0
    return math.fsum(pmf.probs[first::2])


def even_tail(f_Wq: SampledPmf, x: float, method: str = "auto", tol: float = 1e-17) -> float:
    """P(W_q / 2 >= x, W_q even) for x > 0.

    ``method`` is "closed" (geometric source only), "sum" (atom summation with
    the unseen mass bounded by ``tol``) or "auto".
    """
    n0 = _tail_start(x)
    if _use_closed(f_Wq, method):
        c = f_Wq.source.c
        cq = thinned_c(c, f_Wq.q)
        return cq ** (2 * n0) / (c * (1.0 + cq))
    return _parity_tail(f_Wq, 2 * n0, tol)


def odd_tail(f_Wq: SampledPmf, x: float, method: str = "auto", tol: float = 1e-17) -> float:
    """P((W_q - 1) / 2 >= x, W_q odd) for x > 0."""
    n0 = _tail_start(x)
    if _use_closed(f_Wq, method):
        c = f_Wq.source.c
        cq = thinned_c(c, f_Wq.q)
        return cq * cq ** (2 * n0) / (c * (1.0 + cq))
    return _parity_tail(f_Wq, 2 * n0 + 1, tol)


def _use_closed(f_Wq: SampledPmf, method: str) -> bool:
    geo = f_Wq.source is not None and f_Wq.source.family == "geometric" and f_Wq.q < 1.0
    if method == "closed":
        if not geo:
            raise ValueError("closed-form tails are available for the geometric family only")
        return True
    if method not in ("auto", "sum"):
        raise ValueError(f"unknown method {method!r}")
    return method == "auto" and geo


# ---------------------------------------------------------------- tail decomposition

@dataclass(frozen=True)
class TailDecomposition:
    """Even/odd tail structure of W_q.

    ``even_tail(x) = h1(ceil x) exp(-nu ceil x)`` and
    ``odd_tail(x) = h2(ceil x) exp(-nu ceil x)``, with ``h2/h1 -> c1``.
    ``exactness`` is "closed_form", "series_truncated" or "numeric_regression".
    """

    nu: float
    c1: float
    exactness: str
    tolerance: float = 0.0
    h1_fn: Callable[[int], float] = field(repr=False, default=None)
    h2_fn: Callable[[int], float] = field(repr=False, default=None)
    r_squared: float | None = None

    def h1_at(self, x: int) -> float:
        return float(self.h1_fn(int(x)))

    def h2_at(self, x: int) -> float:
        return float(self.h2_fn(int(x)))


def _negbin_h(c: float, r: int, q: float, tol: float):
    """h1, h2 for the negative binomial family via the polynomial p*."""
    cq, a = _negbin_pstar_coeffs(c, r, q)

    def pstar(s: int) -> float:
        return cq * math.fsum(a[j] * poly_binom(s - 1, r - j - 1) for j in range(r))

    def series(x: int, offset: int, power_shift: int) -> float:
        terms = []
        k = 0
        while True:
            t = cq ** (2 * k + power_shift) * pstar(2 * x + offset + 2 * k)
            terms.append(t)
            # terms are c_q^{2k} times a polynomial: stop once past its peak and small
            if k > r and abs(t) < tol * abs(math.fsum(terms)) and abs(t) <= abs(terms[-2]):
                return math.fsum(terms)
            k += 1
            if k > MAX_TERMS:
                raise InconclusiveError("h-series did not converge")

    # the tail identities only involve x >= 1; x = 0 (first schedule level) reuses h(1)
    return cq, (lambda x: series(max(x, 1), 0, -1)), (lambda x: series(max(x, 1), 1, 0))


def extract_tail_decomposition(f_W: SizePmf, q: float, tol: float = SERIES_TOL,
                               reliable_floor: float = 1e-13,
                               min_r2: float = 0.999) -> TailDecomposition:
    """Return (nu, h1, h2, c1) for the thinned size W_q.

    Geometric and negative binomial laws are handled exactly.  A tabulated law
    is handled by fitting log even_tail(x) against x over the last decade of
    its reliable support; if the fit is not close to linear the law is rejected
    with ``NotInScopeError``.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("tail decomposition needs q in (0, 1)")
    if f_W.family == "geometric" or (f_W.family == "negbin" and f_W.r == 1):
        c = f_W.c
        cq = thinned_c(c, q)
        h1 = 1.0 / (c * (1.0 + cq))
        h2 = cq * h1
        return TailDecomposition(nu=2.0 * math.log(1.0 / cq), c1=cq, exactness="closed_form",
                                 h1_fn=lambda x: h1, h2_fn=lambda x: h2)
    if f_W.family == "negbin":
        cq, h1, h2 = _negbin_h(f_W.c, f_W.r, q, tol)
        return TailDecomposition(nu=2.0 * math.log(1.0 / cq), c1=cq,
                                 exactness="series_truncated", tolerance=tol,
                                 h1_fn=h1, h2_fn=h2)
    return _numeric_decomposition(f_W, q, reliable_floor, min_r2)


def _numeric_decomposition(f_W: SizePmf, q: float, floor: float, min_r2: float):
    pmf = thin_pmf(f_W, q, f_W.table[-1][0])
    probs = pmf.probs
    xs, ev, od = [], [], []
    x = 1
    while 2 * x + 1 <= pmf.s_max:
        e = math.fsum(probs[2 * x::2])
        o = math.fsum(probs[2 * x + 1::2])
        if e < floor or o < floor:
            break
        xs.append(x)
        ev.append(e)
        od.append(o)
        x += 1
    if len(xs) < 3:
        raise NotInScopeError("too little reliable tail support to detect geometric decay")
    x_max = xs[-1]
    sel = [i for i, v in enumerate(xs) if v >= max(1, math.ceil(x_max / 10))]
    if len(sel) < 3:
        sel = list(range(len(xs)))[-3:]
    xx = np.array([xs[i] for i in sel], dtype=float)
    ly = np.log([ev[i] for i in sel])
    fit = stats.linregress(xx, ly)
    r2 = fit.rvalue**2
    if not fit.slope < 0 or r2 < min_r2:
        raise NotInScopeError(
            f"log even tail is not linear over x in [{int(xx[0])}, {int(xx[-1])}] (R^2={r2:.6f})")
    nu = -fit.slope
    h1_tab = {v: ev[i] * math.exp(nu * v) for i, v in enumerate(xs)}
    h2_tab = {v: od[i] * math.exp(nu * v) for i, v in enumerate(xs)}
    h1_far = float(np.mean([h1_tab[xs[i]] for i in sel]))
    h2_far = float(np.mean([h2_tab[xs[i]] for i in sel]))
    c1 = h2_far / h1_far

    def h1(x):
        return h1_tab.get(x, h1_far if x > x_max else h1_tab[xs[0]])

    def h2(x):
        return h2_tab.get(x, h2_far if x > x_max else h2_tab[xs[0]])

    return TailDecomposition(nu=nu, c1=c1, exactness="numeric_regression",
                             tolerance=float(1.0 - r2), h1_fn=h1, h2_fn=h2, r_squared=r2)


# ---------------------------------------------------------------- inversion condition

def _series_sum(log_term: Callable[[np.ndarray], np.ndarray], start: int, tol: float,
                max_terms: int) -> float:
    """Sum exp(log_term(j)) for j >= start; the caller guarantees a ratio limit < 1."""
    parts = []
    j0 = start
    chunk = 512
    while j0 - start < max_terms:
        j = np.arange(j0, j0 + chunk)
        vals = np.exp(log_term(j))
        parts.extend(vals.tolist())
        if vals[-1] <= vals[-2] and vals[-1] < tol * max(math.fsum(parts), 1e-300):
            return math.fsum(parts)
        j0 += chunk
    raise InconclusiveError(f"series did not settle within {max_terms} terms")


def check_inversion_condition(f_W: SizePmf, q: float, n: int, tol: float = SERIES_TOL,
                              max_terms: int = MAX_TERMS) -> float:
    """Value of sum_w C(w, n) 2^(w-n) (1-q)^(w-n) f_W(w); ``inf`` when it diverges.

    Raises ``InconclusiveError`` when a tabulated law carries an unspecified
    tail remainder, or when summation does not settle within ``max_terms``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    if f_W.family == "tabulated":
        if f_W.tail_mass > 0.0:
            raise InconclusiveError("tabulated law has an undeclared tail beyond its atoms")
        ws, ps = f_W.atoms_upto(f_W.table[-1][0])
        keep = ws >= n
        if not np.any(keep):
            return 0.0
        lt = log_binom(ws[keep], n) + (ws[keep] - n) * math.log(2.0 * (1.0 - q)) \
            if q < 1.0 else np.where(ws[keep] == n, 0.0, -np.inf)
        return math.fsum(np.exp(lt) * ps[keep])
    ratio = 2.0 * f_W.c * (1.0 - q)
    if ratio >= 1.0:
        return math.inf
    if f_W.family == "geometric":
        c = f_W.c
        x = 2.0 * (1.0 - q)
        # sum_j C(n+j, n) (xc)^j = (1 - xc)^-(n+1)
        lead = (1.0 - c) * c ** (n - 1) if n >= 1 else 1.0
        return lead * (1.0 - x * c) ** (-(n + 1))
    lx = math.log(2.0 * (1.0 - q)) if q < 1.0 else -math.inf
    start = max(n, f_W.support_min)

    def log_term(w):
        return log_binom(w, n) + (w - n) * lx + f_W.logpmf(w)

    if q == 1.0:
        return float(f_W.pmf(n))
    return _series_sum(log_term, start, tol, max_terms)
