"""Semi-stable limit laws with a lattice Levy measure, and the normalizing schedule.

For tail rate ``nu``, lattice step ``beta`` and left/right ratio ``c1`` the
Levy measure is purely atomic:

* positive atoms at ``exp(2 beta m)`` with mass ``exp(-nu m)(1 - exp(-nu))``,
* negative atoms at ``-exp(beta (2m + 1))`` with mass ``c1`` times the same.

Its Levy functions are R(x) = -M_R(x)/x^alpha and L(-x) = M_L(-x)/x^alpha with
``alpha = nu / (2 beta)`` and multiplicatively periodic M_R, M_L.
"""
from __future__ import annotations

import functools
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from ._numerics import cos_minus_one, log_binom, sin_minus_id, snap
from .dist_core import (
    SizePmf,
    TailDecomposition,
    extract_tail_decomposition,
    thin_pmf_to_tol,
)
from .errors import (
    BudgetExceededError,
    InconclusiveError,
    NotSupportedError,
    OutOfTheoryError,
)
from .estimator import summand_X
from .inversion import CfInverter, bracket_root

DEFAULT_WINDOW = (-60, 60)
WINDOW_TOL = 1e-10
MAX_WINDOW = 20000
DEFAULT_BUDGET = 10**8
ALPHA_ONE_TOL = 1e-9


def env_budget(default: float = DEFAULT_BUDGET) -> float:
    """Compute cap, overridable through SEMISTABLE_BUDGET."""
    raw = os.environ.get("SEMISTABLE_BUDGET")
    return float(raw) if raw else float(default)


# ---------------------------------------------------------------- M functions

def m_R(x, nu: float, beta: float):
    """Right periodic factor exp(-nu(ceil_plus(u) - u)) with u = log(x) / (2 beta)."""
    u = snap(np.log(np.asarray(x, dtype=float)) / (2.0 * beta))
    out = np.exp(-nu * (np.floor(u) + 1.0 - u))
    return out if out.ndim else float(out)


def m_L_neg(x, nu: float, beta: float, c1: float):
    """Left periodic factor M_L(-x) = c1 exp(-nu([1/2 + u] - u)) for x > 0."""
    v = snap(0.5 + np.log(np.asarray(x, dtype=float)) / (2.0 * beta))
    out = c1 * np.exp(-nu * (np.floor(v) - (v - 0.5)))
    return out if out.ndim else float(out)


def levy_R(x, nu: float, beta: float):
    """R(x) = -mu((x, inf)) for x > 0."""
    x = np.asarray(x, dtype=float)
    alpha = nu / (2.0 * beta)
    return -m_R(x, nu, beta) * np.exp(-alpha * np.log(x))


def levy_L(x, nu: float, beta: float, c1: float):
    """L(x) = mu((-inf, x)) for x < 0."""
    ax = np.abs(np.asarray(x, dtype=float))
    alpha = nu / (2.0 * beta)
    return m_L_neg(ax, nu, beta, c1) * np.exp(-alpha * np.log(ax))


def levy_atoms(nu: float, beta: float, c1: float, window: tuple[int, int] = DEFAULT_WINDOW):
    """(positions, masses) of the Levy measure for lattice index m in ``window``.

    Positive atoms come first (ascending m), then negative ones when c1 > 0.
    """
    m = np.arange(window[0], window[1] + 1, dtype=float)
    w = -nu * m + math.log1p(-math.exp(-nu))
    pos = [np.exp(2.0 * beta * m)]
    mass = [np.exp(w)]
    if c1 > 0.0:
        pos.append(-np.exp(beta * (2.0 * m + 1.0)))
        mass.append(c1 * np.exp(w))
    return np.concatenate(pos), np.concatenate(mass)


# ---------------------------------------------------------------- generic atomic law

@dataclass(frozen=True, eq=False)
class AtomicLevy:
    """Infinitely divisible law with log cf

        i drift t + sum_j m_j (exp(i t x_j) - 1 - i t x_j kappa_j).

    ``kappa`` and ``kappa_c = 1 - kappa`` are both stored so the compensated
    term can be evaluated without cancellation for small and large atoms.
    """

    positions: np.ndarray
    masses: np.ndarray
    kappa: np.ndarray
    kappa_c: np.ndarray
    drift: float

    @classmethod
    def standard(cls, positions, masses, drift):
        x = np.asarray(positions, dtype=float)
        x2 = x * x
        return cls(x, np.asarray(masses, dtype=float), 1.0 / (1.0 + x2), x2 / (1.0 + x2),
                   float(drift))

    def scaled(self, factor: float, mass_factor: float = 1.0, drift_factor: float = 1.0):
        """Law of factor * Z where log cf of Z has masses and drift pre-multiplied."""
        return AtomicLevy(self.positions * factor, self.masses * mass_factor, self.kappa,
                          self.kappa_c, self.drift * drift_factor)

    def log_cf(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        out = np.empty(flat.shape, dtype=complex)
        x, m = self.positions, self.masses
        inner = self.kappa >= 0.5  # original |x| <= 1
        for i in range(0, flat.size, 1024):
            tt = flat[i:i + 1024, None]
            tx = tt * x[None, :]
            re = cos_minus_one(tx) @ m
            im = np.empty(tx.shape)
            im[:, inner] = sin_minus_id(tx[:, inner]) + tx[:, inner] * self.kappa_c[inner]
            im[:, ~inner] = np.sin(tx[:, ~inner]) - tx[:, ~inner] * self.kappa[~inner]
            out[i:i + 1024] = re + 1j * (im @ m + self.drift * flat[i:i + 1024])
        return out.reshape(t.shape)

    def pruned(self, t_max: float, tol: float = 1e-13) -> "AtomicLevy":
        """Drop atoms whose effect on log cf over |t| <= t_max is below ``tol`` in total.

        Small atoms keep their linear term i t m x (1 - kappa) in the drift; what is
        lost is at most m ((t x)^2 / 2 + |t x|^3 / 6) each.  Large atoms are dropped
        with loss at most m (2 + |t x| kappa).
        """
        x, m = self.positions, self.masses
        ax = np.abs(x)
        small_loss = m * (0.5 * (t_max * ax) ** 2 + (t_max * ax) ** 3 / 6.0)
        large_loss = m * (2.0 + t_max * ax * self.kappa)
        order = np.argsort(ax)
        drop = np.zeros(x.size, dtype=bool)
        acc = np.cumsum(small_loss[order])
        drop[order[acc < 0.5 * tol]] = True
        acc_hi = np.cumsum(large_loss[order[::-1]])
        drop[order[::-1][acc_hi < 0.5 * tol]] = True
        small = drop & (self.kappa >= 0.5)
        drift = self.drift + math.fsum((m[small] * x[small] * self.kappa_c[small]).tolist())
        keep = ~drop
        return AtomicLevy(x[keep], m[keep], self.kappa[keep], self.kappa_c[keep], drift)

    def split(self, x_far: float) -> tuple["AtomicLevy", float, float]:
        """Separate atoms with |x| > x_far as an uncompensated compound Poisson part.

        Returns the remaining law (compensators of the far atoms moved into its
        drift) and the far jump rates (positive side, negative side).
        """
        x, m = self.positions, self.masses
        far = np.abs(x) > x_far
        if not far.any():
            return self, 0.0, 0.0
        drift = self.drift - math.fsum((m[far] * x[far] * self.kappa[far]).tolist())
        keep = ~far
        near = AtomicLevy(x[keep], m[keep], self.kappa[keep], self.kappa_c[keep], drift)
        return near, math.fsum(m[far & (x > 0)].tolist()), math.fsum(m[far & (x < 0)].tolist())

    def sample(self, rng: np.random.Generator, count: int, var_cut: float = 1e-6) -> np.ndarray:
        """Compound-Poisson draws; the smallest jumps (total variance < var_cut) become drift."""
        x, m = self.positions, self.masses
        order = np.argsort(np.abs(x))
        cum_var = np.cumsum(m[order] * x[order] ** 2)
        n_small = int(np.searchsorted(cum_var, var_cut, side="left"))
        small, big = order[:n_small], order[n_small:]
        # mean of the discarded compensated jumps
        base = self.drift + math.fsum((m[small] * x[small] * self.kappa_c[small]).tolist())
        xb, mb, kb = x[big], m[big], self.kappa_c[big]
        comp = mb * xb * kb - mb * xb
        out = np.empty(count)
        for i in range(0, count, 4096):
            n = min(4096, count - i)
            counts = rng.poisson(mb[None, :], size=(n, mb.size))
            out[i:i + n] = base + counts @ xb + comp.sum()
        return out


# ---------------------------------------------------------------- centering constants

def zeta(nu: float, beta: float, c1: float) -> float:
    """Limit of B_{k_n} / A_{k_n}: the shift between centered and trimmed sums.

    With K = ceil(log(c1) / nu),
    zeta = -(1 - e^-nu)/(1 - e^(2b-nu)) - e^(b(2K-1))(c1 e^(-nu(K-1)) - 1)
           + c1 (1 - e^-nu) e^(nu-b) e^((2b-nu)K) / (1 - e^(2b-nu)).
    For c1 = 0 the K terms vanish (their c1 -> 0 limit).
    """
    if abs(nu - 2.0 * beta) < ALPHA_ONE_TOL * 2.0 * beta:
        raise NotSupportedError("alpha = 1 is excluded")
    d = 1.0 - math.exp(2.0 * beta - nu)
    first = -(-math.expm1(-nu)) / d
    if c1 == 0.0:
        return first
    K = math.ceil(float(snap(math.log(c1) / nu)))
    second = -math.exp(beta * (2 * K - 1)) * (c1 * math.exp(-nu * (K - 1)) - 1.0)
    third = c1 * (-math.expm1(-nu)) * math.exp(nu - beta) * math.exp((2 * beta - nu) * K) / d
    return first + second + third


def trimmed_quantile_integral(values, probs, k: float, lower_out: float = 0.0,
                              upper_out: float = 0.0) -> float:
    """k * int_{1/k}^{1-1/k} Q(s) ds for a discrete law given by its atoms.

    ``lower_out``/``upper_out`` is probability mass lying below/above every listed
    atom (unlisted extremes).  Overlaps are formed from lower and upper tail sums
    separately so that 1/k below machine epsilon is still resolved.
    """
    v = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    order = np.argsort(v, kind="stable")
    v, p = v[order], p[order]
    below = lower_out + np.concatenate([[0.0], np.cumsum(p)[:-1]])
    above = upper_out + np.concatenate([np.cumsum(p[::-1])[::-1][1:], [0.0]])
    cut = 1.0 / k
    lo_cut = np.clip(cut - below, 0.0, p)
    hi_cut = np.clip(cut - above, 0.0, p)
    overlap = np.clip(p - lo_cut - hi_cut, 0.0, None)
    return k * math.fsum((v * overlap).tolist())


def compute_B_kn(f_W: SizePmf, q: float, w: int, k_n: int, budget_terms: int = 10**6) -> float:
    """Centering constant k_n int_{1/k_n}^{1-1/k_n} Q(s) ds for X = summand(W_q).

    The atoms of X are enumerated from the thinned p.m.f.; its support is
    extended until the unseen mass is negligible against 1/k_n, and that mass is
    placed at the extreme end matching its sign (|X(s)| grows with s for q <= 1/2).
    """
    if k_n < 2:
        raise ValueError("k_n must be >= 2")
    if not 0.0 < q <= 0.5:
        raise NotSupportedError("centering constants are computed for q <= 1/2 only")
    target = 1e-6 / k_n
    pmf = thin_pmf_to_tol(f_W, q, tol=target, max_terms=budget_terms)
    if pmf.tail_mass > target and not (f_W.family == "tabulated" and f_W.tail_mass == 0.0):
        raise BudgetExceededError(f"support extension stopped with tail mass {pmf.tail_mass:.3g}")
    s = np.arange(pmf.s_max + 1)
    x = summand_X(s, q, w)
    # split the unseen mass by the sign of the next two summands
    nxt = pmf.extended(pmf.s_max + 2).probs[-2:] if pmf.source.closed_form else np.zeros(2)
    tail = pmf.tail_mass
    share = nxt / nxt.sum() if nxt.sum() > 0 else np.array([0.5, 0.5])
    sign_next = 1 if (pmf.s_max + 1 - w) % 2 == 0 else -1
    up, down = (share[0], share[1]) if sign_next > 0 else (share[1], share[0])
    return trimmed_quantile_integral(x, pmf.probs, float(k_n),
                                     lower_out=tail * down, upper_out=tail * up)


# ---------------------------------------------------------------- schedule

@dataclass(frozen=True)
class ScheduleLevel:
    n: int
    k: int
    A: float
    B: float | None = None

    def to_dict(self) -> dict:
        return {"n": self.n, "k_n": self.k, "A_kn": self.A, "B_kn": self.B}


@dataclass(frozen=True)
class Schedule:
    levels: tuple[ScheduleLevel, ...]
    nu: float
    beta: float
    q: float
    w: int
    omitted: tuple[tuple[int, str], ...] = ()
    h1_values: tuple[float, ...] = ()

    @property
    def ks(self) -> list[int]:
        return [lv.k for lv in self.levels]

    def level(self, n: int) -> ScheduleLevel:
        for lv in self.levels:
            if lv.n == n:
                return lv
        raise KeyError(f"level {n} not in schedule")

    def to_dict(self) -> dict:
        return {"nu": self.nu, "beta": self.beta, "q": self.q, "w": self.w,
                "levels": [lv.to_dict() for lv in self.levels],
                "omitted": [{"n": n, "reason": r} for n, r in self.omitted]}

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        levels = tuple(ScheduleLevel(int(v["n"]), int(v["k_n"]), float(v["A_kn"]),
                                     None if v["B_kn"] is None else float(v["B_kn"]))
                       for v in d["levels"])
        omitted = tuple((int(o["n"]), o["reason"]) for o in d.get("omitted", []))
        return cls(levels, float(d["nu"]), float(d["beta"]), float(d["q"]), int(d["w"]), omitted)


def log_A(n: int, q: float, w: int) -> float:
    """log A_{k_n} = log[C(2n-2, w) (1-q)^-w (1/q - 1)^(2n-2)]; -inf if 2n-2 < w."""
    m = 2 * n - 2
    if m < w:
        return -math.inf
    return float(log_binom(m, w)) - w * math.log1p(-q) + m * math.log(1.0 / q - 1.0)


def schedule(f_W: SizePmf, q: float, w: int, n_max: int,
             taildec: TailDecomposition | None = None, budget: float | None = None,
             with_B: bool = True) -> Schedule:
    """Levels n = 1..n_max with k_n = ceil(e^((n-1)nu) / h1(n-1)) and A_{k_n}.

    Levels whose scale constant vanishes (2n - 2 < w) or whose k_n exceeds the
    budget are omitted, with the reason recorded.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if not 0.0 < q < 0.5:
        raise OutOfTheoryError("a semi-stable schedule needs q < 1/2")
    td = taildec or extract_tail_decomposition(f_W, q)
    beta = math.log(1.0 / q - 1.0)
    cap = env_budget() if budget is None else budget
    levels, omitted, h1s = [], [], []
    for n in range(1, n_max + 1):
        h1 = td.h1_at(n - 1)
        h1s.append(h1)
        k = math.ceil(math.exp((n - 1) * td.nu) / h1)
        la = log_A(n, q, w)
        if math.isinf(la):
            omitted.append((n, "A_kn = 0 since 2n-2 < w"))
            continue
        if k > cap:
            warnings.warn(f"level {n}: k_n = {k} exceeds budget {cap:g}; omitted")
            omitted.append((n, f"k_n = {k} exceeds budget"))
            continue
        B = compute_B_kn(f_W, q, w, k) if (with_B and k >= 2) else None
        levels.append(ScheduleLevel(n, int(k), math.exp(la), B))
    return Schedule(tuple(levels), td.nu, beta, q, w, tuple(omitted), tuple(h1s))


def slowly_varying_monotone(q: float, w: int, n_values) -> bool:
    """Check that L(e^n) = C(n, w)(1-q)^-w is nondecreasing over ``n_values``."""
    vals = [float(log_binom(n, w)) - w * math.log1p(-q) for n in n_values if n >= w]
    return all(b >= a for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------- laws

class CfLaw:
    """Mixin: CDF / quantile / sampling for anything with ``levy()`` and ``alpha``."""

    alpha: float
    cdf_tol: float = 1e-6

    def levy(self) -> AtomicLevy:
        raise NotImplementedError

    def decay_constant(self) -> float:
        raise NotImplementedError

    def log_cf(self, t):
        return self.levy().log_cf(t)

    @functools.cached_property
    def inverter(self) -> CfInverter:
        return CfInverter(self.levy(), self.alpha, self.decay_constant(), tol=self.cdf_tol,
                          scale=self.spread())

    def spread(self) -> float:
        cached = self.__dict__.get("_spread")
        if cached is None:
            rng = np.random.Generator(np.random.PCG64(20240601))
            xs = self.levy().sample(rng, 2000)
            cached = max(float(np.subtract(*np.percentile(xs, [75, 25]))), 1e-3)
            self.__dict__["_spread"] = cached
        return cached

    def cdf(self, x):
        out = self.inverter.cdf(x)
        return out if np.ndim(out) else float(out)

    def quantile(self, p: float, xtol: float = 1e-10) -> float:
        if not 0.0 < p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        # start near the sample quantile: wide brackets force fine grids at large |x|
        rng = np.random.Generator(np.random.PCG64(20240602))
        guess = float(np.quantile(self.levy().sample(rng, 4000), p))
        pad = 0.25 * self.spread()
        lo, hi = guess - pad, guess + pad

        def f(x):
            return float(self.inverter.cdf(np.array([x]))[0]) - p

        lo, hi = bracket_root(f, lo, hi)
        return optimize.brentq(f, lo, hi, xtol=xtol)

    def sample(self, seed, count: int) -> np.ndarray:
        if count < 1:
            raise ValueError("count must be >= 1")
        rng = seed.generator() if hasattr(seed, "generator") else seed
        return self.levy().sample(rng, count)


@dataclass(frozen=True, eq=False)
class SemiStableLaw(CfLaw):
    """Limit law Y with log cf i eta t + sum mass (e^{itx} - 1 - itx/(1+x^2)).

    ``zeta`` is not part of Y; the limit of centred sums is Y + zeta.
    """

    alpha: float
    nu: float
    beta: float
    c1: float
    zeta: float
    eta: float
    positions: np.ndarray = field(repr=False)
    masses: np.ndarray = field(repr=False)
    window: tuple[int, int] = DEFAULT_WINDOW

    @property
    def period_c(self) -> float:
        return math.exp(self.nu)

    @functools.lru_cache(maxsize=None)
    def levy(self) -> AtomicLevy:
        return AtomicLevy.standard(self.positions, self.masses, self.eta)

    @functools.lru_cache(maxsize=None)
    def decay_constant(self) -> float:
        """p with -Re log cf(t) >= p |t|^alpha for all t (from one log-period)."""
        t = np.exp(np.linspace(0.0, 2.0 * self.beta, 4001))
        ratio = -self.levy().log_cf(t).real / t**self.alpha
        return 0.9 * float(np.min(ratio))

    def tail_bound(self, t_max: float) -> float:
        return cf_truncation_bound(self.nu, self.beta, self.c1, self.window, t_max)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "nu": self.nu, "beta": self.beta,
                "period_c": self.period_c, "c1": self.c1, "zeta": self.zeta, "eta": self.eta,
                "atoms": [[float(a), float(b)] for a, b in zip(self.positions, self.masses)],
                "atom_truncation": list(self.window)}

    @classmethod
    def from_dict(cls, d: dict) -> "SemiStableLaw":
        atoms = np.asarray(d["atoms"], dtype=float).reshape(-1, 2)
        return cls(float(d["alpha"]), float(d["nu"]), float(d["beta"]), float(d["c1"]),
                   float(d["zeta"]), float(d["eta"]), atoms[:, 0].copy(), atoms[:, 1].copy(),
                   tuple(int(v) for v in d["atom_truncation"]))

    def shifted(self, sign: int = 1) -> "TransformedLaw":
        """Law of sign * (Y + zeta)."""
        return TransformedLaw(self, shift=self.zeta, sign=sign, lam=1.0)


@dataclass(frozen=True, eq=False)
class TransformedLaw(CfLaw):
    """lam^(-1/alpha) tau^(*lam) with tau the law of sign * (Y + shift)."""

    base: SemiStableLaw
    shift: float = 0.0
    sign: int = 1
    lam: float = 1.0

    @property
    def alpha(self) -> float:
        return self.base.alpha

    @functools.lru_cache(maxsize=None)
    def levy(self) -> AtomicLevy:
        b = self.base.levy()
        s = self.lam ** (-1.0 / self.alpha)
        drift = self.sign * (b.drift + self.shift)
        return AtomicLevy(b.positions * (self.sign * s), b.masses * self.lam, b.kappa,
                          b.kappa_c, drift * self.lam * s)

    def spread(self) -> float:
        # lam-powers keep the scale of tau; the base spread is a good enough grid scale
        return self.base.spread()

    def decay_constant(self) -> float:
        # -Re log cf is invariant in shape under lam-powers and sign flips
        return self.base.decay_constant()


def lambda_power(law: CfLaw, lam: float) -> TransformedLaw:
    """t -> exp(lam log_cf(lam^(-1/alpha) t)) for lam in [1, e^nu]."""
    base = law.base if isinstance(law, TransformedLaw) else law
    if not 1.0 - 1e-12 <= lam <= base.period_c * (1.0 + 1e-12):
        raise ValueError(f"lambda must lie in [1, {base.period_c}]")
    if isinstance(law, TransformedLaw):
        if law.lam != 1.0:
            raise ValueError("compose lambda powers from the untransformed law")
        return TransformedLaw(base, shift=law.shift, sign=law.sign, lam=float(lam))
    return TransformedLaw(base, shift=0.0, sign=1, lam=float(lam))


# ---------------------------------------------------------------- construction

def _geo_tail(rate: float, start: int) -> float:
    """sum_{j >= 1} exp(rate (start - j)) for rate > 0."""
    return math.exp(rate * (start - 1)) / -math.expm1(-rate)


def cf_truncation_bound(nu: float, beta: float, c1: float, window: tuple[int, int],
                        t_max: float) -> float:
    """Bound on |log cf| contributed by atoms outside ``window`` for |t| <= t_max."""
    m_lo, m_hi = window
    scale = -math.expm1(-nu)
    r2, r3 = 4.0 * beta - nu, 6.0 * beta - nu
    neg2 = c1 * math.exp(2.0 * beta)
    neg3 = c1 * math.exp(3.0 * beta)
    small = scale * (0.5 * t_max**2 * (1.0 + neg2) * _geo_tail(r2, m_lo)
                     + t_max * (1.0 + neg3) * _geo_tail(r3, m_lo))
    large = (1.0 + c1) * math.exp(-nu * (m_hi + 1)) * (2.0 + t_max)
    return small + large


def location_eta(positions, masses, nu: float, beta: float, c1: float,
                 window: tuple[int, int]) -> float:
    """eta = Theta(psi1) - Theta(psi2) with
    Theta(psi) = int_0^1 psi/(1+psi^2) ds - int_1^inf psi^3/(1+psi^2) ds.

    psi1 runs over the negative atoms from the most negative inwards, psi2 over
    minus the positive atoms from the largest inwards; each is constant on an
    interval of length equal to the atom mass.  Atoms beyond the upper end of
    the window only offset the starting point by their (closed-form) mass.
    """
    x = np.asarray(positions, dtype=float)
    m = np.asarray(masses, dtype=float)
    out_hi = math.exp(-nu * (window[1] + 1))

    def theta(vals, mass, offset):
        if vals.size == 0:
            return 0.0
        start = offset + np.concatenate([[0.0], np.cumsum(mass)[:-1]])
        end = start + mass
        # split each plateau at s = 1 without forming differences of nearby numbers
        head = np.where(end <= 1.0, mass, np.where(start >= 1.0, 0.0, 1.0 - start))
        rest = np.where(end <= 1.0, 0.0, np.where(start >= 1.0, mass, end - 1.0))
        v2 = vals * vals
        return math.fsum((head * vals / (1.0 + v2)).tolist()) \
            - math.fsum((rest * vals * v2 / (1.0 + v2)).tolist())

    neg = x < 0
    order_n = np.argsort(x[neg])              # most negative first
    t1 = theta(x[neg][order_n], m[neg][order_n], c1 * out_hi) if c1 > 0 else 0.0
    pos = ~neg
    order_p = np.argsort(-x[pos])             # largest first
    t2 = theta(-x[pos][order_p], m[pos][order_p], out_hi)
    return t1 - t2


def build_law(nu: float, beta: float, c1: float, window: tuple[int, int] = DEFAULT_WINDOW,
              t_max: float = 1e4, tol: float = WINDOW_TOL) -> SemiStableLaw:
    """Assemble the limit law, widening the atom window until truncation < tol."""
    if nu <= 0 or beta <= 0:
        raise ValueError("nu and beta must be positive")
    alpha = nu / (2.0 * beta)
    if not 0.0 < alpha < 2.0:
        raise OutOfTheoryError(f"alpha = {alpha} is outside (0, 2)")
    if abs(alpha - 1.0) < ALPHA_ONE_TOL:
        raise NotSupportedError("alpha = 1 is excluded")
    if c1 < 0:
        raise ValueError("c1 must be >= 0")
    m_lo, m_hi = window
    while cf_truncation_bound(nu, beta, c1, (m_lo, m_hi), max(t_max, 1.0)) > tol:
        m_lo, m_hi = 2 * m_lo, 2 * m_hi
        if m_hi - m_lo > MAX_WINDOW:
            raise InconclusiveError("atom window needed for the tolerance is too large")
    pos, mass = levy_atoms(nu, beta, c1, (m_lo, m_hi))
    # drop atoms whose mass or position underflows; they are inside the bound above
    keep = (mass > 0) & np.isfinite(mass) & np.isfinite(pos) & (pos != 0)
    pos, mass = pos[keep], mass[keep]
    eta = location_eta(pos, mass, nu, beta, c1, (m_lo, m_hi))
    z = zeta(nu, beta, c1)
    return SemiStableLaw(alpha, nu, beta, c1, z, eta, pos, mass, (m_lo, m_hi))


def law_for(f_W: SizePmf, q: float, **kw) -> SemiStableLaw:
    """Limit law for the estimator built from ``f_W`` thinned at ``q`` (q < 1/2)."""
    if not 0.0 < q < 0.5:
        raise OutOfTheoryError("the semi-stable limit needs q < 1/2")
    td = extract_tail_decomposition(f_W, q)
    return build_law(td.nu, math.log(1.0 / q - 1.0), td.c1, **kw)


def cf_residual_fit(law: CfLaw, t: np.ndarray) -> tuple[float, float]:
    """Fit r log phi(t) - log phi(b t) = -i c t and return (c, max residual).

    r = e^-nu, b = e^-2beta.  Only the scalar c is fitted (least squares on the
    imaginary part); the residual measures the departure from exact linearity
    in t over the whole grid.
    """
    base = law.base if isinstance(law, TransformedLaw) else law
    r, b = math.exp(-base.nu), math.exp(-2.0 * base.beta)
    lhs = r * law.log_cf(t) - law.log_cf(b * t)
    # least squares on the imaginary part for the slope
    tt = np.asarray(t, dtype=float)
    c = -float(np.dot(lhs.imag, tt) / np.dot(tt, tt))
    resid = lhs + 1j * c * tt
    return c, float(np.max(np.abs(resid)))
