"""CDF and quantiles of a law known only through its characteristic function.

F(x) = 1/2 - (1/pi) int_0^inf Im(exp(-itx) phi(t)) / t dt.

The integral is cut at a T chosen from the envelope |phi(t)| <= exp(-p |t|^alpha)
and evaluated with composite Gauss-Legendre panels: geometrically graded
panels near the origin (where the integrand has a t^(alpha-1) kink), uniform
panels beyond.  phi is evaluated once per node, so many x are cheap.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import optimize, special

from .errors import InconclusiveError

GL_ORDER = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)
FAR_FACTORS = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0)


def _panel_nodes(edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    t = (a + half * (1.0 + _GL_X[None, :])).ravel()
    w = (half * _GL_W[None, :]).ravel()
    return t, w


def envelope_cutoff(p: float, alpha: float, tol: float) -> float:
    """Smallest T with (1/pi) int_T^inf exp(-p t^alpha)/t dt <= tol."""
    # int_T^inf exp(-p t^a)/t dt = E1(p T^a) / a
    def excess(log_t):
        return special.exp1(p * math.exp(alpha * log_t)) / (alpha * math.pi) - tol

    lo, hi = -30.0, 0.0
    while excess(hi) > 0:
        hi += 1.0
        if hi > 60:
            raise InconclusiveError("characteristic function decays too slowly to invert")
    return math.exp(optimize.brentq(excess, lo, hi, xtol=1e-6))


class CfInverter:
    """Gil-Pelaez inversion for one characteristic function.

    ``source`` is either a callable mapping an array of t to log phi(t), or an
    ``AtomicLevy``.  ``alpha`` and ``decay`` give the envelope
    |phi(t)| <= exp(-decay |t|^alpha) used to set the cutoff.

    For an ``AtomicLevy`` the atoms far beyond the evaluation range (|x| >
    factor * (x_cap + scale)) are not integrated: their oscillations are costly
    to resolve and they only move rare mass far away.  With far jump rates Lp, Ln
    the CDF on the bucket is exp(-Lp - Ln) (F_near(x) + expm1(Ln)), exact up to
    configurations mixing far jumps of both signs (probability <= Lp Ln) and
    the near law's mass beyond the far cutoff.  The factor is doubled from 2
    until the CDF on probe points stops moving, unless ``far_factor`` fixes it.

    Beyond the first bucket edge where the CDF is already within tol of 0 or 1,
    monotonicity pins F to within tol/2 without any further quadrature.
    """

    def __init__(self, source, alpha: float, decay: float, tol: float = 1e-6,
                 scale: float = 1.0, far_factor: float | None = None):
        self.source = source
        self.alpha = alpha
        self.decay = decay
        self.tol = tol
        self.scale = scale
        self.far_factor = far_factor
        self.T = envelope_cutoff(decay, alpha, tol / 10.0)
        self.t_floor = min(1e-12, (1e-3 * tol) ** (1.0 / alpha))
        self._cache: dict[int, tuple] = {}
        self._edges: dict[tuple[int, int], float] = {}

    def _bucket_cf(self, x_cap: float, factor: float):
        if callable(self.source):
            return self.source, x_cap, 0.0, 0.0
        near, lp, ln = self.source.split(factor * (x_cap + self.scale))
        # atoms irrelevant below the cutoff T only cost time
        near = near.pruned(self.T, tol=1e-15)
        reach = x_cap + (float(np.max(np.abs(near.positions))) if near.positions.size else 0.0)
        return near.log_cf, reach, lp, ln

    def _grid(self, log_cf, width: float, reach: float):
        # graded panels only where every oscillation t * x has phase O(1); uniform beyond
        t1 = min(1.0, self.T, 1.0 / reach)
        n_geo = max(1, math.ceil(math.log2(t1 / self.t_floor)))
        geo = t1 * 2.0 ** -np.arange(n_geo, -1, -1, dtype=float)
        geo[0] = self.t_floor
        edges = geo
        if self.T > t1:
            n_uni = max(1, math.ceil((self.T - t1) / width))
            edges = np.concatenate([geo, np.linspace(t1, self.T, n_uni + 1)[1:]])
        t, w = _panel_nodes(edges)
        phi = np.exp(log_cf(t))
        return t, w / t, phi

    @staticmethod
    def _integral(x: np.ndarray, grid) -> np.ndarray:
        t, wt, phi = grid[:3]
        out = np.empty(x.shape)
        re, im = phi.real, phi.imag
        step = max(1, 2**22 // t.size)  # bounds the x-by-t block to ~32 MB
        for i in range(0, x.size, step):
            tx = np.outer(x[i:i + step], t)
            out[i:i + step] = (np.cos(tx) * im - np.sin(tx) * re) @ wt
        return out

    def _eval(self, x: np.ndarray, entry) -> np.ndarray:
        lp, ln = entry[4], entry[5]
        near = 0.5 - self._integral(x, entry) / math.pi
        return math.exp(-lp - ln) * (near + math.expm1(ln))

    def _build(self, x_cap: float, factor: float, probe: np.ndarray):
        """Halve the panel width until the probe values settle; returns (entry, F(probe))."""
        log_cf, reach, lp, ln = self._bucket_cf(x_cap, factor)
        # a 16-point Gauss-Legendre panel integrates ~16 radians of phase accurately
        width = 16.0 / reach
        val = self._integral(probe, self._grid(log_cf, width, reach))
        for _ in range(12):
            finer = self._grid(log_cf, width / 2.0, reach)
            val2 = self._integral(probe, finer)
            err = np.max(np.abs(val2 - val)) / math.pi
            val, width = val2, width / 2.0
            if err < self.tol / 10.0:
                entry = (*finer, width, lp, ln)
                return entry, self._eval(probe, entry)
        raise InconclusiveError(f"oscillatory integral did not settle (error {err:.2e})")

    def nodes_for(self, xmax: float):
        """Quadrature grid adequate for |x| <= xmax (cached by power-of-two bucket).

        Returns (t, w/t, phi, width, far_pos, far_neg).
        """
        bucket = max(0, math.ceil(math.log2(max(xmax / self.scale, 1.0))))
        if bucket in self._cache:
            return self._cache[bucket]
        x_cap = self.scale * 2.0**bucket
        probe = np.linspace(-x_cap, x_cap, 41)
        if callable(self.source) or self.far_factor is not None:
            entry, _ = self._build(x_cap, self.far_factor or 1.0, probe)
        else:
            prev = None
            for factor in FAR_FACTORS:
                entry, vals = self._build(x_cap, factor, probe)
                if prev is not None and np.max(np.abs(vals - prev[1])) < self.tol / 10.0:
                    entry = prev[0]
                    break
                prev = (entry, vals)
            else:
                raise InconclusiveError("far-jump cutoff did not settle")
        self._cache[bucket] = entry
        return entry

    def _edge_value(self, b: int, side: int) -> float:
        key = (b, side)
        if key not in self._edges:
            x = side * self.scale * 2.0**b
            self._edges[key] = float(self._eval(np.array([x]), self.nodes_for(abs(x)))[0])
        return self._edges[key]

    def _pinned(self, b: int, side: int) -> float | None:
        """F value for every x beyond bucket b - 1 on ``side``, if an inner edge pins it."""
        for b0 in range(1, b):
            f = self._edge_value(b0, side)
            tail = 1.0 - f if side > 0 else f
            # the midpoint of [F(edge), 1] is off by at most tail / 2
            if tail <= self.tol:
                return f + 0.5 * tail if side > 0 else 0.5 * f
        return None

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        if flat.size == 0:
            return np.empty(x.shape)
        # resolution needed grows with |x|, so each magnitude bucket gets its own grid
        buckets = np.ceil(np.log2(np.maximum(np.abs(flat) / self.scale, 1.0))).astype(int)
        vals = np.empty(flat.shape)
        for b in np.unique(buckets):
            rest = buckets == b
            if b >= 2 and not callable(self.source):
                for side in (1, -1):
                    sel = rest & (np.sign(flat) == side)
                    if sel.any():
                        pin = self._pinned(int(b), side)
                        if pin is not None:
                            vals[sel] = pin
                            rest &= ~sel
            if rest.any():
                vals[rest] = self._eval(flat[rest], self.nodes_for(self.scale * 2.0**b))
        return np.clip(vals, 0.0, 1.0).reshape(x.shape)


def bracket_root(f: Callable[[float], float], lo: float, hi: float, grow: float = 2.0,
                 max_iter: int = 60) -> tuple[float, float]:
    """Expand [lo, hi] geometrically about its midpoint until f changes sign."""
    flo, fhi = f(lo), f(hi)
    for _ in range(max_iter):
        if flo <= 0.0 <= fhi:
            return lo, hi
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * grow
        if flo > 0.0:
            lo = mid - half
            flo = f(lo)
        if fhi < 0.0:
            hi = mid + half
            fhi = f(hi)
    raise InconclusiveError("could not bracket the quantile")
