"""Conservative confidence intervals for f_W(w) when alpha lies in (1, 2).

With k_p <= N < k_{p+1} the scaled error (f_hat - f) / b_N is close to some
member lam^(-1/alpha) tau^(*lam), lam in [1, e^nu], of the lambda-power family
of tau = (-1)^w (Y + zeta).  Which member is unknown, so the interval uses
quantiles taken as a supremum of tail probabilities over a grid of lam.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .dist_core import SizePmf
from .errors import InconclusiveError, NotSupportedError, OutOfTheoryError
from .estimator import classify_regime
from .inversion import bracket_root
from .limit import Schedule, SemiStableLaw, TransformedLaw, law_for, schedule
from .montecarlo import limit_sign, simulate_fhat

DEFAULT_GRID = 101


@dataclass(frozen=True, eq=False)
class CiSpec:
    gamma: float
    schedule: Schedule
    law: SemiStableLaw
    w: int
    lambda_grid_size: int = DEFAULT_GRID

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.lambda_grid_size < 1:
            raise ValueError("lambda_grid_size must be >= 1")
        if not 1.0 < self.law.alpha < 2.0:
            raise NotSupportedError(
                f"alpha = {self.law.alpha:.6g}: intervals are only available for alpha in (1, 2); "
                "for alpha < 1 the estimator is not centred by f_W(w) in the limit")

    @property
    def lambda_grid(self) -> np.ndarray:
        if self.lambda_grid_size == 1:
            return np.array([1.0])
        return np.linspace(1.0, self.law.period_c, self.lambda_grid_size)

    @property
    def tau(self) -> TransformedLaw:
        return TransformedLaw(self.law, shift=self.law.zeta, sign=limit_sign(self.w), lam=1.0)

    def members(self) -> list[TransformedLaw]:
        tau = self.tau
        return [TransformedLaw(self.law, shift=tau.shift, sign=tau.sign, lam=float(g))
                for g in self.lambda_grid]


@dataclass(frozen=True)
class CiResult:
    lo: float
    hi: float
    f_hat: float
    N: int
    gamma: float
    b_tilde: float
    p_N: int
    k_pN: int
    x_lower: float
    x_upper: float
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError("interval endpoints out of order")

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    def to_dict(self) -> dict:
        return {"interval": [self.lo, self.hi], "f_hat": self.f_hat, "N": self.N,
                "gamma": self.gamma, "b_tilde": self.b_tilde, "p_N": self.p_N,
                "k_pN": self.k_pN, "quantiles": {"lower": self.x_lower, "upper": self.x_upper},
                "diagnostics": self.diagnostics}


def locate_pN(N: int, sch: Schedule) -> tuple[int, int]:
    """(p_N, k_{p_N}) with k_{p_N} <= N < k_{p_N + 1}."""
    ks = sch.ks
    if not ks or N < ks[0]:
        raise ValueError(f"N = {N} is below the first schedule level k = {ks[0] if ks else None}")
    idx = int(np.searchsorted(ks, N, side="right")) - 1
    if idx >= len(ks) - 1:
        raise ValueError(f"N = {N} is not below the deepest level k = {ks[-1]}; "
                         "compute a deeper schedule")
    lv = sch.levels[idx]
    return lv.n, lv.k


def b_tilde(N: int, alpha: float, sch: Schedule) -> float:
    """N^(1/alpha - 1) A_{k_p} k_p^(-1/alpha), evaluated in log space."""
    p, k = locate_pN(N, sch)
    A = sch.level(p).A
    return math.exp((1.0 / alpha - 1.0) * math.log(N) + math.log(A) - math.log(k) / alpha)


def _member_cdf(m: TransformedLaw, x: float) -> float:
    try:
        return float(m.cdf(np.array([x]))[0])
    except InconclusiveError as exc:
        raise InconclusiveError(f"CDF inversion failed at lambda = {m.lam:.6g}: {exc}") from exc


def _brackets(spec: CiSpec) -> tuple[tuple[float, float], tuple[float, float]]:
    # start from sample quantiles of tau; bracket_root widens them as needed.  Far-out
    # brackets would force every member to build fine grids for large |x|.
    rng = np.random.Generator(np.random.PCG64(20240603))
    xs = spec.tau.levy().sample(rng, 4000)
    half = spec.gamma / 2.0
    lo, hi = np.quantile(xs, [half, 1.0 - half])
    pad = 0.25 * spec.law.spread()
    return (lo - pad, lo + pad), (hi - pad, hi + pad)


def sup_quantiles(spec: CiSpec, xtol: float = 1e-9) -> tuple[float, float, list[dict]]:
    """x_lo with max_lam P(T_lam <= x_lo) = gamma/2 and x_hi with max_lam P(T_lam > x_hi) = gamma/2.

    Returns the pair and a per-lambda table of each member's CDF at both
    solutions, with a flag checking that the sup dominates it.
    """
    half = spec.gamma / 2.0
    members = spec.members()

    def G(x):
        return max(_member_cdf(m, x) for m in members)

    def H(x):
        return max(1.0 - _member_cdf(m, x) for m in members)

    lo0, hi0 = _brackets(spec)
    a, b = bracket_root(lambda x: G(x) - half, *lo0)
    x_lo = optimize.brentq(lambda x: G(x) - half, a, b, xtol=xtol)
    a, b = bracket_root(lambda x: half - H(x), *hi0)
    x_hi = optimize.brentq(lambda x: half - H(x), a, b, xtol=xtol)

    g_lo, h_hi = G(x_lo), H(x_hi)
    table = []
    for m in members:
        f_lo, f_hi = _member_cdf(m, x_lo), _member_cdf(m, x_hi)
        table.append({"lambda": m.lam, "cdf_at_lower": f_lo, "cdf_at_upper": f_hi,
                      "dominated": bool(f_lo <= g_lo and 1.0 - f_hi <= h_hi)})
    if not all(r["dominated"] for r in table):
        raise AssertionError("sup over the lambda grid does not dominate a member")
    return x_lo, x_hi, table


def confidence_interval(f_hat: float, N: int, spec: CiSpec,
                        quantiles: tuple[float, float, list[dict]] | None = None) -> CiResult:
    """[f_hat - b x_hi, f_hat - b x_lo] with b = b_tilde(N)."""
    x_lo, x_hi, table = quantiles if quantiles is not None else sup_quantiles(spec)
    p, k = locate_pN(N, spec.schedule)
    b = b_tilde(N, spec.law.alpha, spec.schedule)
    diag = {"lambda_grid_size": spec.lambda_grid_size, "lambda_N": N / k,
            "per_lambda": table}
    return CiResult(f_hat - b * x_hi, f_hat - b * x_lo, float(f_hat), int(N), spec.gamma,
                    b, p, k, x_lo, x_hi, diag)


def build_spec(f_W: SizePmf, q: float, w: int, gamma: float, N_max: int,
               lambda_grid_size: int = DEFAULT_GRID) -> CiSpec:
    """Spec with a schedule just deep enough to bracket ``N_max``."""
    rep = classify_regime(f_W, q, w)
    if rep.regime != "semistable_12":
        raise OutOfTheoryError(f"regime is {rep.regime}; intervals need alpha in (1, 2)")
    n_max = 2
    while True:
        sch = schedule(f_W, q, w, n_max, budget=math.inf, with_B=False)
        if sch.ks and sch.ks[-1] > N_max:
            break
        n_max += 1
    return CiSpec(gamma, sch, law_for(f_W, q), w, lambda_grid_size)


@dataclass
class CoverageResult:
    N: int
    coverage: float
    se: float
    replicates: int
    mean_width: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def coverage_experiment(f_W: SizePmf, q: float, w: int, gamma: float, Ns, replicates: int,
                        seed: int, lambda_grid_size: int = DEFAULT_GRID,
                        n_jobs: int = 1) -> list[CoverageResult]:
    """Fraction of replicate intervals containing f_W(w), for each N.

    The standard error uses the nominal level: sqrt(gamma (1 - gamma) / R).
    """
    Ns = [int(v) for v in Ns]
    spec = build_spec(f_W, q, w, gamma, max(Ns), lambda_grid_size)
    quant = sup_quantiles(spec)
    truth = float(f_W.pmf(w))
    out = []
    for j, N in enumerate(Ns):
        fh = simulate_fhat(f_W, q, w, N, replicates, seed, 2 * 10**6 + j, n_jobs)
        b = b_tilde(N, spec.law.alpha, spec.schedule)
        lo, hi = fh - b * quant[1], fh - b * quant[0]
        hit = (lo <= truth) & (truth <= hi)
        se = math.sqrt(gamma * (1.0 - gamma) / replicates)
        out.append(CoverageResult(N, float(np.mean(hit)), se, replicates,
                                  float(np.mean(hi - lo))))
    return out
