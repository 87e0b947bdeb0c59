"""Replicate engine for the estimator at schedule sample sizes and in between.

Each replicate draws N thinned sizes, forms f_hat and normalizes it.  Only the
histogram of the N draws enters f_hat, so the histogram is drawn directly as
Multinomial(N, f_{W_q}), with any draws past the tabulated support resolved
from the exact conditional tail.  This has the same law as N two-stage draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .dist_core import SizePmf, sample_sizes, stream_generator, thin_pmf, thin_pmf_to_tol
from .errors import BudgetExceededError, OutOfTheoryError
from .estimator import classify_regime, compute_Rqw, estimate_fw_counts
from .limit import SemiStableLaw, TransformedLaw, env_budget, law_for, schedule

DEFAULT_LEVEL_BUDGET = 10**7
KS_NULL_SD = float(stats.kstwobign.std())


class ThinnedCounter:
    """Draws the histogram of N i.i.d. copies of W_q."""

    def __init__(self, f_W: SizePmf, q: float, tail_tol: float = 1e-18):
        self.f_W, self.q = f_W, q
        self.pmf = thin_pmf_to_tol(f_W, q, tol=tail_tol)
        self.pvals = np.append(self.pmf.probs, max(self.pmf.tail_mass, 0.0))
        self.pvals = self.pvals / self.pvals.sum()

    def counts(self, N: int, rng: np.random.Generator) -> np.ndarray:
        c = rng.multinomial(N, self.pvals)
        over = int(c[-1])
        c = c[:-1]
        if over == 0:
            return c
        # values beyond the table: draw from the conditional tail by inverse CDF
        s_max = self.pmf.s_max
        extra = []
        hi = 2 * s_max + 2
        ext = thin_pmf(self.f_W, self.q, hi)
        while ext.tail_mass > 1e-300 and ext.s_max < 10**6:
            hi *= 2
            ext = thin_pmf(self.f_W, self.q, hi)
        tail_p = ext.probs[s_max + 1:]
        cdf = np.cumsum(tail_p) / tail_p.sum()
        u = rng.random(over)
        extra = s_max + 1 + np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
        out = np.zeros(int(extra.max()) + 1, dtype=c.dtype)
        out[:c.size] = c
        np.add.at(out, extra, 1)
        return out


def direct_counts(f_W: SizePmf, q: float, N: int, rng: np.random.Generator) -> np.ndarray:
    """Histogram from N explicit two-stage draws (reference path)."""
    w = sample_sizes(f_W, rng, N)
    return np.bincount(rng.binomial(w, q))


@dataclass(frozen=True)
class McConfig:
    f_W: SizePmf
    q: float
    w: int
    levels: tuple[int, ...]
    replicates: int
    off_subsequence_Ns: tuple[int, ...] = ()
    master_seed: int = 0
    ks_tolerance: float = 0.05
    budget: float | None = None
    n_jobs: int = 1
    method: str = "multinomial"

    def __post_init__(self):
        if self.replicates < 100:
            raise ValueError("replicates must be >= 100")
        if not self.levels and not self.off_subsequence_Ns:
            raise ValueError("no levels requested")
        if self.method not in ("multinomial", "direct"):
            raise ValueError(f"unknown method {self.method!r}")
        object.__setattr__(self, "levels", tuple(int(n) for n in self.levels))
        object.__setattr__(self, "off_subsequence_Ns",
                           tuple(int(n) for n in self.off_subsequence_Ns))

    @property
    def level_budget(self) -> float:
        return env_budget(DEFAULT_LEVEL_BUDGET) if self.budget is None else self.budget

    def to_dict(self) -> dict:
        return {"family": self.f_W.to_dict(), "q": self.q, "w": self.w,
                "levels": list(self.levels), "replicates": self.replicates,
                "off_subsequence_Ns": list(self.off_subsequence_Ns),
                "master_seed": self.master_seed, "ks_tolerance": self.ks_tolerance,
                "budget": self.budget, "method": self.method}

    @classmethod
    def from_dict(cls, d: dict, **override) -> "McConfig":
        kw = dict(f_W=SizePmf.from_dict(d["family"]), q=float(d["q"]), w=int(d["w"]),
                  levels=tuple(d.get("levels", ())), replicates=int(d["replicates"]),
                  off_subsequence_Ns=tuple(d.get("off_subsequence_Ns", ())),
                  master_seed=int(d.get("master_seed", 0)),
                  ks_tolerance=float(d.get("ks_tolerance", 0.05)),
                  budget=d.get("budget"), method=d.get("method", "multinomial"))
        kw.update({k: v for k, v in override.items() if v is not None})
        return cls(**kw)


def _fhat_batch(f_W, q, w, N, seed, key, reps, method):
    counter = ThinnedCounter(f_W, q) if method == "multinomial" else None
    out = []
    for r in reps:
        rng = stream_generator(seed, key, r)
        c = counter.counts(N, rng) if counter else direct_counts(f_W, q, N, rng)
        out.append(estimate_fw_counts(c, q, w))
    return out


def simulate_fhat(f_W: SizePmf, q: float, w: int, N: int, replicates: int, seed: int,
                  key: int, n_jobs: int = 1, method: str = "multinomial") -> np.ndarray:
    """f_hat for replicates 0..replicates-1; replicate r uses stream (seed, key, r)."""
    if n_jobs == 1:
        return np.array(_fhat_batch(f_W, q, w, N, seed, key, range(replicates), method))
    chunks = np.array_split(np.arange(replicates), max(1, 4 * abs(n_jobs)))
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_fhat_batch)(f_W, q, w, N, seed, key, ch.tolist(), method)
        for ch in chunks if ch.size)
    return np.array([v for part in parts for v in part])


@dataclass
class LevelResult:
    n: int
    k: int
    A: float
    stats: np.ndarray = field(repr=False)
    partial: bool = False
    note: str = ""


def _semistable_setup(config: McConfig, n_max: int):
    rep = classify_regime(config.f_W, config.q, config.w)
    if rep.regime not in ("semistable_01", "semistable_12"):
        raise OutOfTheoryError(f"regime is {rep.regime}; the semi-stable engine does not apply")
    sch = schedule(config.f_W, config.q, config.w, n_max, budget=math.inf, with_B=False)
    return rep, sch


def run_level(config: McConfig, n: int) -> LevelResult:
    """Normalized statistic d_N(f_hat - f) (alpha > 1) or d_N f_hat (alpha < 1) at N = k_n."""
    rep, sch = _semistable_setup(config, n)
    lv = sch.level(n)
    if lv.k > config.level_budget:
        return LevelResult(n, lv.k, lv.A, np.array([]), partial=True,
                           note=f"k_n = {lv.k} exceeds budget {config.level_budget:g}")
    fh = simulate_fhat(config.f_W, config.q, config.w, lv.k, config.replicates,
                       config.master_seed, n, config.n_jobs, config.method)
    d = lv.k / lv.A
    if rep.regime == "semistable_12":
        stat = d * (fh - float(config.f_W.pmf(config.w)))
    else:
        stat = d * fh
    return LevelResult(n, lv.k, lv.A, stat)


def limit_sign(w: int) -> int:
    return 1 if w % 2 == 0 else -1


def signed_cdf(law: SemiStableLaw, x, shift: float, w: int) -> np.ndarray:
    """CDF of (-1)^w (Y + shift) evaluated through the CDF of Y."""
    x = np.asarray(x, dtype=float)
    if limit_sign(w) > 0:
        return law.cdf(x - shift)
    return 1.0 - law.cdf(-x - shift)


def ks_compare(empirical, law: SemiStableLaw, zeta: float, w: int) -> float:
    """Two-sided KS distance between a sample and the law of (-1)^w (Y + zeta)."""
    sample = np.sort(np.asarray(empirical, dtype=float))
    return float(stats.kstest(sample, lambda x: signed_cdf(law, x, zeta, w)).statistic)


def ks_noise(replicates: int) -> float:
    """Standard deviation of the KS statistic under the null, ~0.26/sqrt(R)."""
    return KS_NULL_SD / math.sqrt(replicates)


def _summary(x: np.ndarray) -> dict:
    qs = [0.05, 0.25, 0.5, 0.75, 0.95]
    return {"quantiles": dict(zip([str(v) for v in qs], np.quantile(x, qs).tolist())),
            "median": float(np.median(x)), "min": float(np.min(x)), "max": float(np.max(x))}


def gaussian_regime_check(f_W: SizePmf, q: float, w: int, N: int, replicates: int,
                          seed: int = 0, n_jobs: int = 1) -> float:
    """Empirical Var(sqrt(N)(f_hat - f)) divided by R_{q,w} - f_W(w)^2."""
    r = compute_Rqw(f_W, q, w)
    if not math.isfinite(r):
        raise OutOfTheoryError("R_{q,w} diverges; the Gaussian check does not apply")
    f = float(f_W.pmf(w))
    fh = simulate_fhat(f_W, q, w, N, replicates, seed, 0, n_jobs)
    v = np.var(math.sqrt(N) * (fh - f), ddof=1)
    return float(v / (r - f * f))


def locate_level(N: int, sch) -> int:
    """Index of the level with k_p <= N < k_{p+1}."""
    ks = sch.ks
    if not ks or N < ks[0]:
        raise ValueError(f"N = {N} is below the first schedule level")
    idx = int(np.searchsorted(ks, N, side="right")) - 1
    if idx >= len(ks) - 1:
        raise ValueError(f"N = {N} is beyond the schedule; compute deeper levels")
    return idx


def compactness_probe(config: McConfig, lambda_grid: int = 21) -> list[dict]:
    """Off-schedule sample sizes compared with the lambda-power family.

    For each N, with k_p <= N < k_{p+1} and lambda_N = N / k_p, the statistic
    N f_hat / a_N - b_N uses a_N = lambda_N^(1/alpha) A_{k_p} and
    b_N = lambda_N^(1 - 1/alpha) B_{k_p} / A_{k_p}; it is compared with
    (-1)^w lambda^(-1/alpha) Y^(*lambda) over a lambda grid on [1, e^nu].
    """
    if not config.off_subsequence_Ns:
        raise ValueError("no off-subsequence sample sizes given")
    n_max = 2
    rep = classify_regime(config.f_W, config.q, config.w)
    if rep.regime not in ("semistable_01", "semistable_12"):
        raise OutOfTheoryError(f"regime is {rep.regime}")
    while True:
        sch = schedule(config.f_W, config.q, config.w, n_max, budget=math.inf, with_B=False)
        if sch.ks and sch.ks[-1] > max(config.off_subsequence_Ns):
            break
        n_max += 1
    law = law_for(config.f_W, config.q)
    a = law.alpha
    sign = limit_sign(config.w)
    from .limit import compute_B_kn  # local: B only needed for the probed levels

    grid = np.linspace(1.0, law.period_c, lambda_grid)
    members = [TransformedLaw(law, shift=0.0, sign=sign, lam=float(g)) for g in grid]
    out = []
    for j, N in enumerate(config.off_subsequence_Ns):
        if N > config.level_budget:
            out.append({"N": N, "partial": True, "note": "N exceeds budget"})
            continue
        idx = locate_level(N, sch)
        lv = sch.levels[idx]
        lam = N / lv.k
        B = compute_B_kn(config.f_W, config.q, config.w, lv.k)
        a_N = lam ** (1.0 / a) * lv.A
        b_N = lam ** (1.0 - 1.0 / a) * B / lv.A
        fh = simulate_fhat(config.f_W, config.q, config.w, N, config.replicates,
                           config.master_seed, 10**6 + j, config.n_jobs, config.method)
        z = np.sort(N * fh / a_N - b_N)
        own = TransformedLaw(law, shift=0.0, sign=sign, lam=lam)
        ks_own = float(stats.kstest(z, own.cdf).statistic)
        ks_grid = [float(stats.kstest(z, m.cdf).statistic) for m in members]
        best = int(np.argmin(ks_grid))
        # tail envelope at the upper 10% point of the lambda = 1 member
        x_tail = members[0].quantile(0.9)
        emp = float(np.mean(z > x_tail))
        sup_tail = max(1.0 - float(m.cdf(x_tail)) for m in members)
        se = math.sqrt(max(emp * (1 - emp), 1e-12) / z.size)
        out.append({"N": N, "p_N": lv.n, "k_p": lv.k, "lambda_N": lam, "a_N": a_N, "b_N": b_N,
                    "ks_lambda_N": ks_own, "ks_lambda_1": ks_grid[0],
                    "best_lambda": float(grid[best]), "ks_best": ks_grid[best],
                    "tail_x": x_tail, "tail_empirical": emp, "tail_sup_family": sup_tail,
                    "tail_within_envelope": bool(emp <= sup_tail + 3 * se)})
    return out


@dataclass
class McReport:
    config: McConfig
    alpha: float
    zeta: float
    levels: list[dict]
    stability: dict
    probe: list[dict] | None = None
    raw: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "alpha": self.alpha, "zeta": self.zeta,
                "levels": self.levels, "stability": self.stability, "probe": self.probe}

    def raw_rows(self):
        for n in sorted(self.raw):
            for i, v in enumerate(self.raw[n]):
                yield n, i, float(v)


def run_experiment(config: McConfig, probe: bool = True) -> McReport:
    """All configured levels, KS against the limit, and the off-schedule probe."""
    law = law_for(config.f_W, config.q)
    rows, raw = [], {}
    for n in sorted(config.levels):
        res = run_level(config, n)
        row = {"n": n, "k_n": res.k, "A_kn": res.A, "replicates": int(res.stats.size),
               "partial": res.partial, "note": res.note}
        if res.stats.size:
            raw[n] = res.stats
            row["ks"] = ks_compare(res.stats, law, law.zeta, config.w)
            row["ks_noise"] = ks_noise(res.stats.size)
            row["summary"] = _summary(res.stats)
        rows.append(row)
    done = [r for r in rows if "ks" in r]
    steps = [{"from": a["n"], "to": b["n"], "delta": b["ks"] - a["ks"],
              "allowed": 2.0 * max(a["ks_noise"], b["ks_noise"])} for a, b in zip(done, done[1:])]
    stability = {
        "ks_by_level": {str(r["n"]): r["ks"] for r in done},
        "steps": steps,
        "non_increasing_within_noise": all(s["delta"] <= s["allowed"] for s in steps),
        "deepest_ks": done[-1]["ks"] if done else None,
        "deepest_below_tolerance": bool(done and done[-1]["ks"] < config.ks_tolerance),
    }
    pr = compactness_probe(config) if (probe and config.off_subsequence_Ns) else None
    return McReport(config, law.alpha, law.zeta, rows, stability, pr, raw)
