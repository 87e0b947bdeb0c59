"""Quick invariant suite: each check compares two independent computations."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .dist_core import SizePmf, even_tail, odd_tail, thin_pmf, thinned_c
from .estimator import classify_regime, compute_Rqw, estimate_fw, EstimatorInput, invert_pmf
from .io import dumps, loads
from .limit import (Schedule, SemiStableLaw, cf_residual_fit, law_for, levy_L, levy_R,
                    levy_atoms, m_L_neg, m_R, schedule, zeta)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _brute_thin(f_W: SizePmf, q: float, s_max: int, w_max: int = 4000) -> np.ndarray:
    w = np.arange(1, w_max + 1)
    pw = np.asarray(f_W.pmf(w), dtype=float)
    s = np.arange(s_max + 1)
    out = (stats.binom.pmf(s[:, None], w[None, :], q) * pw[None, :]).sum(axis=1)
    out[0] += float(f_W.pmf(0))
    return out


def check_thinning() -> str:
    worst = 0.0
    for c in (0.2, 0.5, 0.8):
        for q in (0.1, 0.3, 0.7):
            f = SizePmf.geometric(c)
            a = thin_pmf(f, q, 30).probs
            b = _brute_thin(f, q, 30)
            worst = max(worst, float(np.max(np.abs(a - b))))
    assert worst < 1e-12, worst
    return f"max |closed - brute| = {worst:.1e}"


def check_tails() -> str:
    worst = 0.0
    for c, q in ((0.6, 0.3), (0.85, 0.2), (0.4, 0.45)):
        pmf = thin_pmf(SizePmf.geometric(c), q, 400)
        for x in (0.5, 1.0, 3.0, 7.2):
            for fn in (even_tail, odd_tail):
                a = fn(pmf, x, method="closed")
                b = fn(pmf, x, method="sum")
                worst = max(worst, abs(a - b))
    assert worst < 1e-12, worst
    return f"max |closed - sum| = {worst:.1e}"


def check_rqw_two_paths() -> str:
    worst = 0.0
    for c, q in ((0.3, 0.4), (0.5, 0.45), (0.2, 0.3)):
        a = compute_Rqw(SizePmf.geometric(c), q, 1)
        b = compute_Rqw(SizePmf.negbin(1, c), q, 1)
        worst = max(worst, abs(a - b) / a)
    assert worst < 1e-9, worst
    return f"max rel diff = {worst:.1e}"


def check_round_trip() -> str:
    worst = 0.0
    for f in (SizePmf.geometric(0.3), SizePmf.negbin(3, 0.25)):
        for q in (0.7, 0.9):
            for w in (1, 2, 3):
                pmf = thin_pmf(f, q, 50)
                worst = max(worst, abs(invert_pmf(pmf, w) - float(f.pmf(w))))
    assert worst < 1e-8, worst
    return f"max |f_hat - f| = {worst:.1e}"


def check_estimator_examples() -> str:
    v = estimate_fw(EstimatorInput(np.array([1, 1, 2]), 0.5, 1))
    assert v == 0.0, v
    s = np.array([0, 1, 1, 2, 1, 3])
    v1 = estimate_fw(EstimatorInput(s, 1.0, 1))
    assert v1 == 0.5, v1
    return "[1,1,2] at q=1/2 gives 0; q=1 gives the empirical frequency"


def check_regimes() -> str:
    rep = classify_regime(SizePmf.geometric(0.6), 0.3, 1)
    alpha = 2 * math.log(1 / thinned_c(0.6, 0.3)) / (2 * math.log(1 / 0.3 - 1))
    assert rep.regime == "semistable_12" and abs(rep.alpha - alpha) < 1e-12
    assert classify_regime(SizePmf.geometric(0.3), 0.4, 1).regime == "gaussian_clt"
    assert classify_regime(SizePmf.geometric(0.85), 0.3, 1).regime == "semistable_01"
    return f"benchmark alpha = {rep.alpha:.10f}"


def check_levy_jumps() -> str:
    nu, beta, c1 = 2.34, 0.8473, 0.4
    pos, mass = levy_atoms(nu, beta, c1, (-5, 5))
    worst = 0.0
    for x, m in zip(pos, mass):
        e = 1e-9 * abs(x)
        if x > 0:
            jump = float(levy_R(x + e, nu, beta) - levy_R(x - e, nu, beta))
        else:
            jump = float(levy_L(x + e, nu, beta, c1) - levy_L(x - e, nu, beta, c1))
        worst = max(worst, abs(jump - m) / m)
    assert worst < 1e-6, worst
    return f"max rel jump mismatch = {worst:.1e}"


def check_periodicity() -> str:
    nu, beta, c1 = 2.34, 0.8473, 0.4
    x = np.exp(np.linspace(-3.0, 3.0, 97) + 0.0123)
    a = m_R(np.exp(2 * beta) * x, nu, beta) - m_R(x, nu, beta)
    b = m_L_neg(np.exp(2 * beta) * x, nu, beta, c1) - m_L_neg(x, nu, beta, c1)
    worst = float(max(np.max(np.abs(a)), np.max(np.abs(b))))
    assert worst < 1e-12, worst
    return f"max deviation = {worst:.1e}"


def _benchmark() -> SemiStableLaw:
    return law_for(SizePmf.geometric(0.6), 0.3)


def check_functional_equation() -> str:
    t = np.linspace(-20.0, 20.0, 401)
    _, res = cf_residual_fit(_benchmark(), t)
    assert res < 1e-8, res
    return f"max residual = {res:.1e}"


def check_cdf_quantile() -> str:
    law = _benchmark()
    worst = 0.0
    for p in (0.05, 0.3, 0.7, 0.95):
        worst = max(worst, abs(law.cdf(law.quantile(p)) - p))
    assert worst < 1e-5, worst
    return f"max |F(Q(p)) - p| = {worst:.1e}"


def check_schedule_ratios() -> str:
    f = SizePmf.geometric(0.6)
    # A ratio carries the factor C(2n, w) / C(2n-2, w) = 1 + O(1/n): go deep
    sch = schedule(f, 0.3, 1, 150, budget=math.inf, with_B=False)
    a, b = sch.levels[-2], sch.levels[-1]
    rk = (b.k / a.k) / math.exp(sch.nu) - 1.0
    ra = (b.A / a.A) / math.exp(2 * sch.beta) - 1.0
    assert abs(rk) < 0.01 and abs(ra) < 0.01, (rk, ra)
    return f"k ratio err {rk:.1e}, A ratio err {ra:.1e}"


def check_centering_limit() -> str:
    f = SizePmf.geometric(0.85)
    sch = schedule(f, 0.3, 1, 16, budget=1e18)
    law = law_for(f, 0.3)
    errs = [abs(-lv.B / lv.A - law.zeta) / abs(law.zeta) for lv in sch.levels[-3:]]
    assert errs[0] > errs[1] > errs[2], errs
    return f"relative errors over last 3 levels: {', '.join(f'{e:.2%}' for e in errs)}"


def check_zeta_c1_limit() -> str:
    nu, beta = 2.34, 0.85
    a = zeta(nu, beta, 0.0)
    b = zeta(nu, beta, 1e-300)
    assert abs(a - b) < 1e-12, (a, b)
    return f"zeta(c1=0) = {a:.6f}"


def check_json_round_trip() -> str:
    law = _benchmark()
    back = SemiStableLaw.from_dict(loads(dumps(law.to_dict())))
    assert np.array_equal(back.positions, law.positions) and back.eta == law.eta
    sch = schedule(SizePmf.geometric(0.6), 0.3, 1, 5, budget=math.inf)
    back_s = Schedule.from_dict(loads(dumps(sch.to_dict())))
    assert back_s.levels == sch.levels
    return "law and schedule survive dumps/loads exactly"


def check_sup_dominance() -> str:
    from .inference import build_spec, sup_quantiles

    spec = build_spec(SizePmf.geometric(0.6), 0.3, 1, 0.1, 10**5, lambda_grid_size=11)
    lo, hi, table = sup_quantiles(spec)
    tau = spec.tau
    assert lo <= tau.quantile(0.05) + 1e-8 and hi >= tau.quantile(0.95) - 1e-8
    assert all(r["dominated"] for r in table)
    return f"x_lo = {lo:.5f}, x_hi = {hi:.5f}"


CHECKS: list[tuple[str, Callable[[], str]]] = [
    ("thinning closed form vs binomial sum", check_thinning),
    ("even/odd tails closed form vs sum", check_tails),
    ("R_qw geometric vs series", check_rqw_two_paths),
    ("invert(thin(f)) round trip", check_round_trip),
    ("estimator examples", check_estimator_examples),
    ("regime classification", check_regimes),
    ("Levy jumps match atoms", check_levy_jumps),
    ("M_R / M_L periodicity", check_periodicity),
    ("semi-stability functional equation", check_functional_equation),
    ("cdf / quantile consistency", check_cdf_quantile),
    ("schedule growth ratios", check_schedule_ratios),
    ("B/A approaches zeta (alpha < 1)", check_centering_limit),
    ("zeta at c1 -> 0", check_zeta_c1_limit),
    ("JSON round trip", check_json_round_trip),
    ("sup-CDF dominance and widening", check_sup_dominance),
]


def run_checks(names: list[str] | None = None) -> list[CheckResult]:
    out = []
    for name, fn in CHECKS:
        if names and not any(n.lower() in name.lower() for n in names):
            continue
        t0 = time.perf_counter()
        try:
            detail, ok = fn(), True
        except AssertionError as exc:
            detail, ok = f"assertion failed: {exc}", False
        except Exception as exc:  # a crash is a failed check, reported with its type
            detail, ok = f"{type(exc).__name__}: {exc}", False
        out.append(CheckResult(name, ok, detail, time.perf_counter() - t0))
    return out


def format_table(results: list[CheckResult], show_time: bool = True) -> str:
    width = max(len(r.name) for r in results) if results else 10
    head = f"{'check':<{width}}  result  " + ("time    " if show_time else "") + "detail"
    lines = [head]
    for r in results:
        t = f"{r.seconds:5.1f}s  " if show_time else ""
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {t}{r.detail}")
    n_ok = sum(r.passed for r in results)
    lines.append(f"{n_ok}/{len(results)} passed")
    return "\n".join(lines)
