import math

import numpy as np
import pytest

from semistable.dist_core import SizePmf
from semistable.errors import NotSupportedError, OutOfTheoryError
from semistable.inference import (
    CiResult, CiSpec, b_tilde, build_spec, confidence_interval, coverage_experiment, locate_pN,
    sup_quantiles,
)
from semistable.limit import law_for, schedule

GEOM = SizePmf.geometric(0.6)


@pytest.fixture(scope="module")
def sch():
    return schedule(GEOM, 0.3, 1, 7, with_B=False)


@pytest.fixture(scope="module")
def spec11():
    return build_spec(GEOM, 0.3, 1, 0.1, 10**5, lambda_grid_size=11)


@pytest.fixture(scope="module")
def quant11(spec11):
    return sup_quantiles(spec11)


def test_locate_pN(sch):
    assert locate_pN(880, sch) == (4, 880)
    assert locate_pN(879, sch) == (3, 85)
    with pytest.raises(ValueError):
        locate_pN(3, sch)
    with pytest.raises(ValueError):
        locate_pN(984924, sch)


def test_b_tilde_on_schedule_and_slope(sch):
    alpha = law_for(GEOM, 0.3).alpha
    lv = sch.level(4)
    assert b_tilde(lv.k, alpha, sch) == pytest.approx(lv.A / lv.k, rel=1e-12)
    n1, n2 = 1000, 8000
    ratio = b_tilde(n2, alpha, sch) / b_tilde(n1, alpha, sch)
    assert math.log(ratio) / math.log(n2 / n1) == pytest.approx(1 / alpha - 1, rel=1e-12)


def test_single_member_gives_tau_quantiles():
    spec = build_spec(GEOM, 0.3, 1, 0.1, 10**4, lambda_grid_size=1)
    lo, hi, table = sup_quantiles(spec)
    assert len(table) == 1 and table[0]["lambda"] == 1.0
    assert spec.tau.cdf(lo) == pytest.approx(0.05, abs=1e-6)
    assert spec.tau.cdf(hi) == pytest.approx(0.95, abs=1e-6)


def test_sup_quantiles_widen_and_dominate(spec11, quant11):
    lo, hi, table = quant11
    tau = spec11.tau
    assert lo <= tau.quantile(0.05) + 1e-8
    assert hi >= tau.quantile(0.95) - 1e-8
    assert all(r["dominated"] for r in table)
    assert max(r["cdf_at_lower"] for r in table) == pytest.approx(0.05, abs=1e-6)
    assert min(r["cdf_at_upper"] for r in table) == pytest.approx(0.95, abs=1e-6)


def test_smaller_gamma_is_wider(spec11, quant11):
    wide = CiSpec(0.05, spec11.schedule, spec11.law, 1, 11)
    lo, hi, _ = sup_quantiles(wide)
    assert lo < quant11[0] and hi > quant11[1]


def test_grid_refinement_is_stable(spec11, quant11):
    base = CiSpec(0.1, spec11.schedule, spec11.law, 1, 101)
    fine = CiSpec(0.1, spec11.schedule, spec11.law, 1, 201)
    lo1, hi1, _ = sup_quantiles(base)
    lo2, hi2, _ = sup_quantiles(fine)
    assert abs(lo2 - lo1) < 1e-3 and abs(hi2 - hi1) < 1e-3
    # a finer grid can only raise the sup: the 11-point grid is nested in the 101-point one
    assert lo1 <= quant11[0] + 1e-8 and hi1 >= quant11[1] - 1e-8


def test_interval_formula(spec11, quant11):
    N = 20000
    res = confidence_interval(0.4, N, spec11, quant11)
    b = b_tilde(N, spec11.law.alpha, spec11.schedule)
    assert res.lo == pytest.approx(0.4 - b * quant11[1], rel=1e-14)
    assert res.hi == pytest.approx(0.4 - b * quant11[0], rel=1e-14)
    assert res.contains(0.4) and res.p_N == 5 and res.k_pN == 9137
    assert res.to_dict()["interval"] == [res.lo, res.hi]
    with pytest.raises(ValueError):
        CiResult(1.0, 0.0, 0.5, 1, 0.1, 1.0, 1, 1, 0.0, 0.0)


def test_refuses_outside_alpha_one_two():
    law = law_for(SizePmf.geometric(0.85), 0.3)
    sch = schedule(SizePmf.geometric(0.85), 0.3, 1, 4, with_B=False)
    with pytest.raises(NotSupportedError):
        CiSpec(0.1, sch, law, 1)
    with pytest.raises(OutOfTheoryError):
        build_spec(SizePmf.geometric(0.3), 0.4, 1, 0.1, 1000)
    with pytest.raises(ValueError):
        CiSpec(1.5, sch, law_for(GEOM, 0.3), 1)


def test_small_coverage_run():
    res = coverage_experiment(GEOM, 0.3, 1, 0.1, [880], replicates=200, seed=3,
                              lambda_grid_size=5)
    r = res[0]
    assert r.N == 880 and r.replicates == 200
    assert r.se == pytest.approx(math.sqrt(0.09 / 200))
    assert r.coverage > 0.9 - 4 * r.se and r.mean_width > 0
