import math

import numpy as np
import pytest
from scipy import stats

from semistable.dist_core import SizePmf, stream_generator, thin_pmf
from semistable.errors import OutOfTheoryError
from semistable.limit import law_for, schedule
from semistable.montecarlo import (
    McConfig, ThinnedCounter, direct_counts, gaussian_regime_check, ks_noise, limit_sign,
    locate_level, run_experiment, run_level, signed_cdf, simulate_fhat,
)

GEOM = SizePmf.geometric(0.6)


def test_counts_sum_to_N():
    c = ThinnedCounter(GEOM, 0.3).counts(5000, stream_generator(1, 2))
    assert c.sum() == 5000 and c.min() >= 0


def test_multinomial_matches_direct_sampling():
    counter = ThinnedCounter(GEOM, 0.3)
    a = np.concatenate([np.repeat(np.arange(c.size), c)
                        for c in (counter.counts(4000, stream_generator(3, r)) for r in range(5))])
    b = np.concatenate([np.repeat(np.arange(c.size), c)
                        for c in (direct_counts(GEOM, 0.3, 4000, stream_generator(4, r))
                                  for r in range(5))])
    # discrete data: compare the histograms with a chi-square test on pooled cells
    top = 6
    ca = np.bincount(np.minimum(a, top), minlength=top + 1)
    cb = np.bincount(np.minimum(b, top), minlength=top + 1)
    assert stats.chi2_contingency(np.vstack([ca, cb]))[1] > 1e-3


def test_tail_overflow_path():
    # a short table sends most draws through the conditional-tail branch
    counter = ThinnedCounter(GEOM, 0.3)
    counter.pmf = thin_pmf(GEOM, 0.3, 2)
    counter.pvals = np.append(counter.pmf.probs, counter.pmf.tail_mass)
    c = counter.counts(20000, stream_generator(5))
    assert c.sum() == 20000 and c.size > 3
    ref = thin_pmf(GEOM, 0.3, 6).probs
    for s_val in (3, 4):
        se = math.sqrt(ref[s_val] * (1 - ref[s_val]) / 20000)
        assert abs(c[s_val] / 20000 - ref[s_val]) < 4 * se


def test_simulate_deterministic_across_jobs():
    a = simulate_fhat(GEOM, 0.3, 1, 500, 40, seed=9, key=3, n_jobs=1)
    b = simulate_fhat(GEOM, 0.3, 1, 500, 40, seed=9, key=3, n_jobs=2)
    c = simulate_fhat(GEOM, 0.3, 1, 500, 40, seed=10, key=3, n_jobs=1)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_limit_sign_and_reflection():
    assert limit_sign(1) == -1 and limit_sign(2) == 1
    law = law_for(GEOM, 0.3)
    x = np.array([-1.0, 0.2, 1.5])
    np.testing.assert_allclose(signed_cdf(law, x, 0.1, 2), law.cdf(x - 0.1))
    np.testing.assert_allclose(signed_cdf(law, x, 0.1, 1), 1.0 - law.cdf(-x - 0.1))


def test_ks_noise_value():
    assert ks_noise(10000) == pytest.approx(stats.kstwobign.std() / 100.0)
    assert 0.0025 < ks_noise(10000) < 0.0027


def test_gaussian_check_requires_finite_R():
    with pytest.raises(OutOfTheoryError):
        gaussian_regime_check(GEOM, 0.3, 1, 100, 10)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        McConfig(GEOM, 0.3, 1, (4,), replicates=10)
    with pytest.raises(ValueError):
        McConfig(GEOM, 0.3, 1, (), replicates=100)
    cfg = McConfig(GEOM, 0.3, 1, (3, 4), replicates=200, master_seed=7)
    assert McConfig.from_dict(cfg.to_dict()) == cfg


def test_run_level_budget_marks_partial():
    cfg = McConfig(GEOM, 0.3, 1, (7,), replicates=100, budget=1000)
    res = run_level(cfg, 7)
    assert res.partial and res.stats.size == 0


def test_run_level_refuses_gaussian_regime():
    cfg = McConfig(SizePmf.geometric(0.3), 0.4, 1, (3,), replicates=100)
    with pytest.raises(OutOfTheoryError):
        run_level(cfg, 3)


def test_locate_level():
    sch = schedule(GEOM, 0.3, 1, 6, with_B=False)
    assert locate_level(85, sch) == 1 and locate_level(84, sch) == 0
    with pytest.raises(ValueError):
        locate_level(5, sch)


def test_small_experiment_report():
    cfg = McConfig(GEOM, 0.3, 1, (2, 3), replicates=300, master_seed=1,
                   off_subsequence_Ns=(200,))
    rep = run_experiment(cfg)
    assert [r["n"] for r in rep.levels] == [2, 3]
    assert set(rep.stability["ks_by_level"]) == {"2", "3"}
    assert rep.probe[0]["p_N"] == 3 and 1.0 <= rep.probe[0]["lambda_N"] < math.exp(law_for(
        GEOM, 0.3).nu)
    again = run_experiment(cfg)
    assert again.to_dict() == rep.to_dict()
