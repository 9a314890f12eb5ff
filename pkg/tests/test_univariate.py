import math

import numpy as np
import pytest
from scipy import stats

from treemh.univariate import LogConcaveEnvelope, SamplerConvergenceError, sample_log_concave, slice_sample


def normal_logf(mu, sd):
    return lambda x: -0.5 * ((x - mu) / sd) ** 2


def gamma_logf(shape):
    return lambda x: (shape - 1) * math.log(x) - x if x > 0 else -math.inf


@pytest.mark.parametrize("mu,sd", [(0.0, 1.0), (5.0, 0.1), (-20.0, 7.0)])
def test_log_concave_draws_are_exact_normal(mu, sd):
    rng = np.random.default_rng(1)
    draws = [sample_log_concave(normal_logf(mu, sd), rng) for _ in range(3000)]
    assert stats.kstest(draws, "norm", args=(mu, sd)).pvalue > 1e-3


def test_log_concave_draws_gamma_with_boundary():
    rng = np.random.default_rng(2)
    draws = [sample_log_concave(gamma_logf(2.5), rng, start=2.0) for _ in range(3000)]
    assert stats.kstest(draws, "gamma", args=(2.5,)).pvalue > 1e-3


def test_envelope_dominates_density():
    logf = gamma_logf(3.0)
    env = LogConcaveEnvelope(logf, start=1.0)
    for x in np.linspace(1e-3, 40, 2000):
        assert logf(x) <= env.log_envelope(x) + 1e-12
    assert env.piece_probs.sum() == pytest.approx(1.0)


def test_non_log_concave_is_detected():
    def bimodal(x):
        return float(np.logaddexp(-0.5 * (x + 4) ** 2, -0.5 * (x - 4) ** 2))

    rng = np.random.default_rng(0)
    with pytest.raises(SamplerConvergenceError):
        for _ in range(500):
            sample_log_concave(bimodal, rng, start=-4.0)


def test_improper_density_rejected():
    with pytest.raises(SamplerConvergenceError):
        sample_log_concave(lambda x: 0.0 if x > 0 else -x * x, np.random.default_rng(0))


def test_slice_sampler_targets_normal():
    rng = np.random.default_rng(3)
    x, draws = 0.0, []
    logf = normal_logf(2.0, 3.0)
    for _ in range(6000):
        x = slice_sample(logf, x, rng, w=1.0)
        draws.append(x)
    draws = np.array(draws[::3])
    assert abs(draws.mean() - 2.0) < 0.3
    assert abs(draws.std() - 3.0) < 0.3


def test_slice_sampler_rejects_bad_start():
    with pytest.raises(ValueError):
        slice_sample(gamma_logf(2.0), -1.0, np.random.default_rng(0))
