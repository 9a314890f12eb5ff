import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from treemh.kernel import (
    BirthDeathKernel,
    DiscreteKernel,
    GaussianIndependence,
    GaussianRandomWalk,
    MixtureIndependence,
    Move,
    PointMassKernel,
    ScalingKernel,
    SplitMergeKernel,
    TranslationKernel,
    check_involution,
    lift_fixed_kernel,
    point_distance,
)
from treemh.targets import mixed_dimension_toy

reals = st.floats(-5, 5, allow_nan=False)
seeds = st.integers(0, 2**32)


def numeric_log_jacobian(fn, z, eps=1e-6):
    """log|det| of the Jacobian of ``fn: R^m -> R^m`` by central differences."""
    z = np.asarray(z, dtype=float)
    cols = []
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = eps
        cols.append((np.asarray(fn(z + e)) - np.asarray(fn(z - e))) / (2 * eps))
    return math.log(abs(np.linalg.det(np.column_stack(cols))))


@given(st.lists(reals, min_size=1, max_size=4), seeds)
def test_translation_and_scaling_involutions(x, seed):
    rng = np.random.default_rng(seed)
    x = np.array(x)
    for k in (TranslationKernel(0.7), ScalingKernel(0.4), lift_fixed_kernel(GaussianRandomWalk(0.5))):
        u = k.sample_u(x, rng)
        assert check_involution(k, x, u).passed


@given(st.lists(reals, min_size=0, max_size=5), seeds)
def test_birth_death_involution(x, seed):
    k = BirthDeathKernel(max_dim=5)
    x = tuple(x)
    u = k.sample_u(x, np.random.default_rng(seed))
    res = check_involution(k, x, u)
    assert res.passed and res.dimension_matched


@given(st.lists(reals, min_size=1, max_size=4), seeds)
def test_split_merge_involution(x, seed):
    k = SplitMergeKernel(max_dim=4)
    x = tuple(x)
    u = k.sample_u(x, np.random.default_rng(seed))
    res = check_involution(k, x, u)
    assert res.passed, res


@given(reals, reals, st.lists(reals, max_size=2))
def test_split_jacobian_matches_finite_differences(a, w, rest):
    k = SplitMergeKernel(max_dim=4)
    x = tuple(rest) + (a,)

    analytic = k.log_abs_jacobian(x, Move("split", (w,)))
    numeric = numeric_log_jacobian(lambda z: [z[0] - z[1], z[0] + z[1]], [a, w])
    assert analytic == pytest.approx(numeric, abs=1e-6)
    x2 = k.forward_g(x, Move("split", (w,)))
    numeric_merge = numeric_log_jacobian(lambda z: [(z[0] + z[1]) / 2, (z[1] - z[0]) / 2], list(x2[-2:]))
    assert k.log_abs_jacobian(x2, Move("merge", ())) == pytest.approx(numeric_merge, abs=1e-6)


@given(st.lists(reals, min_size=1, max_size=3), st.floats(-1, 1))
def test_scaling_jacobian_matches_finite_differences(x, u):
    k = ScalingKernel()
    m = len(x)
    numeric = numeric_log_jacobian(lambda z: list(np.asarray(z[:m]) * math.exp(z[m])) + [-z[m]], list(x) + [u])
    assert k.log_abs_jacobian(np.array(x), u) == pytest.approx(numeric, abs=1e-5)


def test_finite_kernel_involution_everywhere():
    _, k = mixed_dimension_toy()
    for x, row in k.proposals.items():
        for u in row:
            assert check_involution(k, x, u).passed


def test_finite_kernel_rejects_non_involution():
    from treemh.kernel import FiniteRjKernel

    with pytest.raises(ValueError):
        FiniteRjKernel({0: {"a": 1.0}, 1: {"a": 1.0}}, {(0, "a"): (1, "a"), (1, "a"): (1, "a")})


@pytest.mark.parametrize("kernel,x", [
    (GaussianRandomWalk(0.8), np.array([0.3])),
    (GaussianIndependence([1.0], 1.5), np.array([0.0])),
    (MixtureIndependence([0.3, 0.7], [[-2.0], [1.0]], [0.5, 1.2]), np.array([0.0])),
])
def test_fixed_densities_normalize(kernel, x):
    total, _ = integrate.quad(lambda v: math.exp(kernel.log_density(np.array([v]), x)), -30, 30, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_mixture_sampling_matches_density():
    k = MixtureIndependence([0.3, 0.7], [[-2.0], [1.0]], [0.5, 1.2])
    rng = np.random.default_rng(0)
    draws = np.array([k.sample(None, rng)[0] for _ in range(4000)])

    def cdf(v):
        return 0.3 * stats.norm.cdf(v, -2, 0.5) + 0.7 * stats.norm.cdf(v, 1, 1.2)

    assert stats.kstest(draws, np.vectorize(cdf)).pvalue > 0.001


def test_discrete_kernel():
    k = DiscreteKernel([[0.2, 0.8], [1.0, 0.0]])
    assert k.log_density(1, 0) == pytest.approx(math.log(0.8))
    assert k.log_density(1, 1) == -math.inf
    rng = np.random.default_rng(1)
    assert all(k.sample(1, rng) == 0 for _ in range(50))
    with pytest.raises(ValueError):
        DiscreteKernel([[0.5, 0.4]])


def test_birth_death_densities_sum_to_one():
    k = BirthDeathKernel(max_dim=3, p_birth=0.4, birth_scale=0.7)
    for x in [(), (1.0,), (1.0, 2.0), (1.0, 2.0, 3.0)]:
        death = math.exp(k.log_density_u((), x)) if x else 0.0
        birth, _ = integrate.quad(lambda v: math.exp(k.log_density_u((v,), x)), -20, 20)
        assert death + birth == pytest.approx(1.0, abs=1e-8)


def test_split_merge_densities_sum_to_one():
    k = SplitMergeKernel(max_dim=3)
    for x in [(0.5,), (0.5, -1.0), (0.1, 0.2, 0.3)]:
        total = math.exp(k.log_density_u(Move("merge", ()), x))
        total += integrate.quad(lambda w: math.exp(k.log_density_u(Move("split", (w,)), x)), -20, 20)[0]
        jitter = k._move_probs(x)["jitter"]
        total += jitter  # product of normalized Gaussians integrates to the move probability
        assert total == pytest.approx(1.0, abs=1e-8)


def test_point_mass_kernel():
    k = PointMassKernel()
    x = np.array([1.0, 2.0])
    assert k.log_density(x.copy(), x) == 0.0
    assert k.log_density(x + 1, x) == -math.inf


def test_point_distance_structure_mismatch():
    assert point_distance((1.0,), (1.0, 2.0)) == math.inf
    assert point_distance(Move("split", (1.0,)), Move("split", (1.5,))) == pytest.approx(0.5)
    assert point_distance(np.zeros(2), np.zeros(3)) == math.inf
