import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import rj_joint, rj_transition
from treemh import sampler_fixed as sf
from treemh import sampler_rj as rj
from treemh.kernel import GaussianRandomWalk, LiftedKernel, ScalingKernel, SplitMergeKernel
from treemh.rng import StreamFactory
from treemh.targets import (
    GaussianMixture1D,
    mixed_dimension_toy,
    split_merge_reference,
    tailored_mixture_kernel,
)
from treemh.traces import FIXED_COLUMNS, trace_to_csv
from treemh.tree_graph import build_symmetric_tree, path_between, tree_from_pruefer


@st.composite
def trees(draw, max_n=15):
    n = draw(st.integers(2, max_n))
    return tree_from_pruefer(draw(st.lists(st.integers(1, n), min_size=n - 2, max_size=n - 2)))


def swept_state(graph, K, x0, seed, k=1):
    s = rj.initial_rj_state(graph, x0, k)
    return rj.gibbs_sweep_aux(s, K, StreamFactory(seed), 1)


def test_lifted_kernel_reproduces_fixed_sampler():
    graph = build_symmetric_tree(2, 3)
    target = GaussianMixture1D()
    q = tailored_mixture_kernel(target)
    fixed = sf.run_chain(graph, q, target, np.zeros(1), 40, seed=3)
    lifted = rj.run_chain(graph, LiftedKernel(q), target, np.zeros(1), 40, seed=3)
    assert fixed.model_ids == lifted.model_ids
    assert fixed.column("k") == lifted.column("k")
    assert fixed.column("log_joint") == lifted.column("log_joint")
    assert trace_to_csv(fixed, FIXED_COLUMNS) == trace_to_csv(lifted, FIXED_COLUMNS)


@given(trees(), st.integers(0, 2**32), st.integers(1, 100))
def test_root_proposal_matches_naive_and_is_base_invariant(graph, seed, base_pick):
    target, K, x0 = split_merge_reference()
    s = swept_state(graph, K, x0, seed)
    fast = rj.root_proposal(s, K, target)
    slow = rj.root_proposal_naive(s, K, target)
    np.testing.assert_allclose(fast.probabilities, slow.probabilities, rtol=1e-9, atol=1e-300)
    base = 1 + base_pick % graph.n
    other = rj.root_proposal(s, K, target, base=base)
    np.testing.assert_allclose(fast.probabilities, other.probabilities, rtol=1e-9, atol=1e-300)


@given(trees(), st.integers(0, 2**32))
def test_rotation_keeps_values_and_reverses_exactly(graph, seed):
    _, K, x0 = split_merge_reference()
    s = swept_state(graph, K, x0, seed)
    for k_new in graph.vertices:
        r = rj.rotate_root(s, k_new, K)
        assert r.k == k_new and r.node_values == s.node_values
        back = rj.rotate_root(r, s.k, K)
        assert back.edge_aux == s.edge_aux
        rebuilt = rj.build_rj_state(graph, k_new, s.node_values[k_new], rj.oriented_aux(r), K)
        for v in graph.vertices:
            np.testing.assert_allclose(rebuilt.node_values[v], s.node_values[v], atol=1e-10)


@given(trees(max_n=10), st.integers(0, 2**32))
def test_acceptance_ratio_is_one_for_every_root(graph, seed):
    target, K, x0 = split_merge_reference()
    s = swept_state(graph, K, x0, seed, k=1 + seed % graph.n)
    prop = rj.root_proposal(s, K, target)
    for k_new in graph.vertices:
        if prop.probabilities[k_new - 1] == 0.0:
            continue
        assert rj.acceptance_ratio(s, k_new, K, target, prop) == pytest.approx(1.0, abs=1e-9)


def test_acceptance_ratio_with_scaling_jacobians():
    graph = build_symmetric_tree(2, 2)
    K = ScalingKernel(0.7)

    def target(x):
        return float(-np.sum(np.log(x) ** 2))

    s = swept_state(graph, K, np.array([1.5, 0.5]), 4)
    prop = rj.root_proposal(s, K, target)
    for k_new in graph.vertices:
        assert rj.acceptance_ratio(s, k_new, K, target, prop) == pytest.approx(1.0, abs=1e-10)


def test_log_joint_matches_oracle():
    graph = build_symmetric_tree(1, 3)
    target, K, x0 = split_merge_reference()
    s = swept_state(graph, K, x0, 9, k=2)
    direct = math.log(rj_joint(graph, K, target, s.k, s.root_value, rj.oriented_aux(s)))
    assert rj.log_joint(s, K, target) == pytest.approx(direct, rel=1e-12)


def test_root_probabilities_proportional_to_joint_with_jacobians():
    """r(k') / r(k) must equal the joint ratio times the path Jacobian."""
    graph = build_symmetric_tree(1, 3)
    target, K, x0 = split_merge_reference()
    s = swept_state(graph, K, x0, 17)
    r = rj.root_proposal(s, K, target).log_probabilities
    for k_new in graph.vertices:
        t = rj.rotate_root(s, k_new, K)
        lhs = r[k_new - 1] - r[0]
        path = path_between(graph, 1, k_new)
        jac = sum(K.log_abs_jacobian(s.node_values[a], s.aux(a, b).u) for a, b in zip(path, path[1:]))
        rhs = rj.log_joint(t, K, target) - rj.log_joint(s, K, target) + jac
        assert lhs == pytest.approx(rhs, abs=1e-10)


class DriftingDensity(SplitMergeKernel):
    """Density evaluations drift between calls, breaking the cached identity."""

    def __init__(self):
        super().__init__()
        self.calls = 0

    def log_density_u(self, u, x):
        self.calls += 1
        return super().log_density_u(u, x) + 1e-3 * self.calls


def test_verify_mode_raises_on_inconsistent_kernel():
    graph = build_symmetric_tree(2, 3)
    target, _, x0 = split_merge_reference()
    with pytest.raises(rj.InvariantViolationError):
        rj.run_chain(graph, DriftingDensity(), target, x0, 20, seed=1, verify=True)
    # without verification the same run goes through silently
    rj.run_chain(graph, DriftingDensity(), target, x0, 5, seed=1)


def test_verify_mode_records_deviation():
    graph = build_symmetric_tree(2, 3)
    target, K, x0 = split_merge_reference()
    tr = rj.run_chain(graph, K, target, x0, 50, seed=2, verify=True)
    dev = tr.column(rj.VERIFY_COLUMN)
    assert len(dev) == 50 and max(dev) < 1e-10
    assert tr.metadata["max_abs_A_minus_1"] == max(dev)


def test_rotation_rejects_misoriented_state():
    graph = build_symmetric_tree(1, 2)
    _, K, x0 = split_merge_reference()
    s = swept_state(graph, K, x0, 0)
    broken = rj.RjChainState(graph, 2, s.node_values, s.edge_aux)
    with pytest.raises(rj.InvariantViolationError):
        rj.rotate_root(broken, 1, K)


@pytest.mark.parametrize("n_vertices", [2, 3])
def test_exact_stationarity_mixed_dimensions(n_vertices):
    graph = tree_from_pruefer([1] * (n_vertices - 2))
    target, K = mixed_dimension_toy()
    index, P, pi = rj_transition(graph, K, target, target.states)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(pi @ P, pi, atol=1e-12)
    marginal = {}
    for (k, x, _), p in zip(index, pi):
        marginal[x] = marginal.get(x, 0.0) + p
    for x, p in target.probs.items():
        assert marginal[x] == pytest.approx(p, abs=1e-12)


def test_dimension_frequencies_match_target_and_baseline():
    graph = build_symmetric_tree(2, 3)
    target, K, x0 = split_merge_reference()
    tree = rj.run_chain(graph, K, target, x0, 3000, seed=8)
    base = rj.run_rj_mh_chain(K, target, x0, 30000, seed=8)
    f_tree = np.bincount(tree.column("dim"), minlength=5)[1:] / 3000
    f_base = np.bincount(base.column("dim"), minlength=5)[1:] / 30000
    np.testing.assert_allclose(f_tree, 0.25, atol=0.05)
    np.testing.assert_allclose(f_base, 0.25, atol=0.05)


def test_lifted_random_walk_ratio_is_one():
    graph = build_symmetric_tree(3, 2)
    K = LiftedKernel(GaussianRandomWalk(2.0))
    target = GaussianMixture1D()
    s = swept_state(graph, K, np.zeros(1), 5)
    prop = rj.root_proposal(s, K, target)
    for k_new in graph.vertices:
        assert rj.acceptance_ratio(s, k_new, K, target, prop) == pytest.approx(1.0, abs=1e-12)
