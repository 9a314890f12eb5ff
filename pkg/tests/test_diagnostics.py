import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from treemh import diagnostics as dg
from treemh.traces import Trace, TraceRecord


def adjacency(pairs):
    edges = {frozenset(p) for p in pairs}
    return lambda a, b: frozenset((a, b)) in edges


def make_trace(n):
    return Trace([TraceRecord(i, {"log_target": float(i % 3)}, "m") for i in range(1, n + 1)])


def double_loop_acf(x, max_lag):
    x = list(map(float, x))
    m = sum(x) / len(x)
    den = sum((v - m) ** 2 for v in x)
    return [sum((x[t] - m) * (x[t + lag] - m) for t in range(len(x) - lag)) / den
            for lag in range(max_lag + 1)]


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=60), st.data())
def test_acf_matches_double_loop(xs, data):
    if np.ptp(xs) < 1e-6:
        return
    lag = data.draw(st.integers(1, len(xs) - 1))
    rho = dg.autocorrelation(xs, lag)
    assert rho[0] == 1.0
    np.testing.assert_allclose(rho, double_loop_acf(xs, lag), atol=1e-12)


def test_acf_iid_and_ar1():
    rng = np.random.default_rng(0)
    rho = dg.autocorrelation(rng.standard_normal(100_000), 10)
    assert np.all(np.abs(rho[1:]) < 0.02)
    n = 1_000_000
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - 0.64)
    for t in range(1, n):
        x[t] = 0.8 * x[t - 1] + e[t]
    rho = dg.autocorrelation(x, 10)
    np.testing.assert_allclose(rho, 0.8 ** np.arange(11), atol=0.02)


@pytest.mark.parametrize("xs,lag", [([1.0, 1.0, 1.0], 1), ([1.0, 2.0], 2), ([1.0, 2.0], 0)])
def test_acf_errors(xs, lag):
    with pytest.raises(dg.DiagnosticsError):
        dg.autocorrelation(xs, lag)


def test_burn_in():
    t = make_trace(10)
    assert dg.discard_burn_in(t, 0).records == t.records
    one = dg.discard_burn_in(t, 9)
    assert one.iterations == [10]
    assert dg.discard_burn_in(t, 4).iterations == list(range(5, 11))
    for b in (-1, 10):
        with pytest.raises(dg.DiagnosticsError):
            dg.discard_burn_in(t, b)


def test_hand_traced_grouping():
    run = ["A"] * 5 + ["B"] * 3 + ["C"] * 2
    gt = dg.group_models([run], eta=0.7, neighbor=adjacency([("A", "B")]))
    assert gt.groups == [("A", "B"), ("C",)]
    np.testing.assert_allclose(gt.pooled, [0.8, 0.2])
    table = dg.group_frequency_table(gt, top=6)
    assert table.text() == "Group 1:  0.800\nGroup 2:  0.200\n"
    assert table.csv() == "group,run1\n1,0.800000\n2,0.200000\n"


def test_grouping_absorbs_neighbours_of_all_members():
    # C neighbours B only; it joins once B is in the group
    runs = [["A"] * 4 + ["B"] * 3 + ["C"] * 2 + ["D"]]
    gt = dg.group_models(runs, eta=0.95, neighbor=adjacency([("A", "B"), ("B", "C")]))
    assert gt.groups == [("A", "B", "C"), ("D",)]


def test_grouping_edge_cases():
    gt = dg.group_models([["x", "x"]], eta=0.3)
    assert gt.groups == [("x",)]
    gt = dg.group_models([["a", "b", "b", "c"]], eta=0.0, neighbor=lambda a, b: True)
    assert gt.groups == [("b",), ("a",), ("c",)]
    with pytest.raises(dg.DiagnosticsError):
        dg.group_models([], 0.3)
    with pytest.raises(dg.DiagnosticsError):
        dg.group_models([[]], 0.3)
    with pytest.raises(dg.DiagnosticsError):
        dg.group_models([["a"]], 1.5)


def test_default_neighbour_relation():
    assert dg.differ_by_one_interaction("e|0:-1", "e")
    assert dg.differ_by_one_interaction("e", "e|-1:0")
    assert not dg.differ_by_one_interaction("e|0:-1", "e|-1:0")
    assert not dg.differ_by_one_interaction("e", "e")


models = st.sampled_from(["e", "e|a", "e|b", "e|a|b", "e|a|b|a+b", "e|c"])


@given(st.lists(st.lists(models, min_size=1, max_size=30), min_size=1, max_size=4), st.randoms(),
       st.floats(0.0, 1.0))
def test_grouping_invariants(runs, rnd, eta):
    gt = dg.group_models(runs, eta)
    visited = {m for r in runs for m in r}
    flat = [m for g in gt.groups for m in g]
    assert sorted(flat) == sorted(visited)
    np.testing.assert_allclose(gt.frequencies.sum(axis=0), 1.0, atol=1e-12)
    shuffled = [list(r) for r in runs]
    rnd.shuffle(shuffled)
    for r in shuffled:
        rnd.shuffle(r)
    other = dg.group_models(shuffled, eta)
    assert other.groups == gt.groups
    np.testing.assert_allclose(np.sort(other.pooled), np.sort(gt.pooled))


def test_seeds_in_decreasing_order():
    rng = np.random.default_rng(1)
    names = ["e", "e|a", "e|b", "e|a|b", "e|c", "e|c|d"]
    runs = [list(rng.choice(names, 200, p=[0.3, 0.25, 0.2, 0.1, 0.1, 0.05])) for _ in range(3)]
    gt = dg.group_models(runs, 0.3)
    counts = {m: sum(r.count(m) for r in runs) for m in names}
    seed_counts = [counts[g[0]] for g in gt.groups]
    assert seed_counts == sorted(seed_counts, reverse=True)


def test_table_identical_runs_and_top():
    run = ["e"] * 3 + ["e|a"] * 2 + ["e|z|y"] * 5
    gt = dg.group_models([run, list(run), list(run)], eta=0.3)
    table = dg.group_frequency_table(gt, top=1)
    assert table.rows == ["Group 1:"]
    assert table.values.shape == (1, 3)
    assert np.all(table.values == table.values[:, :1])
    full = dg.group_frequency_table(gt, top=10)
    assert np.all(full.values.sum(axis=0) <= 1 + 1e-12)
    with pytest.raises(dg.DiagnosticsError):
        dg.group_frequency_table(gt, top=0)


def test_convergence_flag_good_vs_trapped():
    rng = np.random.default_rng(2)
    names, p = ["e", "e|a", "e|b", "e|a|b"], [0.4, 0.3, 0.2, 0.1]
    good = [list(rng.choice(names, 4000, p=p)) for _ in range(5)]
    rep = dg.convergence_check(dg.group_models(good, 0.3), 0.3, 0.1)
    assert rep.converged and rep.checked_groups
    trapped = [["e"] * 1000, ["e"] * 1000, ["e|x|y"] * 1000, ["e|x|y"] * 1000, ["e"] * 1000]
    gt = dg.group_models(trapped, 0.3)
    rep = dg.convergence_check(gt, 0.3, 0.1)
    assert not rep.converged
    assert set(np.unique(gt.frequencies)) == {0.0, 1.0}


def test_rescale_iterations():
    assert dg.rescale_iterations([5000, 10], 5.0) == [1000.0, 2.0]
    assert dg.rescale_iterations([3], 1.0) == [3.0]
    with pytest.raises(dg.DiagnosticsError):
        dg.rescale_iterations([1], 0.0)
