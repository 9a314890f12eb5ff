"""Graph-structured multiple-try sampler with reversible-jump proposals.

The chain state is a root ``k``, the root value ``x = x_k`` and one auxiliary
per undirected edge, stored with the orientation the edge has in the tree
rooted at ``k``.  Every other vertex value follows deterministically:
``x_j = g(x_i, u_(i,j))`` along each oriented edge.

One iteration redraws every auxiliary along the tree (parents first), draws a
new root from ``r(.)`` and re-expresses the state with that root.  The
re-expression keeps all vertex values and swaps the auxiliaries on the path
between the two roots for their reverses ``h(x_i, u_(i,j))``.  The acceptance
ratio of that root move is identically one; :func:`acceptance_ratio`
evaluates it from scratch so the identity can be monitored at run time.
"""
from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .kernel import RjKernel
from .rng import Purpose, StreamFactory
from .sampler_fixed import (
    LogTarget,
    _executor,
    _map,
    format_point,
    normalize_log_weights,
    reroot_sums,
    sample_categorical,
)
from .traces import RJ_COLUMNS, VERIFY_COLUMN, Trace, TraceRecord, TraceWriter
from .tree_graph import TreeGraph, path_between


class InvariantViolationError(RuntimeError):
    """The root-move acceptance ratio drifted away from one."""


@dataclass(frozen=True)
class HalfEdge:
    u: Any
    log_q: float
    log_j: float


@dataclass(frozen=True)
class EdgeAux:
    """Auxiliary of one undirected edge.

    ``forward`` takes ``x_source`` to ``x_target``; ``backward`` is its
    reverse ``h(x_source, u)``, kept so a re-rooting never recomputes it.
    """

    source: int
    target: int
    forward: HalfEdge
    backward: HalfEdge

    @property
    def u(self) -> Any:
        return self.forward.u

    def flipped(self) -> "EdgeAux":
        return EdgeAux(self.target, self.source, self.backward, self.forward)

    def half(self, i: int, j: int) -> HalfEdge:
        if (i, j) == (self.source, self.target):
            return self.forward
        if (i, j) == (self.target, self.source):
            return self.backward
        raise KeyError((i, j))


def _ekey(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass
class RjChainState:
    graph: TreeGraph
    k: int
    node_values: dict[int, Any]
    edge_aux: dict[tuple[int, int], EdgeAux] = field(default_factory=dict)
    log_weights: np.ndarray | None = None
    abs_A_minus_1: float | None = None

    @property
    def root_value(self) -> Any:
        return self.node_values[self.k]

    def aux(self, i: int, j: int) -> HalfEdge:
        """The auxiliary that maps ``x_i`` to ``x_j``."""
        return self.edge_aux[_ekey(i, j)].half(i, j)


def initial_rj_state(graph: TreeGraph, x0: Any, k: int = 1) -> RjChainState:
    """Root at ``k`` holding ``x0``; auxiliaries are filled by the first sweep."""
    graph.check_vertex(k)
    return RjChainState(graph, k, {k: x0})


def _half_edges(K: RjKernel, x_i: Any, u: Any) -> tuple[Any, HalfEdge, HalfEdge]:
    x_j = K.forward_g(x_i, u)
    u_back = K.forward_h(x_i, u)
    fwd = HalfEdge(u, K.log_density_u(u, x_i), K.log_abs_jacobian(x_i, u))
    bwd = HalfEdge(u_back, K.log_density_u(u_back, x_j), K.log_abs_jacobian(x_j, u_back))
    return x_j, fwd, bwd


def gibbs_sweep_aux(s: RjChainState, K: RjKernel, streams: StreamFactory, iteration: int,
                    executor: Executor | None = None) -> RjChainState:
    """Redraw ``u_(i,j) ~ q(. | x_i)`` for every edge, parents before children."""
    t = s.graph.oriented(s.k)
    values = {s.k: s.node_values[s.k]}
    aux: dict[tuple[int, int], EdgeAux] = {}

    def draw(j):
        i = t.parent[j]
        rng = streams.borrow(iteration, j, Purpose.SWEEP)
        u = K.sample_u(values[i], rng)
        return _half_edges(K, values[i], u)

    for level in t.levels[1:]:
        for j, (x_j, fwd, bwd) in zip(level, _map(executor, draw, level)):
            i = t.parent[j]
            values[j] = x_j
            aux[_ekey(i, j)] = EdgeAux(i, j, fwd, bwd)
    return RjChainState(s.graph, s.k, values, aux)


def build_rj_state(graph: TreeGraph, k: int, x: Any, aux: dict[tuple[int, int], Any],
                   K: RjKernel) -> RjChainState:
    """State with root ``k`` from the auxiliaries ``aux[(i, j)]`` of the edges oriented away from ``k``."""
    t = graph.oriented(k)
    values = {k: x}
    edges = {}
    for i, j in t.directed_edges:
        values[j], fwd, bwd = _half_edges(K, values[i], aux[(i, j)])
        edges[_ekey(i, j)] = EdgeAux(i, j, fwd, bwd)
    return RjChainState(graph, k, values, edges)


def oriented_aux(s: RjChainState) -> dict[tuple[int, int], Any]:
    """``{(i, j): u_(i,j)}`` for the edges oriented away from the root."""
    return {(a.source, a.target): a.forward.u for a in s.edge_aux.values()}


def _directed_tables(s: RjChainState) -> tuple[dict, dict]:
    log_q, log_j = {}, {}
    for a in s.edge_aux.values():
        log_q[(a.source, a.target)] = a.forward.log_q
        log_q[(a.target, a.source)] = a.backward.log_q
        log_j[(a.source, a.target)] = a.forward.log_j
        log_j[(a.target, a.source)] = a.backward.log_j
    return log_q, log_j


@dataclass(frozen=True)
class RootProposal:
    probabilities: np.ndarray
    log_weights: np.ndarray

    @property
    def log_probabilities(self) -> np.ndarray:
        top = np.max(self.log_weights)
        return self.log_weights - (top + math.log(np.exp(self.log_weights - top).sum()))


def root_proposal(s: RjChainState, K: RjKernel, log_p: LogTarget, base: int = 1) -> RootProposal:
    """The root distribution ``r(.)``, by one traversal from ``base``.

    ``log_weights[r - 1] = log p(x_r) + sum_{E_r} log q(u_(i,j) | x_i)
    + sum_{E_base minus E_r} log|J(x_i, u_(i,j))|``.  ``K`` is unused: the
    densities and Jacobians were cached by the sweep.
    """
    log_q, log_j = _directed_tables(s)
    sums = reroot_sums(s.graph.oriented(base), log_q, log_j)
    lp = np.array([log_p(s.node_values[r]) for r in s.graph.vertices], dtype=float)
    log_w = lp + sums
    return RootProposal(normalize_log_weights(log_w), log_w)


def root_proposal_naive(s: RjChainState, K: RjKernel, log_p: LogTarget, base: int = 1) -> RootProposal:
    """Reference ``r(.)``: every root oriented separately, densities re-evaluated."""
    g = s.graph
    base_edges = set(g.oriented(base).directed_edges)
    log_w = np.empty(g.n)
    for r in g.vertices:
        e_r = g.oriented(r).directed_edges
        total = log_p(s.node_values[r])
        for i, j in e_r:
            total += K.log_density_u(s.aux(i, j).u, s.node_values[i])
        for i, j in base_edges - set(e_r):
            total += K.log_abs_jacobian(s.node_values[i], s.aux(i, j).u)
        log_w[r - 1] = total
    return RootProposal(normalize_log_weights(log_w), log_w)


def rotate_root(s: RjChainState, k_new: int, K: RjKernel | None = None) -> RjChainState:
    """Re-express the state with root ``k_new``; vertex values are untouched."""
    path = path_between(s.graph, s.k, k_new)
    aux = dict(s.edge_aux)
    for a, b in zip(path[:-1], path[1:]):
        e = aux[_ekey(a, b)]
        if e.source != a:
            raise InvariantViolationError(f"edge {(a, b)} is not oriented away from root {s.k}")
        aux[_ekey(a, b)] = e.flipped()
    return RjChainState(s.graph, k_new, dict(s.node_values), aux)


def log_joint(s: RjChainState, K: RjKernel, log_p: LogTarget) -> float:
    """``-log n + log p(x) + sum_{E_k} log q(u_(i,j) | x_i)``, evaluated afresh."""
    total = -math.log(s.graph.n) + log_p(s.root_value)
    for i, j in s.graph.oriented(s.k).directed_edges:
        a = s.edge_aux[_ekey(i, j)]
        if a.source != i:
            raise InvariantViolationError(f"edge {(i, j)} stored against the orientation of root {s.k}")
        total += K.log_density_u(a.forward.u, s.node_values[i])
    return total


def _cached_log_joint(s: RjChainState, log_target_k: float) -> float:
    total = log_target_k
    for i, j in s.graph.oriented(s.k).directed_edges:
        total += s.edge_aux[_ekey(i, j)].forward.log_q
    return total - math.log(s.graph.n)


def acceptance_ratio(s: RjChainState, k_new: int, K: RjKernel, log_p: LogTarget,
                     proposal: RootProposal | None = None) -> float:
    """Acceptance ratio of moving the root from ``s.k`` to ``k_new``.

    Joint densities of both representations are evaluated from scratch, the
    root probabilities come from :func:`root_proposal` and the Jacobian of the
    re-expression is the product of ``|J(x_i, u_(i,j))|`` along the path from
    ``s.k`` to ``k_new``.  The result should be 1 up to rounding.
    """
    if k_new == s.k:
        return 1.0
    if proposal is None:
        proposal = root_proposal(s, K, log_p)
    log_r = proposal.log_probabilities
    rotated = rotate_root(s, k_new, K)
    path = path_between(s.graph, s.k, k_new)
    log_jac = 0.0
    for a, b in zip(path[:-1], path[1:]):
        log_jac += K.log_abs_jacobian(s.node_values[a], s.aux(a, b).u)
    log_a = (log_joint(rotated, K, log_p) + log_r[s.k - 1]
             - log_joint(s, K, log_p) - log_r[k_new - 1] + log_jac)
    return math.exp(log_a)


def step(s: RjChainState, K: RjKernel, log_p: LogTarget, streams: StreamFactory, iteration: int,
         executor: Executor | None = None, verify: bool = False, tol: float = 1e-8) -> RjChainState:
    """Sweep the auxiliaries, draw a root from ``r(.)`` and rotate to it.

    With ``verify`` the acceptance ratio of the drawn root is evaluated and an
    :class:`InvariantViolationError` raised if it is not within ``tol`` of 1.
    """
    s = gibbs_sweep_aux(s, K, streams, iteration, executor)
    prop = root_proposal(s, K, log_p)
    k_new = sample_categorical(prop.probabilities, streams.borrow(iteration, 0, Purpose.ROOT))
    dev = None
    if verify:
        dev = abs(acceptance_ratio(s, k_new, K, log_p, prop) - 1.0)
        if not dev <= tol:
            raise InvariantViolationError(
                f"iteration {iteration}: |A - 1| = {dev:.3e} for root move {s.k} -> {k_new}")
    out = rotate_root(s, k_new, K)
    return replace(out, log_weights=prop.log_weights, abs_A_minus_1=dev)


def make_record(s: RjChainState, K: RjKernel, log_target_k: float, iteration: int,
                summary: Callable[[Any], str], verify: bool) -> TraceRecord:
    x_k = s.root_value
    scalars = {
        "k": s.k,
        "log_joint": _cached_log_joint(s, log_target_k),
        "log_target": log_target_k,
        "dim": K.dim_x(x_k),
    }
    if verify:
        scalars[VERIFY_COLUMN] = s.abs_A_minus_1 if s.abs_A_minus_1 is not None else 0.0
    return TraceRecord(iteration, scalars, summary(x_k))


def run_chain(graph: TreeGraph, K: RjKernel, log_p: LogTarget, x0: Any, iterations: int,
              seed: int, workers: int = 1, verify: bool = False, tol: float = 1e-8,
              summary: Callable[[Any], str] = format_point,
              trace_path: str | Path | None = None, chain_id: int = 0) -> Trace:
    streams = StreamFactory(seed)
    columns = RJ_COLUMNS + ((VERIFY_COLUMN,) if verify else ())
    trace = Trace(metadata={"seed": seed, "n": graph.n, "chain": chain_id, "sampler": "rj"})
    writer = TraceWriter(trace_path, columns) if trace_path is not None else None
    executor = _executor(workers)
    s = initial_rj_state(graph, x0)
    try:
        for it in range(1, iterations + 1):
            s = step(s, K, log_p, streams, it, executor, verify, tol)
            rec = make_record(s, K, log_p(s.root_value), it, summary, verify)
            trace.append(rec)
            if writer is not None:
                writer.write(rec)
    finally:
        if writer is not None:
            writer.close()
        if executor is not None:
            executor.shutdown()
    trace.metadata["final_state"] = s
    trace.metadata["max_abs_A_minus_1"] = max(
        (r.scalars.get(VERIFY_COLUMN, 0.0) for r in trace.records), default=0.0)
    return trace


def rj_mh_log_acceptance(x: Any, u: Any, K: RjKernel, log_p: LogTarget) -> float:
    x_new, u_new = K.forward_g(x, u), K.forward_h(x, u)
    num = log_p(x_new) + K.log_density_u(u_new, x_new)
    if num == -math.inf:
        return -math.inf
    den = log_p(x) + K.log_density_u(u, x)
    return min(0.0, num - den + K.log_abs_jacobian(x, u))


def standard_rj_mh_step(x: Any, K: RjKernel, log_p: LogTarget, rng: np.random.Generator) -> Any:
    """Single-proposal reversible-jump Metropolis-Hastings update."""
    u = K.sample_u(x, rng)
    log_a = rj_mh_log_acceptance(x, u, K, log_p)
    return K.forward_g(x, u) if math.log1p(-rng.random()) < log_a else x


def run_rj_mh_chain(K: RjKernel, log_p: LogTarget, x0: Any, iterations: int, seed: int,
                    summary: Callable[[Any], str] = format_point) -> Trace:
    streams = StreamFactory(seed)
    trace = Trace(metadata={"seed": seed, "n": 1, "sampler": "rj-mh"})
    x = x0
    for it in range(1, iterations + 1):
        x = standard_rj_mh_step(x, K, log_p, streams.borrow(it, 0, Purpose.MH))
        lp = log_p(x)
        trace.append(TraceRecord(it, {"k": 1, "log_joint": lp, "log_target": lp, "dim": K.dim_x(x)},
                                 summary(x)))
    return trace
