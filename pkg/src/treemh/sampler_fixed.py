"""Graph-structured multiple-try sampler on a fixed-dimension space.

The chain state is a root vertex ``k`` and one value per vertex.  One
iteration regenerates every non-root value from the proposal kernel along the
tree oriented away from ``k`` (parents before children), then draws a new root
from its full conditional.  Both updates are Gibbs moves, so nothing is ever
rejected.

The full conditional of the root needs, for every candidate root ``r``, the sum
of ``log q(x_j | x_i)`` over the edges oriented away from ``r``.  Adjacent roots
differ in the direction of one edge only, so all ``n`` sums come out of one
traversal (:func:`reroot_sums`) instead of ``n`` separate ones.
"""
from __future__ import annotations

import math
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .kernel import FixedDimKernel, point_distance
from .rng import Purpose, StreamFactory
from .traces import FIXED_COLUMNS, Trace, TraceRecord, TraceWriter
from .tree_graph import OrientedTree, TreeGraph

LogTarget = Callable[[Any], float]


class IrrecoverableStateError(RuntimeError):
    """Every candidate root has zero probability."""


class InvalidProbabilityError(ValueError):
    pass


@dataclass
class EdgeDensityCache:
    """``log_q[(i, j)] = log q(x_j | x_i)`` for both directions of every edge."""

    log_q: dict[tuple[int, int], float] = field(default_factory=dict)


@dataclass
class ChainState:
    graph: TreeGraph
    k: int
    values: dict[int, Any]
    cache: EdgeDensityCache | None = None
    log_weights: np.ndarray | None = None

    def __post_init__(self):
        self.graph.check_vertex(self.k)


def initial_state(graph: TreeGraph, x0: Any, k: int = 1) -> ChainState:
    """All vertices start at ``x0``; the first sweep regenerates the non-root ones."""
    return ChainState(graph, k, {v: x0 for v in graph.vertices})


def log_joint(s: ChainState, q: FixedDimKernel, log_p: LogTarget) -> float:
    t = s.graph.oriented(s.k)
    total = -math.log(s.graph.n) + log_p(s.values[s.k])
    for i, j in t.directed_edges:
        total += q.log_density(s.values[j], s.values[i])
    if math.isnan(total):
        raise FloatingPointError("log joint evaluated to NaN")
    return total


def build_cache(s: ChainState, q: FixedDimKernel) -> EdgeDensityCache:
    log_q = {}
    for i, j in s.graph.oriented(s.k).directed_edges:
        log_q[(i, j)] = q.log_density(s.values[j], s.values[i])
        log_q[(j, i)] = q.log_density(s.values[i], s.values[j])
    return EdgeDensityCache(log_q)


def cached_log_joint(s: ChainState, log_target_k: float) -> float:
    """:func:`log_joint` from the sweep's cached edge densities."""
    total = log_target_k
    for e in s.graph.oriented(s.k).directed_edges:
        total += s.cache.log_q[e]
    return total - math.log(s.graph.n)


def _map(executor: Executor | None, fn, items):
    if executor is None or len(items) < 2:
        return [fn(v) for v in items]
    return list(executor.map(fn, items))


def gibbs_sweep_non_root(s: ChainState, q: FixedDimKernel, streams: StreamFactory,
                         iteration: int, executor: Executor | None = None) -> ChainState:
    """Redraw every ``x_j, j != k`` from ``q(. | x_parent(j))``, level by level.

    Vertices within a level are conditionally independent given the previous
    level and each draws from its own keyed stream, so the result is the same
    whether or not ``executor`` runs them concurrently.
    """
    t = s.graph.oriented(s.k)
    values = dict(s.values)

    def draw(j):
        rng = streams.borrow(iteration, j, Purpose.SWEEP)
        return q.sample(values[t.parent[j]], rng)

    for level in t.levels[1:]:
        for j, x in zip(level, _map(executor, draw, level)):
            values[j] = x
    out = ChainState(s.graph, s.k, values)
    out.cache = build_cache(out, q)
    return out


def reroot_sums(base: OrientedTree, log_q: Mapping[tuple[int, int], float],
                log_jac: Mapping[tuple[int, int], float] | None = None) -> np.ndarray:
    """Per-root sums of directed edge terms, by one traversal from ``base.root``.

    Returns ``S`` with ``S[r - 1] = sum over (i, j) oriented away from r of
    log_q[(i, j)]``, plus, when ``log_jac`` is given, the sum of
    ``log_jac[(i, j)]`` over the base-oriented edges on the path from the base
    root to ``r``.  Moving the root from ``r`` to a neighbour ``c`` reverses
    exactly the edge ``(r, c)``.
    """
    n = base.graph.n
    sums = np.empty(n)
    sums[base.root - 1] = sum(log_q[e] for e in base.directed_edges)
    for i, j in base.directed_edges:
        step = log_q[(j, i)] - log_q[(i, j)]
        if log_jac is not None:
            step += log_jac[(i, j)]
        sums[j - 1] = sums[i - 1] + step
    return sums


def normalize_log_weights(log_w: np.ndarray) -> np.ndarray:
    top = np.max(log_w)
    if not np.isfinite(top):
        if top == -np.inf:
            raise IrrecoverableStateError("all root weights are zero")
        raise FloatingPointError("root weights contain NaN or +inf")
    w = np.exp(log_w - top)
    return w / w.sum()


def root_log_weights(s: ChainState, q: FixedDimKernel, log_p: LogTarget) -> np.ndarray:
    """``log p(x_r) + sum_{(i,j) in E_r} log q(x_j | x_i)`` for every root ``r``."""
    cache = s.cache if s.cache is not None else build_cache(s, q)
    sums = reroot_sums(s.graph.oriented(1), cache.log_q)
    lp = np.array([log_p(s.values[r]) for r in s.graph.vertices], dtype=float)
    return lp + sums


def full_conditional_k(s: ChainState, q: FixedDimKernel, log_p: LogTarget) -> np.ndarray:
    """Probability vector over vertices ``1..n`` (index ``r - 1``)."""
    return normalize_log_weights(root_log_weights(s, q, log_p))


def full_conditional_k_naive(s: ChainState, q: FixedDimKernel, log_p: LogTarget) -> np.ndarray:
    """Reference evaluation orienting the tree separately at every root, O(n^2)."""
    log_w = np.empty(s.graph.n)
    for r in s.graph.vertices:
        total = log_p(s.values[r])
        for i, j in s.graph.oriented(r).directed_edges:
            total += q.log_density(s.values[j], s.values[i])
        log_w[r - 1] = total
    return normalize_log_weights(log_w)


def sample_categorical(probs: Sequence[float], u: float | np.random.Generator) -> int:
    """Inverse-CDF draw returning a 1-based index.

    ``u`` is a uniform on [0, 1) or a generator to draw one from.  The result
    is the first index whose cumulative probability exceeds ``u``.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidProbabilityError("probabilities must be a non-empty vector of finite non-negative numbers")
    if abs(p.sum() - 1.0) > 1e-9:
        raise InvalidProbabilityError(f"probabilities sum to {p.sum()!r}, not 1")
    if not isinstance(u, (float, int)):
        u = u.random()
    cum = np.cumsum(p)
    idx = int(np.searchsorted(cum, u, side="right"))
    if idx >= p.size:
        idx = int(np.flatnonzero(p > 0)[-1])
    return idx + 1


def step(s: ChainState, q: FixedDimKernel, log_p: LogTarget, streams: StreamFactory,
         iteration: int, executor: Executor | None = None) -> ChainState:
    """One iteration: non-root sweep followed by a Gibbs draw of the root."""
    s = gibbs_sweep_non_root(s, q, streams, iteration, executor)
    log_w = root_log_weights(s, q, log_p)
    probs = normalize_log_weights(log_w)
    k_new = sample_categorical(probs, streams.borrow(iteration, 0, Purpose.ROOT))
    return replace(s, k=k_new, log_weights=log_w)


def mh_log_acceptance(x: Any, x_new: Any, q: FixedDimKernel, log_p: LogTarget) -> float:
    """``log min{1, p(x_new) q(x | x_new) / (p(x) q(x_new | x))}``."""
    num = log_p(x_new) + q.log_density(x, x_new)
    den = log_p(x) + q.log_density(x_new, x)
    if num == -math.inf:
        return -math.inf
    return min(0.0, num - den)


def standard_mh_step(x: Any, q: FixedDimKernel, log_p: LogTarget, rng: np.random.Generator) -> Any:
    """Single-proposal Metropolis-Hastings update."""
    x_new = q.sample(x, rng)
    log_a = mh_log_acceptance(x, x_new, q, log_p)
    return x_new if math.log1p(-rng.random()) < log_a else x


def format_point(x: Any) -> str:
    if hasattr(x, "model_id"):
        return x.model_id
    if isinstance(x, np.ndarray):
        return ";".join(repr(float(v)) for v in x.ravel())
    if isinstance(x, tuple):
        return ";".join(format_point(v) for v in x) if x else "()"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _executor(workers: int):
    return ThreadPoolExecutor(max_workers=workers) if workers > 1 else None


def run_chain(graph: TreeGraph, q: FixedDimKernel, log_p: LogTarget, x0: Any,
              iterations: int, seed: int, workers: int = 1,
              summary: Callable[[Any], str] = format_point,
              trace_path: str | Path | None = None, chain_id: int = 0) -> Trace:
    """Run ``iterations`` steps; bit-identical for any ``workers``.

    When ``trace_path`` is given, rows are appended to that CSV as the run
    proceeds and flushed even if a step raises.
    """
    streams = StreamFactory(seed)
    trace = Trace(metadata={"seed": seed, "n": graph.n, "chain": chain_id, "sampler": "fixed"})
    writer = TraceWriter(trace_path, FIXED_COLUMNS) if trace_path is not None else None
    executor = _executor(workers)
    s = initial_state(graph, x0)
    try:
        for it in range(1, iterations + 1):
            s = step(s, q, log_p, streams, it, executor)
            x_k = s.values[s.k]
            lp = log_p(x_k)
            rec = TraceRecord(it, {"k": s.k, "log_joint": cached_log_joint(s, lp), "log_target": lp},
                              summary(x_k))
            trace.append(rec)
            if writer is not None:
                writer.write(rec)
    finally:
        if writer is not None:
            writer.close()
        if executor is not None:
            executor.shutdown()
    trace.metadata["final_state"] = s
    return trace


def run_mh_chain(q: FixedDimKernel, log_p: LogTarget, x0: Any, iterations: int, seed: int,
                 summary: Callable[[Any], str] = format_point) -> Trace:
    """Plain Metropolis-Hastings baseline with the same trace schema (``k`` fixed at 1)."""
    streams = StreamFactory(seed)
    trace = Trace(metadata={"seed": seed, "n": 1, "sampler": "mh"})
    x = x0
    for it in range(1, iterations + 1):
        x = standard_mh_step(x, q, log_p, streams.borrow(it, 0, Purpose.MH))
        lp = log_p(x)
        trace.append(TraceRecord(it, {"k": 1, "log_joint": lp, "log_target": lp}, summary(x)))
    return trace


def states_equal(a: ChainState, b: ChainState) -> bool:
    return a.k == b.k and all(point_distance(a.values[v], b.values[v]) == 0.0 for v in a.graph.vertices)
