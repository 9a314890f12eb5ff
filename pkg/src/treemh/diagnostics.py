"""Trace analytics: burn-in, autocorrelation and grouping of visited models.

The grouping turns a trans-dimensional trace into a scalar that exposes
poor mixing.  Visited models are pooled over all runs; the most frequent
ungrouped model seeds a group, which then absorbs the most frequent
ungrouped neighbour of any of its members until its pooled probability
reaches ``eta`` or no visited neighbour is left.  Per-run frequencies of the
leading groups should agree across runs when the chains have converged.
"""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .traces import Trace

Neighbor = Callable[[str, str], bool]


class DiagnosticsError(ValueError):
    pass


def autocorrelation(series: Sequence[float], max_lag: int) -> np.ndarray:
    """Biased estimate ``rho(l) = sum_t d_t d_{t+l} / sum_t d_t^2`` for ``l = 0..max_lag``."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise DiagnosticsError("series must be one-dimensional")
    if not 1 <= max_lag < x.size:
        raise DiagnosticsError(f"need 1 <= max_lag < len(series), got max_lag={max_lag}, len={x.size}")
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0.0 or np.ptp(x) == 0.0:
        raise DiagnosticsError("autocorrelation undefined for a constant series")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for lag in range(1, max_lag + 1):
        out[lag] = float(d[:-lag] @ d[lag:]) / denom
    return out


def discard_burn_in(t: Trace, b: int) -> Trace:
    """Keep records with iteration number above ``b``; numbering is preserved."""
    if not 0 <= b < len(t):
        raise DiagnosticsError(f"burn-in {b} outside 0..{len(t) - 1}")
    return Trace([r for r in t.records if r.iteration > b], dict(t.metadata))


def interactions(model_id: str) -> frozenset[str]:
    return frozenset(model_id.split("|"))


def differ_by_one_interaction(a: str, b: str) -> bool:
    """Default neighbour relation on ``|``-separated model ids."""
    return len(interactions(a) ^ interactions(b)) == 1


@dataclass
class GroupTable:
    """``groups[g]`` lists the model ids of group ``g``; ``frequencies[g, r]`` is its share of run ``r``."""

    groups: list[tuple[str, ...]]
    frequencies: np.ndarray
    pooled: np.ndarray
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {m: g for g, members in enumerate(self.groups) for m in members}

    def group_of(self, model_id: str) -> int:
        return self.index[model_id]

    def group_series(self, model_ids: Sequence[str]) -> list[int]:
        return [self.index[m] for m in model_ids]


def group_models(runs: Sequence[Sequence[str]], eta: float = 0.3,
                 neighbor: Neighbor = differ_by_one_interaction) -> GroupTable:
    if not 0.0 <= eta <= 1.0:
        raise DiagnosticsError(f"eta must lie in [0, 1], got {eta}")
    if not runs or not any(len(r) for r in runs):
        raise DiagnosticsError("no visited models to group")
    counts = Counter(m for run in runs for m in run)
    total = sum(counts.values())
    prob = {m: c / total for m, c in counts.items()}
    order = sorted(prob, key=lambda m: (-prob[m], m))
    ungrouped = set(order)
    groups = []
    for seed in order:
        if seed not in ungrouped:
            continue
        ungrouped.discard(seed)
        members = [seed]
        mass = prob[seed]
        frontier = {m for m in ungrouped if neighbor(seed, m)}
        while mass < eta and frontier:
            best = min(frontier, key=lambda m: (-prob[m], m))
            frontier.discard(best)
            ungrouped.discard(best)
            members.append(best)
            mass += prob[best]
            frontier |= {m for m in ungrouped if m not in frontier and neighbor(best, m)}
        groups.append(tuple(members))
    index = {m: g for g, members in enumerate(groups) for m in members}
    freq = np.zeros((len(groups), len(runs)))
    for r, run in enumerate(runs):
        if len(run):
            c = np.bincount([index[m] for m in run], minlength=len(groups))
            freq[:, r] = c / len(run)
    pooled = np.array([sum(prob[m] for m in g) for g in groups])
    return GroupTable(groups, freq, pooled, index)


@dataclass(frozen=True)
class FrequencyTable:
    rows: list[str]
    values: np.ndarray

    def text(self) -> str:
        width = max(len(r) for r in self.rows)
        return "\n".join(f"{label:<{width}} " + " ".join(f"{v:6.3f}" for v in row)
                         for label, row in zip(self.rows, self.values)) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group"] + [f"run{r + 1}" for r in range(self.values.shape[1])])
        for g, row in enumerate(self.values):
            w.writerow([g + 1] + [f"{v:.6f}" for v in row])
        return buf.getvalue()


def group_frequency_table(gt: GroupTable, top: int = 6) -> FrequencyTable:
    """Per-run fractions of the first ``top`` groups, rows labelled ``Group 1:``, ``Group 2:``, ..."""
    if top < 1:
        raise DiagnosticsError("top must be positive")
    k = min(top, len(gt.groups))
    return FrequencyTable([f"Group {g + 1}:" for g in range(k)], gt.frequencies[:k].copy())


@dataclass(frozen=True)
class ConvergenceReport:
    converged: bool
    checked_groups: list[int]
    spreads: np.ndarray


def convergence_check(gt: GroupTable, eta: float = 0.3, max_spread: float = 0.1) -> ConvergenceReport:
    """Flag non-convergence when a group with pooled probability ``>= eta`` varies
    across runs by more than ``max_spread``."""
    checked = [g for g, p in enumerate(gt.pooled) if p >= eta]
    spreads = np.array([np.ptp(gt.frequencies[g]) for g in checked])
    return ConvergenceReport(bool(np.all(spreads <= max_spread)), checked, spreads)


def rescale_iterations(iterations: Sequence[int], ratio: float) -> list[float]:
    """Divide iteration numbers by a cost ratio to put runs on a common time axis."""
    if ratio <= 0:
        raise DiagnosticsError("ratio must be positive")
    return [i / ratio for i in iterations]
