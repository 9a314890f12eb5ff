"""Small reference targets with matching proposal kernels.

They are used by the test suite, by ``treemh verify-appendix`` and by the
mixing comparison; none of them is specific to image models.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .kernel import DiscreteKernel, FiniteRjKernel, MixtureIndependence, SplitMergeKernel

LogTarget = Callable[[Any], float]


@dataclass(frozen=True)
class GaussianMixture1D:
    """Two well separated modes; the classic hard case for local proposals."""

    weights: tuple[float, ...] = (0.5, 0.5)
    means: tuple[float, ...] = (-3.0, 3.0)
    scales: tuple[float, ...] = (1.0, 1.0)

    def __call__(self, x) -> float:
        v = float(np.asarray(x).ravel()[0])
        terms = [math.log(w) - 0.5 * ((v - m) / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi)
                 for w, m, s in zip(self.weights, self.means, self.scales)]
        top = max(terms)
        return top + math.log(sum(math.exp(t - top) for t in terms))

    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    def variance(self) -> float:
        w, m, s = map(np.asarray, (self.weights, self.means, self.scales))
        return float(np.dot(w, s**2 + m**2) - np.dot(w, m) ** 2)


def tailored_mixture_kernel(target: GaussianMixture1D, inflation: float = 1.2) -> MixtureIndependence:
    """Independence proposal shaped like the target, slightly over-dispersed."""
    return MixtureIndependence(target.weights, [[m] for m in target.means],
                               [s * inflation for s in target.scales])


@dataclass(frozen=True)
class VariableDimGaussian:
    """Target on real tuples of length ``1..max_dim``.

    ``P(len = d)`` is proportional to ``dim_weights[d - 1]`` and the coordinates
    are independent ``N(0, scale^2)`` given the length.
    """

    max_dim: int = 4
    dim_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    scale: float = 1.0

    def __call__(self, x) -> float:
        d = len(x)
        if not 1 <= d <= self.max_dim:
            return -math.inf
        log_w = math.log(self.dim_weights[d - 1] / sum(self.dim_weights))
        return log_w + sum(-0.5 * (v / self.scale) ** 2 - math.log(self.scale) - 0.5 * math.log(2 * math.pi)
                           for v in x)


def split_merge_reference(max_dim: int = 4) -> tuple[VariableDimGaussian, SplitMergeKernel, tuple]:
    """Dimension-changing target and kernel pair with non-unit Jacobians."""
    return VariableDimGaussian(max_dim=max_dim), SplitMergeKernel(max_dim=max_dim), (0.0,)


@dataclass(frozen=True)
class FiniteTarget:
    """Explicit probability table over a finite state set."""

    probs: dict

    def __call__(self, x) -> float:
        p = self.probs.get(x, 0.0)
        return math.log(p) if p > 0 else -math.inf

    @property
    def states(self) -> list:
        return list(self.probs)


def mixed_dimension_toy() -> tuple[FiniteTarget, FiniteRjKernel]:
    """States ``(a,)`` and ``(a, b)`` with ``a, b`` in ``{0, 1}``.

    Moves: birth appends ``b``, death drops the last coordinate, flip toggles
    the first one.
    """
    short = [(a,) for a in (0, 1)]
    long = [(a, b) for a, b in itertools.product((0, 1), repeat=2)]
    raw = [0.05, 0.15, 0.1, 0.2, 0.3, 0.2]
    probs = {s: p / sum(raw) for s, p in zip(short + long, raw)}
    proposals, transform = {}, {}
    for s in short:
        proposals[s] = {("birth", 0): 0.3, ("birth", 1): 0.3, ("flip",): 0.4}
        for b in (0, 1):
            transform[(s, ("birth", b))] = (s + (b,), ("death",))
        transform[(s, ("flip",))] = ((1 - s[0],), ("flip",))
    for s in long:
        proposals[s] = {("death",): 0.5, ("flip",): 0.5}
        transform[(s, ("death",))] = (s[:1], ("birth", s[1]))
        transform[(s, ("flip",))] = ((1 - s[0], s[1]), ("flip",))
    return FiniteTarget(probs), FiniteRjKernel(proposals, transform)


def three_state_toy() -> tuple[FiniteTarget, DiscreteKernel]:
    target = FiniteTarget({0: 0.2, 1: 0.5, 2: 0.3})
    q = DiscreteKernel([[0.1, 0.6, 0.3], [0.3, 0.3, 0.4], [0.5, 0.25, 0.25]])
    return target, q
