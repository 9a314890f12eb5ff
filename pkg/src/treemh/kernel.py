"""Proposal kernels for the fixed-dimension and reversible-jump samplers.

A :class:`FixedDimKernel` proposes ``x_new ~ q(. | x)`` and evaluates
``log q(x_new | x)``.  A :class:`RjKernel` proposes an auxiliary ``u ~ q(u | x)``
and maps ``(x, u)`` to ``(g(x, u), h(x, u))``; the map must be an involution
with ``log|J(g(x,u), h(x,u))| = -log|J(x, u)|``.

Densities are always in log form.  Kernels never own random state: every
sampling method takes the generator to draw from.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Mapping, NamedTuple

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)


class KernelDomainError(ValueError):
    pass


class Move(NamedTuple):
    """A tagged auxiliary variable: the move ``kind`` plus its real ``values``."""

    kind: str
    values: tuple = ()


def dim_of(point: Any) -> int:
    if isinstance(point, Move):
        return len(point.values)
    if isinstance(point, np.ndarray):
        return int(point.size)
    if isinstance(point, tuple):
        return len(point)
    if hasattr(point, "dim"):
        return int(point.dim)
    return 1


def point_distance(a: Any, b: Any) -> float:
    """Largest componentwise deviation; ``inf`` when the structures differ."""
    if isinstance(a, str) or isinstance(b, str):
        return 0.0 if a == b else math.inf
    if hasattr(a, "distance") or hasattr(b, "distance"):
        return float(a.distance(b)) if type(a) is type(b) else math.inf
    if isinstance(a, (tuple, list)) or isinstance(b, (tuple, list)):
        if not (isinstance(a, (tuple, list)) and isinstance(b, (tuple, list))) or len(a) != len(b):
            return math.inf
        return max((point_distance(x, y) for x, y in zip(a, b)), default=0.0)
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        if a.shape != b.shape:
            return math.inf
        return float(np.max(np.abs(a - b))) if a.size else 0.0
    return abs(float(a) - float(b))


def _norm_logpdf(x: float, mean: float, sd: float) -> float:
    z = (x - mean) / sd
    return -0.5 * z * z - math.log(sd) - 0.5 * _LOG_2PI


# -- fixed-dimension kernels ----------------------------------------------


class FixedDimKernel(ABC):
    @abstractmethod
    def sample(self, x: Any, rng: np.random.Generator) -> Any: ...

    @abstractmethod
    def log_density(self, x_new: Any, x: Any) -> float: ...


class GaussianRandomWalk(FixedDimKernel):
    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)

    def sample(self, x, rng):
        x = np.asarray(x, dtype=float)
        return x + self.scale * rng.standard_normal(x.shape)

    def log_density(self, x_new, x):
        d = (np.asarray(x_new, dtype=float) - np.asarray(x, dtype=float)) / self.scale
        return float(-0.5 * d @ d - d.size * (math.log(self.scale) + 0.5 * _LOG_2PI))


class GaussianIndependence(FixedDimKernel):
    def __init__(self, mean, scale: float = 1.0):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.scale = float(scale)

    def sample(self, x, rng):
        return self.mean + self.scale * rng.standard_normal(self.mean.shape)

    def log_density(self, x_new, x):
        d = (np.asarray(x_new, dtype=float) - self.mean) / self.scale
        return float(-0.5 * d @ d - d.size * (math.log(self.scale) + 0.5 * _LOG_2PI))


class MixtureIndependence(FixedDimKernel):
    """Independence proposal from an isotropic Gaussian mixture.

    Matching the mixture to a multimodal target gives the tailored proposal
    used in the mixing comparisons.
    """

    def __init__(self, weights, means, scales):
        self.weights = np.asarray(weights, dtype=float)
        self.weights = self.weights / self.weights.sum()
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        if self.means.shape[0] != self.weights.size:
            self.means = self.means.T
        self.scales = np.broadcast_to(np.asarray(scales, dtype=float), self.weights.shape).copy()
        self._cum = np.cumsum(self.weights)
        self._log_w = np.log(self.weights)

    def sample(self, x, rng):
        c = min(int(np.searchsorted(self._cum, rng.random(), side="right")), self.weights.size - 1)
        return self.means[c] + self.scales[c] * rng.standard_normal(self.means.shape[1])

    def log_density(self, x_new, x):
        x_new = np.asarray(x_new, dtype=float)
        m = self.means.shape[1]
        d2 = np.sum((x_new[None, :] - self.means) ** 2, axis=1) / self.scales**2
        terms = self._log_w - 0.5 * d2 - m * (np.log(self.scales) + 0.5 * _LOG_2PI)
        top = terms.max()
        return float(top + math.log(np.exp(terms - top).sum()))


class DiscreteKernel(FixedDimKernel):
    """Kernel on states ``0..S-1`` given by a row-stochastic matrix."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)
        if not np.allclose(self.matrix.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("rows of a discrete kernel must sum to 1")
        self._cum = np.cumsum(self.matrix, axis=1)
        with np.errstate(divide="ignore"):
            self._log = np.log(self.matrix)

    def sample(self, x, rng):
        row = self._cum[int(x)]
        j = int(np.searchsorted(row, rng.random(), side="right"))
        return min(j, row.size - 1)

    def log_density(self, x_new, x):
        return float(self._log[int(x), int(x_new)])


class PointMassKernel(FixedDimKernel):
    """``q(x_new | x) = delta(x_new - x)``; degenerate, for tests and baselines."""

    def sample(self, x, rng):
        return x.copy() if isinstance(x, np.ndarray) else x

    def log_density(self, x_new, x):
        return 0.0 if point_distance(x_new, x) == 0.0 else -math.inf


# -- reversible-jump kernels ----------------------------------------------


class RjKernel(ABC):
    @abstractmethod
    def sample_u(self, x: Any, rng: np.random.Generator) -> Any: ...

    @abstractmethod
    def log_density_u(self, u: Any, x: Any) -> float: ...

    @abstractmethod
    def forward_g(self, x: Any, u: Any) -> Any: ...

    @abstractmethod
    def forward_h(self, x: Any, u: Any) -> Any: ...

    @abstractmethod
    def log_abs_jacobian(self, x: Any, u: Any) -> float: ...

    def dim_x(self, x: Any) -> int:
        return dim_of(x)

    def dim_u(self, u: Any) -> int:
        return dim_of(u)


def apply_forward(k: RjKernel, x: Any, u: Any) -> tuple[Any, Any]:
    return k.forward_g(x, u), k.forward_h(x, u)


@dataclass(frozen=True)
class InvolutionCheck:
    passed: bool
    max_deviation: float
    jacobian_deviation: float
    dimension_matched: bool


def check_involution(k: RjKernel, x: Any, u: Any, tol: float = 1e-10) -> InvolutionCheck:
    """Round-trip, Jacobian-inverse and dimension-matching check at ``(x, u)``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    x_new, u_new = apply_forward(k, x, u)
    x_back, u_back = apply_forward(k, x_new, u_new)
    dev = max(point_distance(x_back, x), point_distance(u_back, u))
    jac = abs(k.log_abs_jacobian(x_new, u_new) + k.log_abs_jacobian(x, u))
    dims = k.dim_x(x) + k.dim_u(u) == k.dim_x(x_new) + k.dim_u(u_new)
    return InvolutionCheck(dev <= tol and jac <= tol and dims, dev, jac, dims)


class LiftedKernel(RjKernel):
    """A fixed-dimension kernel seen as a reversible-jump kernel.

    ``u`` is the proposed state itself: ``g(x, u) = u``, ``h(x, u) = x``.
    """

    def __init__(self, q: FixedDimKernel):
        self.q = q

    def sample_u(self, x, rng):
        return self.q.sample(x, rng)

    def log_density_u(self, u, x):
        return self.q.log_density(u, x)

    def forward_g(self, x, u):
        return u

    def forward_h(self, x, u):
        return x

    def log_abs_jacobian(self, x, u):
        return 0.0


def lift_fixed_kernel(q: FixedDimKernel) -> LiftedKernel:
    return LiftedKernel(q)


class TranslationKernel(RjKernel):
    """``g = x + u``, ``h = -u`` with Gaussian ``u``."""

    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)

    def sample_u(self, x, rng):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.scale * rng.standard_normal(x.shape)

    def log_density_u(self, u, x):
        d = np.atleast_1d(np.asarray(u, dtype=float)) / self.scale
        return float(-0.5 * d @ d - d.size * (math.log(self.scale) + 0.5 * _LOG_2PI))

    def forward_g(self, x, u):
        return np.asarray(x, dtype=float) + np.asarray(u, dtype=float)

    def forward_h(self, x, u):
        return -np.asarray(u, dtype=float)

    def log_abs_jacobian(self, x, u):
        return 0.0


class ScalingKernel(RjKernel):
    """Multiplicative move ``g = x * exp(u)``, ``h = -u`` for scalar ``u``.

    ``|J| = exp(m * u)`` for an ``m``-dimensional ``x``.
    """

    def __init__(self, scale: float = 0.5):
        self.scale = float(scale)

    def sample_u(self, x, rng):
        return float(self.scale * rng.standard_normal())

    def log_density_u(self, u, x):
        return _norm_logpdf(float(u), 0.0, self.scale)

    def forward_g(self, x, u):
        return np.asarray(x, dtype=float) * math.exp(u)

    def forward_h(self, x, u):
        return -float(u)

    def log_abs_jacobian(self, x, u):
        return np.asarray(x).size * float(u)

    def dim_u(self, u):
        return 1


class BirthDeathKernel(RjKernel):
    """Birth/death on variable-length real tuples.

    A birth appends ``v ~ N(0, birth_scale^2)`` (``u = (v,)``, ``u~ = ()``); a
    death removes the last coordinate (``u = ()``, ``u~ = (x_last,)``).
    """

    def __init__(self, max_dim: int = 5, p_birth: float = 0.5, birth_scale: float = 1.0):
        self.max_dim = int(max_dim)
        self.p_birth = float(p_birth)
        self.birth_scale = float(birth_scale)

    def _p_birth(self, x) -> float:
        if len(x) == 0:
            return 1.0
        if len(x) >= self.max_dim:
            return 0.0
        return self.p_birth

    def sample_u(self, x, rng):
        if rng.random() < self._p_birth(x):
            return (float(self.birth_scale * rng.standard_normal()),)
        return ()

    def log_density_u(self, u, x):
        pb = self._p_birth(x)
        if len(u) == 0:
            return math.log(1.0 - pb) if pb < 1.0 else -math.inf
        if pb == 0.0:
            return -math.inf
        return math.log(pb) + _norm_logpdf(u[0], 0.0, self.birth_scale)

    def forward_g(self, x, u):
        if len(u) == 1:
            return tuple(x) + (float(u[0]),)
        if len(u) == 0 and len(x) > 0:
            return tuple(x[:-1])
        raise KernelDomainError(f"no birth/death move for x={x!r}, u={u!r}")

    def forward_h(self, x, u):
        if len(u) == 1:
            return ()
        if len(u) == 0 and len(x) > 0:
            return (float(x[-1]),)
        raise KernelDomainError(f"no birth/death move for x={x!r}, u={u!r}")

    def log_abs_jacobian(self, x, u):
        return 0.0


_LOG2 = math.log(2.0)


class SplitMergeKernel(RjKernel):
    """Split/merge/jitter moves on real tuples of length ``1..max_dim``.

    * split: the last coordinate ``a`` becomes ``(a - w, a + w)``, ``|J| = 2``;
    * merge: the last two ``(a, b)`` become ``(a + b) / 2`` with ``w = (b - a) / 2``;
    * jitter: every coordinate moves by ``e ~ N(0, jitter_scale^2)``; ``e -> -e``.
    """

    def __init__(self, max_dim: int = 4, p_split: float = 0.35, p_merge: float = 0.35,
                 split_scale: float = 1.0, jitter_scale: float = 0.5):
        self.max_dim = int(max_dim)
        self.p_split = float(p_split)
        self.p_merge = float(p_merge)
        self.split_scale = float(split_scale)
        self.jitter_scale = float(jitter_scale)

    def _move_probs(self, x) -> dict[str, float]:
        d = len(x)
        probs = {
            "split": self.p_split if d < self.max_dim else 0.0,
            "merge": self.p_merge if d >= 2 else 0.0,
        }
        probs["jitter"] = 1.0 - probs["split"] - probs["merge"]
        return probs

    def sample_u(self, x, rng):
        probs = self._move_probs(x)
        r = rng.random()
        if r < probs["split"]:
            return Move("split", (float(self.split_scale * rng.standard_normal()),))
        if r < probs["split"] + probs["merge"]:
            return Move("merge", ())
        e = self.jitter_scale * rng.standard_normal(len(x))
        return Move("jitter", tuple(float(v) for v in e))

    def log_density_u(self, u, x):
        p = self._move_probs(x).get(u.kind, 0.0)
        if p <= 0.0:
            return -math.inf
        out = math.log(p)
        if u.kind == "split":
            out += _norm_logpdf(u.values[0], 0.0, self.split_scale)
        elif u.kind == "jitter":
            if len(u.values) != len(x):
                return -math.inf
            out += sum(_norm_logpdf(v, 0.0, self.jitter_scale) for v in u.values)
        return out

    def forward_g(self, x, u):
        if u.kind == "split":
            a, w = x[-1], u.values[0]
            return tuple(x[:-1]) + (a - w, a + w)
        if u.kind == "merge":
            if len(x) < 2:
                raise KernelDomainError("merge needs at least two coordinates")
            return tuple(x[:-2]) + ((x[-2] + x[-1]) / 2.0,)
        if u.kind == "jitter":
            return tuple(a + e for a, e in zip(x, u.values))
        raise KernelDomainError(f"unknown move {u.kind!r}")

    def forward_h(self, x, u):
        if u.kind == "split":
            return Move("merge", ())
        if u.kind == "merge":
            if len(x) < 2:
                raise KernelDomainError("merge needs at least two coordinates")
            return Move("split", ((x[-1] - x[-2]) / 2.0,))
        if u.kind == "jitter":
            return Move("jitter", tuple(-e for e in u.values))
        raise KernelDomainError(f"unknown move {u.kind!r}")

    def log_abs_jacobian(self, x, u):
        if u.kind == "split":
            return _LOG2
        if u.kind == "merge":
            return -_LOG2
        return 0.0


class FiniteRjKernel(RjKernel):
    """Reversible-jump kernel on a finite space (counting measure, ``|J| = 1``).

    ``proposals[x]`` maps each auxiliary ``u`` to ``q(u | x)``; ``transform``
    maps ``(x, u)`` to ``(x_new, u_new)`` and must be an involution.
    """

    def __init__(self, proposals: Mapping[Any, Mapping[Any, float]],
                 transform: Mapping[tuple[Any, Any], tuple[Any, Any]]):
        self.proposals = {x: dict(row) for x, row in proposals.items()}
        self.transform = dict(transform)
        for x, row in self.proposals.items():
            if abs(sum(row.values()) - 1.0) > 1e-12:
                raise ValueError(f"proposal row for {x!r} does not sum to 1")
            for u in row:
                x_new, u_new = self.transform[(x, u)]
                if self.transform.get((x_new, u_new)) != (x, u):
                    raise ValueError(f"transform is not an involution at {(x, u)!r}")
                if u_new not in self.proposals.get(x_new, {}):
                    raise ValueError(f"reverse auxiliary {u_new!r} has zero probability at {x_new!r}")
        self._items = {x: (list(row), np.cumsum(list(row.values()))) for x, row in self.proposals.items()}

    def sample_u(self, x, rng):
        keys, cum = self._items[x]
        return keys[min(int(np.searchsorted(cum, rng.random(), side="right")), len(keys) - 1)]

    def log_density_u(self, u, x):
        p = self.proposals.get(x, {}).get(u, 0.0)
        return math.log(p) if p > 0 else -math.inf

    def forward_g(self, x, u):
        try:
            return self.transform[(x, u)][0]
        except KeyError as exc:
            raise KernelDomainError(f"({x!r}, {u!r}) outside the kernel domain") from exc

    def forward_h(self, x, u):
        try:
            return self.transform[(x, u)][1]
        except KeyError as exc:
            raise KernelDomainError(f"({x!r}, {u!r}) outside the kernel domain") from exc

    def log_abs_jacobian(self, x, u):
        return 0.0
