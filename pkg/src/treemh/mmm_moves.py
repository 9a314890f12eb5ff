"""Tailored reversible-jump proposals for Markov mesh parameters, and the chain
that alternates them with pixel updates.

Two moves act on :class:`MmmParams`:

* a line move keeps the active set, draws a direction ``Delta`` uniformly on
  the unit sphere and moves ``theta`` to ``theta + alpha * Delta`` with
  ``alpha`` drawn exactly from its full conditional along that line;
* an add/remove move inserts or deletes one interaction.  Removal candidates
  are weighted by ``exp(-kappa * beta / 2^|lambda|)``; an added ``beta`` is
  drawn from a Gaussian fitted to a short slice-sampling pilot run on its full
  conditional.

The line move's proposal density is ``exp(l(alpha)) / Z`` where ``l`` is the
log posterior along the line.  ``Z`` is the same for the forward and reverse
moves of an edge (both walk the same line), so it cancels from the root
distribution and from every acceptance ratio and is left out unless
``normalize_line=True``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln

from .kernel import KernelDomainError, RjKernel
from .markov_mesh import (
    BinaryImage,
    LogPosterior,
    MmmParams,
    Template,
    addable_masks,
    beta_from_theta,
    gibbs_unobserved,
    popcount,
    removable_masks,
)
from .rng import Purpose, StreamFactory, digest_seed, generator_from_seed
from .sampler_fixed import _executor
from .sampler_rj import InvariantViolationError, RjChainState, initial_rj_state, make_record, step
from .traces import RJ_COLUMNS, VERIFY_COLUMN, Trace, TraceWriter
from .univariate import LogConcaveEnvelope, sample_log_concave, slice_sample


@dataclass(frozen=True)
class ThetaU:
    delta: tuple[float, ...]
    alpha: float

    def distance(self, other: "ThetaU") -> float:
        if len(self.delta) != len(other.delta):
            return math.inf
        return max([abs(self.alpha - other.alpha)] + [abs(a - b) for a, b in zip(self.delta, other.delta)])


@dataclass(frozen=True)
class AddU:
    mask: int
    value: float

    def distance(self, other: "AddU") -> float:
        return abs(self.value - other.value) if self.mask == other.mask else math.inf


@dataclass(frozen=True)
class RemoveU:
    mask: int

    def distance(self, other: "RemoveU") -> float:
        return 0.0 if self.mask == other.mask else math.inf


@dataclass(frozen=True)
class NullU:
    def distance(self, other: "NullU") -> float:
        return 0.0


def log_sphere_area(d: int) -> float:
    """Log surface area of the unit sphere in ``R^d``."""
    return math.log(2.0) + 0.5 * d * math.log(math.pi) - float(gammaln(0.5 * d))


def removal_distribution(p: MmmParams, kappa: float = 1.0,
                         absolute: bool = False) -> tuple[list[int], np.ndarray]:
    """Removable interactions and their probabilities ``prop. to exp(-kappa beta / 2^|lambda|)``.

    With ``absolute`` the score uses ``|beta|``.  Returns an empty list when
    nothing can be removed.
    """
    cands = removable_masks(p.template, p.active)
    if not cands:
        return [], np.empty(0)
    b = p.beta_map
    scores = np.array([b[m] / 2.0 ** popcount(m) for m in cands])
    if absolute:
        scores = np.abs(scores)
    logw = -kappa * scores
    w = np.exp(logw - logw.max())
    return cands, w / w.sum()


class ThetaLineKernel(RjKernel):
    """Dimension-preserving move of all active ``theta`` along a random line."""

    def __init__(self, target: LogPosterior, normalize_line: bool = False):
        self.target = target
        self.normalize_line = normalize_line

    def owns(self, u: Any) -> bool:
        return isinstance(u, ThetaU)

    def _line(self, x: MmmParams, delta) -> Callable[[float], float]:
        d_full = np.zeros(x.template.n_masks)
        beta_dir = _beta_direction(x, delta)
        for m, v in zip(x.active, beta_dir):
            d_full[m] = v
        return self.target.along(x.active, x.beta_full, d_full)

    def sample_u(self, x: MmmParams, rng: np.random.Generator) -> ThetaU:
        z = rng.standard_normal(x.dim)
        delta = tuple(float(v) for v in z / np.linalg.norm(z))
        f = self._line(x, delta)
        alpha = sample_log_concave(f, rng, 0.0, _line_scale(self.target, x))
        return ThetaU(delta, float(alpha))

    def log_density_u(self, u: ThetaU, x: MmmParams) -> float:
        if not isinstance(u, ThetaU) or len(u.delta) != x.dim:
            return -math.inf
        f = self._line(x, u.delta)
        out = f(u.alpha) - log_sphere_area(x.dim)
        if self.normalize_line:
            out -= log_line_normalizer(f, _line_scale(self.target, x))
        return out

    def forward_g(self, x: MmmParams, u: ThetaU) -> MmmParams:
        theta = x.theta_active() + u.alpha * np.asarray(u.delta)
        return x.with_theta_active(theta)

    def forward_h(self, x: MmmParams, u: ThetaU) -> ThetaU:
        return ThetaU(u.delta, -u.alpha)

    def log_abs_jacobian(self, x, u) -> float:
        return 0.0

    def dim_x(self, x: MmmParams) -> int:
        return x.dim

    def dim_u(self, u: Any) -> int:
        return len(u.delta) + 1 if isinstance(u, ThetaU) else 0


def _beta_direction(x: MmmParams, delta) -> np.ndarray:
    """``beta`` increment corresponding to a ``theta`` increment ``delta`` on the active set."""
    return np.array(list(beta_from_theta(x.template, dict(zip(x.active, delta))).values()))


def _line_scale(target: LogPosterior, x: MmmParams) -> float:
    return 2.0 / math.sqrt(max(float(target.n.sum()), 1.0)) + 0.1


def log_line_normalizer(f: Callable[[float], float], scale: float = 1.0) -> float:
    """``log of the integral of exp(f)`` by quadrature around the mode."""
    env = LogConcaveEnvelope(f, 0.0, scale)
    lo = env.a - 40.0 * (env.m - env.a)
    hi = env.b + 40.0 * (env.b - env.m)
    val, _ = quad(lambda a: math.exp(f(a) - env.lm), lo, hi, points=[env.a, env.m, env.b], limit=200)
    return env.lm + math.log(val)


class AddRemoveKernel(RjKernel):
    """Insert or delete one interaction; ``u`` carries the choice and the new ``beta``."""

    def __init__(self, target: LogPosterior, kappa: float = 1.0, pilot_count: int = 10,
                 absolute_score: bool = False, salt: int = 0, variance_floor: float = 1e-4):
        if pilot_count < 2:
            raise ValueError("pilot_count must be at least 2 to estimate a variance")
        self.target = target
        self.kappa = kappa
        self.pilot_count = pilot_count
        self.absolute_score = absolute_score
        self.salt = salt
        self.variance_floor = variance_floor
        self._moments: dict[tuple[MmmParams, int], tuple[float, float]] = {}

    def owns(self, u: Any) -> bool:
        return isinstance(u, (AddU, RemoveU, NullU))

    def _options(self, x: MmmParams) -> tuple[list[int], list[int]]:
        return addable_masks(x.template, x.active), removable_masks(x.template, x.active)

    def pilot_moments(self, x: MmmParams, mask: int) -> tuple[float, float]:
        """Mean and variance of ``pilot_count`` slice draws of the new ``beta``.

        The pilot run's generator is keyed by ``(salt, x, mask)`` so the moments
        are a deterministic function of the state, which keeps the add move's
        density evaluable from the reverse side.
        """
        key = (x, mask)
        hit = self._moments.get(key)
        if hit is not None:
            return hit
        rng = generator_from_seed(digest_seed(self.salt, x.model_id, repr(x.beta), mask))
        direction = np.zeros(x.template.n_masks)
        direction[mask] = 1.0
        f = self.target.along(x.active + (mask,), x.beta_full, direction)
        b = 0.0
        draws = []
        for _ in range(self.pilot_count):
            b = slice_sample(f, b, rng)
            draws.append(b)
        mean = float(np.mean(draws))
        var = max(float(np.var(draws, ddof=1)), self.variance_floor)
        self._moments[key] = (mean, var)
        return mean, var

    def sample_u(self, x: MmmParams, rng: np.random.Generator):
        add, rem = self._options(x)
        if not add and not rem:
            return NullU()
        do_add = bool(add) and (not rem or rng.random() < 0.5)
        if do_add:
            mask = add[int(rng.integers(len(add)))]
            mean, var = self.pilot_moments(x, mask)
            return AddU(mask, float(mean + math.sqrt(var) * rng.standard_normal()))
        cands, probs = removal_distribution(x, self.kappa, self.absolute_score)
        idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        return RemoveU(cands[min(idx, len(cands) - 1)])

    def log_density_u(self, u, x: MmmParams) -> float:
        add, rem = self._options(x)
        log_type = math.log(0.5) if add and rem else 0.0
        if isinstance(u, NullU):
            return 0.0 if not add and not rem else -math.inf
        if isinstance(u, AddU):
            if u.mask not in add:
                return -math.inf
            mean, var = self.pilot_moments(x, u.mask)
            z = (u.value - mean) ** 2 / var
            return log_type - math.log(len(add)) - 0.5 * (z + math.log(2 * math.pi * var))
        if isinstance(u, RemoveU):
            cands, probs = removal_distribution(x, self.kappa, self.absolute_score)
            if u.mask not in cands:
                return -math.inf
            return log_type + math.log(probs[cands.index(u.mask)])
        return -math.inf

    def forward_g(self, x: MmmParams, u) -> MmmParams:
        if isinstance(u, AddU):
            if u.mask in x.active:
                raise KernelDomainError(f"interaction {u.mask} already active")
            return x.with_beta(u.mask, u.value)
        if isinstance(u, RemoveU):
            return x.without(u.mask)
        return x

    def forward_h(self, x: MmmParams, u):
        if isinstance(u, AddU):
            return RemoveU(u.mask)
        if isinstance(u, RemoveU):
            return AddU(u.mask, x.beta_map[u.mask])
        return u

    def log_abs_jacobian(self, x, u) -> float:
        return 0.0

    def dim_x(self, x: MmmParams) -> int:
        return x.dim

    def dim_u(self, u: Any) -> int:
        return 1 if isinstance(u, AddU) else 0


class MoveMixture(RjKernel):
    """Pick one component kernel at random; components own disjoint ``u`` types."""

    def __init__(self, components: list[RjKernel], weights: list[float]):
        w = np.asarray(weights, dtype=float)
        if len(components) != len(w) or np.any(w <= 0):
            raise ValueError("need one positive weight per component")
        self.components = components
        self.weights = w / w.sum()
        self._cum = np.cumsum(self.weights)

    def _owner(self, u) -> tuple[int, RjKernel]:
        for i, c in enumerate(self.components):
            if c.owns(u):
                return i, c
        raise KernelDomainError(f"no component owns auxiliary {u!r}")

    def sample_u(self, x, rng):
        i = int(np.searchsorted(self._cum, rng.random(), side="right"))
        return self.components[min(i, len(self.components) - 1)].sample_u(x, rng)

    def log_density_u(self, u, x) -> float:
        i, c = self._owner(u)
        return math.log(self.weights[i]) + c.log_density_u(u, x)

    def forward_g(self, x, u):
        return self._owner(u)[1].forward_g(x, u)

    def forward_h(self, x, u):
        return self._owner(u)[1].forward_h(x, u)

    def log_abs_jacobian(self, x, u) -> float:
        return self._owner(u)[1].log_abs_jacobian(x, u)

    def dim_x(self, x) -> int:
        return self.components[0].dim_x(x)

    def dim_u(self, u) -> int:
        return self._owner(u)[1].dim_u(u)


@dataclass(frozen=True)
class MmmSettings:
    template: Template
    c: float = 1.0
    sigma_theta: float = 10.0
    kappa: float = 1.0
    pilot_count: int = 10
    absolute_score: bool = False
    theta_weight: float = 0.5


def theta_direction_move(target: LogPosterior, normalize_line: bool = False) -> ThetaLineKernel:
    return ThetaLineKernel(target, normalize_line)


def add_remove_move(target: LogPosterior, kappa: float = 1.0, pilot_count: int = 10,
                    absolute_score: bool = False, salt: int = 0) -> AddRemoveKernel:
    return AddRemoveKernel(target, kappa, pilot_count, absolute_score, salt)


def tailored_kernel(target: LogPosterior, settings: MmmSettings, salt: int = 0) -> MoveMixture:
    w = settings.theta_weight
    return MoveMixture(
        [theta_direction_move(target),
         add_remove_move(target, settings.kappa, settings.pilot_count, settings.absolute_score, salt)],
        [w, 1.0 - w])


@dataclass
class MmmTarget:
    """Binds the posterior of one image into the sampler interface."""

    image: BinaryImage
    settings: MmmSettings
    log_posterior: LogPosterior = field(init=False)

    def __post_init__(self):
        s = self.settings
        self.log_posterior = LogPosterior.from_image(self.image, s.template, s.c, s.sigma_theta)

    def __call__(self, p: MmmParams) -> float:
        return self.log_posterior(p)

    def kernel(self, salt: int = 0) -> MoveMixture:
        return tailored_kernel(self.log_posterior, self.settings, salt)


def mmm_target_adapter(image: BinaryImage, settings: MmmSettings) -> MmmTarget:
    return MmmTarget(image, settings)


@dataclass
class MmmChainResult:
    trace: Trace
    state: RjChainState
    image: BinaryImage


def run_mmm_chain(graph, image: BinaryImage, settings: MmmSettings, iterations: int, seed: int,
                  workers: int = 1, verify: bool = False, tol: float = 1e-8,
                  trace_path: str | Path | None = None, chain_id: int = 0,
                  x0: MmmParams | None = None) -> MmmChainResult:
    """Alternate one tree-sampler update of the parameters with a pixel sweep.

    Starts from the intercept-only model.  The ``log_target`` column is the
    log posterior after the pixel sweep; ``dim`` is the number of active
    interactions and ``x_summary`` the model id.
    """
    streams = StreamFactory(seed)
    columns = RJ_COLUMNS + ((VERIFY_COLUMN,) if verify else ())
    trace = Trace(metadata={"seed": seed, "n": graph.n, "chain": chain_id, "sampler": "mmm"})
    writer = TraceWriter(trace_path, columns) if trace_path is not None else None
    executor = _executor(workers)
    s = initial_rj_state(graph, x0 if x0 is not None else MmmParams.intercept_only(settings.template))
    summary = lambda p: p.model_id  # noqa: E731
    try:
        for it in range(1, iterations + 1):
            target = mmm_target_adapter(image, settings)
            K = target.kernel(salt=seed)
            s = step(s, K, target, streams, it, executor, verify, tol)
            image = gibbs_unobserved(image, s.root_value, streams.borrow(it, 0, Purpose.PIXELS))
            lt = LogPosterior.from_image(image, settings.template, settings.c, settings.sigma_theta)(s.root_value)
            rec = make_record(s, K, target(s.root_value), it, summary, verify)
            rec.scalars["log_target"] = lt
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
    return MmmChainResult(trace, s, image)


__all__ = [
    "AddRemoveKernel", "AddU", "InvariantViolationError", "MmmChainResult", "MmmSettings", "MmmTarget",
    "MoveMixture", "NullU", "RemoveU", "ThetaLineKernel", "ThetaU", "add_remove_move", "log_line_normalizer",
    "log_sphere_area", "mmm_target_adapter", "removal_distribution", "run_mmm_chain", "tailored_kernel",
    "theta_direction_move",
]
