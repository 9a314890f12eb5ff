"""One-dimensional samplers for full conditionals.

:func:`slice_sample` is a doubling-window slice sampler step; it leaves the
target invariant but its transition density is not available in closed form.
:func:`sample_log_concave` draws exactly from a log-concave density by
rejection from a piecewise envelope built on three points, so the draw has
density exactly proportional to ``exp(logf)``.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

LogDensity = Callable[[float], float]


class SamplerConvergenceError(RuntimeError):
    """A univariate sampler exhausted its retry budget."""


def slice_sample(logf: LogDensity, x0: float, rng: np.random.Generator, w: float = 1.0,
                 max_doublings: int = 20, max_shrinks: int = 200) -> float:
    """One slice-sampling update of ``x0`` with the doubling procedure."""
    lf0 = logf(x0)
    if not math.isfinite(lf0):
        raise ValueError(f"slice sampler started at a point with log density {lf0}")
    y = lf0 - rng.standard_exponential()
    left = x0 - w * rng.random()
    right = left + w
    f_left, f_right = logf(left), logf(right)
    for _ in range(max_doublings):
        if y >= f_left and y >= f_right:
            break
        if rng.random() < 0.5:
            left -= right - left
            f_left = logf(left)
        else:
            right += right - left
            f_right = logf(right)

    def acceptable(x1: float) -> bool:
        lo, hi = left, right
        differ = False
        while hi - lo > 1.1 * w:
            mid = 0.5 * (lo + hi)
            if (x0 < mid) != (x1 < mid):
                differ = True
            if x1 < mid:
                hi = mid
            else:
                lo = mid
            if differ and y >= logf(lo) and y >= logf(hi):
                return False
        return True

    for _ in range(max_shrinks):
        x1 = left + rng.random() * (right - left)
        if y < logf(x1) and acceptable(x1):
            return x1
        if x1 < x0:
            left = x1
        else:
            right = x1
    raise SamplerConvergenceError(f"slice sampler did not accept within {max_shrinks} shrinks")


def _step_out(logf: LogDensity, m: float, lm: float, step: float, sign: float,
              max_steps: int = 200) -> tuple[float, float]:
    x = m + sign * step
    lx = logf(x)
    for _ in range(max_steps):
        if lx <= lm - 1.0:
            return x, lx
        step *= 2.0
        x = m + sign * step
        lx = logf(x)
    raise SamplerConvergenceError("log density does not decay; is it proper?")


class LogConcaveEnvelope:
    """Envelope of a log-concave ``logf``: flat on ``[a, b]``, exponential tails.

    For ``x > b`` concavity puts ``logf(x)`` below the secant through
    ``(m, logf(m))`` and ``(b, logf(b))``; likewise left of ``a``.  The flat
    part sits just above the numerically located maximum.
    """

    def __init__(self, logf: LogDensity, start: float = 0.0, scale: float = 1.0):
        self.logf = logf
        with np.errstate(invalid="ignore"):
            res = minimize_scalar(lambda t: -logf(t), bracket=(start - scale, start + scale),
                                  method="brent", options={"xtol": 1e-10})
        m = float(res.x)
        lm = logf(m)
        if not math.isfinite(lm):
            raise SamplerConvergenceError("could not locate the mode")
        self.m, self.top = m, lm + 1e-8
        self.a, self.la = _step_out(logf, m, lm, scale, -1.0)
        self.b, self.lb = _step_out(logf, m, lm, scale, 1.0)
        self.slope_left = (lm - self.la) / (m - self.a)
        self.slope_right = (self.lb - lm) / (self.b - m)
        self.lm = lm
        log_masses = np.array([
            self.la - self.top - math.log(self.slope_left),
            math.log(self.b - self.a),
            self.lb - self.top - math.log(-self.slope_right),
        ])
        self.piece_probs = np.exp(log_masses - log_masses.max())
        self.piece_probs /= self.piece_probs.sum()

    def log_envelope(self, x: float) -> float:
        if x < self.a:
            return self.lm + self.slope_left * (x - self.m)
        if x > self.b:
            return self.lm + self.slope_right * (x - self.m)
        return self.top

    def draw(self, rng: np.random.Generator) -> float:
        piece = int(np.searchsorted(np.cumsum(self.piece_probs), rng.random(), side="right"))
        if piece == 0:
            return self.a - rng.standard_exponential() / self.slope_left
        if piece == 2:
            return self.b + rng.standard_exponential() / -self.slope_right
        return self.a + rng.random() * (self.b - self.a)


def sample_log_concave(logf: LogDensity, rng: np.random.Generator, start: float = 0.0,
                       scale: float = 1.0, max_tries: int = 10_000) -> float:
    """Exact draw from the density proportional to ``exp(logf)``; ``logf`` concave."""
    env = LogConcaveEnvelope(logf, start, scale)
    for _ in range(max_tries):
        x = env.draw(rng)
        lx = logf(x)
        bound = env.log_envelope(x)
        if lx > bound + 1e-9:
            raise SamplerConvergenceError(f"log density exceeds its envelope at {x}; not log-concave")
        if math.log1p(-rng.random()) < lx - bound:
            return x
    raise SamplerConvergenceError(f"no acceptance within {max_tries} proposals")
