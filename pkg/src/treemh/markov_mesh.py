"""Markov mesh models on binary lattices.

Each pixel ``v`` depends on its sequential neighbourhood ``(v + tau)``
truncated to the lattice, where the template ``tau`` only holds offsets of
lexicographic predecessors.  Given the set ``lambda`` of template offsets whose
pixels are on, ``P(y_v = 1) = sigmoid(theta(lambda))`` with
``theta(lambda) = sum of beta(mu) over mu subset of lambda``.  Only a dense
(downward closed) set of interactions carries non-zero ``beta``.

Subsets of the template are bit masks: bit ``b`` stands for
``template.offsets[b]``.  The empty interaction is mask 0 and is always
active.  The likelihood only depends on the image through the number of
pixels (and of ``on`` pixels) seen with each neighbourhood configuration, so
it is evaluated from those counts with a subset-sum transform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

Offset = tuple[int, int]

FIG_TEMPLATE: tuple[Offset, ...] = ((0, -1), (-1, -1), (-1, 0), (-1, 1))


class ModelError(ValueError):
    pass


class ImageFormatError(ValueError):
    pass


def _is_predecessor(o: Offset) -> bool:
    di, dj = o
    return di < 0 or (di == 0 and dj < 0)


@dataclass(frozen=True)
class Template:
    offsets: tuple[Offset, ...]

    def __post_init__(self):
        offs = tuple(sorted((int(a), int(b)) for a, b in self.offsets))
        if len(set(offs)) != len(offs):
            raise ModelError("template offsets must be distinct")
        for o in offs:
            if not _is_predecessor(o):
                raise ModelError(f"offset {o} is not a lexicographic predecessor")
        object.__setattr__(self, "offsets", offs)

    @classmethod
    def parse(cls, text: str) -> "Template":
        """``"0:-1,-1:0"`` style, comma or whitespace separated."""
        parts = [p for p in text.replace(",", " ").split() if p]
        return cls(tuple(_parse_offset(p) for p in parts))

    def __str__(self) -> str:
        return ",".join(_fmt_offset(o) for o in self.offsets)

    @property
    def size(self) -> int:
        return len(self.offsets)

    @property
    def n_masks(self) -> int:
        return 1 << len(self.offsets)

    def mask_of(self, offsets: Iterable[Offset]) -> int:
        m = 0
        for o in offsets:
            try:
                m |= 1 << self.offsets.index(tuple(o))
            except ValueError as exc:
                raise ModelError(f"offset {o} not in template") from exc
        return m

    def offsets_of(self, mask: int) -> tuple[Offset, ...]:
        return tuple(o for b, o in enumerate(self.offsets) if mask >> b & 1)


def _parse_offset(text: str) -> Offset:
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError as exc:
        raise ModelError(f"bad offset {text!r}; expected 'di:dj'") from exc


def _fmt_offset(o: Offset) -> str:
    return f"{o[0]}:{o[1]}"


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def submasks(mask: int) -> list[int]:
    out, s = [], mask
    while True:
        out.append(s)
        if s == 0:
            return out
        s = (s - 1) & mask


def interaction_label(t: Template, mask: int) -> str:
    return "+".join(_fmt_offset(o) for o in t.offsets_of(mask)) if mask else "e"


def canonical_key(t: Template, mask: int) -> tuple:
    return (popcount(mask), t.offsets_of(mask))


def is_dense(masks: Iterable[int]) -> bool:
    s = set(masks)
    return all(mask & ~(1 << b) in s for mask in s for b in range(mask.bit_length()) if mask >> b & 1)


def removable_masks(t: Template, masks: Iterable[int]) -> list[int]:
    """Non-empty members whose removal keeps the set dense, in canonical order."""
    s = set(masks)
    out = [m for m in s if m and not any(o != m and o & m == m for o in s)]
    return sorted(out, key=lambda m: canonical_key(t, m))


def addable_masks(t: Template, masks: Iterable[int]) -> list[int]:
    """Non-members whose addition keeps the set dense, in canonical order."""
    s = set(masks)
    out = [m for m in range(t.n_masks)
           if m not in s and all(m & ~(1 << b) in s for b in range(t.size) if m >> b & 1)]
    return sorted(out, key=lambda m: canonical_key(t, m))


def zeta(values: np.ndarray) -> np.ndarray:
    """``out[m] = sum of values[s] over submasks s of m``."""
    out = np.array(values, dtype=float)
    n = out.size
    b = 1
    while b < n:
        v = out.reshape(-1, 2, b)
        v[:, 1, :] += v[:, 0, :]
        b <<= 1
    return out


def moebius(values: np.ndarray) -> np.ndarray:
    """Inverse of :func:`zeta`."""
    out = np.array(values, dtype=float)
    n = out.size
    b = 1
    while b < n:
        v = out.reshape(-1, 2, b)
        v[:, 1, :] -= v[:, 0, :]
        b <<= 1
    return out


@dataclass(frozen=True)
class MmmParams:
    """Template, dense active set and the interaction parameters ``beta``.

    ``beta`` holds ``(mask, value)`` pairs in canonical order (size first,
    then sorted offsets); its masks are the active set.
    """

    template: Template
    beta: tuple[tuple[int, float], ...]

    def __post_init__(self):
        t = self.template
        pairs = sorted(((int(m), float(v)) for m, v in self.beta), key=lambda p: canonical_key(t, p[0]))
        masks = [m for m, _ in pairs]
        if len(set(masks)) != len(masks):
            raise ModelError("duplicate interaction")
        if 0 not in masks:
            raise ModelError("the empty interaction must be active")
        if any(not 0 <= m < t.n_masks for m in masks):
            raise ModelError("interaction outside the template")
        if not is_dense(masks):
            raise ModelError("active interactions are not dense")
        object.__setattr__(self, "beta", tuple(pairs))

    @classmethod
    def from_map(cls, template: Template, beta: Mapping[int, float]) -> "MmmParams":
        return cls(template, tuple(beta.items()))

    @classmethod
    def intercept_only(cls, template: Template, value: float = 0.0) -> "MmmParams":
        return cls(template, ((0, value),))

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(m for m, _ in self.beta)

    @property
    def beta_map(self) -> dict[int, float]:
        return dict(self.beta)

    @property
    def dim(self) -> int:
        return len(self.beta)

    @cached_property
    def beta_full(self) -> np.ndarray:
        out = np.zeros(self.template.n_masks)
        for m, v in self.beta:
            out[m] = v
        return out

    @cached_property
    def theta_full(self) -> np.ndarray:
        """``theta`` for every configuration mask."""
        return zeta(self.beta_full)

    def theta_active(self) -> np.ndarray:
        return self.theta_full[list(self.active)]

    @cached_property
    def model_id(self) -> str:
        return "|".join(interaction_label(self.template, m) for m in self.active)

    def with_beta(self, mask: int, value: float) -> "MmmParams":
        b = self.beta_map
        b[mask] = value
        return MmmParams.from_map(self.template, b)

    def without(self, mask: int) -> "MmmParams":
        b = self.beta_map
        del b[mask]
        return MmmParams.from_map(self.template, b)

    def with_theta_active(self, theta: Sequence[float]) -> "MmmParams":
        beta = beta_from_theta(self.template, dict(zip(self.active, (float(v) for v in theta))))
        return MmmParams.from_map(self.template, beta)

    def distance(self, other: "MmmParams") -> float:
        if self.template != other.template or self.active != other.active:
            return math.inf
        return max(abs(a - b) for (_, a), (_, b) in zip(self.beta, other.beta))


def theta_from_beta(p: MmmParams, mask: int) -> float:
    """``theta(lambda) = sum of beta over subsets of lambda`` (zero off the active set)."""
    b = p.beta_map
    return float(sum(b.get(s, 0.0) for s in submasks(mask)))


def beta_from_theta(t: Template, theta: Mapping[int, float]) -> dict[int, float]:
    """Invert :func:`theta_from_beta` on a dense set given ``theta`` on that set."""
    full = np.zeros(t.n_masks)
    for m, v in theta.items():
        full[m] = v
    beta = moebius(full)
    return {m: float(beta[m]) for m in theta}


@dataclass(frozen=True)
class BinaryImage:
    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        o = np.asarray(self.observed, dtype=bool)
        if v.ndim != 2 or v.shape != o.shape:
            raise ImageFormatError(f"values {v.shape} and mask {o.shape} must be equal 2-d shapes")
        if not np.isin(v, (0, 1)).all():
            raise ImageFormatError("pixel values must be 0 or 1")
        if not o.any():
            raise ImageFormatError("at least one node must be observed")
        v = v.astype(np.uint8)
        v.setflags(write=False)
        o = o.copy()
        o.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "observed", o)

    @classmethod
    def fully_observed(cls, values) -> "BinaryImage":
        v = np.asarray(values)
        return cls(v, np.ones(v.shape, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray) -> "BinaryImage":
        return BinaryImage(values, self.observed)

    def __eq__(self, other) -> bool:
        return (isinstance(other, BinaryImage) and np.array_equal(self.values, other.values)
                and np.array_equal(self.observed, other.observed))

    __hash__ = None


def neighbour_masks(values: np.ndarray, t: Template) -> np.ndarray:
    """Configuration mask of every pixel; neighbours off the lattice count as off."""
    rows, cols = values.shape
    out = np.zeros((rows, cols), dtype=np.int64)
    for b, (di, dj) in enumerate(t.offsets):
        shifted = np.zeros((rows, cols), dtype=np.int64)
        r0, r1 = max(0, -di), min(rows, rows - di)
        c0, c1 = max(0, -dj), min(cols, cols - dj)
        if r0 < r1 and c0 < c1:
            shifted[r0:r1, c0:c1] = values[r0 + di:r1 + di, c0 + dj:c1 + dj]
        out |= shifted << b
    return out


def configuration_counts(values: np.ndarray, t: Template) -> tuple[np.ndarray, np.ndarray]:
    """``(n_on, n_total)`` per configuration mask."""
    masks = neighbour_masks(values, t).ravel()
    n = np.bincount(masks, minlength=t.n_masks).astype(float)
    n_on = np.bincount(masks, weights=values.ravel().astype(float), minlength=t.n_masks)
    return n_on, n


def _softplus(x):
    return np.logaddexp(0.0, x)


def _node_term(y: int, theta: float) -> float:
    return y * theta - (max(theta, 0.0) + math.log1p(math.exp(-abs(theta))))


def node_log_prob(image: BinaryImage, v: tuple[int, int], p: MmmParams) -> float:
    i, j = v
    rows, cols = image.shape
    if not (0 <= i < rows and 0 <= j < cols):
        raise ModelError(f"node {v} outside the {rows}x{cols} lattice")
    on = []
    for di, dj in p.template.offsets:
        a, b = i + di, j + dj
        if 0 <= a < rows and 0 <= b < cols and image.values[a, b]:
            on.append((di, dj))
    return _node_term(int(image.values[i, j]), theta_from_beta(p, p.template.mask_of(on)))


def loglik_from_counts(n_on: np.ndarray, n: np.ndarray, theta_full: np.ndarray) -> float:
    return float(n_on @ theta_full - n @ _softplus(theta_full))


def image_log_likelihood(image: BinaryImage, p: MmmParams) -> float:
    n_on, n = configuration_counts(image.values, p.template)
    return loglik_from_counts(n_on, n, p.theta_full)


def _log_normal0(x, sigma: float):
    return -0.5 * (np.asarray(x) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)


def log_prior(p: MmmParams, c: float = 1.0, sigma_theta: float = 10.0) -> float:
    """``-c |Lambda| + sum over Lambda of log N(theta(lambda); 0, sigma_theta^2)``."""
    if c < 0 or sigma_theta <= 0:
        raise ModelError("need c >= 0 and sigma_theta > 0")
    return float(-c * p.dim + _log_normal0(p.theta_active(), sigma_theta).sum())


def log_posterior(image: BinaryImage, p: MmmParams, c: float = 1.0, sigma_theta: float = 10.0) -> float:
    return log_prior(p, c, sigma_theta) + image_log_likelihood(image, p)


@dataclass(frozen=True)
class LogPosterior:
    """Log posterior of the parameters for one fixed image, from its configuration counts."""

    template: Template
    n_on: np.ndarray
    n: np.ndarray
    c: float = 1.0
    sigma_theta: float = 10.0

    def __post_init__(self):
        if self.c < 0 or self.sigma_theta <= 0:
            raise ModelError("need c >= 0 and sigma_theta > 0")

    @classmethod
    def from_image(cls, image: BinaryImage, template: Template, c: float = 1.0,
                   sigma_theta: float = 10.0) -> "LogPosterior":
        n_on, n = configuration_counts(image.values, template)
        return cls(template, n_on, n, c, sigma_theta)

    def __call__(self, p: MmmParams) -> float:
        if p.template != self.template:
            raise ModelError("parameter template differs from the target's")
        theta = p.theta_full
        prior = -self.c * p.dim + float(_log_normal0(theta[list(p.active)], self.sigma_theta).sum())
        return prior + loglik_from_counts(self.n_on, self.n, theta)

    def along(self, active: Sequence[int], beta_full: np.ndarray, direction_full: np.ndarray):
        """``alpha -> log posterior`` on the line ``beta + alpha * direction`` with active set ``active``."""
        idx = list(active)
        theta0, d = zeta(beta_full), zeta(direction_full)
        keep = self.n > 0
        n_on, n, t0, dd = self.n_on[keep], self.n[keep], theta0[keep], d[keep]
        a0, ad = theta0[idx], d[idx]
        const = -self.c * len(idx) - len(idx) * (math.log(self.sigma_theta) + 0.5 * math.log(2 * math.pi))
        s2 = 2.0 * self.sigma_theta ** 2

        # the prior term is a quadratic in alpha
        qa, qb, qc = float(a0 @ a0) / s2, 2.0 * float(a0 @ ad) / s2, float(ad @ ad) / s2
        if n.size > 16:
            def f(alpha: float) -> float:
                th = t0 + alpha * dd
                return float(const - (qa + alpha * (qb + alpha * qc)) + n_on @ th - n @ np.logaddexp(0.0, th))
            return f

        # tiny templates: plain float arithmetic beats numpy call overhead
        rows = list(zip(n_on.tolist(), n.tolist(), t0.tolist(), dd.tolist()))
        exp, log1p = math.exp, math.log1p

        def f(alpha: float) -> float:
            total = const - (qa + alpha * (qb + alpha * qc))
            for k1, k, th0, dk in rows:
                th = th0 + alpha * dk
                total += k1 * th - k * (th + log1p(exp(-th)) if th > 0 else log1p(exp(th)))
            return total

        return f


def _local_mask(y, i: int, j: int, offsets: Sequence[Offset], rows: int, cols: int) -> int:
    m = 0
    for b, (di, dj) in enumerate(offsets):
        a, c = i + di, j + dj
        if 0 <= a < rows and 0 <= c < cols and y[a][c]:
            m |= 1 << b
    return m


def _log_odds(y, i: int, j: int, offsets: Sequence[Offset], theta: Sequence[float],
              rows: int, cols: int) -> float:
    """``log P(y_v = 1 | rest) - log P(y_v = 0 | rest)`` on a list-of-lists grid.

    Only the factor of ``v`` and those of the pixels ``w = v - o`` for
    template offsets ``o`` depend on ``y_v``; in the factor of ``w``, ``v``
    is the bit of ``o``.
    """
    diff = theta[_local_mask(y, i, j, offsets, rows, cols)]
    for b, (di, dj) in enumerate(offsets):
        a, c = i - di, j - dj
        if 0 <= a < rows and 0 <= c < cols:
            m = _local_mask(y, a, c, offsets, rows, cols) & ~(1 << b)
            yw = y[a][c]
            diff += _node_term(yw, theta[m | 1 << b]) - _node_term(yw, theta[m])
    return diff


def _sigmoid(t: float) -> float:
    if t < -700:
        return 0.0
    return 1.0 / (1.0 + math.exp(-t))


def pixel_conditional(y: np.ndarray, v: tuple[int, int], p: MmmParams) -> float:
    """``P(y_v = 1 | all other pixels)``.  ``y`` is not modified."""
    rows, cols = y.shape
    grid = np.asarray(y).tolist()
    return _sigmoid(_log_odds(grid, v[0], v[1], p.template.offsets, p.theta_full.tolist(), rows, cols))


def gibbs_unobserved(image: BinaryImage, p: MmmParams, rng: np.random.Generator) -> BinaryImage:
    """Raster-scan single-site Gibbs update of every unobserved pixel."""
    rows, cols = image.shape
    grid = image.values.tolist()
    offsets, theta = p.template.offsets, p.theta_full.tolist()
    for i, j in zip(*np.nonzero(~image.observed)):
        i, j = int(i), int(j)
        grid[i][j] = 1 if rng.random() < _sigmoid(_log_odds(grid, i, j, offsets, theta, rows, cols)) else 0
    return image.with_values(np.array(grid, dtype=np.uint8))


def simulate_image(p: MmmParams, rows: int, cols: int, rng: np.random.Generator,
                   border: int = 1) -> BinaryImage:
    """Sequential simulation in raster order; a ``border``-wide ring is marked unobserved."""
    t = p.template
    theta = p.theta_full
    y = np.zeros((rows, cols), dtype=np.uint8)
    for i in range(rows):
        for j in range(cols):
            m = 0
            for b, (di, dj) in enumerate(t.offsets):
                a, c = i + di, j + dj
                if 0 <= a < rows and 0 <= c < cols and y[a, c]:
                    m |= 1 << b
            y[i, j] = 1 if rng.random() < 1.0 / (1.0 + math.exp(-theta[m])) else 0
    observed = np.zeros((rows, cols), dtype=bool)
    observed[border:rows - border, border:cols - border] = True
    return BinaryImage(y, observed)


def _pbm_tokens(path: Path) -> list[str]:
    tokens = []
    for line in path.read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    return tokens


def read_pbm(path: str | Path) -> np.ndarray:
    """Plain (P1) PBM; pixel digits may be run together."""
    path = Path(path)
    tokens = _pbm_tokens(path)
    if not tokens or tokens[0] != "P1":
        raise ImageFormatError(f"{path}: not a plain P1 PBM")
    try:
        cols, rows = int(tokens[1]), int(tokens[2])
    except (IndexError, ValueError) as exc:
        raise ImageFormatError(f"{path}: bad PBM header") from exc
    digits = "".join(tokens[3:])
    if len(digits) != rows * cols or set(digits) - {"0", "1"}:
        raise ImageFormatError(f"{path}: expected {rows * cols} binary pixels, got {len(digits)}")
    return np.array([int(c) for c in digits], dtype=np.uint8).reshape(rows, cols)


def write_pbm(values: np.ndarray, path: str | Path) -> None:
    rows, cols = values.shape
    lines = ["P1", f"{cols} {rows}"] + [" ".join(str(int(v)) for v in row) for row in values]
    Path(path).write_text("\n".join(lines) + "\n")


def load_image(pbm_path: str | Path, mask_path: str | Path | None = None) -> BinaryImage:
    """Image plus optional observation mask (same P1 format, ``1`` = observed)."""
    values = read_pbm(pbm_path)
    if mask_path is None:
        return BinaryImage.fully_observed(values)
    mask = read_pbm(mask_path)
    if mask.shape != values.shape:
        raise ImageFormatError(f"mask shape {mask.shape} differs from image shape {values.shape}")
    return BinaryImage(values, mask.astype(bool))


def save_image(image: BinaryImage, pbm_path: str | Path, mask_path: str | Path) -> None:
    write_pbm(image.values, pbm_path)
    write_pbm(image.observed.astype(np.uint8), mask_path)


def format_model(p: MmmParams) -> str:
    """One line per active interaction: ``<offsets> <beta>``, after a template line."""
    lines = [f"template {p.template}"]
    lines += [f"{interaction_label(p.template, m)} {v!r}" for m, v in p.beta]
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> MmmParams:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("template"):
        raise ModelError("model snapshot must start with a template line")
    t = Template.parse(lines[0][len("template"):])
    beta = {}
    for ln in lines[1:]:
        label, value = ln.split()
        mask = 0 if label == "e" else t.mask_of(_parse_offset(x) for x in label.split("+"))
        beta[mask] = float(value)
    return MmmParams.from_map(t, beta)
