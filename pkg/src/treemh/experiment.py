"""Experiment configuration, multi-chain orchestration and run manifests.

Configs are INI files (``[graph]``, ``[run]``, ``[target]``, ``[kernel]``).
Relative paths are resolved against the config file's directory.  Each chain
gets a seed derived from the master seed and its index, writes its own trace
CSV and is timed so that runs on different graphs can be compared per unit of
compute rather than per iteration.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import sampler_fixed, sampler_rj
from .kernel import GaussianRandomWalk
from .markov_mesh import FIG_TEMPLATE, Template, load_image
from .mmm_moves import MmmSettings, run_mmm_chain
from .rng import derive_seed
from .targets import GaussianMixture1D, split_merge_reference, tailored_mixture_kernel
from .tree_graph import TreeGraph, build_symmetric_tree, read_graph_file

WORKERS_ENV = "TREEMH_WORKERS"
TARGETS = ("toy-mixture", "split-merge", "mmm")
KERNELS = ("tailored", "random-walk", "split-merge")


class ConfigError(ValueError):
    pass


_DEFAULT_TEMPLATE = ",".join(f"{a}:{b}" for a, b in FIG_TEMPLATE)


@dataclass
class ExperimentConfig:
    L: int | None = None
    N: int | None = None
    graph_file: str | None = None
    chains: int = 1
    iterations: int = 1000
    seed: int = 0
    burn_in: int = 0
    eta: float = 0.3
    output: str = "output"
    verify: bool = False
    target: str = "toy-mixture"
    image: str | None = None
    mask: str | None = None
    template: str = _DEFAULT_TEMPLATE
    kappa: float = 1.0
    c: float = 1.0
    sigma_theta: float = 10.0
    pilot_count: int = 10
    abs_removal_score: bool = False
    theta_weight: float = 0.5
    kernel: str = "tailored"
    scale: float = 1.0
    base_dir: str = field(default=".", repr=False, compare=False)

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def graph(self) -> TreeGraph:
        if self.graph_file is not None:
            return read_graph_file(self.resolve(self.graph_file))
        return build_symmetric_tree(self.L, self.N)

    def mmm_settings(self) -> MmmSettings:
        return MmmSettings(Template.parse(self.template), self.c, self.sigma_theta, self.kappa,
                           self.pilot_count, self.abs_removal_score, self.theta_weight)


# section -> key -> (field name, type)
_SCHEMA: dict[str, dict[str, tuple[str, type]]] = {
    "graph": {"l": ("L", int), "n": ("N", int), "file": ("graph_file", str)},
    "run": {"chains": ("chains", int), "iterations": ("iterations", int), "seed": ("seed", int),
            "burn_in": ("burn_in", int), "eta": ("eta", float), "output": ("output", str),
            "verify": ("verify", bool)},
    "target": {"type": ("target", str), "image": ("image", str), "mask": ("mask", str),
               "template": ("template", str), "kappa": ("kappa", float), "c": ("c", float),
               "sigma_theta": ("sigma_theta", float), "pilot_count": ("pilot_count", int),
               "abs_removal_score": ("abs_removal_score", bool), "theta_weight": ("theta_weight", float)},
    "kernel": {"type": ("kernel", str), "scale": ("scale", float)},
}


def _convert(section: str, key: str, raw: str, kind: type) -> Any:
    try:
        if kind is bool:
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}") from exc


def parse_config_text(text: str, base_dir: str | Path = ".") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values: dict[str, Any] = {}
    for section in cp.sections():
        schema = _SCHEMA.get(section)
        if schema is None:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in schema:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            name, kind = schema[key]
            values[name] = _convert(section, key, raw, kind)
    cfg = ExperimentConfig(**values, base_dir=str(base_dir))
    validate_config(cfg)
    return cfg


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, path.parent)


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.graph_file is None:
        if cfg.L is None or cfg.N is None:
            raise ConfigError("[graph] needs both 'L' and 'N', or 'file'")
        if cfg.L < 1 or cfg.N < 1:
            raise ConfigError("[graph] L and N must be positive")
    elif not cfg.resolve(cfg.graph_file).is_file():
        raise ConfigError(f"[graph] file: {cfg.graph_file} does not exist")
    for name in ("chains", "iterations", "pilot_count"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be positive")
    if cfg.burn_in < 0 or cfg.burn_in >= cfg.iterations:
        raise ConfigError("[run] burn_in must lie in 0..iterations-1")
    if not 0.0 <= cfg.eta <= 1.0:
        raise ConfigError("[run] eta must lie in [0, 1]")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("[run] seed must be a 64-bit unsigned integer")
    if cfg.target not in TARGETS:
        raise ConfigError(f"[target] type must be one of {', '.join(TARGETS)}")
    if cfg.kernel not in KERNELS:
        raise ConfigError(f"[kernel] type must be one of {', '.join(KERNELS)}")
    if cfg.scale <= 0:
        raise ConfigError("[kernel] scale must be positive")
    if cfg.target == "mmm":
        if cfg.image is None:
            raise ConfigError("[target] image is required for the mmm target")
        for key in ("image", "mask"):
            p = getattr(cfg, key)
            if p is not None and not cfg.resolve(p).is_file():
                raise ConfigError(f"[target] {key}: {p} does not exist")
        if cfg.c < 0 or cfg.sigma_theta <= 0 or cfg.kappa < 0:
            raise ConfigError("[target] need c >= 0, sigma_theta > 0, kappa >= 0")
        if cfg.pilot_count < 2:
            raise ConfigError("[target] pilot_count must be at least 2")
        if not 0.0 < cfg.theta_weight < 1.0:
            raise ConfigError("[target] theta_weight must lie strictly between 0 and 1")
        Template.parse(cfg.template)


def serialize_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for section, schema in _SCHEMA.items():
        items = {}
        for key, (name, kind) in schema.items():
            v = getattr(cfg, name)
            if v is None:
                continue
            items[key] = str(v).lower() if kind is bool else (repr(v) if kind is float else str(v))
        if items:
            cp[section] = items
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def workers_from_env(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be positive")
    return n


@dataclass
class ChainRecord:
    chain: int
    seed: int
    trace: str
    start: float = 0.0
    end: float = 0.0
    seconds_per_iteration: float = 0.0
    max_abs_A_minus_1: float | None = None


@dataclass
class RunManifest:
    config_hash: str
    n_vertices: int
    proposals_per_iteration: int
    iterations: int
    chains: list[ChainRecord]
    status: str = "ok"
    error: str | None = None

    @property
    def seconds_per_iteration(self) -> float:
        vals = [c.seconds_per_iteration for c in self.chains if c.seconds_per_iteration > 0]
        return float(np.mean(vals)) if vals else 0.0

    def to_json(self) -> str:
        d = asdict(self)
        d["seconds_per_iteration"] = self.seconds_per_iteration
        return json.dumps(d, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        d.pop("seconds_per_iteration", None)
        d["chains"] = [ChainRecord(**c) for c in d["chains"]]
        return cls(**d)


def chain_seeds(cfg: ExperimentConfig) -> list[int]:
    return [derive_seed(cfg.seed, c) for c in range(cfg.chains)]


def trace_path(cfg: ExperimentConfig, chain: int) -> Path:
    return cfg.resolve(cfg.output) / f"chain_{chain}.csv"


def _toy_kernel(cfg: ExperimentConfig, target: GaussianMixture1D):
    if cfg.kernel == "tailored":
        return tailored_mixture_kernel(target)
    if cfg.kernel == "random-walk":
        return GaussianRandomWalk(cfg.scale)
    raise ConfigError(f"kernel {cfg.kernel!r} does not apply to the toy-mixture target")


def run_single_chain(cfg: ExperimentConfig, chain: int, verify: bool | None = None) -> ChainRecord:
    """Run chain ``chain`` of ``cfg`` and write its trace CSV."""
    seed = derive_seed(cfg.seed, chain)
    path = trace_path(cfg, chain)
    graph = cfg.graph()
    verify = cfg.verify if verify is None else verify
    rec = ChainRecord(chain, seed, str(path), start=time.time())
    t0 = time.perf_counter()
    if cfg.target == "toy-mixture":
        target = GaussianMixture1D()
        sampler_fixed.run_chain(graph, _toy_kernel(cfg, target), target, np.zeros(1), cfg.iterations,
                                seed, trace_path=path, chain_id=chain)
    elif cfg.target == "split-merge":
        target, K, x0 = split_merge_reference()
        tr = sampler_rj.run_chain(graph, K, target, x0, cfg.iterations, seed, verify=verify,
                                  trace_path=path, chain_id=chain)
        rec.max_abs_A_minus_1 = tr.metadata["max_abs_A_minus_1"] if verify else None
    else:
        image = load_image(cfg.resolve(cfg.image), cfg.resolve(cfg.mask))
        res = run_mmm_chain(graph, image, cfg.mmm_settings(), cfg.iterations, seed, verify=verify,
                            trace_path=path, chain_id=chain)
        if verify:
            rec.max_abs_A_minus_1 = res.trace.metadata.get("max_abs_A_minus_1", 0.0)
    rec.seconds_per_iteration = (time.perf_counter() - t0) / cfg.iterations
    rec.end = time.time()
    return rec


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> RunManifest:
    """Run every chain (in a process pool when ``workers > 1``) and write ``manifest.json``.

    Trace files depend only on the config, never on ``workers``.  If a chain
    fails, the traces written so far are kept, the manifest is marked failed
    and the error is re-raised.
    """
    workers = workers_from_env() if workers is None else workers
    graph = cfg.graph()
    out = cfg.resolve(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config_hash(cfg), graph.n, graph.n - 1, cfg.iterations,
                           [ChainRecord(c, s, str(trace_path(cfg, c))) for c, s in enumerate(chain_seeds(cfg))])
    try:
        if workers > 1 and cfg.chains > 1:
            with ProcessPoolExecutor(max_workers=min(workers, cfg.chains)) as pool:
                records = list(pool.map(run_single_chain, [cfg] * cfg.chains, range(cfg.chains)))
        else:
            records = [run_single_chain(cfg, c) for c in range(cfg.chains)]
        manifest.chains = records
    except Exception as exc:
        manifest.status = "failed"
        manifest.error = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        (out / "manifest.json").write_text(manifest.to_json())
    return manifest


@dataclass(frozen=True)
class VerifyReport:
    max_abs_A_minus_1: float
    k_updates: int
    seconds: float
    passed: bool


def verify_appendix(cfg: ExperimentConfig, tol: float = 1e-8) -> VerifyReport:
    """Run the reversible-jump sampler with the root-move acceptance ratio
    evaluated at every iteration; ``passed`` when every ``|A - 1| < tol``.

    Uses the split/merge reference target unless the config selects the
    image model.
    """
    graph = cfg.graph()
    t0 = time.perf_counter()
    worst = 0.0
    for chain in range(cfg.chains):
        seed = derive_seed(cfg.seed, chain)
        if cfg.target == "mmm":
            image = load_image(cfg.resolve(cfg.image), cfg.resolve(cfg.mask))
            tr = run_mmm_chain(graph, image, cfg.mmm_settings(), cfg.iterations, seed, verify=True,
                               tol=math.inf).trace
        else:
            target, K, x0 = split_merge_reference()
            tr = sampler_rj.run_chain(graph, K, target, x0, cfg.iterations, seed, verify=True, tol=math.inf)
        worst = max(worst, max(r.scalars["max_abs_A_minus_1"] for r in tr.records))
    return VerifyReport(worst, cfg.chains * cfg.iterations, time.perf_counter() - t0, worst < tol)
