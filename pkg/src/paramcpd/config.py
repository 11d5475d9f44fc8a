"""Experiment configuration: a JSON-backed schema with strict validation.

Unknown keys are rejected so typos cannot silently fall back to defaults, and
every CLI command writes the resolved configuration next to its outputs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import LOW_HIGH_RANGES, PriorSpec
from .errors import ConfigError


@dataclass
class SimulatorBlock:
    dt: float = 0.01
    burn_in: int = 1000
    eta: float = 0.01
    divergence_bound: float = 1e6
    low_high_ranges: dict = field(
        default_factory=lambda: {k: [list(lo), list(hi)] for k, (lo, hi) in LOW_HIGH_RANGES.items()}
    )

    def ranges(self) -> dict:
        return {k: (tuple(v[0]), tuple(v[1])) for k, v in self.low_high_ranges.items()}


@dataclass
class DatasetBlock:
    n_pairs: int = 50000
    window_length: int = 100
    sim_steps: int = 1400
    prior_sigma: list = field(default_factory=lambda: [6.0, 16.0])
    prior_rho: list = field(default_factory=lambda: [22.0, 42.0])
    prior_beta: list = field(default_factory=lambda: [1.5, 4.0])
    n_sequences: int = 5
    n_segments: int = 12
    segment_length: int = 800
    n_stationary: int = 50
    stationary_length: int = 3000

    def prior(self) -> PriorSpec:
        return PriorSpec(tuple(self.prior_sigma), tuple(self.prior_rho), tuple(self.prior_beta))


@dataclass
class ModelBlock:
    hidden_sizes: list = field(default_factory=lambda: [256, 256])
    n_components: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    val_fraction: float = 0.1
    std_floor: float = 1e-4


@dataclass
class DetectionBlock:
    stride: int = 1
    m_samples: int = 256
    aggregator: str = "median"
    penalty_scale: float = 0.5
    min_size: int = 20
    smoothing_width: int = 5


@dataclass
class EvalBlock:
    deltas: list = field(default_factory=lambda: [2, 5, 10, 20, 40])
    reference_delta: int = 10


@dataclass
class PathsBlock:
    workdir: str = "runs"
    checkpoint: str = ""  # defaults to <workdir>/model.ckpt
    corpora: str = ""  # defaults to <workdir>/corpora
    results: str = ""  # defaults to <workdir>/results
    training_set: str = ""  # optional persisted training set
    checkpoint_by_w: dict = field(default_factory=dict)  # for the w sweep


@dataclass
class ExperimentConfig:
    seed: int = 0
    simulator: SimulatorBlock = field(default_factory=SimulatorBlock)
    dataset: DatasetBlock = field(default_factory=DatasetBlock)
    model: ModelBlock = field(default_factory=ModelBlock)
    detection: DetectionBlock = field(default_factory=DetectionBlock)
    eval: EvalBlock = field(default_factory=EvalBlock)
    paths: PathsBlock = field(default_factory=PathsBlock)

    def workdir(self):
        from pathlib import Path

        return Path(self.paths.workdir)

    def checkpoint_path(self):
        return self.workdir() / "model.ckpt" if not self.paths.checkpoint else _p(self.paths.checkpoint)

    def corpora_dir(self):
        return self.workdir() / "corpora" if not self.paths.corpora else _p(self.paths.corpora)

    def results_dir(self):
        return self.workdir() / "results" if not self.paths.results else _p(self.paths.results)

    def to_dict(self) -> dict:
        return jsonable(dataclasses.asdict(self))


def _p(s):
    from pathlib import Path

    return Path(s)


_BLOCKS = {
    "simulator": SimulatorBlock,
    "dataset": DatasetBlock,
    "model": ModelBlock,
    "detection": DetectionBlock,
    "eval": EvalBlock,
    "paths": PathsBlock,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    allowed = {"seed", *_BLOCKS}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    cfg = ExperimentConfig()
    if "seed" in data:
        if not isinstance(data["seed"], int) or data["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        cfg.seed = data["seed"]
    for name, cls in _BLOCKS.items():
        if name not in data:
            continue
        block_data = data[name]
        if not isinstance(block_data, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(block_data) - fields
        if unknown:
            raise ConfigError(f"unknown key(s) in config section {name!r}: {sorted(unknown)}")
        setattr(cfg, name, cls(**block_data))
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    try:
        prior = cfg.dataset.prior()
    except ValueError as exc:
        raise ConfigError(f"invalid prior: {exc}") from None
    if not (prior.widths() > 0).all():
        raise ConfigError("prior ranges must have lower < upper")
    if cfg.dataset.window_length < 2:
        raise ConfigError("dataset.window_length must be >= 2")
    if cfg.dataset.sim_steps < cfg.dataset.window_length + cfg.simulator.burn_in:
        raise ConfigError("dataset.sim_steps must be >= window_length + burn_in")
    if cfg.detection.aggregator not in ("median", "mean"):
        raise ConfigError("detection.aggregator must be 'median' or 'mean'")
    if cfg.detection.smoothing_width < 1 or cfg.detection.smoothing_width % 2 == 0:
        raise ConfigError("detection.smoothing_width must be a positive odd integer")
    if list(cfg.eval.deltas) != sorted(cfg.eval.deltas):
        raise ConfigError("eval.deltas must be ascending")
    for k in cfg.simulator.low_high_ranges:
        if k not in ("sigma", "rho", "beta"):
            raise ConfigError(f"unknown parameter kind in low_high_ranges: {k!r}")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return config_from_dict(data)


def jsonable(obj):
    """Recursively convert numpy scalars/arrays so json.dump stays deterministic."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")
