"""Run configuration: YAML/JSON documents with built-in defaults (the toy profile)."""

from __future__ import annotations

import hashlib
import json
import os
import typing
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Optional

import yaml

from src.errors import ConfigError

DEFAULT_CONFIG_FILE = "config.yml"

DEFAULT_SPARSITIES = (
    0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10,
    0.20, 0.30, 0.40, 0.50,
)
DEFAULT_LAMBDAS = (0.25, 0.5, 0.75)

_DTYPES = ("float32", "float64")


@dataclass(frozen=True)
class ModelConfig:
    """Shape and initialization of the encoder.

    layer_heads / layer_ffn_dims are only set on compacted models, where
    each layer may keep a different number of heads and neurons.
    """
    vocab_size: int = 2000
    max_seq_len: int = 32
    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    head_dim: int = 16
    ffn_dim: int = 256
    dropout_rate: float = 0.1
    seed: int = 1234
    dtype: str = "float32"
    layer_heads: Optional[tuple[int, ...]] = None
    layer_ffn_dims: Optional[tuple[int, ...]] = None

    def validate(self) -> None:
        for name in ("vocab_size", "max_seq_len", "hidden_dim", "num_layers",
                     "num_heads", "head_dim", "ffn_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} must be positive, got {getattr(self, name)}")
        if self.hidden_dim != self.num_heads * self.head_dim:
            raise ConfigError(
                f"model.hidden_dim ({self.hidden_dim}) must equal num_heads x head_dim "
                f"({self.num_heads} x {self.head_dim})"
            )
        if self.max_seq_len < 2:
            raise ConfigError("model.max_seq_len must be >= 2 (CLS plus one token)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"model.dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("model.seed must be a 64-bit unsigned integer")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"model.dtype must be one of {_DTYPES}, got {self.dtype!r}")
        for name, limit in (("layer_heads", self.num_heads), ("layer_ffn_dims", self.ffn_dim)):
            counts = getattr(self, name)
            if counts is None:
                continue
            if len(counts) != self.num_layers:
                raise ConfigError(f"model.{name} needs one entry per layer")
            if any(c < 0 or c > limit for c in counts):
                raise ConfigError(f"model.{name} entries must lie in [0, {limit}]")

    def heads_at(self, layer: int) -> int:
        if self.layer_heads is None:
            return self.num_heads
        return self.layer_heads[layer]

    def ffn_at(self, layer: int) -> int:
        if self.layer_ffn_dims is None:
            return self.ffn_dim
        return self.layer_ffn_dims[layer]

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    temperature: float = 0.05
    learning_rate: float = 3e-4
    pretrain_learning_rate: float = 1e-3
    batch_size: int = 32
    steps: int = 1000
    pretrain_steps: int = 500
    rewind_step: Optional[int] = None
    mask_prob: float = 0.15
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 1234
    log_every: int = 50

    @property
    def resolved_rewind_step(self) -> int:
        if self.rewind_step is None:
            return self.pretrain_steps // 10
        return self.rewind_step

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ConfigError(f"train.temperature must be > 0, got {self.temperature}")
        if self.learning_rate <= 0 or self.pretrain_learning_rate <= 0:
            raise ConfigError("train learning rates must be > 0")
        if self.batch_size < 2:
            raise ConfigError(
                f"train.batch_size must be >= 2 for in-batch negatives, got {self.batch_size}"
            )
        if self.steps <= 0 or self.pretrain_steps <= 0:
            raise ConfigError("train.steps and train.pretrain_steps must be positive")
        if not 0 <= self.resolved_rewind_step < self.pretrain_steps:
            raise ConfigError(
                f"train.rewind_step ({self.resolved_rewind_step}) must lie in "
                f"[0, pretrain_steps={self.pretrain_steps})"
            )
        if not 0.0 < self.mask_prob < 1.0:
            raise ConfigError("train.mask_prob must be in (0, 1)")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.eps > 0):
            raise ConfigError("train Adam hyperparameters out of range")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay must be >= 0")
        if self.log_every <= 0:
            raise ConfigError("train.log_every must be positive")


@dataclass(frozen=True)
class ScoreConfig:
    lam: float = 0.5
    batch_size: int = 16
    normalize_embeddings: bool = True
    eps_log: float = 1e-12

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"score.lam must be in [0, 1], got {self.lam}")
        if self.batch_size < 1:
            raise ConfigError("score.batch_size must be >= 1")
        if self.eps_log <= 0:
            raise ConfigError("score.eps_log must be > 0")


@dataclass(frozen=True)
class PruneConfig:
    sparsity: float = 0.1

    def validate(self) -> None:
        if not 0.0 <= self.sparsity < 1.0:
            raise ConfigError(f"prune.sparsity must be in [0, 1), got {self.sparsity}")


@dataclass(frozen=True)
class SweepConfig:
    sparsities: tuple[float, ...] = DEFAULT_SPARSITIES
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    rewind: bool = True
    jobs: int = 1

    def validate(self) -> None:
        if not self.sparsities or not self.lambdas:
            raise ConfigError("sweep.sparsities and sweep.lambdas must be nonempty")
        for s in self.sparsities:
            PruneConfig(sparsity=s).validate()
        for lam in self.lambdas:
            ScoreConfig(lam=lam).validate()
        if self.jobs < 1:
            raise ConfigError("sweep.jobs must be >= 1")


@dataclass(frozen=True)
class ProbeConfig:
    iterations: int = 500
    learning_rate: float = 0.5
    seed: int = 0
    test_fraction: float = 0.5

    def validate(self) -> None:
        if self.iterations <= 0 or self.learning_rate <= 0:
            raise ConfigError("probe.iterations and probe.learning_rate must be positive")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("probe.test_fraction must be in (0, 1)")


@dataclass(frozen=True)
class EvalConfig:
    alignment_threshold: float = 4.0

    def validate(self) -> None:
        if not 0.0 <= self.alignment_threshold <= 5.0:
            raise ConfigError("eval.alignment_threshold must be in [0, 5]")


@dataclass(frozen=True)
class DataConfig:
    corpus: str = "data/corpus.txt"
    scoring_pairs: str = "data/sts_dev.tsv"
    eval_pairs: str = "data/sts_test.tsv"
    labeled: Optional[str] = "data/labeled.tsv"

    def validate(self) -> None:
        pass


@dataclass(frozen=True)
class PathsConfig:
    workdir: str = "runs/default"

    def validate(self) -> None:
        if not self.workdir:
            raise ConfigError("paths.workdir must be set")


@dataclass(frozen=True)
class GenConfig:
    out: str = "data"
    sentences: int = 2000
    seed: int = 7

    def validate(self) -> None:
        if self.sentences < 100:
            raise ConfigError(f"gen.sentences must be >= 100, got {self.sentences}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    gen: GenConfig = field(default_factory=GenConfig)

    def validate(self) -> "RunConfig":
        for f in fields(self):
            getattr(self, f.name).validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, raw: Optional[dict]) -> "RunConfig":
        raw = raw or {}
        if not isinstance(raw, dict):
            raise ConfigError("configuration document must be a mapping")
        sections = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        built = {}
        hints = typing.get_type_hints(cls)
        for name in sections:
            section_cls = hints[name]
            built[name] = _build_section(name, section_cls, raw.get(name) or {})
        return cls(**built)

    def with_overrides(self, overrides: list[str]) -> "RunConfig":
        raw = self.to_dict()
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep or "." not in key:
                raise ConfigError(f"override must look like section.key=value, got {item!r}")
            section, _, name = key.partition(".")
            if section not in raw:
                raise ConfigError(f"unknown config section in override: {section!r}")
            raw[section][name] = yaml.safe_load(value)
        return RunConfig.from_dict(raw)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(
            self,
            model=replace(self.model, seed=seed),
            train=replace(self.train, seed=seed),
            paths=replace(self.paths, workdir=os.path.join(self.paths.workdir, f"seed_{seed}")),
        )

    def require_inputs(self, *keys: str) -> None:
        """Fail early when a data path this command reads does not exist."""
        for key in keys:
            path = getattr(self.data, key)
            if path is None:
                raise ConfigError(f"data.{key} is required for this command")
            if not os.path.exists(path):
                raise ConfigError(f"data.{key} points to a missing file: {path}")


def _build_section(section: str, section_cls: type, values: Any):
    if not isinstance(values, dict):
        raise ConfigError(f"config section {section!r} must be a mapping")
    known = {f.name for f in fields(section_cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in section {section!r}: {sorted(unknown)}")
    hints = typing.get_type_hints(section_cls)
    kwargs = {
        name: _coerce(f"{section}.{name}", hints[name], value)
        for name, value in values.items()
    }
    return section_cls(**kwargs)


def _coerce(key: str, hint: Any, value: Any) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(key, inner[0], value)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list")
        return tuple(_coerce(key, args[0], v) for v in value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if hint is float:
        # PyYAML reads "1e-3" (no dot) as a string
        if isinstance(value, bool):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be a number, got {value!r}") from None
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    return value


def load_config(path: Optional[str] = None, overrides: Optional[list[str]] = None) -> RunConfig:
    """Load configuration from a YAML/JSON file or use defaults.

    With no path, config.yml in the working directory is used when present.
    """
    if path is None and os.path.exists(DEFAULT_CONFIG_FILE):
        path = DEFAULT_CONFIG_FILE

    raw: dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"could not parse {path}: {e}") from None

    config = RunConfig.from_dict(raw)
    if overrides:
        config = config.with_overrides(overrides)
    return config.validate()


def run_config_from_json(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"embedded run configuration is not valid JSON: {e}") from None
    return RunConfig.from_dict(raw)
