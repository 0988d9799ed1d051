"""Run configuration files: one YAML document, one section per pipeline stage.

Parsing is strict: any key that does not name a known field fails with the
offending dotted path, so a typo like `mask_fraq` cannot silently fall back
to a default. Scalars are coerced to the declared field types, which also
covers YAML's habit of reading `3e-5` as a string.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .masking import MaskingPolicy
from .model import ModelConfig
from .textnorm import NormConfig
from .tokenizer import DEFAULT_VOCAB_SIZE
from .training import (
    CLS_GRID,
    FinetuneConfig,
    GridSpec,
    PretrainConfig,
    NER_GRID,
    pretrain_preset,
)

OUTPUT_ROOT_ENV = "GREEKLEGAL_OUTPUT_ROOT"


class ConfigError(ValueError):
    """A run config file failed validation."""


@dataclass
class DataConfig:
    manifest: str | None = None
    normalized_manifest: str | None = None
    tokenizer_dir: str | None = None
    checkpoint_dir: str | None = None
    ner_train: str | None = None
    ner_val: str | None = None
    ner_test: str | None = None
    cls_records: str | None = None
    cls_hierarchy: str | None = None
    cls_level: str = "volume"


@dataclass
class TokenizerSettings:
    vocab_size: int = DEFAULT_VOCAB_SIZE


@dataclass
class ModelSettings:
    num_layers: int = 4
    hidden_dim: int = 256
    num_heads: int = 4
    ffn_dim: int = 1024
    max_positions: int = 512
    dropout: float = 0.1
    mixed_precision: bool = False

    def to_model_config(
        self,
        vocab_size: int,
        num_tags: int | None = None,
        num_labels: int | None = None,
    ) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            num_layers=self.num_layers,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            ffn_dim=self.ffn_dim,
            max_positions=self.max_positions,
            dropout=self.dropout,
            num_tags=num_tags,
            num_labels=num_labels,
            mixed_precision=self.mixed_precision,
        )


@dataclass
class PretrainSettings:
    preset: str | None = None
    steps: int = 200
    batch_size: int = 8
    peak_lr: float = 3e-4
    warmup_steps: int = 0
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    log_every: int = 10
    dump_masking: bool = False

    def to_config(self, seed: int) -> PretrainConfig:
        shared = dict(
            peak_lr=self.peak_lr,
            warmup_steps=self.warmup_steps,
            weight_decay=self.weight_decay,
            grad_clip=self.grad_clip,
            log_every=self.log_every,
            seed=seed,
        )
        if self.preset is not None:
            return pretrain_preset(self.preset, **shared)
        return PretrainConfig(steps=self.steps, batch_size=self.batch_size, **shared)


@dataclass
class FinetuneSettings:
    task: str = "ner"
    epochs: int = 3
    learning_rate: float = 5e-5
    batch_size: int = 8
    seeds: tuple[int, ...] = (0,)
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    grad_clip: float = 1.0

    def __post_init__(self) -> None:
        if self.task not in ("ner", "cls"):
            raise ValueError(f"unknown task {self.task!r}")
        if not self.seeds:
            raise ValueError("finetune.seeds must not be empty")

    def to_config(self, seed: int) -> FinetuneConfig:
        return FinetuneConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            seed=seed,
            warmup_frac=self.warmup_frac,
            weight_decay=self.weight_decay,
            grad_clip=self.grad_clip,
        )


@dataclass
class GridSettings:
    task: str = "ner"
    epochs: tuple[int, ...] = (3, 6)
    learning_rates: tuple[float, ...] = ()
    batch_sizes: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.task not in ("ner", "cls"):
            raise ValueError(f"unknown task {self.task!r}")

    def to_spec(self) -> GridSpec:
        # Unset axes fall back to the published search space for the task.
        published = NER_GRID if self.task == "ner" else CLS_GRID
        return GridSpec(
            epochs=self.epochs or published.epochs,
            learning_rates=self.learning_rates or published.learning_rates,
            batch_sizes=self.batch_sizes or published.batch_sizes,
        )


@dataclass
class EvaluateSettings:
    task: str = "ner"
    checkpoint_dir: str | None = None
    split: str = "test"

    def __post_init__(self) -> None:
        if self.task not in ("ner", "cls"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {self.split!r}")


@dataclass
class ReportSettings:
    runs: tuple[str, ...] = ()


@dataclass
class RunConfig:
    output_dir: str = "out"
    seed: int = 0
    jobs: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    normalize: NormConfig = field(default_factory=NormConfig)
    tokenizer: TokenizerSettings = field(default_factory=TokenizerSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    masking: MaskingPolicy = field(default_factory=MaskingPolicy)
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)
    finetune: FinetuneSettings = field(default_factory=FinetuneSettings)
    grid: GridSettings = field(default_factory=GridSettings)
    evaluate: EvaluateSettings = field(default_factory=EvaluateSettings)
    report: ReportSettings = field(default_factory=ReportSettings)


def _coerce(value, ftype, path: str):
    origin = typing.get_origin(ftype)
    if origin is typing.Union or origin is types.UnionType:
        args = typing.get_args(ftype)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if dataclasses.is_dataclass(ftype):
        return _build(ftype, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        elem = typing.get_args(ftype)[0]
        return tuple(_coerce(v, elem, f"{path}[{i}]") for i, v in enumerate(value))
    if ftype is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if ftype is float:
        if isinstance(value, bool):
            raise ConfigError(f"{path}: expected a number")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{path}: expected a number, got {value!r}") from None
        raise ConfigError(f"{path}: expected a number")
    if ftype is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    raise ConfigError(f"{path}: unsupported field type {ftype!r}")


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        where = f"{path}.{key}" if path else str(key)
        if key not in names:
            raise ConfigError(f"unknown config key {where}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            where = f"{path}.{f.name}" if path else f.name
            kwargs[f.name] = _coerce(data[f.name], hints[f.name], where)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path or 'config'}: {err}") from None


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a YAML run config; unknown keys are fatal."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a mapping at the top level")
    return _build(RunConfig, raw, "")


def dump_resolved(config: RunConfig) -> str:
    """Render the fully resolved config back to YAML for run provenance."""
    plain = json.loads(json.dumps(dataclasses.asdict(config)))
    return yaml.safe_dump(plain, sort_keys=True, allow_unicode=True)
