"""Flat ``key = value`` run configuration shared by every CLI command."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .data import DataConfig
from .ffn import FfnVariant
from .model import ModelConfig
from .optim import ScheduleConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # model
    variant: str = "relu"
    num_layers: int = 2
    d_model: int = 64
    num_heads: int = 4
    d_kv: int = 16
    d_ff_base: int = 192
    ffn_multiple_of: int = 1
    vocab_size: int = 64
    num_buckets: int = 32
    max_distance: int = 128
    # data
    input_length: int = 64
    target_length: int = 16
    batch_size: int = 16
    corruption_rate: float = 0.15
    mean_span_length: float = 3.0
    num_sentinels: int = 16
    corpus_tokens: int = 200_000
    corpus_seed: int = 1
    heldout_fraction: float = 0.1
    eval_batches: int = 8
    # schedule and optimizer; 0 means "derive from steps"
    steps: int = 2000
    warmup_steps: int = 0
    decay_fraction: float = 0.1
    optimizer: str = "adafactor"
    eval_interval: int = 0
    # runs
    seed: int = 0
    seeds: int = 4
    workers: int = 1
    precision: str = "float32"
    out: str = "runs"

    def __post_init__(self):
        try:
            FfnVariant.parse(self.variant)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.optimizer not in ("adafactor", "sgd"):
            raise ConfigError(f"optimizer must be adafactor or sgd, got {self.optimizer!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.warmup_steps < 0 or self.eval_interval < 0:
            raise ConfigError("warmup_steps and eval_interval must be >= 0 (0 = automatic)")
        try:
            self.model_config()
            self.data_config()
            self.schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self, variant: str | None = None, seed: int | None = None) -> ModelConfig:
        return ModelConfig(
            num_layers=self.num_layers,
            d_model=self.d_model,
            num_heads=self.num_heads,
            d_kv=self.d_kv,
            d_ff_base=self.d_ff_base,
            ffn_variant=variant or self.variant,
            vocab_size=self.vocab_size,
            seed=self.seed if seed is None else seed,
            ffn_multiple_of=self.ffn_multiple_of,
            num_buckets=self.num_buckets,
            max_distance=self.max_distance,
        )

    def data_config(self) -> DataConfig:
        return DataConfig(
            input_length=self.input_length,
            target_length=self.target_length or None,
            batch_size=self.batch_size,
            corruption_rate=self.corruption_rate,
            mean_span_length=self.mean_span_length,
            corpus_tokens=self.corpus_tokens,
            corpus_seed=self.corpus_seed,
            num_sentinels=self.num_sentinels,
            heldout_fraction=self.heldout_fraction,
            eval_batches=self.eval_batches,
        )

    def schedule(self) -> ScheduleConfig | None:
        if self.steps == 0:
            return None
        return ScheduleConfig.for_run(max(self.steps, 2), self.warmup_steps or None, self.decay_fraction)

    def with_overrides(self, overrides: dict[str, object]) -> "RunConfig":
        values = {k: v for k, v in overrides.items() if v is not None}
        _check_keys(values)
        return replace(self, **{k: _coerce(k, v) for k, v in values.items()})

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


KEYS = tuple(f.name for f in fields(RunConfig))
_TYPES = {f.name: type(getattr(RunConfig, f.name)) for f in fields(RunConfig)}


def _check_keys(keys) -> None:
    unknown = sorted(set(keys) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")


def _coerce(key: str, value):
    kind = _TYPES[key]
    if isinstance(value, kind) and not isinstance(value, bool):
        return value
    try:
        if kind is int:
            return int(str(value).replace("_", ""))
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    _check_keys(values)
    return values


def load(path=None, overrides: dict[str, object] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (flags win)."""
    merged: dict[str, object] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        merged.update(parse_text(text, str(path)))
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    _check_keys(merged)
    try:
        return RunConfig(**{k: _coerce(k, v) for k, v in merged.items()})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
