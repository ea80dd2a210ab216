"""Flat ``key = value`` run configuration covering model, training and
synthesis settings plus optional paths.

One namespace, one file format, no nesting: every key has a documented
default, unknown keys are rejected, and ``#`` starts a comment. Defaults
follow the reference implementation details (dim 512, heads 8, lr 5e-5,
dropout 0.5, L2 1e-4, batch 4, 50 epochs).

Two keys fan out: ``dim`` sets both the model and the synthetic-corpus
embedding dimension (when absent each keeps its own default: 512 for the
model, 64 for synthesis); ``seed`` seeds both training and synthesis and can
be overridden by the CLI ``--seed`` flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .datasets import SynthSpec
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

__all__ = ["RunConfig", "parse_config", "KNOWN_KEYS"]

_MODEL_KEYS = {
    "heads": int,
    "use_scaling": bool,
    "text_rep": str,
    "single_vector_t": int,
    "dropout_rate": float,
    "encoder_layers": int,
    "ffn_dim": int,
    "scorer_head": str,
}
_TRAIN_KEYS = {
    "learning_rate": float,
    "l2_factor": float,
    "batch_size": int,
    "epochs": int,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "mode": str,
}
_SYNTH_KEYS = {
    "topics": int,
    "videos_train": int,
    "videos_validation": int,
    "videos_test": int,
    "frames_min": int,
    "frames_max": int,
    "sentences_min": int,
    "sentences_max": int,
    "noise": float,
    "positive_fraction": float,
    "summaries_per_video": int,
}
_SHARED_KEYS = {"dim": int, "seed": int}
_PATH_KEYS = {"manifest": str, "checkpoint": str, "out": str}

KNOWN_KEYS = (set(_MODEL_KEYS) | set(_TRAIN_KEYS) | set(_SYNTH_KEYS)
              | set(_SHARED_KEYS) | set(_PATH_KEYS))


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    manifest: str | None = None
    checkpoint: str | None = None
    out: str | None = None
    seed: int = 42
    explicit: frozenset = frozenset()

    def was_set(self, key: str) -> bool:
        return key in self.explicit


def _convert(key: str, value: str, kind, origin: str, lineno: int):
    try:
        if kind is bool:
            lowered = value.lower()
            if lowered not in ("true", "false"):
                raise ValueError
            return lowered == "true"
        if kind is int:
            return int(value, 10)
        if kind is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(
            f"{origin}:{lineno}: cannot read {value!r} as {kind.__name__} for key {key!r}"
        ) from None


def parse_config(path=None) -> RunConfig:
    """Parse a config file; ``None`` gives the all-defaults configuration."""
    values: dict[str, object] = {}
    if path is not None:
        origin = str(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {origin}: {e}") from e
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key or not value:
                raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            if key not in KNOWN_KEYS:
                raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
            for table in (_MODEL_KEYS, _TRAIN_KEYS, _SYNTH_KEYS, _SHARED_KEYS, _PATH_KEYS):
                if key in table:
                    values[key] = _convert(key, value, table[key], origin, lineno)
                    break

    config = RunConfig(explicit=frozenset(values))
    for key, value in values.items():
        if key in _MODEL_KEYS:
            setattr(config.model, key, value)
        elif key in _TRAIN_KEYS:
            setattr(config.train, key, value)
        elif key in _SYNTH_KEYS:
            setattr(config.synth, key, value)
        elif key in _PATH_KEYS:
            setattr(config, key, value)
        elif key == "dim":
            config.model.dim = value
            config.synth.dim = value
        elif key == "seed":
            config.seed = value
            config.train.seed = value
            config.synth.seed = value
    config.model.validate()
    config.train.validate()
    config.synth.validate()
    return config
