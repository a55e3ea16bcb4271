"""Experiment configuration: a YAML file with `corpus` and `train` sections.

Unknown keys anywhere are rejected outright -- a typo like `epochz` must fail
loudly, not silently train with defaults. A top-level `seed` feeds both
sections unless a section pins its own.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, asdict
from pathlib import Path

import yaml

from .corpus import CorpusConfig
from .train import TrainConfig

ROOT_ENV_VAR = "CRGAN_ROOT"


class ConfigError(ValueError):
    """Malformed experiment configuration."""


def _build(cls, data: dict, context: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{context}: expected a mapping, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}; allowed keys are {sorted(allowed)}")
    coerced = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{context}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusConfig
    train: TrainConfig
    output_dir: str = "runs/default"
    seed: int = 0
    pesq: str | None = None     # None -> built-in surrogate

    def resolved_output_dir(self) -> Path:
        """Output dir, relative paths anchored at $CRGAN_ROOT when set."""
        out = Path(self.output_dir)
        root = os.environ.get(ROOT_ENV_VAR)
        if root and not out.is_absolute():
            return Path(root) / out
        return out

    def to_dict(self) -> dict:
        return {
            "corpus": asdict(self.corpus),
            "train": asdict(self.train),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "pesq": self.pesq,
        }


_TOP_KEYS = {"corpus", "train", "output_dir", "seed", "pesq"}


def experiment_from_dict(data: dict, seed_override: int | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}; allowed keys are {sorted(_TOP_KEYS)}")
    seed = seed_override if seed_override is not None else data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")

    corpus_data = dict(data.get("corpus") or {})
    corpus_data.setdefault("seed", seed)
    train_data = dict(data.get("train") or {})
    train_data.setdefault("seed", seed)

    pesq = data.get("pesq")
    if pesq is not None:
        train_data.setdefault("q_metric", pesq)

    return ExperimentConfig(
        corpus=_build(CorpusConfig, corpus_data, "corpus"),
        train=_build(TrainConfig, train_data, "train"),
        output_dir=str(data.get("output_dir", "runs/default")),
        seed=seed,
        pesq=pesq,
    )


def load_experiment_config(path, seed_override: int | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    return experiment_from_dict(data, seed_override)
