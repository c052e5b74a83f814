"""Flat key=value run configuration shared by the CLI subcommands.

Defaults match the published hyperparameter table (hidden 1024, Boom 512,
batch 16, ratio 0.1, dropout 0.2, learning rate 0.001, Adadelta). Unknown
keys are rejected; parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .features import FeatureConfig
from .model import ModelConfig
from .training import TrainConfig
from .vad import VadConfig

EXPERIMENTS = ("time_only", "freq_only", "three_channel")
FREQ_COMBINATIONS = ("formants_spectral", "mfcc", "lfcc", "mfcc_lfcc")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "three_channel"
    freq_combination: str = "mfcc_lfcc"
    hidden_size: int = 1024
    boom_dim: int = 512
    depth: int = 1
    batch_size: int = 16
    cbce_ratio: float = 0.1
    dropout: float = 0.2
    learning_rate: float = 0.001
    optimizer: str = "adadelta"
    alpha_mode: str = "class_balanced"
    alpha: float = 1.0
    mix_mode: str = "mean"
    epochs: int = 50
    seed: int = 0
    mel_divisor: float = 100.0
    nfft: int = 512
    frame_ms: float = 20.0
    hop_ms: float = 10.0
    cepstral_stride: int = 1
    vad_energy_ratio: float = 0.1
    vad_entropy_threshold: float = 0.5
    vad_prominence_threshold: float = 0.1
    vad_min_syllable_ms: float = 30.0
    vad_merge_gap_ms: float = 50.0
    test_frac: float = 0.2
    folds: int = 10
    gmm_components: int = 4

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.freq_combination not in FREQ_COMBINATIONS:
            raise ConfigError(f"freq_combination must be one of {FREQ_COMBINATIONS}")
        if self.cepstral_stride < 1:
            raise ConfigError("cepstral_stride must be >= 1")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {raw!r}") from exc
    return RunConfig(**values)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config_text(Path(path).read_text())


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        lines.append(f"{f.name}={value!r}" if isinstance(value, float) else f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def channel_dims(cfg: RunConfig) -> tuple[int, ...]:
    if cfg.experiment == "three_channel":
        return (5, 5, 80)
    if cfg.experiment == "time_only":
        return (5,)
    return {"formants_spectral": (5,), "mfcc": (40,), "lfcc": (40,), "mfcc_lfcc": (80,)}[cfg.freq_combination]


def select_channels(cfg: RunConfig, rec) -> list:
    """Model input sequences for one feature record under the configured
    experiment; the cepstral channel honors cepstral_stride."""
    import numpy as np

    time = np.asarray(rec.channel_time.values, dtype=np.float64)
    spectral = np.asarray(rec.channel_spectral.values, dtype=np.float64)
    cepstral = np.asarray(rec.channel_cepstral.values, dtype=np.float64)[:: cfg.cepstral_stride]
    if cfg.experiment == "three_channel":
        return [time, spectral, cepstral]
    if cfg.experiment == "time_only":
        return [time]
    if cfg.freq_combination == "formants_spectral":
        return [spectral]
    if cfg.freq_combination == "mfcc":
        return [cepstral[:, :40]]
    if cfg.freq_combination == "lfcc":
        return [cepstral[:, 40:]]
    return [cepstral]


def to_model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(
        channel_input_dims=channel_dims(cfg),
        hidden_size=cfg.hidden_size,
        boom_dim=cfg.boom_dim,
        dropout=cfg.dropout,
        depth=cfg.depth,
        seed=cfg.seed,
    )


def to_train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg.batch_size,
        cbce_ratio=cfg.cbce_ratio,
        dropout=cfg.dropout,
        learning_rate=cfg.learning_rate,
        optimizer=cfg.optimizer,
        alpha_mode=cfg.alpha_mode,
        alpha=cfg.alpha,
        mix_mode=cfg.mix_mode,
        epochs=cfg.epochs,
        seed=cfg.seed,
    )


def to_vad_config(cfg: RunConfig) -> VadConfig:
    return VadConfig(
        energy_threshold_ratio=cfg.vad_energy_ratio,
        entropy_threshold=cfg.vad_entropy_threshold,
        prominence_threshold=cfg.vad_prominence_threshold,
        min_syllable_ms=cfg.vad_min_syllable_ms,
        merge_gap_ms=cfg.vad_merge_gap_ms,
        frame_ms=cfg.frame_ms,
        hop_ms=cfg.hop_ms,
    )


def to_feature_config(cfg: RunConfig) -> FeatureConfig:
    return FeatureConfig(
        mel_divisor=cfg.mel_divisor,
        nfft=cfg.nfft,
        frame_ms=cfg.frame_ms,
        hop_ms=cfg.hop_ms,
    )
