"""Run configuration: one YAML file drives features, model, training, scoring.

Every command echoes its resolved configuration into its output directory, so
artifacts are self-describing and runs can be reproduced from the outputs
alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .dsp import FeatureConfig
from .errors import ConfigError
from .model import TrainConfig
from .scoring import DEFAULT_PERCENTILE, DEFAULT_RIDGE, MODES

MODE_ALIASES = {"mse": "mse", "mahala": "mahalanobis", "mahalanobis": "mahalanobis"}


def default_layer_dims(feature_dim: int) -> list[int]:
    """Baseline bottleneck shape scaled to the feature dimension."""
    return [feature_dim, 128, 128, 128, 128, 8, 128, 128, 128, 128, feature_dim]


@dataclass
class RunConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    layer_dims: list[int] | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "mse"
    ridge: float = DEFAULT_RIDGE
    threshold_percentile: float = DEFAULT_PERCENTILE
    seed: int = 0

    def __post_init__(self):
        if self.layer_dims is None:
            self.layer_dims = default_layer_dims(self.features.feature_dim)
        self.mode = normalize_mode(self.mode)
        d = self.features.feature_dim
        if self.layer_dims[0] != d or self.layer_dims[-1] != d:
            raise ConfigError(
                f"model input/output dims {self.layer_dims[0]}/{self.layer_dims[-1]} "
                f"must equal context_frames * n_mels = {d}")

    @classmethod
    def from_dict(cls, data: dict, seed_override: int | None = None) -> "RunConfig":
        data = dict(data or {})
        # "run" is provenance metadata written by the config echo; ignore it
        unknown = set(data) - {"features", "model", "train", "scoring", "seed", "run"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        seed = int(data.get("seed", 0))
        if seed_override is not None:
            seed = seed_override
        feat_kwargs = dict(data.get("features") or {})
        bad = set(feat_kwargs) - {"sample_rate_hz", "n_fft", "hop_length", "n_mels",
                                  "context_frames", "log_floor", "normalize"}
        if bad:
            raise ConfigError(f"unknown feature keys: {sorted(bad)}")
        features = FeatureConfig(**feat_kwargs)
        model_section = dict(data.get("model") or {})
        bad = set(model_section) - {"layer_dims"}
        if bad:
            raise ConfigError(f"unknown model keys: {sorted(bad)}")
        layer_dims = model_section.get("layer_dims")
        train_kwargs = dict(data.get("train") or {})
        bad = set(train_kwargs) - {"epochs", "batch_size", "learning_rate",
                                   "beta1", "beta2", "adam_eps", "seed"}
        if bad:
            raise ConfigError(f"unknown train keys: {sorted(bad)}")
        # shuffle stream follows the master seed unless pinned explicitly
        train_kwargs.setdefault("seed", seed + 1)
        scoring = dict(data.get("scoring") or {})
        bad = set(scoring) - {"mode", "ridge", "threshold_percentile"}
        if bad:
            raise ConfigError(f"unknown scoring keys: {sorted(bad)}")
        try:
            return cls(features=features,
                       layer_dims=None if layer_dims is None else [int(d) for d in layer_dims],
                       train=TrainConfig(**train_kwargs),
                       mode=scoring.get("mode", "mse"),
                       ridge=float(scoring.get("ridge", DEFAULT_RIDGE)),
                       threshold_percentile=float(
                           scoring.get("threshold_percentile", DEFAULT_PERCENTILE)),
                       seed=seed)
        except TypeError as exc:
            raise ConfigError(f"bad config value: {exc}") from exc

    @classmethod
    def from_yaml(cls, path, seed_override: int | None = None) -> "RunConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a YAML mapping")
        return cls.from_dict(data, seed_override=seed_override)

    def to_dict(self) -> dict:
        f = self.features
        return {
            "seed": self.seed,
            "features": {"sample_rate_hz": f.sample_rate_hz, "n_fft": f.n_fft,
                         "hop_length": f.hop_length, "n_mels": f.n_mels,
                         "context_frames": f.context_frames,
                         "log_floor": f.log_floor, "normalize": f.normalize},
            "model": {"layer_dims": list(self.layer_dims)},
            "train": {"epochs": self.train.epochs, "batch_size": self.train.batch_size,
                      "learning_rate": self.train.learning_rate,
                      "beta1": self.train.beta1, "beta2": self.train.beta2,
                      "adam_eps": self.train.adam_eps, "seed": self.train.seed},
            "scoring": {"mode": self.mode, "ridge": self.ridge,
                        "threshold_percentile": self.threshold_percentile},
        }

    def echo(self, path, extra: dict | None = None) -> None:
        payload = self.to_dict()
        if extra:
            payload["run"] = extra
        with open(path, "w") as fh:
            yaml.safe_dump(payload, fh, sort_keys=False)


def normalize_mode(mode: str) -> str:
    resolved = MODE_ALIASES.get(mode)
    if resolved is None or resolved not in MODES:
        raise ConfigError(f"unknown scoring mode {mode!r}; expected one of "
                          f"{sorted(MODE_ALIASES)}")
    return resolved
