"""Run configuration: hyperparameters, loss weights, and architecture sizes."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

ACTIVATIONS = ("app", "tanh", "two_step")

CONFIG_FORMAT = "ganhash-config"
CONFIG_VERSION = 1


@dataclass
class RunConfig:
    # neighborhood construction
    k1: int = 20
    k2: int = 30
    # code learning
    code_bits: int = 12
    lambda1: float = 0.1
    lambda2: float = 0.1
    beta_schedule: tuple = (1.0, 3.0, 10.0)
    activation: str = "app"
    tau: float = 0.01
    batch_size: int = 32
    epochs_per_stage: int = 50
    seed: int = 0
    # stage-advance plateau rule
    plateau_window: int = 3
    plateau_threshold: float = 1e-3
    # architecture sizes
    encoder_channels: tuple = (8, 16)
    encoder_dense: int = 64
    generator_channels: tuple = (32, 16, 8)
    discriminator_channels: tuple = (8, 16)
    discriminator_dense: int = 32
    use_batchnorm: bool = False
    hash_bias: bool = True
    # numerics / extensions
    dtype: str = "float32"
    normalize_pair_loss: bool = True
    nonsaturating_generator: bool = False
    sgd_momentum: float = 0.0

    def __post_init__(self):
        self.beta_schedule = tuple(float(b) for b in self.beta_schedule)
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.generator_channels = tuple(int(c) for c in self.generator_channels)
        self.discriminator_channels = tuple(int(c) for c in self.discriminator_channels)
        self.validate()

    def validate(self):
        if self.k1 < 1:
            raise ValueError("k1 must be >= 1")
        if self.k2 < 0:
            raise ValueError("k2 must be >= 0")
        if self.code_bits < 1:
            raise ValueError("code_bits must be >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be >= 0")
        if not self.beta_schedule:
            raise ValueError("beta_schedule must be non-empty")
        if self.beta_schedule[0] != 1.0:
            raise ValueError("beta_schedule must start at 1")
        if any(b2 <= b1 for b1, b2 in zip(self.beta_schedule, self.beta_schedule[1:])):
            raise ValueError("beta_schedule must be strictly increasing")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (pairwise loss needs pairs)")
        if self.epochs_per_stage < 1:
            raise ValueError("epochs_per_stage must be >= 1")
        if self.plateau_window < 1:
            raise ValueError("plateau_window must be >= 1")
        if self.plateau_threshold <= 0:
            raise ValueError("plateau_threshold must be > 0")
        for name in ("encoder_channels", "generator_channels", "discriminator_channels"):
            widths = getattr(self, name)
            if not widths or any(c < 1 for c in widths):
                raise ValueError(f"{name} must be a non-empty list of positive widths")
        if self.encoder_dense < 1 or self.discriminator_dense < 1:
            raise ValueError("dense widths must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")
        if self.sgd_momentum < 0 or self.sgd_momentum >= 1:
            raise ValueError("sgd_momentum must lie in [0, 1)")

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["beta_schedule"] = list(self.beta_schedule)
        d["encoder_channels"] = list(self.encoder_channels)
        d["generator_channels"] = list(self.generator_channels)
        d["discriminator_channels"] = list(self.discriminator_channels)
        d["format"] = CONFIG_FORMAT
        d["version"] = CONFIG_VERSION
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        d = json.loads(text)
        if d.pop("format", CONFIG_FORMAT) != CONFIG_FORMAT:
            raise ValueError("not a run-config document")
        if d.pop("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ValueError("unsupported config version")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return RunConfig.from_json(fh.read())


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json())
