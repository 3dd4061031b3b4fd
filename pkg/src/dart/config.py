"""Run configuration: one JSON tree that fully determines a reproducible run.

Loading is strict: unknown keys are rejected with their path, malformed JSON
is reported with line/column, so a config typo fails fast instead of training
the wrong thing.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .diffusion import DenoiserConfig, DenoiserTrainConfig
from .gaitgen import GaitSpec, LimbAmplitudes
from .policy import EnvConfig, PPOConfig
from .vae import VaeConfig, VaeTrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    frames_per_clip: int = 240
    use_default_specs: bool = True
    include_transitions: bool = True
    specs: list[GaitSpec] = field(default_factory=list)


@dataclass
class PolicyTrainConfig:
    label: str = "walk"
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)


@dataclass
class RunConfig:
    seed: int = 0
    fps: float = 30.0
    skeleton: str = "toy13"
    sampler: str = "ddpm"
    guidance: float = 5.0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    vae_train: VaeTrainConfig = field(default_factory=VaeTrainConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    denoiser_train: DenoiserTrainConfig = field(default_factory=DenoiserTrainConfig)
    policy: PolicyTrainConfig = field(default_factory=PolicyTrainConfig)

    def __post_init__(self):
        if self.skeleton not in ("toy13", "toy22"):
            raise ConfigError(f"unknown skeleton {self.skeleton!r}")
        if self.sampler not in ("ddpm", "ddim"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")

    def build_skeleton(self):
        from .skeleton import skeleton_22, toy_skeleton

        return toy_skeleton() if self.skeleton == "toy13" else skeleton_22()

    def build_specs(self) -> list[GaitSpec]:
        from .gaitgen import default_specs

        specs = list(self.dataset.specs)
        if self.dataset.use_default_specs:
            specs = default_specs(base_seed=self.seed) + specs
        if not specs:
            raise ConfigError("dataset has no specs")
        return specs


def _build(cls, data, path):
    """Recursively construct a dataclass from a JSON tree, strictly."""
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected object for {cls.__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)} for {cls.__name__}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        sub_path = f"{path}.{name}"
        ftype = f.type if not isinstance(f.type, str) else f.type
        if name == "specs":
            kwargs[name] = [_build_gait_spec(v, f"{sub_path}[{i}]") for i, v in enumerate(value)]
        elif dataclasses.is_dataclass(_resolve(ftype)):
            kwargs[name] = _build(_resolve(ftype), value, sub_path)
        elif isinstance(value, list):
            kwargs[name] = tuple(value) if _wants_tuple(cls, name) else value
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


_TYPE_MAP = {
    "DatasetConfig": DatasetConfig,
    "PolicyTrainConfig": PolicyTrainConfig,
    "VaeConfig": VaeConfig,
    "VaeTrainConfig": VaeTrainConfig,
    "DenoiserConfig": DenoiserConfig,
    "DenoiserTrainConfig": DenoiserTrainConfig,
    "EnvConfig": EnvConfig,
    "PPOConfig": PPOConfig,
    "LimbAmplitudes": LimbAmplitudes,
}


def _resolve(ftype):
    if isinstance(ftype, str):
        return _TYPE_MAP.get(ftype.strip(), None)
    return ftype


def _wants_tuple(cls, name):
    return name in ("goal_radius",)


def _build_gait_spec(data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected object for GaitSpec")
    known = {f.name for f in dataclasses.fields(GaitSpec)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)} for GaitSpec")
    kwargs = dict(data)
    if "amplitudes" in kwargs:
        kwargs["amplitudes"] = _build(LimbAmplitudes, kwargs["amplitudes"], f"{path}.amplitudes")
    try:
        return GaitSpec(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return _build(RunConfig, data, "config")


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(dataclasses.asdict(cfg), indent=2))


def default_desk_config() -> RunConfig:
    """Desk-scale defaults sized to train in minutes on a CPU."""
    return RunConfig(
        vae=VaeConfig(latent_dim=16, layers=4, hidden=96, ff_dim=192, heads=4, dropout=0.1),
        vae_train=VaeTrainConfig(steps=2500, batch_size=48, lr=3e-4),
        denoiser=DenoiserConfig(latent_dim=16, layers=4, hidden=96, ff_dim=192, heads=4, dropout=0.1, steps=10),
        # w_aux far below the full-scale setting: at this model/data size the
        # auxiliary gradient through the decoder otherwise swamps the simple
        # loss and the denoiser never learns to read the noised latent
        denoiser_train=DenoiserTrainConfig(stage1=5000, stage2=3000, stage3=3000, batch_size=32, lr=5e-4, w_aux=100.0),
    )
