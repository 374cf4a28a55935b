"""Line-oriented `key = value` configuration with profiles.

Comments start with '#'. Unknown keys are rejected so typos fail loudly.
All randomness across the pipeline flows from the single `seed` key.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .train import TrainConfig


class ConfigError(ValueError):
    category = "config-error"


@dataclass
class PipelineConfig:
    # paths
    dataset_dir: str = "dataset"
    output_dir: str = "output"
    exchange_dir: str = ""          # non-empty: refiner speaks the file protocol
    reference_image: str = ""       # defaults to the dataset's reference view
    reference_depth: str = ""
    trajectory: str = ""            # defaults to dataset trajectory file
    # synthetic scene
    n_splats: int = 200
    n_views: int = 12
    width: int = 64
    height: int = 64
    n_corrupted: int = 3
    corruption_fraction: float = 0.10
    corruption_mode: str = "recolor"
    angle_span_deg: float = 25.0
    # geometry
    eps_occ: float = 0.0            # 0 = auto: 1% of scene depth range
    eps_add: float = 0.0            # 0 = auto: 1% of scene depth range
    voxel_resolution: int = 128
    n_aux_views: int = 4
    max_init_splats: int = 2500
    # training (flattened TrainConfig)
    train: TrainConfig = None  # populated in __post_init__
    seed: int = 0

    def __post_init__(self):
        if self.train is None:
            self.train = TrainConfig(seed=self.seed)


_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}
_TOP_FIELDS = {f.name: f.type for f in fields(PipelineConfig)
               if f.name not in ("train",)}


def _convert(raw: str, typ):
    if typ in ("int", int):
        return int(raw)
    if typ in ("float", float):
        return float(raw)
    if typ in ("bool", bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean {raw!r}")
    return raw


def parse_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cfg = PipelineConfig() if base is None else base
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        try:
            if key in _TOP_FIELDS:
                setattr(cfg, key, _convert(raw, _TOP_FIELDS[key]))
            elif key in _TRAIN_FIELDS:
                setattr(cfg.train, key, _convert(raw, _TRAIN_FIELDS[key]))
            else:
                raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}:{ln}: bad value for {key}: {exc}") from exc
    cfg.train.seed = cfg.seed
    return cfg


def serialize_config(cfg: PipelineConfig) -> str:
    lines = []
    for name in _TOP_FIELDS:
        lines.append(f"{name} = {getattr(cfg, name)}")
    for name in _TRAIN_FIELDS:
        if name == "seed":
            continue  # owned by the top-level seed
        lines.append(f"{name} = {getattr(cfg.train, name)}")
    return "\n".join(lines) + "\n"


PROFILES = {
    # quick end-to-end sanity run
    "smoke": {"n_views": 8, "width": 64, "height": 64, "n_splats": 150,
              "total_iterations": 500, "refine_interval": 100,
              "densify_interval": 0, "log_interval": 50},
    # desk-scale default, matches the synthetic acceptance benchmark
    "desk": {},
    # full-scale schedule
    "paper": {"width": 128, "height": 128, "n_views": 24,
              "total_iterations": 15000, "refine_interval": 2000,
              "densify_interval": 500, "densify_start": 500},
}


def apply_profile(cfg: PipelineConfig, profile: str) -> PipelineConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    for key, val in PROFILES[profile].items():
        if key in _TOP_FIELDS:
            setattr(cfg, key, val)
        else:
            setattr(cfg.train, key, val)
    return cfg
