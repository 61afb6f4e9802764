"""One flat JSON run configuration shared by every CLI subcommand.

Keys map one-to-one onto dataclass fields; unknown keys are errors so a typo
never silently falls back to a default. parse -> serialize -> parse is the
identity.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0

    # diffusion schedule
    beta_min: float = 0.1
    beta_max: float = 20.0
    horizon: float = 1.0

    # model (desk-scale defaults; the library dataclass carries full-scale ones)
    channels: int = 32
    wfno_layers: int = 4
    attn_layers: int = 4
    encoder_blocks: int = 2
    stored_modes: int = 24
    alpha: float = 0.7
    alpha_learnable: bool = False
    time_dim: int = 64
    time_mode: str = "add"

    # training
    batch_size: int = 8
    train_steps: int = 2000
    patience: int = 50
    patch_size: int = 16
    val_frac: float = 0.1
    scale_min: float = 1.0
    scale_max: float = 4.0
    warmup_epochs: int = 5
    lr_start: float = 1e-6
    lr_peak: float = 3e-4
    lr_floor: float = 1e-6
    cycle_epochs: int = 50

    # sampler
    sample_steps: int = 30
    mode: str = "rk4-grid"
    omega: list = field(default_factory=lambda: [0.0, -40.0, -40.0])
    drift_form: str = "projected"
    noise_free: bool = False
    t_end: float = 0.0
    atol: float = 1e-6
    rtol: float = 1e-6

    # evaluation / benchmarking
    y_channel: bool = False
    runs: int = 100

    # warp fitting
    ats_coarse: int = 8
    ats_fine: int = 64
    ats_iters: int = 12
    ats_lr: float = 0.5

    # paths
    data_dir: str = "data/patches"
    checkpoint: str = "runs/train/ckpt_best"
    out_dir: str = "runs/out"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
# annotations are strings under `from __future__ import annotations`
_BASES = {"int": int, "float": float, "str": str, "bool": bool, "list": list}


def from_dict(raw: dict) -> RunConfig:
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        base = _BASES[_FIELDS[name].type]
        if base is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"config key {name} must be true/false, got {value!r}")
            kwargs[name] = value
        elif base is list:
            if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
                raise ConfigError(f"config key {name} must be a list of numbers")
            kwargs[name] = [float(v) for v in value]
        elif base is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"config key {name} must be a number, got {value!r}")
            kwargs[name] = float(value)
        elif base is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"config key {name} must be an integer, got {value!r}")
            kwargs[name] = int(value)
        else:
            if not isinstance(value, str):
                raise ConfigError(f"config key {name} must be a string, got {value!r}")
            kwargs[name] = value
    return RunConfig(**kwargs)


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return from_dict(raw)


def save(path: str, cfg: RunConfig) -> None:
    blob = json.dumps(to_dict(cfg), indent=2, sort_keys=True)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(blob + "\n")


# -- adapters into the library dataclasses -----------------------------------

def schedule_of(cfg: RunConfig):
    from .diffusion import DiffusionSchedule
    return DiffusionSchedule(beta_min=cfg.beta_min, beta_max=cfg.beta_max,
                             horizon=cfg.horizon).validate()


def model_of(cfg: RunConfig):
    from .layers import ModelConfig
    return ModelConfig(channels=cfg.channels, wfno_layers=cfg.wfno_layers,
                       attn_layers=cfg.attn_layers, encoder_blocks=cfg.encoder_blocks,
                       stored_modes=cfg.stored_modes, alpha=cfg.alpha,
                       alpha_learnable=cfg.alpha_learnable, time_dim=cfg.time_dim,
                       time_mode=cfg.time_mode).validate()


def train_of(cfg: RunConfig, out_dir: str | None = None):
    from .training import LrSchedule, TrainConfig
    lr = LrSchedule(warmup_epochs=cfg.warmup_epochs, lr_start=cfg.lr_start,
                    lr_peak=cfg.lr_peak, lr_floor=cfg.lr_floor,
                    cycle_epochs=cfg.cycle_epochs)
    return TrainConfig(seed=cfg.seed, batch_size=cfg.batch_size,
                       patch_size=cfg.patch_size, max_steps=cfg.train_steps,
                       patience=cfg.patience, val_frac=cfg.val_frac,
                       scale_range=(cfg.scale_min, cfg.scale_max), lr=lr,
                       out_dir=out_dir or cfg.out_dir)


def ats_of(cfg: RunConfig):
    import numpy as np

    from .sampler import AtsParams
    return AtsParams(np.asarray(cfg.omega, dtype=np.float64))
