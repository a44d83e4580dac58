"""Training configuration and its plain-text key-value file format.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment. Keys are the ``TrainConfig`` field names. Tuples are written as
comma-separated values, booleans as ``true``/``false``.
"""

from __future__ import annotations

import dataclasses
import difflib
import hashlib
import json
from dataclasses import dataclass, field, fields

from .discriminator import DiscriminatorConfig
from .errors import ConfigError
from .generator import GeneratorConfig


@dataclass
class TrainConfig:
    # optimizer and schedules
    lr_G: float = 1e-4
    lr_D: float = 5e-5
    lr_decay: float = 0.7
    lr_decay_epochs: int = 40
    lr_floor: float = 1e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    gan_weight: float = 1.0
    rec_weight: float = 200.0
    lambda_f_start: float = 0.01
    lambda_f_end: float = 1.0
    lambda_f_ramp_iters: int = 50000
    rec_variant: str = "CD-P"
    adversarial: bool = True
    d_steps_per_g: int = 1
    # generator
    num_coarse: int = 512
    latent_width: int = 1024
    enc1_widths: tuple = (128, 256)
    enc2_widths: tuple = (512, 1024)
    coarse_widths: tuple = (1024, 1024)
    lift_widths: tuple = (256, 128, 64)
    ce_group: int = 4
    grid_scale: float = 0.05
    fps_start: int = 0
    target_resolution: int = 2048
    # discriminator
    num_seeds: int = 256
    radii: tuple = (0.1, 0.2, 0.4)
    max_samples: tuple = (32, 64, 128)
    disc_group_widths: tuple = (64, 128)
    disc_integrate_widths: tuple = (256, 128)
    # ablations
    no_mean_shape: bool = False
    no_contraction_expansion: bool = False
    no_mirror: bool = False
    no_discriminator: bool = False
    # mean-shape autoencoder
    prior_steps: int = 300
    prior_lr: float = 1e-3
    prior_batch_size: int = 4
    # run
    seed: int = 0
    batch_size: int = 8
    steps: int = 1000
    dtype: str = "float64"
    random_scale_aug: bool = False
    scale_min: float = 1 / 1.5
    scale_max: float = 1.0
    manifest: str = ""
    out_dir: str = "run"
    checkpoint_every: int = 0
    log_every: int = 50

    def __post_init__(self):
        for name in ("lr_G", "lr_D", "lr_floor", "lr_decay"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lambda_f_ramp_iters < 1:
            raise ConfigError("lambda_f_ramp_iters must be >= 1")
        if self.lambda_f_end < self.lambda_f_start:
            raise ConfigError("lambda_f must not decrease")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.rec_variant not in ("CD-P", "CD-T"):
            raise ConfigError("rec_variant must be CD-P or CD-T")
        if self.batch_size < 1 or self.d_steps_per_g < 1:
            raise ConfigError("batch_size and d_steps_per_g must be >= 1")
        ladder = self.generator_config().resolutions
        if self.target_resolution not in ladder:
            raise ConfigError(f"target_resolution {self.target_resolution} not in {list(ladder)}")

    @property
    def adversarial_on(self) -> bool:
        return self.adversarial and not self.no_discriminator

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            num_coarse=self.num_coarse, latent_width=self.latent_width,
            enc1_widths=tuple(self.enc1_widths), enc2_widths=tuple(self.enc2_widths),
            coarse_widths=tuple(self.coarse_widths), lift_widths=tuple(self.lift_widths),
            ce_group=self.ce_group, grid_scale=self.grid_scale, fps_start=self.fps_start,
            use_mean_shape=not self.no_mean_shape,
            use_contraction_expansion=not self.no_contraction_expansion,
            use_mirror=not self.no_mirror)

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(
            num_seeds=self.num_seeds, radii=tuple(self.radii), max_samples=tuple(self.max_samples),
            group_widths=tuple(self.disc_group_widths),
            integrate_widths=tuple(self.disc_integrate_widths), fps_start=self.fps_start)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def config_hash(self) -> str:
        payload = dict(self.to_dict())
        # bookkeeping fields that do not change what gets trained
        for key in ("out_dir", "manifest", "checkpoint_every", "log_every", "steps"):
            payload.pop(key)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def desk_config(**overrides) -> TrainConfig:
    """Reduced widths for CPU runs on synthetic data; the schedule values
    and the resolution ladder keep their defaults."""
    base = dict(
        latent_width=128, enc1_widths=(32, 64), enc2_widths=(128, 128),
        coarse_widths=(128, 128), lift_widths=(64, 32, 16),
        num_seeds=128, max_samples=(8, 16, 32), disc_group_widths=(16, 32),
        disc_integrate_widths=(64, 32), batch_size=2, dtype="float32",
        prior_steps=200)
    base.update(overrides)
    return TrainConfig(**base)


def toy_config(**overrides) -> TrainConfig:
    """Tiny 64-bit configuration for gradient checks and determinism tests."""
    base = dict(
        num_coarse=8, latent_width=8, enc1_widths=(6, 8), enc2_widths=(8, 8),
        coarse_widths=(12,), lift_widths=(8, 6, 4), num_seeds=8, max_samples=(4, 4, 8),
        disc_group_widths=(6, 8), disc_integrate_widths=(8,), batch_size=2,
        target_resolution=32, dtype="float64", prior_steps=5, prior_batch_size=2)
    base.update(overrides)
    return TrainConfig(**base)


_FIELD_TYPES = {f.name: type(f.default) for f in fields(TrainConfig)}


def _coerce(key: str, raw):
    kind = _FIELD_TYPES[key]
    if not isinstance(raw, str):
        value = raw
    else:
        text = raw.strip()
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ConfigError(f"{key}: expected true/false, got {raw!r}")
        if kind is tuple:
            parts = [p.strip() for p in text.strip("()[]").split(",") if p.strip()]
            try:
                return tuple(int(p) if p.lstrip("-").isdigit() else float(p) for p in parts)
            except ValueError:
                raise ConfigError(f"{key}: expected comma-separated numbers, got {raw!r}") from None
        if kind is str:
            return text
        try:
            value = float(text) if kind is float else int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None
        return value
    if kind is tuple:
        return tuple(value)
    if kind is float and isinstance(value, int):
        return float(value)
    return value


def _unknown_key_error(unknown) -> ConfigError:
    lines = []
    for key in unknown:
        close = difflib.get_close_matches(key, _FIELD_TYPES, n=1, cutoff=0.5)
        if not close:
            close = [k for k in _FIELD_TYPES if k.lower().replace("_", "") == key.lower().replace("_", "")]
        hint = f" (did you mean {close[0]!r}?)" if close else ""
        lines.append(f"  {key}{hint}")
    return ConfigError("unknown config keys:\n" + "\n".join(lines), unknown_keys=unknown)


def parse_overrides(pairs) -> dict:
    """``["key=value", ...]`` -> dict of raw strings."""
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def config_from_mapping(values: dict, base: TrainConfig | None = None) -> TrainConfig:
    unknown = [k for k in values if k not in _FIELD_TYPES]
    if unknown:
        raise _unknown_key_error(unknown)
    coerced = {k: _coerce(k, v) for k, v in values.items()}
    return dataclasses.replace(base or TrainConfig(), **coerced)


def parse_config_text(text: str, base: TrainConfig | None = None, source: str = "<config>") -> TrainConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        k, v = stripped.split("=", 1)
        values[k.strip()] = v.strip()
    return config_from_mapping(values, base)


def load_config(path, overrides=None, base: TrainConfig | None = None) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        values_cfg = parse_config_text(fh.read(), base, source=str(path))
    if overrides:
        values_cfg = config_from_mapping(parse_overrides(overrides), values_cfg)
    return values_cfg


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ", ".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
