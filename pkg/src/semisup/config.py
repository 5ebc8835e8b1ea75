"""Run configuration: dataclasses, TOML ingestion, and dotted overrides.

Config files are TOML with one section per module (``[augment]``,
``[strong]``, ``[attention]``, ``[dta]``, ``[snl]``, ``[loss]``,
``[train]``, ``[model]``, ``[data]``). ``--set section.key=value``
overrides individual entries; values are parsed as TOML literals.
Validation collects every problem before reporting, so a bad config
fails once with the full list.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    """Raised with every detected config problem joined into one message."""


@dataclass
class AugmentConfig:
    working_size: int = 256
    crop_size: int = 224
    flip_prob: float = 0.5
    normalize: bool = True


@dataclass
class StrongPolicyConfig:
    n_ops: int = 3
    magnitude: int = 5
    op_subset: Optional[list[str]] = None


@dataclass
class AttentionConfig:
    enabled: bool = True
    num_branches: int = 6
    reduction: int = 16
    drop_p: float = 0.5


@dataclass
class DtaConfig:
    enabled: bool = True
    mu: float = 0.9
    tau_init: float = 0.8
    ema_decay: float = 0.999
    full_pass_stats: bool = False


@dataclass
class SnlConfig:
    enabled: bool = True
    delta: float = 0.05
    log_form: bool = False


@dataclass
class LossConfig:
    lambda1: float = 0.5
    lambda2: float = 0.1


@dataclass
class ModelConfig:
    in_channels: int = 3
    channels: list[int] = field(default_factory=lambda: [16, 32, 64])


@dataclass
class TrainSection:
    epochs: int = 30
    batch_size: int = 128
    labeled_fraction_of_batch: float = 0.5
    learning_rate: float = 0.0005
    seed: int = 0
    eval_every: int = 1
    log_prob_trace: bool = False


@dataclass
class DataConfig:
    manifest: str = "data/manifest.jsonl"
    num_classes: int = 7


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    strong: StrongPolicyConfig = field(default_factory=StrongPolicyConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    dta: DtaConfig = field(default_factory=DtaConfig)
    snl: SnlConfig = field(default_factory=SnlConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def snapshot_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_SECTIONS = {
    "data": DataConfig,
    "augment": AugmentConfig,
    "strong": StrongPolicyConfig,
    "attention": AttentionConfig,
    "dta": DtaConfig,
    "snl": SnlConfig,
    "loss": LossConfig,
    "model": ModelConfig,
    "train": TrainSection,
}


def _coerce(value: Any, target_type: Any, errors: list[str], where: str) -> Any:
    if target_type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if target_type is int and isinstance(value, bool):
        errors.append(f"{where}: expected int, got bool")
        return value
    if target_type in (int, float, bool, str, list) and not isinstance(value, target_type):
        errors.append(f"{where}: expected {target_type.__name__}, got {type(value).__name__}")
    return value


def _apply_section(cfg_obj: Any, section: str, values: dict[str, Any], errors: list[str]) -> None:
    known = {f.name: f for f in dataclasses.fields(cfg_obj)}
    for key, value in values.items():
        if key not in known:
            errors.append(f"unknown key {section}.{key}")
            continue
        f = known[key]
        ftype = f.type
        # Optional[list[str]] carries None through; otherwise coerce by the
        # concrete type of the default.
        if value is None or "Optional" in str(ftype):
            setattr(cfg_obj, key, value)
            continue
        current = getattr(cfg_obj, key)
        target = type(current) if current is not None else None
        if target is not None:
            before = len(errors)
            value = _coerce(value, target, errors, f"{section}.{key}")
            if len(errors) > before:
                continue  # keep the default; the error is already recorded
        setattr(cfg_obj, key, value)


def parse_set_value(raw: str) -> Any:
    """Parse a ``--set`` value as a TOML literal, falling back to string."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(data: dict[str, Any], overrides: list[str], errors: list[str]) -> None:
    for item in overrides:
        if "=" not in item:
            errors.append(f"override {item!r} is not of the form section.key=value")
            continue
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        if len(parts) != 2:
            errors.append(f"override key {dotted!r} must be section.key")
            continue
        section, key = parts
        data.setdefault(section, {})[key] = parse_set_value(raw.strip())


def load_config(
    path: str | Path | None = None,
    overrides: Optional[list[str]] = None,
    seed: Optional[int] = None,
) -> RunConfig:
    """Build a RunConfig from an optional TOML file plus overrides.

    Raises ConfigError listing every bad section, key, type, and value
    at once.
    """
    errors: list[str] = []
    data: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        with p.open("rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{p}: invalid TOML: {exc}") from exc
    apply_overrides(data, overrides or [], errors)

    cfg = RunConfig()
    for section, values in data.items():
        if section not in _SECTIONS:
            errors.append(f"unknown section [{section}]")
            continue
        if not isinstance(values, dict):
            errors.append(f"section [{section}] must be a table")
            continue
        _apply_section(getattr(cfg, section), section, values, errors)

    if seed is not None:
        cfg.train.seed = int(seed)

    errors.extend(validate_config(cfg))
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return cfg


def validate_config(cfg: RunConfig) -> list[str]:
    """Range/consistency checks. Returns a list of problems (empty if ok)."""
    errs: list[str] = []
    if cfg.train.batch_size < 2:
        errs.append(f"train.batch_size must be >= 2, got {cfg.train.batch_size}")
    if not 0.0 < cfg.train.labeled_fraction_of_batch < 1.0:
        errs.append(
            "train.labeled_fraction_of_batch must be in (0, 1), got "
            f"{cfg.train.labeled_fraction_of_batch}"
        )
    if cfg.train.epochs < 1:
        errs.append(f"train.epochs must be >= 1, got {cfg.train.epochs}")
    if cfg.train.learning_rate <= 0:
        errs.append(f"train.learning_rate must be > 0, got {cfg.train.learning_rate}")
    if cfg.train.eval_every < 1:
        errs.append(f"train.eval_every must be >= 1, got {cfg.train.eval_every}")
    if cfg.augment.crop_size > cfg.augment.working_size:
        errs.append(
            f"augment.crop_size {cfg.augment.crop_size} exceeds working_size "
            f"{cfg.augment.working_size}"
        )
    if cfg.augment.crop_size < 1:
        errs.append(f"augment.crop_size must be >= 1, got {cfg.augment.crop_size}")
    if not 0.0 <= cfg.augment.flip_prob <= 1.0:
        errs.append(f"augment.flip_prob must be in [0, 1], got {cfg.augment.flip_prob}")
    if cfg.strong.n_ops < 0:
        errs.append(f"strong.n_ops must be >= 0, got {cfg.strong.n_ops}")
    if not 0 <= cfg.strong.magnitude <= 10:
        errs.append(f"strong.magnitude must be in [0, 10], got {cfg.strong.magnitude}")
    if cfg.attention.num_branches < 1:
        errs.append(f"attention.num_branches must be >= 1, got {cfg.attention.num_branches}")
    if cfg.attention.reduction < 1:
        errs.append(f"attention.reduction must be >= 1, got {cfg.attention.reduction}")
    if not 0.0 <= cfg.attention.drop_p <= 1.0:
        errs.append(f"attention.drop_p must be in [0, 1], got {cfg.attention.drop_p}")
    if not 0.0 <= cfg.dta.mu <= 1.0:
        errs.append(f"dta.mu must be in [0, 1], got {cfg.dta.mu}")
    if not 0.0 <= cfg.dta.tau_init <= 1.0:
        errs.append(f"dta.tau_init must be in [0, 1], got {cfg.dta.tau_init}")
    if not 0.0 <= cfg.dta.ema_decay <= 1.0:
        errs.append(f"dta.ema_decay must be in [0, 1], got {cfg.dta.ema_decay}")
    if not 0.0 < cfg.snl.delta < 1.0:
        errs.append(f"snl.delta must be in (0, 1), got {cfg.snl.delta}")
    if cfg.loss.lambda1 < 0:
        errs.append(f"loss.lambda1 must be >= 0, got {cfg.loss.lambda1}")
    if cfg.loss.lambda2 < 0:
        errs.append(f"loss.lambda2 must be >= 0, got {cfg.loss.lambda2}")
    if cfg.data.num_classes < 2:
        errs.append(f"data.num_classes must be >= 2, got {cfg.data.num_classes}")
    if not cfg.model.channels:
        errs.append("model.channels must name at least one stage")
    return errs
