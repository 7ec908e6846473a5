"""Run configuration: a strict YAML/JSON key set mapped onto dataclasses."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .attacks import ATTACKS, AttackConfig
from .influence import METHODS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"  # blobs | rings | idx
    n_classes: int = 3
    per_class: int = 1800
    dim: int = 32
    spread: float = 0.09
    spacing: float = 0.133
    noise: float = 0.05  # rings
    images: str | None = None  # idx
    labels: str | None = None
    limit: int | None = None
    n_train: int = 4000
    n_val: int = 400
    n_test: int = 1000


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple[int, ...] = (32, 16)


@dataclass(frozen=True)
class TrainSection:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 64
    weight_decay: float = 4e-4


@dataclass(frozen=True)
class InfluenceSection:
    method: str = "exact"
    damping: float = 0.01
    calibrate: bool = True
    subsample_frac: float = 1.0
    invert_sign: str | bool = "auto"  # auto picks the orientation on validation data
    lissa_depth: int = 1000
    lissa_scale: float = 10.0
    lissa_repeats: int = 1
    lissa_batch_size: int | None = None
    cg_max_iter: int = 1000
    cg_tol: float = 1e-10


@dataclass(frozen=True)
class DetectorSection:
    m_grid: tuple[int, ...] = (5, 10, 20, 40)
    folds: int = 5
    l2: float = 1.0
    layers: str = "all"  # "embedding" fits embedding-layer detectors only; "all" adds all-layer ones
    threshold: float = 0.5


@dataclass(frozen=True)
class WhiteboxSection:
    enabled: bool = True
    m: int = 20
    reg_weight: float = 0.1
    reg_norm: str = "l1"


@dataclass(frozen=True)
class EvalSection:
    ablation_attack: str = "deepfool"
    generalization_source: str = "fgsm"


DEFAULT_ATTACKS = {"fgsm": {"eps": 0.1}, "pgd": {"eps": 0.1}, "jsma": {}, "deepfool": {}, "cw": {}, "ead": {}}


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    seeds: tuple[int, ...] = (0,)
    dataset: DatasetConfig = DatasetConfig()
    model: ModelConfig = ModelConfig()
    train: TrainSection = TrainSection()
    attacks: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_ATTACKS.items()})
    influence: InfluenceSection = InfluenceSection()
    detector: DetectorSection = DetectorSection()
    whitebox: WhiteboxSection = WhiteboxSection()
    eval: EvalSection = EvalSection()

    @property
    def max_m(self) -> int:
        return max(max(self.detector.m_grid), self.whitebox.m if self.whitebox.enabled else 0)

    def attack_config(self, name: str, seed: int) -> AttackConfig:
        if name == "cw_opt":
            params = dict(self.attacks.get("cw", {}), reg_weight=self.whitebox.reg_weight,
                          reg_norm=self.whitebox.reg_norm)
        else:
            params = self.attacks[name]
        return AttackConfig(name=name, seed=seed, **params)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


def section_hash(*parts) -> str:
    """Stable digest of JSON-serialisable parts (used as cache keys)."""
    text = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(text.encode()).hexdigest()


def _build(cls, raw, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    values = {}
    for key, value in raw.items():
        default = getattr(cls(), key)
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{where}.{key}: expected a list")
            value = tuple(value)
        values[key] = value
    return cls(**values)


def _check(cfg: RunConfig) -> None:
    ds = cfg.dataset
    if ds.kind not in ("blobs", "rings", "idx"):
        raise ConfigError(f"dataset.kind must be blobs, rings or idx, not {ds.kind!r}")
    if ds.kind == "idx" and not (ds.images and ds.labels):
        raise ConfigError("dataset.images and dataset.labels are required for kind idx")
    if min(ds.n_train, ds.n_val, ds.n_test) <= 0:
        raise ConfigError("dataset split sizes must be positive")
    if not cfg.model.hidden or min(cfg.model.hidden) <= 0:
        raise ConfigError("model.hidden must list positive widths")
    if not cfg.seeds:
        raise ConfigError("seeds must not be empty")
    if cfg.influence.method not in METHODS:
        raise ConfigError(f"influence.method must be one of {METHODS}")
    if not 0.0 < cfg.influence.subsample_frac <= 1.0:
        raise ConfigError("influence.subsample_frac must lie in (0, 1]")
    if cfg.influence.invert_sign not in ("auto", True, False):
        raise ConfigError("influence.invert_sign must be auto, true or false")
    if cfg.detector.layers not in ("embedding", "all"):
        raise ConfigError("detector.layers must be 'embedding' or 'all'")
    if not cfg.detector.m_grid or min(cfg.detector.m_grid) < 1:
        raise ConfigError("detector.m_grid must list positive integers")
    if cfg.detector.folds < 2:
        raise ConfigError("detector.folds must be at least 2")
    if not cfg.attacks:
        raise ConfigError("attacks must name at least one attack")
    fields = {f.name for f in dataclasses.fields(AttackConfig)} - {"name", "seed"}
    for name, params in cfg.attacks.items():
        if name not in ATTACKS or name == "cw_opt":
            raise ConfigError(f"attacks: unknown attack {name!r}")
        if not isinstance(params, dict):
            raise ConfigError(f"attacks.{name}: expected a mapping")
        unknown = sorted(set(params) - fields)
        if unknown:
            raise ConfigError(f"attacks.{name}: unknown key(s) {', '.join(unknown)}")
        try:
            cfg.attack_config(name, 0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"attacks.{name}: {exc}") from exc
    if cfg.whitebox.enabled and "cw" not in cfg.attacks:
        raise ConfigError("whitebox evaluation needs the cw attack")
    for key in ("ablation_attack", "generalization_source"):
        if getattr(cfg.eval, key) not in cfg.attacks:
            raise ConfigError(f"eval.{key} must be one of the configured attacks")


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    sections = {"dataset": DatasetConfig, "model": ModelConfig, "train": TrainSection,
                "influence": InfluenceSection, "detector": DetectorSection, "whitebox": WhiteboxSection,
                "eval": EvalSection}
    allowed = set(sections) | {"name", "seeds", "attacks"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    kwargs = {key: _build(cls, raw.get(key), key) for key, cls in sections.items()}
    if "name" in raw:
        kwargs["name"] = str(raw["name"])
    if "seeds" in raw:
        seeds = raw["seeds"]
        kwargs["seeds"] = tuple(int(s) for s in (seeds if isinstance(seeds, list) else [seeds]))
    if "attacks" in raw:
        attacks = raw["attacks"]
        if isinstance(attacks, list):
            attacks = {name: {} for name in attacks}
        if not isinstance(attacks, dict):
            raise ConfigError("attacks: expected a list or mapping")
        kwargs["attacks"] = {k: dict(v or {}) for k, v in attacks.items()}
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _check(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw)


def override(cfg: RunConfig, seed=None, layers=None, subsample_frac=None) -> RunConfig:
    """Apply command-line overrides and re-validate."""
    if seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(int(seed),))
    if layers is not None:
        cfg = dataclasses.replace(cfg, detector=dataclasses.replace(cfg.detector, layers=layers))
    if subsample_frac is not None:
        cfg = dataclasses.replace(cfg, influence=dataclasses.replace(cfg.influence,
                                                                     subsample_frac=float(subsample_frac)))
    _check(cfg)
    return cfg

