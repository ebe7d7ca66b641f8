"""Experiment configuration: one TOML file with a table per module.

Every key has a default, so an empty file (or no file) is a complete
configuration.  Unknown keys and invalid values raise :class:`ConfigError`
naming the offending ``section.key``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomlkit

from .control import ControllerConfig
from .errors import ConfigError
from .estimation import EstimatorConfig
from .exploration import ACTIONS, ActionSpec, TrialVariation, default_actions, default_catalog, load_catalog
from .sim import RobotParams


@dataclass(frozen=True)
class CampaignConfig:
    catalog: str = "default"
    objects: tuple = ()
    trials_per_pair: int = 25
    seed: int = 0
    batch_size: int = 100
    jobs: int = 1
    variation_surface: float = 0.03
    variation_action: float = 0.1

    def variation(self):
        return TrialVariation(surface=self.variation_surface, action=self.variation_action)


@dataclass(frozen=True)
class FeatureConfig:
    schemas: tuple = ("MP", "SF", "CSSF")
    window: float = 2.0
    cssf_fixed: bool = False


@dataclass(frozen=True)
class LearningConfig:
    folds: int = 4
    repetitions: int = 100
    k: int = 20
    cluster_repetitions: int = 40
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    robot: RobotParams = field(default_factory=RobotParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    actions: dict = field(default_factory=default_actions)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    source: str = ""

    def catalog(self):
        """Resolved catalog, restricted to ``campaign.objects`` when set."""
        src = self.campaign.catalog
        if src == "default":
            cat = default_catalog()
        else:
            path = Path(src)
            if not path.is_absolute() and self.source:
                path = Path(self.source).parent / path
            if not path.is_file():
                raise ConfigError(f"catalog file {src} does not exist", "campaign.catalog")
            try:
                cat = load_catalog(path)
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"unreadable catalog {src}: {exc}", "campaign.catalog") from exc
        if self.campaign.objects:
            known = {s.label for s in cat}
            missing = sorted(set(self.campaign.objects) - known)
            if missing:
                raise ConfigError(f"unknown object label(s) {missing}", "campaign.objects")
            cat = [s for s in cat if s.label in set(self.campaign.objects)]
        return cat

    def to_dict(self):
        ctrl = {k: v for k, v in asdict(self.controller).items() if k != "reference"}
        return _lists({
            "campaign": asdict(self.campaign),
            "robot": asdict(self.robot),
            "controller": ctrl,
            "estimator": asdict(self.estimator),
            "actions": {k: a.as_dict() for k, a in self.actions.items()},
            "features": asdict(self.features),
            "learning": asdict(self.learning),
        })

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _lists(obj):
    if isinstance(obj, dict):
        return {k: _lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_lists(v) for v in obj]
    return obj


def _build(cls, data, section, skip=()):
    names = {f.name: f for f in fields(cls) if f.name not in skip}
    for key in data:
        if key not in names:
            raise ConfigError("unknown key", f"{section}.{key}")
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        ref = getattr(defaults, key)
        path = f"{section}.{key}"
        if isinstance(ref, bool):
            if not isinstance(value, bool):
                raise ConfigError("expected true or false", path)
        elif isinstance(ref, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError("expected an integer", path)
        elif isinstance(ref, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError("expected a number", path)
            value = float(value)
        elif isinstance(ref, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError("expected a list", path)
            value = tuple(value)
        elif isinstance(ref, str) and not isinstance(value, str):
            raise ConfigError("expected a string", path)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), section) from exc


def config_from_mapping(data, source="") -> ExperimentConfig:
    data = dict(data)
    known = {"campaign", "robot", "controller", "estimator", "actions", "features", "learning"}
    for key in data:
        if key not in known:
            raise ConfigError("unknown section", key)
    for key, value in data.items():
        if not isinstance(value, dict):
            raise ConfigError("expected a table", key)
    actions = default_actions()
    for kind, table in data.get("actions", {}).items():
        if kind not in ACTIONS:
            raise ConfigError("unknown action", f"actions.{kind}")
        if not isinstance(table, dict):
            raise ConfigError("expected a table", f"actions.{kind}")
        if "kind" in table and table["kind"] != kind:
            raise ConfigError("kind must match the table name", f"actions.{kind}.kind")
        _build(_ActionFields, {k: v for k, v in table.items() if k != "kind"}, f"actions.{kind}")
        try:
            actions[kind] = ActionSpec.from_dict({**actions[kind].as_dict(), **table})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), f"actions.{kind}") from exc
    cfg = ExperimentConfig(
        campaign=_build(CampaignConfig, data.get("campaign", {}), "campaign"),
        robot=_build(RobotParams, data.get("robot", {}), "robot"),
        controller=_build(ControllerConfig, data.get("controller", {}), "controller",
                          skip=("reference",)),
        estimator=_build(EstimatorConfig, data.get("estimator", {}), "estimator"),
        actions=actions,
        features=_build(FeatureConfig, data.get("features", {}), "features"),
        learning=_build(LearningConfig, data.get("learning", {}), "learning"),
        source=str(source),
    )
    _validate(cfg)
    return cfg


@dataclass(frozen=True)
class _ActionFields:
    """Type template for the editable fields of an action table."""

    duration: float = 0.0
    amplitude: float = 0.0
    frequency: float = 0.0
    offset: float = 0.0
    slide_speed: float = 0.0
    hold_force: float = 0.0
    approach_speed: float = 0.0
    approach_gap: float = 0.0
    release: float = 0.0
    settle: float = 0.0
    press_rate: float = 0.0
    threshold: float = 0.0


def _validate(cfg: ExperimentConfig):
    c = cfg.campaign
    if c.trials_per_pair < 1:
        raise ConfigError("must be >= 1", "campaign.trials_per_pair")
    if c.batch_size < 1:
        raise ConfigError("must be >= 1", "campaign.batch_size")
    if c.jobs < 1:
        raise ConfigError("must be >= 1", "campaign.jobs")
    for key in ("variation_surface", "variation_action"):
        if getattr(c, key) < 0:
            raise ConfigError("must be >= 0", f"campaign.{key}")
    if any(isinstance(o, bool) or not isinstance(o, int) for o in c.objects):
        raise ConfigError("object labels must be integers", "campaign.objects")
    bad = [s for s in cfg.features.schemas if s not in ("MP", "SF", "SF36", "CSSF")]
    if bad:
        raise ConfigError(f"unknown schema(s) {bad}", "features.schemas")
    if cfg.features.window <= 0:
        raise ConfigError("must be positive", "features.window")
    lc = cfg.learning
    if lc.folds < 2:
        raise ConfigError("must be >= 2", "learning.folds")
    if lc.repetitions < 1 or lc.cluster_repetitions < 1:
        raise ConfigError("must be >= 1", "learning.repetitions")
    if lc.k < 1:
        raise ConfigError("must be >= 1", "learning.k")
    for kind, a in cfg.actions.items():
        if a.duration <= 0:
            raise ConfigError("must be positive", f"actions.{kind}.duration")


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return config_from_mapping({})
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist", "--config")
    try:
        data = tomlkit.parse(path.read_text()).unwrap()
    except tomlkit.exceptions.TOMLKitError as exc:
        raise ConfigError(f"invalid TOML: {exc}", str(path)) from exc
    return config_from_mapping(data, source=path)


def dump_config(cfg: ExperimentConfig = None) -> str:
    return tomlkit.dumps((cfg or ExperimentConfig()).to_dict())
