"""Run configuration: nested dataclasses loaded from JSON with strict key checking."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass

from .dataset import GenConfig
from .errors import ConfigError, PartGraspError
from .experiment import AREAS, SELECTIONS, ExperimentConfig
from .grasp import HandConfig, SamplerRules
from .grounding import GrounderTrainConfig
from .language import MODES
from .scoring import ScorerTrainConfig
from .splits import SplitSpec


@dataclass(frozen=True)
class EvalSettings:
    areas: tuple[str, ...] = AREAS
    selections: tuple[str, ...] = SELECTIONS
    best_part: tuple[bool, ...] = (False, True)
    language_mode: str = "part_object_fragment"
    scorer: str = "analytic"
    grounder: str = "rule"
    placement: int = 0
    grounding_modes: tuple[str, ...] = MODES

    def __post_init__(self):
        bad = [m for m in self.grounding_modes if m not in MODES]
        if bad:
            raise ConfigError(f"unknown language modes: {', '.join(bad)}")


@dataclass(frozen=True)
class TrainSettings:
    grounder: GrounderTrainConfig = GrounderTrainConfig()
    scorer: ScorerTrainConfig = ScorerTrainConfig()
    language_mode: str = "full_data"
    placement: int = 0

    def __post_init__(self):
        if self.language_mode not in MODES:
            raise ConfigError(f"unknown language mode {self.language_mode!r}")


@dataclass(frozen=True)
class Config:
    seed: int = 0
    out: str | None = None
    data_root: str | None = None
    templates: str | None = None
    hand: HandConfig = HandConfig()
    sampler: SamplerRules = SamplerRules()
    gen: GenConfig = GenConfig()
    split: SplitSpec = SplitSpec()
    train: TrainSettings = TrainSettings()
    eval: EvalSettings = EvalSettings()

    def __post_init__(self):
        self.experiment()

    def experiment(self) -> ExperimentConfig:
        e = self.eval
        return ExperimentConfig(e.areas, e.selections, e.best_part, e.language_mode, e.scorer, e.grounder,
                                e.placement, self.seed, self.hand, self.sampler)

    def to_json(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        return build(tp, value, where)
    if origin is typing.Union or str(origin) == "types.UnionType":
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, where) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} values")
        return tuple(_coerce(a, v, where) for a, v in zip(args, value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def build(cls, data, where: str = "config"):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except PartGraspError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def load_config(path=None, overrides: dict | None = None) -> Config:
    data: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from None
    if overrides:
        data = merge(data, overrides)
    return build(Config, data)


def merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out
