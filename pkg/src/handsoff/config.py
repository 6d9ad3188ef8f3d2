"""Run configuration files.

A run configuration is a YAML mapping::

    schema: handsoff.run/1
    preset: pendulum_table1      # optional base; keys below override it
    model:   {kind: pendulum, length: 1.0, ...}   # or {kind: linear, A: .., B: ..}
    train:   {horizon: 50, lam_polish: 3.0e+7, noise: {kind: uniform, ...}, ...}
    eval:    {n_eval: 100, seed: 1, threshold: 0.001}

Unknown keys are rejected with the dotted path of the offending field.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .dynamics import LinearSystem, Pendulum, PendulumParams, SystemModel
from .objective import DEFAULT_THRESHOLD
from .trainer import TrainConfig

__all__ = ["SCHEMA", "ConfigError", "EvalSettings", "RunConfig", "load_config", "parse_config", "preset", "PRESETS"]

SCHEMA = "handsoff.run/1"
PRESETS = ("pendulum_table1", "integrator")


class ConfigError(ValueError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = []
        if path:
            where.append(f"field '{path}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.path = path
        self.line = line


@dataclass
class EvalSettings:
    n_eval: int = 100
    seed: int = 1
    threshold: float = DEFAULT_THRESHOLD


@dataclass
class RunConfig:
    model: dict = field(default_factory=lambda: {"kind": "pendulum"})
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)

    def build_model(self) -> SystemModel:
        return build_model(self.model)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "model": dict(self.model),
            "train": self.train.to_dict(),
            "eval": dataclasses.asdict(self.eval),
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_PENDULUM_KEYS = {f.name for f in dataclasses.fields(PendulumParams)}


def build_model(spec: dict) -> SystemModel:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "pendulum":
        unknown = set(spec) - _PENDULUM_KEYS
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)}", "model")
        try:
            return Pendulum(PendulumParams(**{k: float(v) for k, v in spec.items()}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "model") from None
    if kind == "linear":
        unknown = set(spec) - {"A", "B", "E"}
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)}", "model")
        try:
            return LinearSystem(spec["A"], spec["B"], spec.get("E"))
        except KeyError as exc:
            raise ConfigError(f"missing key {exc}", "model") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "model") from None
    raise ConfigError(f"unknown model kind {kind!r} (expected 'pendulum' or 'linear')", "model.kind")


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "model":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _section(cls, data, name):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", name)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", f"{name}.{key}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), name) from None


_INT_FIELDS = {"horizon", "batch_size", "polish_batch_size", "stage_iters", "polish_rounds", "polish_iters", "seed"}


def _check_types(train: dict):
    for key, value in train.items():
        if key in _INT_FIELDS and value is not None and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"expected an integer, got {value!r}", f"train.{key}")
        if key in ("x0", "target") and not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list of numbers, got {value!r}", f"train.{key}")


def parse_config(data: dict) -> RunConfig:
    """Validate a mapping (already loaded from YAML) into a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    data = dict(data)
    schema = data.pop("schema", None)
    if schema != SCHEMA:
        raise ConfigError(f"expected {SCHEMA!r}, got {schema!r}", "schema")
    name = data.pop("preset", None)
    if name is not None:
        base = _raw_preset(name)
        base.pop("schema")
        data = _merge(base, data)
    for key in data:
        if key not in ("model", "train", "eval"):
            raise ConfigError("unknown key", key)
    model = data.get("model", {"kind": "pendulum"})
    if not isinstance(model, dict):
        raise ConfigError("expected a mapping", "model")
    train_data = data.get("train") or {}
    if isinstance(train_data, dict):
        _check_types(train_data)
    train = _section(TrainConfig, train_data, "train")
    settings = _section(EvalSettings, data.get("eval"), "eval")
    cfg = RunConfig(dict(model), train, settings)
    built = cfg.build_model()
    if len(train.x0) != built.state_dim or len(train.target) != built.state_dim:
        raise ConfigError(f"x0 and target need {built.state_dim} entries", "train.x0")
    return cfg


def _raw_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}", "preset")
    text = resources.files("handsoff.presets").joinpath(f"{name}.yaml").read_text()
    return yaml.safe_load(text)


def preset(name: str) -> RunConfig:
    return parse_config(_raw_preset(name))


def load_config(source: str | Path) -> RunConfig:
    """Load a config file, or a bundled preset when ``source`` names one."""
    if str(source) in PRESETS and not Path(source).exists():
        return preset(str(source))
    text = Path(source).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ConfigError(exc.problem or "malformed YAML", line=line) from None
    return parse_config(data)

