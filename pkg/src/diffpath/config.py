"""Run-configuration schema: strict parsing, canonical serialization, builders.

A run config is a single JSON document with five sections (seed, model,
conditions, sampler, manipulation, output).  Parsing is strict: unknown keys
anywhere are rejected so typos cannot silently change a run.  The canonical
serialization is byte-stable, and its SHA-256 prefix is the run's digest.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .denoiser import ConditionEmbedding, GMMDenoiser, GMMDenoiserParams
from .edits import ManipulationConfig, normalize_kind, validate_mask
from .errors import ConfigError
from .schedule import (AlphaSchedule, ScheduleSpec, TimestepGrid,
                       build_linear_beta_schedule, make_timestep_grid)

OUTPUT_DIR_ENV = "DIFFPATH_OUTPUT_DIR"


def _require(mapping: Mapping[str, Any], section: str, keys: tuple[str, ...],
             optional: tuple[str, ...] = ()) -> None:
    if not isinstance(mapping, Mapping):
        raise ConfigError(f"{section} must be an object")
    unknown = set(mapping) - set(keys) - set(optional)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    missing = [k for k in keys if k not in mapping]
    if missing:
        raise ConfigError(f"missing keys in {section}: {missing}")


@dataclass(frozen=True)
class ComponentCfg:
    weight: float
    base_mean: tuple[float, ...]
    condition_map: tuple[tuple[float, ...], ...]
    variance: float

    @staticmethod
    def from_dict(data: Mapping[str, Any], where: str) -> "ComponentCfg":
        _require(data, where, ("weight", "base_mean", "condition_map", "variance"))
        return ComponentCfg(
            weight=float(data["weight"]),
            base_mean=tuple(float(v) for v in data["base_mean"]),
            condition_map=tuple(tuple(float(v) for v in row) for row in data["condition_map"]),
            variance=float(data["variance"]))

    def to_dict(self) -> dict:
        return {"weight": self.weight, "base_mean": list(self.base_mean),
                "condition_map": [list(r) for r in self.condition_map],
                "variance": self.variance}


@dataclass(frozen=True)
class ModelCfg:
    d: int
    m: int
    components: tuple[ComponentCfg, ...]

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "ModelCfg":
        _require(data, "model", ("d", "m", "components"))
        comps = tuple(ComponentCfg.from_dict(c, f"model.components[{i}]")
                      for i, c in enumerate(data["components"]))
        return ModelCfg(d=int(data["d"]), m=int(data["m"]), components=comps)

    def to_dict(self) -> dict:
        return {"d": self.d, "m": self.m,
                "components": [c.to_dict() for c in self.components]}


@dataclass(frozen=True)
class SamplerCfg:
    t_train: int
    t_sample: int
    beta_min: float
    beta_max: float

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "SamplerCfg":
        _require(data, "sampler", ("t_train", "t_sample", "beta_min", "beta_max"))
        return SamplerCfg(t_train=int(data["t_train"]), t_sample=int(data["t_sample"]),
                          beta_min=float(data["beta_min"]), beta_max=float(data["beta_max"]))

    def to_dict(self) -> dict:
        return {"t_train": self.t_train, "t_sample": self.t_sample,
                "beta_min": self.beta_min, "beta_max": self.beta_max}


@dataclass(frozen=True)
class ScheduleCfg:
    kind: str
    t_min: int
    t_max: int
    amplitude: float

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "ScheduleCfg":
        _require(data, "manipulation.schedule", ("kind", "t_min", "t_max"), ("amplitude",))
        return ScheduleCfg(kind=str(data["kind"]), t_min=int(data["t_min"]),
                           t_max=int(data["t_max"]),
                           amplitude=float(data.get("amplitude", 1.0)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "t_min": self.t_min, "t_max": self.t_max,
                "amplitude": self.amplitude}


@dataclass(frozen=True)
class ManipulationCfg:
    kind: str
    schedule: ScheduleCfg
    condition_a: str = "a"
    condition_b: str = "b"
    beta: float | None = None
    mask: tuple[float, ...] | None = None
    cam_hook: str | None = None

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "ManipulationCfg":
        _require(data, "manipulation", ("kind", "schedule"),
                 ("beta", "mask", "cam_hook", "condition_a", "condition_b"))
        mask = data.get("mask")
        return ManipulationCfg(
            kind=normalize_kind(str(data["kind"])),
            schedule=ScheduleCfg.from_dict(data["schedule"]),
            condition_a=str(data.get("condition_a", "a")),
            condition_b=str(data.get("condition_b", "b")),
            beta=None if data.get("beta") is None else float(data["beta"]),
            mask=None if mask is None else tuple(float(v) for v in mask),
            cam_hook=None if data.get("cam_hook") is None else str(data["cam_hook"]))

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "schedule": self.schedule.to_dict(),
                               "condition_a": self.condition_a,
                               "condition_b": self.condition_b}
        if self.beta is not None:
            out["beta"] = self.beta
        if self.mask is not None:
            out["mask"] = list(self.mask)
        if self.cam_hook is not None:
            out["cam_hook"] = self.cam_hook
        return out


@dataclass(frozen=True)
class OutputCfg:
    directory: str
    formats: tuple[str, ...] = ("csv", "svg")

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "OutputCfg":
        _require(data, "output", (), ("directory", "formats"))
        directory = data.get("directory") or os.environ.get(OUTPUT_DIR_ENV, "out")
        formats = tuple(str(f) for f in data.get("formats", ("csv", "svg")))
        for f in formats:
            if f not in ("csv", "svg"):
                raise ConfigError(f"unknown output format {f!r}")
        return OutputCfg(directory=str(directory), formats=formats)

    def to_dict(self) -> dict:
        return {"directory": self.directory, "formats": list(self.formats)}


@dataclass(frozen=True)
class RunConfig:
    seed: int
    model: ModelCfg
    conditions: tuple[tuple[str, tuple[float, ...]], ...]
    sampler: SamplerCfg
    manipulation: ManipulationCfg | None
    output: OutputCfg

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "RunConfig":
        _require(data, "config", ("seed", "model", "conditions", "sampler"),
                 ("manipulation", "output"))
        conditions = data["conditions"]
        if not isinstance(conditions, Mapping):
            raise ConfigError("conditions must map names to vectors")
        cond_items = tuple((str(name), tuple(float(v) for v in vec))
                           for name, vec in conditions.items())
        manip = data.get("manipulation")
        cfg = RunConfig(
            seed=int(data["seed"]),
            model=ModelCfg.from_dict(data["model"]),
            conditions=cond_items,
            sampler=SamplerCfg.from_dict(data["sampler"]),
            manipulation=None if manip is None else ManipulationCfg.from_dict(manip),
            output=OutputCfg.from_dict(data.get("output", {})))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "seed": self.seed,
            "model": self.model.to_dict(),
            "conditions": {name: list(vec) for name, vec in self.conditions},
            "sampler": self.sampler.to_dict(),
        }
        if self.manipulation is not None:
            out["manipulation"] = self.manipulation.to_dict()
        out["output"] = self.output.to_dict()
        return out

    def condition_vectors(self) -> dict[str, tuple[float, ...]]:
        return dict(self.conditions)

    def validate(self) -> None:
        """Cross-section invariants; raises ConfigError on the first failure."""
        try:
            params = self.build_model()
            conditions = self.build_conditions()
            schedule = self.build_noise_schedule()
            grid = self.build_grid()
            if grid.t_sample != self.sampler.t_sample:
                raise ConfigError("grid construction mismatch")
            if self.manipulation is not None:
                manip = self.manipulation
                for name in (manip.condition_a, manip.condition_b):
                    if name not in conditions:
                        raise ConfigError(f"manipulation references unknown condition {name!r}")
                self.build_manipulation()
            _ = params, schedule
        except ConfigError:
            raise
        except Exception as err:
            raise ConfigError(str(err)) from err

    def build_model(self) -> GMMDenoiserParams:
        comps = self.model.components
        if not comps:
            raise ConfigError("model needs at least one component")
        return GMMDenoiserParams(
            weights=np.array([c.weight for c in comps]),
            base_means=np.array([c.base_mean for c in comps]),
            condition_maps=np.array([c.condition_map for c in comps]),
            variances=np.array([c.variance for c in comps]))

    def build_denoiser(self) -> GMMDenoiser:
        return GMMDenoiser(self.build_model())

    def build_conditions(self) -> dict[str, ConditionEmbedding]:
        named = {}
        for name, vec in self.conditions:
            if len(vec) != self.model.m:
                raise ConfigError(f"condition {name!r} has dimension {len(vec)}, "
                                  f"model expects {self.model.m}")
            named[name] = ConditionEmbedding(np.array(vec), is_null=(name == "null"))
        if "null" not in named:
            named["null"] = ConditionEmbedding(np.zeros(self.model.m), is_null=True)
        return named

    def build_noise_schedule(self) -> AlphaSchedule:
        return build_linear_beta_schedule(self.sampler.t_train, self.sampler.beta_min,
                                          self.sampler.beta_max)

    def build_grid(self) -> TimestepGrid:
        return make_timestep_grid(self.sampler.t_train, self.sampler.t_sample)

    def build_manipulation(self) -> ManipulationConfig:
        if self.manipulation is None:
            raise ConfigError("config has no manipulation section")
        manip = self.manipulation
        spec = ScheduleSpec(kind=manip.schedule.kind, t_min=manip.schedule.t_min,
                            t_max=manip.schedule.t_max, total=self.sampler.t_sample,
                            amplitude=manip.schedule.amplitude)
        mask = None
        if manip.mask is not None:
            mask = validate_mask(np.array(manip.mask), self.model.d)
        return ManipulationConfig(kind=manip.kind, schedule=spec, beta=manip.beta,
                                  mask=mask, cam_hook=manip.cam_hook)


def parse_config(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    return RunConfig.from_dict(data)


def canonical_json(config: RunConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=False) + "\n"


def config_digest(config: RunConfig) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()[:12]


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``path.to.key=value`` overrides to a raw config dict.

    Values parse as JSON when possible and fall back to plain strings;
    integer path segments index into lists.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        keys = path.split(".")
        target: Any = data
        for key in keys[:-1]:
            if isinstance(target, list):
                target = target[int(key)]
            else:
                target = target.setdefault(key, {})
            if not isinstance(target, (dict, list)):
                raise ConfigError(f"override path {path!r} crosses a non-container")
        last = keys[-1]
        if isinstance(target, list):
            target[int(last)] = value
        else:
            target[last] = value
    return data
