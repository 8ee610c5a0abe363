"""JSON run configuration with validation and defaults.

An empty config file yields the library defaults (sigma = gamma = 1e-4,
64 contour points, 16 harmonics, Adam lr 0.01 with the 10/10/0.5 plateau
scheduler, 128x128 generation).  Validation errors name the offending field
path, e.g. "render.sigma".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .generator import GenConfig
from .renderer import RenderConfig


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.01
    budget: int = 100
    rand_cap: int = 500
    patience: int = 10
    cooldown: int = 10
    factor: float = 0.5

    def to_obj(self) -> dict:
        return {"lr": self.lr, "budget": self.budget, "rand_cap": self.rand_cap,
                "patience": self.patience, "cooldown": self.cooldown,
                "factor": self.factor}


@dataclass(frozen=True)
class Config:
    render: RenderConfig = field(default_factory=RenderConfig)
    generator: GenConfig = field(default_factory=GenConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    n_harmonics: int = 16
    seed: int = 0

    def to_obj(self) -> dict:
        return {
            "render": {"sigma": self.render.sigma, "gamma": self.render.gamma,
                       "k_points": self.render.k_points},
            "generator": self.generator.to_obj(),
            "optimizer": self.optimizer.to_obj(),
            "n_harmonics": self.n_harmonics,
            "seed": self.seed,
        }


def _require(cond: bool, path: str, message: str):
    if not cond:
        raise ValidationError(path, message)


def _num(obj: dict, key: str, path: str, default, kind=float):
    if key not in obj:
        return default
    val = obj[key]
    _require(isinstance(val, (int, float)) and not isinstance(val, bool),
             f"{path}.{key}", "must be a number")
    return kind(val)


def _section(obj: dict, key: str) -> dict:
    val = obj.get(key, {})
    _require(isinstance(val, dict), key, "must be an object")
    return val


def config_from_obj(obj: dict) -> Config:
    _require(isinstance(obj, dict), "$", "config root must be an object")
    known = {"render", "generator", "optimizer", "n_harmonics", "seed"}
    for key in obj:
        _require(key in known, key, "unknown field")

    r = _section(obj, "render")
    sigma = _num(r, "sigma", "render", 1e-4)
    gamma = _num(r, "gamma", "render", 1e-4)
    k_points = _num(r, "k_points", "render", 64, int)
    _require(sigma > 0, "render.sigma", "must be positive")
    _require(gamma > 0, "render.gamma", "must be positive")
    _require(k_points >= 3, "render.k_points", "must be at least 3")

    g = _section(obj, "generator")
    gen_kwargs = {}
    for key, caster in (("n_objects_range", tuple), ("scale_range", tuple),
                        ("translation_range", tuple)):
        if key in g:
            val = g[key]
            _require(isinstance(val, (list, tuple)) and len(val) == 2,
                     f"generator.{key}", "must be a pair")
            gen_kwargs[key] = caster(val)
    for key in ("n_placement_sets", "width", "height", "seed"):
        if key in g:
            gen_kwargs[key] = _num(g, key, "generator", None, int)
    try:
        generator = GenConfig(**gen_kwargs)
    except ValueError as exc:
        raise ValidationError("generator", str(exc)) from exc

    o = _section(obj, "optimizer")
    optimizer = OptimizerConfig(
        lr=_num(o, "lr", "optimizer", 0.01),
        budget=_num(o, "budget", "optimizer", 100, int),
        rand_cap=_num(o, "rand_cap", "optimizer", 500, int),
        patience=_num(o, "patience", "optimizer", 10, int),
        cooldown=_num(o, "cooldown", "optimizer", 10, int),
        factor=_num(o, "factor", "optimizer", 0.5),
    )
    _require(optimizer.lr > 0, "optimizer.lr", "must be positive")
    _require(optimizer.budget >= 1, "optimizer.budget", "must be >= 1")
    _require(0 < optimizer.factor < 1, "optimizer.factor", "must lie in (0, 1)")

    n_harmonics = _num(obj, "n_harmonics", "$", 16, int)
    _require(n_harmonics >= 1, "n_harmonics", "must be >= 1")
    seed = _num(obj, "seed", "$", 0, int)

    return Config(render=RenderConfig(sigma=sigma, gamma=gamma, k_points=k_points),
                  generator=generator, optimizer=optimizer,
                  n_harmonics=n_harmonics, seed=seed)


def load_config(path) -> Config:
    try:
        with open(path) as f:
            obj = json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_obj(obj)


def save_config(config: Config, path) -> None:
    with open(path, "w") as f:
        json.dump(config.to_obj(), f, indent=2, sort_keys=True)
