"""Experiment configuration: JSON schema, validation, CLI overrides.

A config file is a JSON object with sections ``scenario``, ``cells``,
``optimizer``, ``metrics``, ``output`` plus top-level ``name`` and
``model``.  Unknown keys anywhere are rejected.  ``resolved()`` returns
the fully explicit dictionary (every default filled in) that runs write
next to their results, so a result directory is self-describing.
"""

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .optim import DescentConfig, normalize_model

# external model vocabulary: ni = dense, i = layer-banded, w = weak residual
MODEL_TO_EXTERNAL = {"dense": "ni", "banded": "i", "weak": "w"}

_COMM_KINDS = ("mu_simo", "mimo")
_SENSING_KINDS = ("range", "angle")


def parse_snr_sweep(text):
    """"start:step:stop" -> inclusive list of SNR values in dB."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ConfigurationError(
            f"SNR sweep must be start:step:stop, got {text!r}")
    try:
        start, step, stop = (float(p) for p in parts)
    except ValueError:
        raise ConfigurationError(
            f"non-numeric SNR sweep component in {text!r}") from None
    if step <= 0:
        raise ConfigurationError("SNR sweep step must be positive")
    if stop < start:
        raise ConfigurationError("SNR sweep stop must be >= start")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [start + step * i for i in range(count)]


def _check_keys(section, data, allowed):
    unknown = set(data) - set(allowed)
    if unknown:
        names = ", ".join(sorted(unknown))
        raise ConfigurationError(f"unknown key(s) in {section}: {names}")


def _from_dict(cls, section, data):
    if not isinstance(data, dict):
        raise ConfigurationError(f"section {section!r} must be an object")
    names = [f.name for f in dataclasses.fields(cls)]
    _check_keys(section, data, names)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"in section {section!r}: {exc}") from exc


@dataclass(frozen=True)
class ScenarioConfig:
    """What network to optimize: a synthetic preset or a Touchstone load."""

    family: str = "comm"  # comm | sensing | touchstone
    kind: str = "mu_simo"
    isolation: str = "infinite_ground"  # infinite_ground | finite_ground | none
    leak_db: float = 20.0
    seed: int = 0
    coupling_jitter: float = 0.05
    kappa: float = 1.0
    overrides: dict = field(default_factory=dict)
    touchstone_path: str = None
    center_frequency_hz: float = 28e9
    source_ports: int = None
    output_ports: int = None
    layers: int = None  # required for family=touchstone
    cells_per_layer: int = None

    def __post_init__(self):
        if self.family not in ("comm", "sensing", "touchstone"):
            raise ConfigurationError(
                f"scenario family must be comm, sensing or touchstone, "
                f"got {self.family!r}")
        if self.family == "comm" and self.kind not in _COMM_KINDS:
            raise ConfigurationError(
                f"comm scenario kind must be one of {_COMM_KINDS}, "
                f"got {self.kind!r}")
        if self.family == "sensing" and self.kind not in _SENSING_KINDS:
            raise ConfigurationError(
                f"sensing scenario kind must be one of {_SENSING_KINDS}, "
                f"got {self.kind!r}")
        if self.isolation not in ("infinite_ground", "finite_ground", "none"):
            raise ConfigurationError(
                f"unknown isolation {self.isolation!r}")
        if self.family == "touchstone":
            missing = [name for name in ("touchstone_path", "source_ports",
                                         "output_ports", "layers",
                                         "cells_per_layer")
                       if getattr(self, name) is None]
            if missing:
                raise ConfigurationError(
                    "touchstone scenario requires " + ", ".join(missing))
        if not isinstance(self.overrides, dict):
            raise ConfigurationError("scenario overrides must be an object")


@dataclass(frozen=True)
class CellConfig:
    """Cell response model and optional quantization."""

    kind: str = "ideal_phase"  # ideal_phase | lossy_parametric
    insertion_loss_db: float = 18.0
    return_loss_db: float = 6.0
    levels: int = None  # codebook size; None keeps phases continuous

    def __post_init__(self):
        if self.kind not in ("ideal_phase", "lossy_parametric"):
            raise ConfigurationError(f"unknown cell kind {self.kind!r}")
        if self.levels is not None and self.levels < 2:
            raise ConfigurationError("codebook size must be >= 2")


@dataclass(frozen=True)
class OptimizerConfig:
    initial_step: float = 1.0
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_iters: int = 2000
    grad_tol: float = 1e-8
    rng_seed: int = 7
    sweeps: int = 20
    run_continuous: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.sweeps < 0:
            raise ConfigurationError("sweeps must be >= 0")

    def descent_config(self):
        return DescentConfig(initial_step=self.initial_step,
                             armijo_c=self.armijo_c,
                             backtrack_factor=self.backtrack_factor,
                             max_iters=self.max_iters,
                             grad_tol=self.grad_tol,
                             rng_seed=self.rng_seed)


@dataclass(frozen=True)
class MetricsConfig:
    snr_db: tuple = (0.0, 10.0, 20.0, 30.0, 40.0)
    draws_per_point: int = 20
    test_points: int = 25
    mc_seed: int = 1234

    def __post_init__(self):
        snr = self.snr_db
        if isinstance(snr, str):
            snr = parse_snr_sweep(snr)
        try:
            snr = tuple(float(v) for v in snr)
        except (TypeError, ValueError):
            raise ConfigurationError(
                "snr_db must be a list of numbers or a start:step:stop "
                "string") from None
        if not snr:
            raise ConfigurationError("snr_db must not be empty")
        object.__setattr__(self, "snr_db", snr)
        if self.draws_per_point < 1:
            raise ConfigurationError("draws_per_point must be >= 1")
        if self.test_points < 2:
            raise ConfigurationError("test_points must be >= 2")


@dataclass(frozen=True)
class OutputConfig:
    out_dir: str = "results"
    figures: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    cells: CellConfig = field(default_factory=CellConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    model: str = "i"
    name: str = "experiment"

    def __post_init__(self):
        # canonical external spelling; accepts ni/i/w and the descriptive
        # dense/banded/weak aliases
        try:
            internal = normalize_model(self.model)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        object.__setattr__(self, "model", MODEL_TO_EXTERNAL[internal])

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigurationError("config root must be a JSON object")
        sections = {"scenario": ScenarioConfig, "cells": CellConfig,
                    "optimizer": OptimizerConfig, "metrics": MetricsConfig,
                    "output": OutputConfig}
        _check_keys("config root", data,
                    list(sections) + ["model", "name"])
        kwargs = {}
        for key, section_cls in sections.items():
            kwargs[key] = _from_dict(section_cls, key, data.get(key, {}))
        if "model" in data:
            kwargs["model"] = data["model"]
        if "name" in data:
            name = data["name"]
            if not isinstance(name, str):
                raise ConfigurationError("name must be a string")
            kwargs["name"] = name
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc

    def resolved(self):
        """Plain dictionary with every default made explicit."""
        out = dataclasses.asdict(self)
        out["metrics"]["snr_db"] = list(self.metrics.snr_db)
        return out

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON in {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def apply_cli_overrides(config, seed=None, model=None, levels=None,
                        snr_sweep=None, out_dir=None):
    """New config with command-line overrides folded in."""
    if seed is not None:
        config = config.replace(
            scenario=dataclasses.replace(config.scenario, seed=seed))
    if model is not None:
        config = config.replace(model=model)
    if levels is not None:
        cells = dataclasses.replace(config.cells,
                                    levels=None if levels == 0 else levels)
        config = config.replace(cells=cells)
    if snr_sweep is not None:
        metrics = dataclasses.replace(config.metrics,
                                      snr_db=tuple(parse_snr_sweep(snr_sweep)))
        config = config.replace(metrics=metrics)
    if out_dir is not None:
        config = config.replace(
            output=dataclasses.replace(config.output, out_dir=out_dir))
    return config
