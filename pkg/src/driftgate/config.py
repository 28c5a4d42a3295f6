"""Run configuration: YAML loading, strict validation, deterministic echo.

Unknown keys are rejected anywhere in the tree so typos cannot silently fall
back to defaults. Every command writes its fully resolved configuration next
to its outputs for provenance.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .armodel import ARConfig
from .codec import CodecConfig
from .continual import DeployConfig
from .errors import ConfigError, ParameterError
from .scoring import ALL_METHODS
from .signal import ProcessParams


def _default_regimes() -> dict:
    # regime_b is the designed strong shift: 3x amplitude plus waveform change
    return {
        "regime_a": ProcessParams(),
        "regime_b": ProcessParams(
            amp_current=3.0, amp_voltage=2.4, shape="smooth", pulse_period=12
        ),
        "regime_c": ProcessParams(
            amp_current=0.4, amp_voltage=0.32, shape="sawtooth", pulse_period=20
        ),
    }


@dataclass
class DataConfig:
    regimes: dict = field(default_factory=_default_regimes)
    id_regime: str = "regime_a"
    ood_regime: str = "regime_b"
    train_count: int = 400
    val_count: int = 120
    test_id_count: int = 200
    test_ood_count: int = 200

    def validate(self) -> None:
        for name in (self.id_regime, self.ood_regime):
            if name not in self.regimes:
                raise ConfigError(f"data regime {name!r} not defined under data.regimes")
        for counts in (self.train_count, self.val_count, self.test_id_count, self.test_ood_count):
            if counts < 1:
                raise ConfigError("all data counts must be >= 1")


@dataclass
class ModelConfig:
    vq: CodecConfig = field(default_factory=CodecConfig)
    ar: ARConfig = field(default_factory=ARConfig)


@dataclass
class BenchmarkConfig:
    methods: list = field(default_factory=lambda: list(ALL_METHODS))
    beta: float = 0.5
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    odin_temperature: float = 1000.0
    odin_epsilon: float = 0.0014

    def validate(self) -> None:
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ConfigError(f"unknown score method {m!r}; choose from {ALL_METHODS}")
        if self.beta <= 0:
            raise ConfigError("benchmark.beta must be > 0")
        if not self.seeds:
            raise ConfigError("benchmark.seeds must be nonempty")


@dataclass
class ScheduleEntry:
    regime: str
    experiences: int


@dataclass
class DeployRunConfig:
    schedule: list = field(
        default_factory=lambda: [
            ScheduleEntry("regime_a", 7),
            ScheduleEntry("regime_b", 6),
            ScheduleEntry("regime_c", 7),
        ]
    )
    cycles_per_experience: int = 60
    method: str = "ar_nll"
    adaptation: DeployConfig = field(default_factory=DeployConfig)

    def validate(self, regimes: dict) -> None:
        if not self.schedule:
            raise ConfigError("deploy.schedule must be nonempty")
        for entry in self.schedule:
            if entry.regime not in regimes:
                raise ConfigError(f"deploy schedule regime {entry.regime!r} not defined")
            if entry.experiences < 1:
                raise ConfigError("schedule experience counts must be >= 1")
        if self.method not in ALL_METHODS:
            raise ConfigError(f"unknown score method {self.method!r}")
        try:
            self.adaptation.validate()
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    deploy: DeployRunConfig = field(default_factory=DeployRunConfig)

    def validate(self) -> None:
        self.data.validate()
        self.benchmark.validate()
        self.deploy.validate(self.data.regimes)
        try:
            self.model.vq.validate()
            self.model.ar.validate()
            for params in self.data.regimes.values():
                params.validate()
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
        if self.model.ar.vocab_size != self.model.vq.codebook_size:
            raise ConfigError("model.ar.vocab_size must equal model.vq.codebook_size")


def _check_keys(mapping: dict, cls, path: str) -> None:
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(mapping).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")


def _build_simple(cls, mapping: dict, path: str):
    _check_keys(mapping, cls, path)
    try:
        return cls(**mapping)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _build_data(mapping: dict, path: str) -> DataConfig:
    _check_keys(mapping, DataConfig, path)
    kwargs = dict(mapping)
    if "regimes" in kwargs:
        regimes = {}
        for name, spec in kwargs["regimes"].items():
            regimes[name] = _build_simple(ProcessParams, spec or {}, f"{path}.regimes.{name}")
        kwargs["regimes"] = regimes
    return DataConfig(**kwargs)


def _build_deploy(mapping: dict, path: str) -> DeployRunConfig:
    _check_keys(mapping, DeployRunConfig, path)
    kwargs = dict(mapping)
    if "schedule" in kwargs:
        kwargs["schedule"] = [
            _build_simple(ScheduleEntry, entry, f"{path}.schedule[{i}]")
            for i, entry in enumerate(kwargs["schedule"])
        ]
    if "adaptation" in kwargs:
        kwargs["adaptation"] = _build_simple(DeployConfig, kwargs["adaptation"], f"{path}.adaptation")
    return DeployRunConfig(**kwargs)


def config_from_dict(raw: dict) -> RunConfig:
    raw = raw or {}
    _check_keys(raw, RunConfig, "config")
    kwargs = dict(raw)
    if "data" in kwargs:
        kwargs["data"] = _build_data(kwargs["data"], "data")
    if "model" in kwargs:
        _check_keys(kwargs["model"], ModelConfig, "model")
        model_kwargs = {}
        if "vq" in kwargs["model"]:
            model_kwargs["vq"] = _build_simple(CodecConfig, kwargs["model"]["vq"], "model.vq")
        if "ar" in kwargs["model"]:
            model_kwargs["ar"] = _build_simple(ARConfig, kwargs["model"]["ar"], "model.ar")
        kwargs["model"] = ModelConfig(**model_kwargs)
    if "benchmark" in kwargs:
        kwargs["benchmark"] = _build_simple(BenchmarkConfig, kwargs["benchmark"], "benchmark")
    if "deploy" in kwargs:
        kwargs["deploy"] = _build_deploy(kwargs["deploy"], "deploy")
    config = RunConfig(**kwargs)
    config.validate()
    return config


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def dump_config(config: RunConfig) -> str:
    """Stable YAML echo of the resolved configuration."""
    return yaml.safe_dump(dataclasses.asdict(config), sort_keys=True)


def write_resolved_config(out_dir, config: RunConfig) -> None:
    path = out_dir / "resolved_config.yaml" if hasattr(out_dir, "joinpath") else f"{out_dir}/resolved_config.yaml"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_config(config))
