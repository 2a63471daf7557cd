"""Strict JSON run configuration with dotted-key overrides."""
from __future__ import annotations

import json
import types
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .data import CycleGraphSpec, SinusoidSpec, SplitSpec
from .exceptions import ConfigurationError
from .model import ModelDims
from .training import TrainConfig

DATA_SOURCES = ("cycle", "sinusoids", "csv")


@dataclass
class CycleSection:
    n_series: int = 10
    length: int = 10000
    lag: int = 5
    beta: float = 0.9
    sigma: float = 0.5
    burn_in: int = 500
    init_value: float | None = None


@dataclass
class SinusoidSection:
    clusters: list[int] = field(default_factory=lambda: [5, 5])
    length: int = 10000
    n_components: int = 3
    freq_max: float = 0.2
    noise_std: float = 0.2


@dataclass
class CsvSection:
    path: str | None = None
    delimiter: str = ","


@dataclass
class SplitSection:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2


@dataclass
class DataSection:
    source: str = "cycle"
    cycle: CycleSection = field(default_factory=CycleSection)
    sinusoids: SinusoidSection = field(default_factory=SinusoidSection)
    csv: CsvSection = field(default_factory=CsvSection)
    split: SplitSection = field(default_factory=SplitSection)
    stride: int = 1
    standardize: bool = True


@dataclass
class ModelSection:
    topology: str = "fc"
    nf: int = 64
    n_layers: int = 2
    n_aux: int = 4
    id_dim: int = 16
    encoder: str = "mlp"
    context_len: int = 12
    pred_len: int = 12
    kernel_size: int = 7
    stride: int = 4
    adjacency: list[list[float]] | None = None


@dataclass
class TrainSection:
    lr: float = 2e-3
    decay_epochs: list[int] = field(default_factory=lambda: [20, 30, 40])
    decay_factor: float = 10.0
    max_epochs: int = 200
    batch_size: int = 16
    patience: int = 20
    reg_lambda: float = 0.0
    weight_decay: float = 0.0
    mape_floor: float = 1e-3
    eval_batch_size: int = 256


@dataclass
class GraphSection:
    n_timesteps: int = 10
    split: str = "test"


@dataclass
class SweepSection:
    k_values: list[int] = field(default_factory=lambda: [0, 1, 2, 4, 8, 16, 32])
    repeats: int = 4


@dataclass
class BenchmarkSection:
    topologies: list[str] = field(default_factory=lambda: ["fc", "bp"])
    n_values: list[int] = field(default_factory=lambda: [64, 128, 256, 512])
    nf: int = 64
    batch_size: int = 16
    repeats: int = 3
    n_aux: int = 4
    context_len: int = 12
    pred_len: int = 12
    n_layers: int = 2
    id_dim: int = 16


@dataclass
class OutputSection:
    root: str = "output"
    write_csv: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    graph: GraphSection = field(default_factory=GraphSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    # ----------------------------------------------------------- derived specs
    def split_spec(self) -> SplitSpec:
        s = self.data.split
        return SplitSpec(s.train, s.val, s.test)

    def cycle_spec(self) -> CycleGraphSpec:
        return CycleGraphSpec(seed=self.seed, **asdict(self.data.cycle))

    def sinusoid_spec(self) -> SinusoidSpec:
        return SinusoidSpec(seed=self.seed, **asdict(self.data.sinusoids))

    def model_dims(self, n_nodes: int) -> ModelDims:
        return ModelDims(n_nodes=n_nodes, **asdict(self.model))

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **asdict(self.train))

    def validate(self) -> "RunConfig":
        """Cross-field checks that the section types alone cannot express."""
        if self.data.source not in DATA_SOURCES:
            raise ConfigurationError(f"data.source must be one of {DATA_SOURCES}, got {self.data.source!r}")
        if self.data.source == "csv" and not self.data.csv.path:
            raise ConfigurationError("data.csv.path is required when data.source is 'csv'")
        if self.graph.n_timesteps < 1:
            raise ConfigurationError("graph.n_timesteps must be >= 1")
        if self.graph.split not in ("train", "val", "test"):
            raise ConfigurationError(f"graph.split must be train, val or test, got {self.graph.split!r}")
        if self.sweep.repeats < 1 or any(k < 0 for k in self.sweep.k_values):
            raise ConfigurationError("sweep.repeats must be >= 1 and sweep.k_values >= 0")
        if self.seed < 0:
            raise ConfigurationError("seed must be >= 0")
        self.split_spec()
        self.train_config()
        self.model_dims(self.data.cycle.n_series)
        if self.data.source == "cycle":
            self.cycle_spec()
        elif self.data.source == "sinusoids":
            self.sinusoid_spec()
        return self


# ------------------------------------------------------------------ parsing
def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(value, tp, path: str):
    """Check ``value`` against the annotation ``tp``; ints are accepted for floats."""
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(value, arg, path)
            except ConfigurationError as exc:
                errors.append(str(exc))
        raise ConfigurationError(errors[0] if errors else f"{path}: invalid value {value!r}")
    if origin is list:
        if not isinstance(value, list):
            raise ConfigurationError(f"{path}: expected a list, got {type(value).__name__}")
        (item,) = typing.get_args(tp)
        return [_coerce(v, item, f"{path}[{i}]") for i, v in enumerate(value)]
    if is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigurationError(f"{path}: unsupported field type {_type_name(tp)}")


def _build(cls, raw, path: str = ""):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path or '<root>'}: expected an object, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        where = path or "<root>"
        raise ConfigurationError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(known)}")
    kwargs = {}
    for f in fields(cls):
        if f.name in raw:
            kwargs[f.name] = _coerce(raw[f.name], hints[f.name], f"{path}.{f.name}" if path else f.name)
        elif f.default is MISSING and f.default_factory is MISSING:
            raise ConfigurationError(f"{path}: missing required key {f.name!r}")
    return cls(**kwargs)


def parse_override(item: str) -> tuple[list[str], object]:
    """``"train.lr=0.002"`` -> (["train", "lr"], 0.002); non-JSON values stay strings."""
    key, sep, text = item.partition("=")
    if not sep or not key.strip():
        raise ConfigurationError(f"override {item!r} must look like section.key=value")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    return key.strip().split("."), value


def apply_overrides(raw: dict, overrides) -> dict:
    raw = json.loads(json.dumps(raw))
    for item in overrides or ():
        keys, value = parse_override(item)
        node = raw
        for k in keys[:-1]:
            child = node.setdefault(k, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"override {item!r}: {k!r} is not a section")
            node = child
        node[keys[-1]] = value
    return raw


def load_config(path=None, overrides=None) -> RunConfig:
    """Parse a JSON config file (or the defaults when ``path`` is None)."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_dict(apply_overrides(raw, overrides))


def config_from_dict(raw: dict) -> RunConfig:
    return _build(RunConfig, raw).validate()
