"""Strict JSON run configuration: unknown keys and mistyped values are errors."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .continual import ContinualConfig
from .exceptions import ConfigError, ContractError
from .growth import GrowthConfig, Schedule

EXPERIMENTS = ("toy-rbf", "width-mlp", "depth-mlp", "continual")
METHODS = ("firefly", "firefly-split-only", "rand-split", "rand-split-new", "scratch")
VALID_METHODS = {
    "toy-rbf": METHODS,
    "width-mlp": METHODS,
    "depth-mlp": ("firefly", "scratch"),
    "continual": ("firefly", "scratch"),
}


@dataclass
class ToyData:
    n_points: int = 1000
    truth_neurons: int = 15
    truth_scale: float = math.sqrt(3.0)
    initial_width: int = 1
    init_scale: float = 1.0

    def __post_init__(self):
        if self.n_points < 1 or self.truth_neurons < 1 or self.initial_width < 1:
            raise ContractError("n_points, truth_neurons and initial_width must be at least 1")
        if not self.truth_scale > 0 or not self.init_scale > 0:
            raise ContractError("truth_scale and init_scale must be positive")


@dataclass
class MlpData:
    n_per_class: int = 100
    n_classes: int = 3
    initial_widths: list = field(default_factory=lambda: [2])
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.n_per_class < 2 or self.n_classes < 2:
            raise ContractError("n_per_class and n_classes must be at least 2")
        if not self.initial_widths or any(not isinstance(w, int) or w < 1
                                          for w in self.initial_widths):
            raise ContractError("initial_widths must be a non-empty list of positive integers")
        if not 0 <= self.holdout_fraction < 1:
            raise ContractError("holdout_fraction must lie in [0, 1)")


@dataclass
class Baseline:
    k_trials: int = 3
    finetune_iters: int = 100
    m_prime: int = 5

    def __post_init__(self):
        if self.k_trials < 1:
            raise ContractError("k_trials must be at least 1")
        if self.finetune_iters < 0 or self.m_prime < 0:
            raise ContractError("finetune_iters and m_prime must be non-negative")


@dataclass
class Scratch:
    train_iters: int | None = None  # defaults to the per-phase budget
    width: int = 16  # continual suite only

    def __post_init__(self):
        if self.train_iters is not None and self.train_iters < 0:
            raise ContractError("train_iters must be non-negative")
        if self.width < 1:
            raise ContractError("width must be at least 1")


@dataclass
class Suite:
    tasks: int = 10
    n_per_class: int = 100
    n_classes: int = 3
    test_fraction: float = 0.3

    def __post_init__(self):
        if self.tasks < 1 or self.n_per_class < 2 or self.n_classes < 2:
            raise ContractError("tasks must be >= 1, n_per_class and n_classes >= 2")
        if not 0 < self.test_fraction < 1:
            raise ContractError("test_fraction must lie in (0, 1)")


SECTIONS = {
    "growth": GrowthConfig,
    "schedule": Schedule,
    "baseline": Baseline,
    "scratch": Scratch,
    "continual": ContinualConfig,
    "suite": Suite,
}


@dataclass
class RunConfig:
    experiment: str = "toy-rbf"
    methods: list = field(default_factory=lambda: ["firefly"])
    seeds: list = field(default_factory=lambda: [0])
    m_prime_sweep: list = field(default_factory=list)
    output: str | None = None
    data: object = None
    growth: GrowthConfig = field(default_factory=GrowthConfig)
    schedule: Schedule = field(default_factory=Schedule)
    baseline: Baseline = field(default_factory=Baseline)
    scratch: Scratch = field(default_factory=Scratch)
    continual: ContinualConfig = field(default_factory=ContinualConfig)
    suite: Suite = field(default_factory=Suite)

    def __post_init__(self):
        if self.data is None:
            self.data = ToyData() if self.experiment == "toy-rbf" else MlpData()

    def to_dict(self):
        return dataclasses.asdict(self)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v):
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


def _check_type(path, value, default, annotation):
    ann = str(annotation)
    if value is None and "None" in ann:
        return
    if "list" in ann or isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(path, "expected a list")
        return
    if isinstance(default, bool) or ann == "bool":
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true or false")
    elif "float" in ann:
        if not _is_number(value):
            raise ConfigError(path, "expected a finite number")
    elif "int" in ann:
        if not _is_int(value):
            raise ConfigError(path, "expected an integer")
    elif "str" in ann and not isinstance(value, str):
        raise ConfigError(path, "expected a string")


def _build(cls, doc, prefix):
    if not isinstance(doc, dict):
        raise ConfigError(prefix, "expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in fields:
            raise ConfigError(f"{prefix}.{key}", "unknown key")
    kwargs = {}
    for key, value in doc.items():
        f = fields[key]
        default = f.default if f.default is not dataclasses.MISSING else (
            f.default_factory() if f.default_factory is not dataclasses.MISSING else None)
        _check_type(f"{prefix}.{key}", value, default, f.type)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ContractError as exc:
        raise ConfigError(prefix, str(exc)) from None


def parse_config(doc):
    """Validate a decoded JSON document and return a :class:`RunConfig`."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown key")
    experiment = doc.get("experiment", "toy-rbf")
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    kwargs = {"experiment": experiment}

    methods = doc.get("methods", ["firefly"])
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods", "expected a non-empty list")
    for i, m in enumerate(methods):
        if m not in VALID_METHODS[experiment]:
            raise ConfigError(f"methods[{i}]", f"{m!r} is not valid for experiment {experiment}")
    if len(set(methods)) != len(methods):
        raise ConfigError("methods", "duplicate method")
    kwargs["methods"] = list(methods)

    kwargs["seeds"] = check_seeds(doc.get("seeds", [0]), "seeds")
    sweep = doc.get("m_prime_sweep", [])
    if not isinstance(sweep, list) or not all(_is_int(v) and v >= 0 for v in sweep):
        raise ConfigError("m_prime_sweep", "expected a list of non-negative integers")
    if len(set(sweep)) != len(sweep):
        raise ConfigError("m_prime_sweep", "duplicate value")
    if sweep and experiment == "continual":
        raise ConfigError("m_prime_sweep", "not available for the continual experiment")
    kwargs["m_prime_sweep"] = list(sweep)
    if "output" in doc:
        if doc["output"] is not None and not isinstance(doc["output"], str):
            raise ConfigError("output", "expected a string")
        kwargs["output"] = doc["output"]

    data_cls = ToyData if experiment == "toy-rbf" else MlpData
    kwargs["data"] = _build(data_cls, doc.get("data", {}), "data")
    for name, cls in SECTIONS.items():
        kwargs[name] = _build(cls, doc.get(name, {}), name)
    return RunConfig(**kwargs)


def check_seeds(seeds, path="seeds"):
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError(path, "expected a non-empty list of integers")
    if not all(_is_int(s) and s >= 0 for s in seeds):
        raise ConfigError(path, "seeds must be non-negative integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(path, "seeds must be distinct")
    return list(seeds)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(doc)
