"""
Run configuration loaded from a JSON file.

Precedence is built-in defaults, then the config file, then command-line
flags. Unknown keys at any level are rejected.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

from decision_tsp import __version__
from decision_tsp.exceptions import ConfigError, DataError
from decision_tsp.model import ModelConfig
from decision_tsp.oracles import SAParams

RESOLVED_CONFIG_FILE = "resolved_config.json"
DEFAULT_ACCURACY_DEVIATIONS = [0.01, 0.02, 0.05, 0.10]
DEFAULT_CURVE_DEVIATIONS = [round(-0.30 + 0.05 * i, 2) for i in range(13)]
DEFAULT_TPR_DEVIATIONS = [0.0, 0.02, 0.04, 0.06, 0.08, 0.10, 0.15, 0.20, 10.0]


@dataclass
class GenerateSection:
    tag: str = "euclidean"
    count: int = 1024
    n_min: int = 10
    n_max: int = 18
    allow_approximate: bool = False
    output: str = "dataset.jsonl"


@dataclass
class TrainSection:
    dataset: Optional[str] = None
    epochs: int = 50
    batches_per_epoch: int = 128
    pairs_per_batch: int = 16
    deviation: float = 0.02
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 10
    log_timing: bool = False
    resume: Optional[str] = None
    fine_tune: bool = False
    fine_tune_deviations: List[float] = field(default_factory=lambda: [-0.02, 0.02, 1.0, 2.0, 10.0])


@dataclass
class EvalSection:
    checkpoint: Optional[str] = None
    oracle: bool = False
    datasets: List[str] = field(default_factory=list)
    deviations: List[float] = field(default_factory=lambda: list(DEFAULT_ACCURACY_DEVIATIONS))
    sizes: List[int] = field(default_factory=list)
    count: int = 256
    tag: str = "euclidean"
    allow_approximate: bool = False


@dataclass
class CurveSection:
    checkpoint: Optional[str] = None
    oracle: bool = False
    datasets: List[str] = field(default_factory=list)
    deviations: List[float] = field(default_factory=lambda: list(DEFAULT_CURVE_DEVIATIONS))


@dataclass
class CostSection:
    checkpoint: Optional[str] = None
    oracle: bool = False
    dataset: Optional[str] = None
    tsplib: List[str] = field(default_factory=list)
    tours: Dict[str, str] = field(default_factory=dict)
    optima: Dict[str, float] = field(default_factory=dict)
    convention: str = "haversine"
    p: float = 0.5
    delta: float = 0.01
    midpoint: bool = False
    sa: Dict[str, Any] = field(default_factory=dict)


@dataclass
class BaselineSection:
    checkpoint: Optional[str] = None
    oracle: bool = False
    dataset: Optional[str] = None
    deviations: List[float] = field(default_factory=lambda: list(DEFAULT_TPR_DEVIATIONS))
    calibration_budget: int = 50
    holdout_fraction: float = 0.5
    include_default: bool = True
    sa: Dict[str, Any] = field(default_factory=dict)


SECTIONS = {
    "generate": GenerateSection,
    "train": TrainSection,
    "eval": EvalSection,
    "curve": CurveSection,
    "cost": CostSection,
    "baseline": BaselineSection,
}


@dataclass
class RunConfig:
    """Everything a command needs; each command reads its own section."""

    seed: int = 0
    threads: int = 1
    output_dir: str = "runs"
    format: str = "csv"
    model: ModelConfig = field(default_factory=ModelConfig)
    generate: GenerateSection = field(default_factory=GenerateSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    curve: CurveSection = field(default_factory=CurveSection)
    cost: CostSection = field(default_factory=CostSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)

    def validate(self) -> None:
        if self.threads < 1:
            raise ConfigError(f"threads must be at least 1, got {self.threads}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got '{self.format}'")
        if not 0.0 < self.baseline.holdout_fraction < 1.0:
            raise ConfigError("baseline.holdout_fraction must lie in (0, 1)")
        for name in ("cost", "baseline"):
            sa_params(getattr(self, name).sa)

    def to_dict(self) -> Dict:
        values = asdict(self)
        values["model"] = self.model.to_dict()
        return values


def sa_params(values: Dict[str, Any], seed: Optional[int] = None) -> SAParams:
    """SAParams from a config mapping, rejecting unknown keys."""
    known = {f.name for f in fields(SAParams)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown SA keys: {sorted(unknown)}")
    values = dict(values)
    if seed is not None and "seed" not in values:
        values["seed"] = seed
    return SAParams(**values)


def _section(cls, values: Any, name: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section '{name}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"invalid section '{name}': {e}") from e


def config_from_dict(values: Dict) -> RunConfig:
    if not isinstance(values, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    values = dict(values)
    if "model" in values:
        if not isinstance(values["model"], dict):
            raise ConfigError("section 'model' must be an object")
        values["model"] = ModelConfig.from_dict(values["model"])
    for name, cls in SECTIONS.items():
        if name in values:
            values[name] = _section(cls, values[name], name)
    config = RunConfig(**values)
    config.validate()
    return config


def load_config(path: Optional[str] = None) -> RunConfig:
    """
    Load a RunConfig from a JSON file, or the defaults when path is None.

    Raises:
        ConfigError: For unknown keys or invalid values.
        DataError: If the file cannot be read.
    """
    if path is None:
        return RunConfig()
    try:
        with open(path) as f:
            values = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read config: {e}", path) from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return config_from_dict(values)


def apply_overrides(config: RunConfig, section: Optional[str], overrides: Dict[str, Any]) -> RunConfig:
    """
    Set every non-None override on the top level (section=None) or on a section.

    Returns:
        The validated config.
    """
    target = config if section is None else getattr(config, section)
    for key, value in overrides.items():
        if value is None:
            continue
        if not hasattr(target, key):
            raise ConfigError(f"unknown key '{key}' for {section or 'top level'}")
        setattr(target, key, value)
    config.validate()
    return config


def write_resolved_config(config: RunConfig, output_dir: str, command: str) -> str:
    """Write the resolved config plus tool version next to a command's outputs."""
    path = os.path.join(output_dir, RESOLVED_CONFIG_FILE)
    document = {"tool_version": __version__, "command": command, "config": config.to_dict()}
    try:
        os.makedirs(output_dir, exist_ok=True)
        with open(path, "w") as f:
            json.dump(document, f, indent=2, sort_keys=True)
    except OSError as e:
        raise DataError(f"cannot write resolved config: {e}", path) from e
    return path
