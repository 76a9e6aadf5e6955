"""
Configuration: library defaults (config.yaml) and experiment configs (JSON)

Experiment configs are strict: unknown keys are rejected, a version field is
required, and every run carries an explicit master seed.
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.bounds.curves import BOUND_KINDS
from src.utils.errors import ConfigError

CONFIG_VERSION = 1
DEFAULT_CONFIG_PATH = Path(__file__).resolve().parents[2] / "config.yaml"


def load_defaults(config_path: Union[str, Path, None] = None) -> Dict[str, Any]:
    """Library defaults from config.yaml"""
    path = Path(config_path) if config_path else DEFAULT_CONFIG_PATH
    if not path.exists():
        raise ConfigError(f"Defaults file not found: {path}")
    with open(path, 'r') as f:
        return yaml.safe_load(f)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeneratorSpec(StrictModel):
    n_states: int = Field(gt=0)
    n_actions: int = Field(gt=0)
    gamma: float = Field(ge=0.0, lt=1.0)
    reward_scale: float = Field(default=1.0, ge=0.0)
    seed: int = 0


class MdpSpec(StrictModel):
    """Exactly one of path, inline, generate"""
    path: Optional[str] = None
    inline: Optional[Dict[str, Any]] = None
    generate: Optional[GeneratorSpec] = None

    @model_validator(mode="after")
    def _one_source(self) -> "MdpSpec":
        given = [name for name in ("path", "inline", "generate") if getattr(self, name) is not None]
        if len(given) != 1:
            raise ValueError(f"mdp needs exactly one of path, inline, generate (got {given or 'none'})")
        return self


class SamplerSpec(StrictModel):
    kind: Literal["iid", "markov"] = "iid"
    d: Optional[List[float]] = None
    behavior: Optional[List[List[float]]] = None
    initial_coord: int = Field(default=0, ge=0)


class JsrSpec(StrictModel):
    eps: Optional[float] = Field(default=None, gt=0.0)
    t: Optional[int] = Field(default=None, ge=0)
    depth: Optional[int] = Field(default=None, ge=1)
    budget: Optional[int] = Field(default=None, gt=0)


class QuadSpec(StrictModel):
    beta_grid: Optional[List[float]] = None

    @field_validator("beta_grid")
    @classmethod
    def _in_unit_interval(cls, grid):
        if grid is not None and any(not 0.0 < b < 1.0 for b in grid):
            raise ValueError("beta_grid values must lie in (0, 1)")
        return grid


class CertificateSpec(StrictModel):
    kind: Literal["jsr", "quad", "both"] = "jsr"
    jsr: JsrSpec = JsrSpec()
    quad: QuadSpec = QuadSpec()


class ValidationSpec(StrictModel):
    se_slack: Optional[float] = Field(default=None, ge=0.0)
    initial_value: Literal["bound", "truncated"] = "bound"


class OutputSpec(StrictModel):
    dir: str = "outputs"
    prefix: str = "run"


class ExperimentConfig(StrictModel):
    """
    One experiment: model, sampler, step size, replications, certificates,
    bounds and outputs
    """
    version: Literal[1]
    master_seed: int
    mdp: MdpSpec
    sampler: SamplerSpec = SamplerSpec()
    alpha: float = Field(gt=0.0, lt=1.0)
    steps: int = Field(gt=0)
    n_runs: int = Field(default=1, gt=0)
    record_every: Optional[int] = Field(default=None, gt=0)
    q0: Optional[List[float]] = None
    certificate: CertificateSpec = CertificateSpec()
    bounds: Optional[List[str]] = None
    validation: ValidationSpec = ValidationSpec()
    outputs: OutputSpec = OutputSpec()

    @field_validator("bounds")
    @classmethod
    def _known_bounds(cls, kinds):
        if kinds is not None:
            unknown = sorted(set(kinds) - set(BOUND_KINDS))
            if unknown:
                raise ValueError(f"Unknown bound kinds {unknown}")
        return kinds


def parse_experiment_config(doc: Dict[str, Any], base_dir: Union[str, Path, None] = None) -> ExperimentConfig:
    """
    Validate a config document

    Raises:
        ConfigError: Schema errors, or an MDP path that does not exist
    """
    try:
        config = ExperimentConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(f"Invalid experiment config: {e}") from e
    if config.mdp.path is not None:
        resolved = resolve_path(config.mdp.path, base_dir)
        if not resolved.exists():
            raise ConfigError(f"MDP file not found: {config.mdp.path}")
    return config


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read a JSON (or YAML) experiment config"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, 'r') as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must hold a mapping")
    return parse_experiment_config(doc, base_dir=path.parent)


def resolve_path(path: str, base_dir: Union[str, Path, None]) -> Path:
    """Paths resolve against the config's directory, then the working directory"""
    candidate = Path(path)
    if candidate.is_absolute() or base_dir is None:
        return candidate
    relative = Path(base_dir) / candidate
    return relative if relative.exists() else candidate
