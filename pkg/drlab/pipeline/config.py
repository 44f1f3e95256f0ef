"""Experiment configuration: one JSON document drives every pipeline stage."""
import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import pydantic
from pydantic import BaseModel, ConfigDict, Field, field_validator

from drlab.core.environments import (
    EnvironmentSpec,
    TargetWorldSpec,
    builtin_environment_spec,
    default_target_world,
    load_environment_document,
)
from drlab.core.ppo import TrainConfig
from drlab.errors import ValidationError
from ll_providers import ProposalSourceConfig

logger = logging.getLogger(__name__)

DRMethod = Literal["llm", "no_dr", "human_designed", "prompt_dr", "no_prior", "uninformative", "random_sampling"]
BaselineKind = Literal["cem_random", "cem_rapp", "bayrn_rapp"]

STAGES = ("eureka", "rapp", "dr-propose", "dr-train", "transfer-eval", "baseline", "report")
DEFAULT_METHODS: Tuple[str, ...] = (
    "llm", "no_dr", "human_designed", "prompt_dr", "no_prior", "uninformative", "random_sampling",
)


class EurekaSettings(BaseModel):
    iterations: int = Field(default=2, ge=1)
    samples: int = Field(default=4, ge=1)
    safety_instruction: bool = True
    eval_episodes: int = Field(default=8, ge=1)


class RappSettings(BaseModel):
    threshold: float = Field(default=0.5, gt=0, le=1)
    episodes_per_value: int = Field(default=4, ge=1)


class DRSettings(BaseModel):
    m: int = Field(default=16, ge=1)
    validation_policy: Literal["reject", "clamp"] = "clamp"
    methods: List[DRMethod] = Field(default_factory=lambda: list(DEFAULT_METHODS))


class TrainBudgets(BaseModel):
    """Short budget for reward scoring and black-box objectives, long one for final DR policies."""

    eureka: TrainConfig = Field(default_factory=lambda: TrainConfig(total_env_steps=20_000))
    final: TrainConfig = Field(default_factory=TrainConfig)


class BaselineSettings(BaseModel):
    kinds: List[BaselineKind] = Field(default_factory=lambda: ["cem_random", "cem_rapp", "bayrn_rapp"])
    cem_iterations: int = Field(default=4, ge=1)
    cem_samples: int = Field(default=4, ge=1)
    cem_elite: int = Field(default=2, ge=1)
    bayrn_init: int = Field(default=8, ge=1)
    bayrn_iterations: int = Field(default=8, ge=0)
    kappa: float = Field(default=5.0, ge=0)
    xi: float = 1.0


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    env_id: Literal["sprint_cart", "spin_disk", "globe_balance"]
    environment: Optional[str] = None
    stages: List[str] = Field(default_factory=lambda: list(STAGES))
    source: ProposalSourceConfig
    eureka: EurekaSettings = Field(default_factory=EurekaSettings)
    rapp: RappSettings = Field(default_factory=RappSettings)
    dr: DRSettings = Field(default_factory=DRSettings)
    train: TrainBudgets = Field(default_factory=TrainBudgets)
    baselines: BaselineSettings = Field(default_factory=BaselineSettings)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    eval_episodes: int = Field(default=8, ge=1)
    eval_seed: int = 1234
    workers: int = Field(default=1, ge=1)
    # directory of the config file; relative paths resolve against it
    base_dir: Optional[str] = None

    @field_validator("seeds")
    @classmethod
    def _nonempty_seeds(cls, seeds):
        if not seeds:
            raise ValueError("seeds must be non-empty")
        return seeds

    @field_validator("stages")
    @classmethod
    def _known_stages(cls, stages):
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ValueError(f"unknown stages: {', '.join(unknown)}")
        return stages

    @property
    def pipeline_seed(self) -> int:
        return self.seeds[0]

    def resolve(self, relative: str) -> Path:
        path = Path(relative)
        if self.base_dir is not None and not path.is_absolute():
            path = Path(self.base_dir) / path
        return path

    def check_files(self) -> None:
        """Every referenced file must exist."""
        refs = {"environment": self.environment}
        if self.source.kind == "scripted":
            refs["source.playbook"] = self.source.playbook
        for field_name, ref in refs.items():
            if ref is not None and not self.resolve(ref).is_file():
                raise ValidationError(f"{field_name}: file not found: {self.resolve(ref)}")

    def load_environment(self) -> Tuple[EnvironmentSpec, TargetWorldSpec]:
        if self.environment is None:
            return builtin_environment_spec(self.env_id), default_target_world(self.env_id)
        spec, target = load_environment_document(self.resolve(self.environment))
        if spec.env_id != self.env_id:
            raise ValidationError(f"environment document is for '{spec.env_id}', config says '{self.env_id}'")
        if target is None:
            target = default_target_world(self.env_id)
            if set(target.target_assignment.values) != set(spec.param_names):
                raise ValidationError("environment document has custom parameters but no target world")
        return spec, target

    def snapshot(self) -> dict:
        return self.model_dump(mode="json", exclude={"base_dir"})


def parse_experiment_config(data: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    try:
        config = ExperimentConfig(**{**data, "base_dir": str(base_dir) if base_dir is not None else None})
    except pydantic.ValidationError as e:
        raise ValidationError(f"invalid experiment config: {e}") from None
    config.check_files()
    return config


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ValidationError(f"config not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"config {path} is not valid JSON: {e}") from None
    logger.info(f"Loaded experiment config {path}")
    return parse_experiment_config(data, base_dir=path.parent)
