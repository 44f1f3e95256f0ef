"""
Randomizable physics parameters, concrete assignments and DR distributions.

A parameter spec carries its default, its valid range and the kind of RAPP
search grid used to probe it. Every value that reaches the dynamics has been
checked against the valid range here first.
"""
import logging
import math
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from drlab.errors import (
    IntervalOutsideValidRange,
    OutOfValidRange,
    UnknownParameter,
    ValidationError,
)

logger = logging.getLogger(__name__)

GridKind = Literal["zero_to_inf", "zero_to_one", "centered_zero", "centered_one"]

# The four general-purpose search ranges, log-ish spaced.
SEARCH_GRIDS: Dict[str, Tuple[float, ...]] = {
    "zero_to_inf": (0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0),
    "zero_to_one": (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    "centered_zero": (-10.0, -3.0, -1.0, -0.3, 0.0, 0.3, 1.0, 3.0, 10.0),
    "centered_one": (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0),
}

Provenance = Literal[
    "llm",
    "prompt_dr",
    "human_designed",
    "random_sampling",
    "no_dr",
    "uninformative",
    "no_prior",
    "cem",
    "bayrn",
]


class PhysicsParameterSpec(BaseModel):
    """One randomizable simulator parameter. ``None`` range ends mean unbounded."""

    model_config = ConfigDict(frozen=True)

    name: str
    default: float
    valid_min: Optional[float] = None
    valid_max: Optional[float] = None
    grid_kind: GridKind
    unit: str = ""

    @property
    def lower(self) -> float:
        return -math.inf if self.valid_min is None else float(self.valid_min)

    @property
    def upper(self) -> float:
        return math.inf if self.valid_max is None else float(self.valid_max)

    def contains(self, value: float) -> bool:
        return math.isfinite(value) and self.lower <= value <= self.upper

    def search_grid(self) -> Tuple[float, ...]:
        """The grid kind's fixed values intersected with the valid range."""
        return tuple(v for v in SEARCH_GRIDS[self.grid_kind] if self.contains(v))

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.lower > self.upper:
            raise ValueError(f"{self.name}: valid_min exceeds valid_max")
        if not self.contains(self.default):
            raise ValueError(f"{self.name}: default {self.default} outside valid range")
        if not self.search_grid():
            raise ValueError(f"{self.name}: search grid '{self.grid_kind}' has no point in the valid range")
        return self


class PhysicsAssignment(BaseModel):
    """A concrete value for every parameter of one environment."""

    model_config = ConfigDict(frozen=True)

    values: Dict[str, float]

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def with_values(self, updates: Mapping[str, float]) -> "PhysicsAssignment":
        merged = dict(self.values)
        merged.update({k: float(v) for k, v in updates.items()})
        return PhysicsAssignment(values=merged)


def defaults_assignment(specs: Sequence[PhysicsParameterSpec]) -> PhysicsAssignment:
    return PhysicsAssignment(values={s.name: float(s.default) for s in specs})


def validate_assignment(specs: Sequence[PhysicsParameterSpec], assignment: PhysicsAssignment) -> None:
    """Exactly the spec's parameters, each inside its valid range."""
    by_name = {s.name: s for s in specs}
    for name, value in assignment.values.items():
        spec = by_name.get(name)
        if spec is None:
            raise UnknownParameter(f"unknown physics parameter '{name}'")
        if not spec.contains(float(value)):
            raise OutOfValidRange(
                f"{name}={value} outside valid range [{spec.lower}, {spec.upper}]"
            )
    missing = [name for name in by_name if name not in assignment.values]
    if missing:
        raise ValidationError(f"assignment missing parameters: {', '.join(missing)}")


class DomainRandomizationConfig(BaseModel):
    """Per-parameter uniform sampling intervals plus where they came from."""

    intervals: Dict[str, Tuple[float, float]] = Field(default_factory=dict)
    provenance: Provenance
    notes: List[str] = Field(default_factory=list)

    @field_validator("intervals")
    @classmethod
    def _ordered(cls, intervals):
        for name, (low, high) in intervals.items():
            if not (math.isfinite(low) and math.isfinite(high)):
                raise ValueError(f"{name}: interval ends must be finite")
            if low > high:
                raise ValueError(f"{name}: low {low} exceeds high {high}")
        return intervals

    @model_validator(mode="after")
    def _no_dr_is_empty(self):
        if self.provenance == "no_dr" and self.intervals:
            raise ValueError("a no_dr config cannot randomize anything")
        return self

    def to_json_dict(self) -> Dict:
        data = {
            "provenance": self.provenance,
            "intervals": {k: [float(lo), float(hi)] for k, (lo, hi) in self.intervals.items()},
        }
        if self.notes:
            data["notes"] = list(self.notes)
        return data


def check_intervals(dr: DomainRandomizationConfig, specs: Iterable[PhysicsParameterSpec]) -> None:
    by_name = {s.name: s for s in specs}
    for name, (low, high) in dr.intervals.items():
        spec = by_name.get(name)
        if spec is None:
            raise UnknownParameter(f"DR config randomizes unknown parameter '{name}'")
        if not (spec.contains(low) and spec.contains(high)):
            raise IntervalOutsideValidRange(
                f"{name}: [{low}, {high}] not inside valid range [{spec.lower}, {spec.upper}]"
            )


def sample_assignment(
    dr: Optional[DomainRandomizationConfig],
    defaults: PhysicsAssignment,
    rng: np.random.Generator,
    specs: Optional[Sequence[PhysicsParameterSpec]] = None,
) -> PhysicsAssignment:
    """Draw every randomized parameter uniformly; the rest keep their defaults.

    Draws happen in the defaults' parameter order so a given generator state
    always yields the same assignment.
    """
    if dr is None or not dr.intervals:
        return defaults
    if specs is not None:
        check_intervals(dr, specs)
    unknown = [name for name in dr.intervals if name not in defaults.values]
    if unknown:
        raise UnknownParameter(f"DR config randomizes unknown parameter '{unknown[0]}'")
    values = dict(defaults.values)
    for name in defaults.values:
        if name in dr.intervals:
            low, high = dr.intervals[name]
            values[name] = float(rng.uniform(low, high))
    return PhysicsAssignment(values=values)
