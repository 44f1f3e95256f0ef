"""
Reward-aware physics prior.

Each parameter is swept one at a time over its search grid while every other
parameter stays at its default. A grid value is feasible when the reference
policy's mean fitness there reaches ``threshold * nominal_fitness``. The
per-parameter bounds are the min and max feasible grid values.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from drlab.core.environments import EnvironmentSpec
from drlab.core.fitness import evaluate_policy
from drlab.core.physics import PhysicsAssignment
from drlab.core.rollout import Policy
from drlab.errors import NominalFailure, ValidationError

logger = logging.getLogger(__name__)

# (assignment, seed) -> mean fitness over the criterion's episodes
Evaluator = Callable[[PhysicsAssignment, int], float]


class SuccessCriterion(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["fraction_of_nominal"] = "fraction_of_nominal"
    threshold: float = Field(default=0.5, gt=0.0, le=1.0)
    nominal_fitness: Optional[float] = None
    episodes_per_value: int = Field(default=4, ge=1)

    def with_nominal(self, nominal_fitness: float) -> "SuccessCriterion":
        return self.model_copy(update={"nominal_fitness": float(nominal_fitness)})


def is_feasible(mean_fitness: float, criterion: SuccessCriterion) -> bool:
    if criterion.nominal_fitness is None:
        raise ValidationError("success criterion has no nominal fitness")
    return mean_fitness >= criterion.threshold * criterion.nominal_fitness


def default_grids(env_spec: EnvironmentSpec) -> Dict[str, Tuple[float, ...]]:
    return {s.name: tuple(sorted(s.search_grid())) for s in env_spec.param_specs}


class ParameterBounds(BaseModel):
    name: str
    feasible_values: List[float] = Field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.feasible_values

    @property
    def low(self) -> Optional[float]:
        return None if self.empty else min(self.feasible_values)

    @property
    def high(self) -> Optional[float]:
        return None if self.empty else max(self.feasible_values)


class RappBounds(BaseModel):
    env_id: str
    nominal_fitness: float
    threshold: float
    params: Dict[str, ParameterBounds]

    def interval(self, name: str) -> Optional[Tuple[float, float]]:
        b = self.params.get(name)
        if b is None or b.empty:
            return None
        return b.low, b.high

    def nonempty(self) -> Dict[str, Tuple[float, float]]:
        return {name: (b.low, b.high) for name, b in self.params.items() if not b.empty}

    def to_json_dict(self) -> Dict:
        return {
            name: {"low": b.low, "high": b.high, "feasible": list(b.feasible_values), "empty": b.empty}
            for name, b in self.params.items()
        }

    def document(self) -> Dict:
        return {
            "env_id": self.env_id,
            "nominal_fitness": self.nominal_fitness,
            "threshold": self.threshold,
            "bounds": self.to_json_dict(),
        }

    @classmethod
    def from_document(cls, doc: Dict) -> "RappBounds":
        try:
            params = {
                name: ParameterBounds(name=name, feasible_values=sorted(entry.get("feasible", [])))
                for name, entry in doc["bounds"].items()
            }
            return cls(
                env_id=doc["env_id"],
                nominal_fitness=doc["nominal_fitness"],
                threshold=doc["threshold"],
                params=params,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"invalid RAPP bounds document: {e}") from None

    def prompt_block(self) -> str:
        """One ``name: [low, high]`` line per non-empty parameter, full precision."""
        return "\n".join(f"{name}: [{low!r}, {high!r}]" for name, (low, high) in self.nonempty().items())


def policy_evaluator(policy: Policy, env_spec: EnvironmentSpec, episodes: int) -> Evaluator:
    def evaluate(assignment: PhysicsAssignment, seed: int) -> float:
        return evaluate_policy(policy, env_spec, assignment, episodes, seed).mean

    return evaluate


def compute_rapp(
    policy: Optional[Policy],
    env_spec: EnvironmentSpec,
    criterion: Optional[SuccessCriterion] = None,
    seed: int = 0,
    workers: int = 1,
    evaluator: Optional[Evaluator] = None,
) -> RappBounds:
    """Sweep every (parameter, grid value); all points share the nominal seed set.

    ``evaluator`` replaces policy rollouts, which lets stub feasibility
    predicates drive the sweep.
    """
    criterion = criterion or SuccessCriterion()
    if evaluator is None:
        if policy is None:
            raise ValidationError("compute_rapp needs a policy or an evaluator")
        evaluator = policy_evaluator(policy, env_spec, criterion.episodes_per_value)

    defaults = env_spec.defaults()
    if criterion.nominal_fitness is None:
        criterion = criterion.with_nominal(evaluator(defaults, seed))
    nominal = criterion.nominal_fitness
    if not nominal > 0:
        raise NominalFailure(f"nominal fitness {nominal:.4f} is not positive; sweep refused", nominal)

    grids = default_grids(env_spec)
    points = [(name, value) for name in env_spec.param_names for value in grids[name]]
    logger.info(
        f"RAPP sweep on {env_spec.env_id}: {len(points)} points x {criterion.episodes_per_value} episodes, "
        f"nominal fitness {nominal:.3f}, threshold {criterion.threshold}"
    )

    def one(point: Tuple[str, float]) -> float:
        name, value = point
        return float(evaluator(defaults.with_values({name: value}), seed))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(one, points))
    else:
        scores = [one(p) for p in points]

    feasible: Dict[str, List[float]] = {name: [] for name in env_spec.param_names}
    for (name, value), score in sorted(zip(points, scores)):
        if is_feasible(score, criterion):
            feasible[name].append(value)
        logger.debug(f"{name}={value}: mean fitness {score:.4f}")

    bounds = RappBounds(
        env_id=env_spec.env_id,
        nominal_fitness=nominal,
        threshold=criterion.threshold,
        params={name: ParameterBounds(name=name, feasible_values=values) for name, values in feasible.items()},
    )
    for name, b in bounds.params.items():
        if b.empty:
            logger.warning(f"No feasible value for '{name}'; it is left out of DR prompts")
        else:
            logger.info(f"{name}: [{b.low}, {b.high}]")
    return bounds
