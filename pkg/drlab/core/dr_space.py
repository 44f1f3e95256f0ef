"""
Vector encoding of DR configs for the black-box optimizers, and the
train-then-transfer objective they maximize.
"""
import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from drlab.core.environments import EnvironmentSpec, TargetWorldSpec
from drlab.core.fitness import evaluate_policy
from drlab.core.physics import DomainRandomizationConfig, PhysicsParameterSpec
from drlab.core.ppo import TrainConfig, train_policy
from drlab.core.rapp import RappBounds
from drlab.core.reward_lang import RewardProgram
from drlab.errors import EmptyParameterSet, UnknownParameter, ValidationError

logger = logging.getLogger(__name__)


def _finite_box(spec: PhysicsParameterSpec) -> Tuple[float, float]:
    """Valid range, with unbounded ends replaced by the search-grid extremes."""
    grid = spec.search_grid()
    low = spec.lower if np.isfinite(spec.lower) else min(grid)
    high = spec.upper if np.isfinite(spec.upper) else max(grid)
    return float(low), float(high)


@dataclass(frozen=True)
class ConfigSpace:
    """Ordered (low, high) pairs, two coordinates per randomized parameter."""

    names: Tuple[str, ...]
    boxes: Tuple[Tuple[float, float], ...]
    defaults: Tuple[float, ...]
    provenance: str

    @classmethod
    def from_rapp(cls, bounds: RappBounds, specs: Sequence[PhysicsParameterSpec], provenance: str) -> "ConfigSpace":
        rows = [(s.name, bounds.interval(s.name), s.default) for s in specs if bounds.interval(s.name) is not None]
        if not rows:
            raise EmptyParameterSet("every RAPP bound is empty; nothing to optimize")
        return cls(tuple(r[0] for r in rows), tuple(r[1] for r in rows), tuple(r[2] for r in rows), provenance)

    @classmethod
    def from_valid_ranges(cls, specs: Sequence[PhysicsParameterSpec], provenance: str) -> "ConfigSpace":
        return cls(
            tuple(s.name for s in specs),
            tuple(_finite_box(s) for s in specs),
            tuple(s.default for s in specs),
            provenance,
        )

    @property
    def dim(self) -> int:
        return 2 * len(self.names)

    @property
    def lower(self) -> np.ndarray:
        return np.repeat([b[0] for b in self.boxes], 2).astype(np.float64)

    @property
    def upper(self) -> np.ndarray:
        return np.repeat([b[1] for b in self.boxes], 2).astype(np.float64)

    def default_vector(self) -> np.ndarray:
        """Degenerate intervals at each default, clipped into the box."""
        return np.clip(np.repeat(self.defaults, 2).astype(np.float64), self.lower, self.upper)

    def encode(self, config: DomainRandomizationConfig) -> np.ndarray:
        extra = sorted(set(config.intervals) - set(self.names))
        if extra:
            raise UnknownParameter(f"'{extra[0]}' is not part of this search space")
        v = self.default_vector()
        for i, name in enumerate(self.names):
            if name in config.intervals:
                v[2 * i], v[2 * i + 1] = config.intervals[name]
        return v

    def decode(self, vector) -> DomainRandomizationConfig:
        v = np.asarray(vector, dtype=np.float64).reshape(-1)
        if v.shape[0] != self.dim:
            raise ValidationError(f"config vector has {v.shape[0]} coordinates, expected {self.dim}")
        intervals: Dict[str, Tuple[float, float]] = {}
        for i, (name, (lo, hi)) in enumerate(zip(self.names, self.boxes)):
            a, b = sorted((v[2 * i], v[2 * i + 1]))
            intervals[name] = (float(np.clip(a, lo, hi)), float(np.clip(b, lo, hi)))
        return DomainRandomizationConfig(intervals=intervals, provenance=self.provenance)

    def normalize(self, vector) -> np.ndarray:
        span = np.where(self.upper > self.lower, self.upper - self.lower, 1.0)
        return (np.asarray(vector, dtype=np.float64) - self.lower) / span

    def denormalize(self, unit) -> np.ndarray:
        return self.lower + np.asarray(unit, dtype=np.float64) * (self.upper - self.lower)


class TransferObjective:
    """Mean target-world fitness of a policy trained under the given DR config."""

    def __init__(
        self,
        env_spec: EnvironmentSpec,
        reward: RewardProgram,
        target: TargetWorldSpec,
        train_cfg: TrainConfig,
        eval_episodes: int = 8,
        seed: int = 0,
    ):
        self.env_spec = env_spec
        self.reward = reward
        self.target = target
        self.train_cfg = train_cfg
        self.eval_episodes = eval_episodes
        self.seed = seed
        self.calls = 0
        self.logger = logging.getLogger(__name__)

    def __call__(self, config: DomainRandomizationConfig) -> float:
        self.calls += 1
        policy, _ = train_policy(self.env_spec, config, self.reward, self.train_cfg, seed=self.seed)
        report = evaluate_policy(policy, self.env_spec, self.target, self.eval_episodes, self.seed)
        self.logger.info(f"Objective call {self.calls}: target fitness {report.mean:.3f}")
        return report.mean

    def on_space(self, space: ConfigSpace):
        """Adapter from encoded vectors to configs."""
        return lambda vector: self(space.decode(vector))


# --- evaluation history ---------------------------------------------------

@dataclass
class EvaluationRecord:
    iteration: int
    phase: str
    vector: np.ndarray
    objective: float
    wall_clock: float
    error: Optional[str] = None


class OptimizationHistory:
    """Every objective call of one optimizer run, in call order."""

    def __init__(self):
        self.records: List[EvaluationRecord] = []
        self._start = time.monotonic()
        self.logger = logging.getLogger(__name__)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, objective: Callable[[np.ndarray], float], vector: np.ndarray,
               iteration: int, phase: str) -> float:
        """Calls the objective; any exception is recorded as -inf."""
        value, error = call_objective(objective, vector)
        self.add(vector, value, error, iteration, phase)
        return value

    def add(self, vector: np.ndarray, value: float, error: Optional[str], iteration: int, phase: str) -> None:
        if error:
            self.logger.warning(f"Objective failed at {phase}: {error}")
        self.records.append(
            EvaluationRecord(iteration, phase, np.array(vector, dtype=np.float64), value,
                             time.monotonic() - self._start, error)
        )

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records], dtype=np.float64)

    def best(self) -> EvaluationRecord:
        """Highest objective; the earliest call wins ties."""
        if not self.records:
            raise ValidationError("no evaluations recorded")
        return self.records[int(np.argmax(self.objectives()))]

    def phases(self) -> List[str]:
        return [r.phase for r in self.records]

    def to_csv(self, path: Path) -> None:
        """Call order, vectors, objectives and errors; a pure function of the run's inputs."""
        dim = len(self.records[0].vector) if self.records else 0
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "phase", *[f"v{i}" for i in range(dim)], "objective", "error"])
            for r in self.records:
                writer.writerow([r.iteration, r.phase, *[repr(float(x)) for x in r.vector],
                                 repr(r.objective), r.error or ""])

    def timings_to_csv(self, path: Path) -> None:
        """Wall-clock seconds since the run started, one row per call."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "phase", "wall_clock"])
            for r in self.records:
                writer.writerow([r.iteration, r.phase, f"{r.wall_clock:.3f}"])


def call_objective(objective: Callable[[np.ndarray], float], vector: np.ndarray) -> Tuple[float, Optional[str]]:
    try:
        value = float(objective(vector))
    except Exception as e:
        return -np.inf, f"{type(e).__name__}: {e}"
    if np.isnan(value):
        return -np.inf, "objective returned NaN"
    return value, None
