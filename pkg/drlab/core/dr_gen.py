"""
Domain-randomization synthesis: DR prompts, response parsing, RAPP-bounded
validation, the ablation generators and batched proposal.
"""
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from drlab.core import prompts
from drlab.core.physics import DomainRandomizationConfig, PhysicsParameterSpec
from drlab.core.rapp import RappBounds
from drlab.errors import (
    AllProposalsFailed,
    DrLabError,
    EmptyAfterClamp,
    EmptyParameterSet,
    IntervalOutsideValidRange,
    MalformedInterval,
    MissingBlock,
    MissingBounds,
    OutOfRappBounds,
    UnknownParameter,
    ValidationError,
)
from ll_providers import ProposalSource, llm_complete

logger = logging.getLogger(__name__)

PromptVariant = Literal["rapp", "uninformative", "no_prior"]
ValidationPolicy = Literal["reject", "clamp"]
AblationKind = Literal["no_dr", "prompt_dr", "random_sampling", "human_designed"]

MAX_RETRIES = 3
_DR_BLOCK = re.compile(r"```dr[ \t]*\n(.*?)```", re.DOTALL)
_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_DR_LINE = re.compile(rf"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*\[?\s*({_NUMBER})\s*,\s*({_NUMBER})\s*\]?\s*$")

# Hand-authored reference configs for the toy environments.
HUMAN_DESIGNED: Dict[str, Dict[str, Tuple[float, float]]] = {
    "sprint_cart": {
        "friction": (0.25, 3.0),
        "payload_mass": (-1.0, 3.0),
        "motor_strength": (0.9, 1.1),
    },
    "spin_disk": {
        "object_mass": (0.3, 0.8),
        "com_offset": (-0.3, 0.3),
        "damping": (0.05, 0.2),
        "object_friction": (0.5, 1.5),
    },
    "globe_balance": {
        "ball_mass": (0.8, 1.5),
        "robot_payload_mass": (-0.5, 1.0),
        "ball_drag": (0.05, 0.3),
        "motor_strength": (0.9, 1.1),
    },
}


@dataclass(frozen=True)
class DRPromptContext:
    """Parameters in environment order, each with its listed range (None for no_prior)."""

    variant: PromptVariant
    task_description: str
    parameters: Tuple[Tuple[str, float, Optional[Tuple[float, float]]], ...]

    def parameter_listing(self) -> str:
        lines = []
        for name, default, interval in self.parameters:
            if interval is None:
                lines.append(name)
            else:
                lines.append(f"{name}: [{interval[0]!r}, {interval[1]!r}]")
        return "\n".join(lines)

    def render(self) -> str:
        system = prompts.DR_SYSTEM_PROMPT.format(prior_note=prompts.DR_PRIOR_NOTES[self.variant]).strip()
        parts = [system]
        if self.task_description:
            parts.append(f"Task: {self.task_description}")
        parts.append("Parameters:\n" + self.parameter_listing())
        return "\n\n".join(parts)


def _grid_extremes(spec: PhysicsParameterSpec) -> Tuple[float, float]:
    grid = spec.search_grid()
    return min(grid), max(grid)


def dr_prompt_context(
    specs: Sequence[PhysicsParameterSpec],
    bounds: Optional[RappBounds],
    variant: PromptVariant,
    task_description: str = "",
) -> DRPromptContext:
    rows = []
    for s in specs:
        if variant == "rapp":
            if bounds is None:
                raise MissingBounds("the rapp prompt variant needs RAPP bounds")
            interval = bounds.interval(s.name)
            if interval is None:
                continue
            rows.append((s.name, s.default, interval))
        elif variant == "uninformative":
            rows.append((s.name, s.default, _grid_extremes(s)))
        else:
            rows.append((s.name, s.default, None))
    if not rows:
        raise EmptyParameterSet(f"no parameter to list in the {variant} DR prompt")
    return DRPromptContext(variant=variant, task_description=task_description, parameters=tuple(rows))


def build_dr_prompt(
    specs: Sequence[PhysicsParameterSpec],
    bounds: Optional[RappBounds],
    variant: PromptVariant = "rapp",
    task_description: str = "",
) -> str:
    return dr_prompt_context(specs, bounds, variant, task_description).render()


def parse_dr_response(text: str, specs: Sequence[PhysicsParameterSpec],
                      provenance: str = "llm") -> DomainRandomizationConfig:
    m = _DR_BLOCK.search(text)
    if m is None:
        raise MissingBlock("response has no ```dr block")
    known = {s.name for s in specs}
    intervals: Dict[str, Tuple[float, float]] = {}
    for raw in m.group(1).splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _DR_LINE.match(line)
        if match is None:
            raise MalformedInterval(f"cannot read DR line '{raw.strip()}'")
        name, low, high = match.group(1), float(match.group(2)), float(match.group(3))
        if name not in known:
            raise UnknownParameter(f"DR response names unknown parameter '{name}'")
        if not (math.isfinite(low) and math.isfinite(high)):
            raise MalformedInterval(f"{name}: interval ends must be finite")
        if low > high:
            raise MalformedInterval(f"{name}: low {low} exceeds high {high}")
        intervals[name] = (low, high)
    return DomainRandomizationConfig(intervals=intervals, provenance=provenance)


def clamp_validate(
    config: DomainRandomizationConfig,
    bounds: RappBounds,
    specs: Sequence[PhysicsParameterSpec],
    policy: ValidationPolicy = "clamp",
) -> DomainRandomizationConfig:
    known = {s.name for s in specs}
    intervals: Dict[str, Tuple[float, float]] = {}
    notes = list(config.notes)
    for name, (low, high) in config.intervals.items():
        if name not in known:
            raise UnknownParameter(f"DR config randomizes unknown parameter '{name}'")
        bound = bounds.interval(name)
        if bound is None:
            raise OutOfRappBounds(f"{name}: no RAPP bound (no feasible value was found)")
        b_low, b_high = bound
        if b_low <= low and high <= b_high:
            intervals[name] = (low, high)
            continue
        if policy == "reject":
            raise OutOfRappBounds(f"{name}: [{low}, {high}] exceeds RAPP bound [{b_low}, {b_high}]")
        c_low, c_high = max(low, b_low), min(high, b_high)
        if c_low > c_high:
            raise EmptyAfterClamp(f"{name}: [{low}, {high}] does not meet RAPP bound [{b_low}, {b_high}]")
        note = f"clamped {name} from [{low}, {high}] to [{c_low}, {c_high}]"
        logger.warning(note)
        notes.append(note)
        intervals[name] = (c_low, c_high)
    return DomainRandomizationConfig(intervals=intervals, provenance=config.provenance, notes=notes)


def validate_against_ranges(config: DomainRandomizationConfig,
                            specs: Sequence[PhysicsParameterSpec]) -> DomainRandomizationConfig:
    """Valid-range check only; used by the no_prior and uninformative ablations."""
    by_name = {s.name: s for s in specs}
    for name, (low, high) in config.intervals.items():
        s = by_name.get(name)
        if s is None:
            raise UnknownParameter(f"DR config randomizes unknown parameter '{name}'")
        if not (s.contains(low) and s.contains(high)):
            raise IntervalOutsideValidRange(f"{name}: [{low}, {high}] not inside [{s.lower}, {s.upper}]")
    return config


def human_designed_config(env_id: str) -> DomainRandomizationConfig:
    if env_id not in HUMAN_DESIGNED:
        raise ValidationError(f"no human-designed DR config for '{env_id}'")
    return DomainRandomizationConfig(
        intervals=dict(HUMAN_DESIGNED[env_id]),
        provenance="human_designed",
        notes=["hand-authored reference config for the toy environment"],
    )


def generate_ablation(
    kind: AblationKind,
    bounds: Optional[RappBounds],
    specs: Sequence[PhysicsParameterSpec],
    rng: Optional[np.random.Generator] = None,
    env_id: Optional[str] = None,
) -> DomainRandomizationConfig:
    if kind == "no_dr":
        return DomainRandomizationConfig(provenance="no_dr")
    if kind == "human_designed":
        return human_designed_config(env_id or (bounds.env_id if bounds is not None else ""))
    if bounds is None:
        raise MissingBounds(f"the {kind} ablation needs RAPP bounds")
    if kind == "prompt_dr":
        intervals = {s.name: bounds.interval(s.name) for s in specs if bounds.interval(s.name) is not None}
        return DomainRandomizationConfig(intervals=intervals, provenance="prompt_dr")
    if kind == "random_sampling":
        if rng is None:
            raise ValidationError("random_sampling needs a generator")
        intervals = {}
        for s in specs:
            bound = bounds.interval(s.name)
            if bound is None:
                continue
            if rng.random() < 0.5:
                a, b = rng.uniform(bound[0], bound[1], size=2)
                intervals[s.name] = (float(min(a, b)), float(max(a, b)))
        return DomainRandomizationConfig(intervals=intervals, provenance="random_sampling")
    raise ValidationError(f"unknown ablation '{kind}'")


@dataclass
class ProposalAttempt:
    proposal: int
    attempt: int
    response: str
    error: Optional[str] = None


@dataclass
class ProposalBatch:
    prompt: str
    configs: List[DomainRandomizationConfig] = field(default_factory=list)
    attempts: List[ProposalAttempt] = field(default_factory=list)
    failures: List[int] = field(default_factory=list)

    @property
    def retry_count(self) -> int:
        return sum(1 for a in self.attempts if a.attempt > 0)

    def save(self, run_dir: Path) -> None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "dr_prompt.txt").write_text(self.prompt)
        for a in self.attempts:
            (run_dir / f"response_{a.proposal}_{a.attempt}.txt").write_text(a.response)
        for i, cfg in enumerate(self.configs):
            (run_dir / f"dr_config_{i}.json").write_text(json.dumps(cfg.to_json_dict(), indent=2))
        report = {
            "configs": len(self.configs),
            "failures": self.failures,
            "retry_count": self.retry_count,
            "attempts": [{"proposal": a.proposal, "attempt": a.attempt, "error": a.error} for a in self.attempts],
        }
        (run_dir / "proposal_report.json").write_text(json.dumps(report, indent=2))


def propose_batch(
    source: ProposalSource,
    prompt: str,
    m: int,
    specs: Sequence[PhysicsParameterSpec],
    bounds: Optional[RappBounds],
    validation_policy: ValidationPolicy = "clamp",
    provenance: str = "llm",
) -> ProposalBatch:
    """``m`` independent proposals, each retried up to three times.

    llm-provenance configs are checked against RAPP; the no_prior and
    uninformative ablations only against the valid ranges.
    """
    if m < 1:
        raise ValidationError("propose_batch needs m >= 1")
    if provenance == "llm" and bounds is None:
        raise MissingBounds("llm proposals are validated against RAPP bounds")
    batch = ProposalBatch(prompt=prompt)
    messages = [{"role": "user", "content": prompt}]
    logger.debug(f"DR prompt:\n{prompt}")

    for i in range(m):
        for attempt in range(MAX_RETRIES + 1):
            response = llm_complete(source, messages, "dr")
            record = ProposalAttempt(proposal=i, attempt=attempt, response=response)
            batch.attempts.append(record)
            try:
                config = parse_dr_response(response, specs, provenance=provenance)
                if provenance == "llm":
                    config = clamp_validate(config, bounds, specs, validation_policy)
                else:
                    config = validate_against_ranges(config, specs)
            except DrLabError as e:
                record.error = str(e)
                logger.warning(f"DR proposal {i} attempt {attempt} rejected: {e}")
                continue
            batch.configs.append(config)
            if attempt:
                logger.info(f"DR proposal {i} accepted after {attempt} retries")
            break
        else:
            batch.failures.append(i)

    if not batch.configs:
        raise AllProposalsFailed(f"all {m} DR proposals failed after {MAX_RETRIES} retries each")
    logger.info(f"Proposed {len(batch.configs)}/{m} DR configs ({len(batch.failures)} failed)")
    return batch
