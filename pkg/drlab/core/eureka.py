"""
Evolutionary reward search with a safety instruction and reward reflection.

Each iteration asks the proposal source for K reward candidates, trains a
policy per parseable candidate, scores it by mean fitness on the default
physics, and feeds the iteration's best candidate back as reflection. The
global best across iterations is returned together with its policy.
"""
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from drlab.core import prompts
from drlab.core.environments import EnvironmentSpec
from drlab.core.fitness import FitnessReport, evaluate_policy
from drlab.core.ppo import PolicyCheckpoint, TrainConfig, TrainingLog, train_policy
from drlab.core.reward_lang import ComponentTrace, RewardProgram, parse_reward, trace_components
from drlab.core.rollout import rollout
from drlab.core.seeding import derive_seed
from drlab.errors import (
    AllCandidatesFailed,
    DrLabError,
    MissingBlock,
    MissingScore,
    NoValidCandidate,
    ValidationError,
)
from ll_providers import ProposalSource, llm_complete

logger = logging.getLogger(__name__)

_REWARD_BLOCK = re.compile(r"```reward[ \t]*\n(.*?)```", re.DOTALL)
NEG_INF = float("-inf")


@dataclass(frozen=True)
class TaskPrompt:
    l_task: str
    l_safety: str = ""
    environment_summary: str = ""

    def __post_init__(self):
        if not self.l_task.strip():
            raise ValidationError("task prompt needs a non-empty task description")

    def render(self) -> str:
        parts = [self.l_task.strip()]
        if self.l_safety.strip():
            parts.append(self.l_safety.strip())
        if self.environment_summary.strip():
            parts.append(self.environment_summary.strip())
        return "\n\n".join(parts)

    def without_safety(self) -> "TaskPrompt":
        return TaskPrompt(self.l_task, "", self.environment_summary)


def environment_summary(env_spec: EnvironmentSpec) -> str:
    docs = prompts.FEATURE_DOCS.get(env_spec.env_id, {})
    lines = [f"Environment: {env_spec.env_id} (dt = {env_spec.dt} s, horizon = {env_spec.horizon} steps)", "Features:"]
    lines += [f"    {name}: {docs.get(name, '')}".rstrip() for name in env_spec.feature_catalog]
    return "\n".join(lines)


def shipped_task_prompt(env_spec: EnvironmentSpec, safety_instruction: bool = True) -> TaskPrompt:
    prompt = TaskPrompt(
        l_task=prompts.TASK_DESCRIPTIONS[env_spec.env_id],
        l_safety=prompts.SAFETY_INSTRUCTIONS[env_spec.env_id],
        environment_summary=environment_summary(env_spec),
    )
    return prompt if safety_instruction else prompt.without_safety()


def extract_reward_block(text: str) -> str:
    m = _REWARD_BLOCK.search(text)
    if m is None:
        raise MissingBlock("response has no ```reward block")
    return m.group(1)


@dataclass
class CandidateRecord:
    iteration: int
    index: int
    response_text: str
    reward_text: Optional[str] = None
    program: Optional[RewardProgram] = None
    parse_error: Optional[str] = None
    training_error: Optional[str] = None
    score: Optional[float] = None
    fitness_report: Optional[FitnessReport] = None
    component_trace: Optional[ComponentTrace] = None
    training_log: Optional[TrainingLog] = None
    policy: Optional[PolicyCheckpoint] = field(default=None, repr=False)

    @property
    def parsed(self) -> bool:
        return self.program is not None

    @property
    def effective_score(self) -> float:
        return NEG_INF if self.score is None else self.score

    @property
    def failure(self) -> Optional[str]:
        return self.parse_error or self.training_error


@dataclass
class ReflectionMessage:
    reward_text: str
    score: float
    component_rows: List[str]
    fitness_summary: str

    def text(self) -> str:
        return "\n".join(
            [
                prompts.REFLECTION_PRE_FEEDBACK.strip(),
                "```reward",
                self.reward_text.strip(),
                "```",
                f"task score: {self.score:.3f}",
                *self.component_rows,
                self.fitness_summary,
                prompts.REFLECTION_POST_FEEDBACK.strip(),
            ]
        )


def build_reflection(best: CandidateRecord) -> ReflectionMessage:
    if best.score is None or best.component_trace is None:
        raise MissingScore(f"candidate {best.iteration}/{best.index} has no score")
    rows = [
        f"{name}: mean={s.mean:.3f}, std={s.std:.3f}, min={s.min:.3f}, max={s.max:.3f}"
        for name, s in best.component_trace.components.items()
    ]
    trajectory = best.training_log.fitness_trajectory() if best.training_log else []
    if trajectory:
        summary = (
            f"fitness during training: {trajectory[0]:.3f} -> {trajectory[-1]:.3f} "
            f"over {len(trajectory)} updates (max {max(trajectory):.3f})"
        )
    else:
        summary = "fitness during training: no updates recorded"
    return ReflectionMessage(best.reward_text or "", best.score, rows, summary)


def select_best(candidates: Sequence[CandidateRecord]) -> int:
    """Index of the highest score; ties go to the lowest index."""
    best_index, best_score = None, NEG_INF
    for i, c in enumerate(candidates):
        if c.score is not None and (best_index is None or c.score > best_score):
            best_index, best_score = i, c.score
    if best_index is None:
        raise AllCandidatesFailed(f"none of {len(candidates)} candidates produced a score")
    return best_index


@dataclass
class SearchHistory:
    candidates: List[CandidateRecord] = field(default_factory=list)
    best_scores: List[float] = field(default_factory=list)
    reflections: List[str] = field(default_factory=list)
    requests: int = 0
    best_iteration: Optional[int] = None
    best_index: Optional[int] = None

    def by_iteration(self, n: int) -> List[CandidateRecord]:
        return [c for c in self.candidates if c.iteration == n]

    def save(self, run_dir: Path) -> None:
        run_dir = Path(run_dir)
        for c in self.candidates:
            d = run_dir / f"iter_{c.iteration}" / f"cand_{c.index}"
            d.mkdir(parents=True, exist_ok=True)
            (d / "response.txt").write_text(c.response_text)
            if c.reward_text is not None:
                (d / "reward.rwd").write_text(c.reward_text)
            report = {"parsed": c.parsed, "parse_error": c.parse_error, "training_error": c.training_error}
            (d / "parse_report.json").write_text(json.dumps(report, indent=2))
            if c.training_log is not None:
                c.training_log.to_csv(d / "training.csv")
            score = {
                "score": c.score,
                "fitness": c.fitness_report.to_dict() if c.fitness_report else None,
            }
            (d / "score.json").write_text(json.dumps(score, indent=2))
        best = {
            "iteration": self.best_iteration,
            "index": self.best_index,
            "score": self.best_scores[-1] if self.best_scores else None,
            "reward": (f"iter_{self.best_iteration}/cand_{self.best_index}/reward.rwd"
                       if self.best_iteration is not None else None),
            "best_scores": self.best_scores,
            "requests": self.requests,
        }
        (run_dir / "best.json").write_text(json.dumps(best, indent=2))
        (run_dir / "reflections.json").write_text(json.dumps(self.reflections, indent=2))


def _evaluate_candidate(record: CandidateRecord, env_spec: EnvironmentSpec, train_cfg: TrainConfig,
                        eval_episodes: int, eval_seed: int) -> CandidateRecord:
    try:
        record.reward_text = extract_reward_block(record.response_text)
        record.program = parse_reward(record.reward_text, env_spec.feature_catalog)
    except DrLabError as e:
        record.parse_error = str(e)
        logger.warning(f"Candidate {record.iteration}/{record.index} rejected: {e}")
        return record
    try:
        policy, log = train_policy(env_spec, None, record.program, train_cfg)
        record.policy, record.training_log = policy, log
        defaults = env_spec.defaults()
        record.fitness_report = evaluate_policy(policy, env_spec, defaults, eval_episodes, eval_seed)
        record.score = record.fitness_report.mean
        if log.rows:
            record.component_trace = log.rows[-1].components
        else:
            trace = rollout(env_spec, defaults, policy, derive_seed(eval_seed, "eval", 0))
            record.component_trace = trace_components(record.program, trace)
    except DrLabError as e:
        record.training_error = str(e)
        record.score = None
        logger.warning(f"Candidate {record.iteration}/{record.index} failed in training: {e}")
        return record
    logger.info(f"Candidate {record.iteration}/{record.index}: score {record.score:.3f}")
    return record


def run_reward_search(
    source: ProposalSource,
    env_spec: EnvironmentSpec,
    prompt: TaskPrompt,
    iterations: int = 2,
    samples: int = 4,
    train_cfg: Optional[TrainConfig] = None,
    eval_episodes: int = 8,
    eval_seed: int = 0,
    workers: int = 1,
    run_dir: Optional[Path] = None,
) -> Tuple[RewardProgram, PolicyCheckpoint, SearchHistory]:
    """Returns the best reward, its trained policy and the full history."""
    if iterations < 1 or samples < 1:
        raise ValidationError("reward search needs at least one iteration and one sample")
    train_cfg = train_cfg or TrainConfig()
    history = SearchHistory()
    messages: List[Dict[str, str]] = [
        {"role": "system", "content": prompts.REWARD_SYSTEM_PROMPT.strip()},
        {"role": "user", "content": prompt.render()},
    ]
    best: Optional[CandidateRecord] = None

    for n in range(iterations):
        records = []
        for k in range(samples):
            text = llm_complete(source, messages, "reward")
            history.requests += 1
            records.append(CandidateRecord(iteration=n, index=k, response_text=text))

        def work(record: CandidateRecord) -> CandidateRecord:
            return _evaluate_candidate(record, env_spec, train_cfg, eval_episodes, eval_seed)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                records = list(pool.map(work, records))
        else:
            records = [work(r) for r in records]
        history.candidates.extend(records)

        failures = [f"candidate {r.index}: {r.failure}" for r in records if r.score is None]
        try:
            iteration_best = records[select_best(records)]
        except DrLabError:
            iteration_best = None

        if iteration_best is not None and (best is None or iteration_best.score > best.score):
            best = iteration_best
        history.best_scores.append(best.score if best is not None else NEG_INF)

        feedback = []
        if iteration_best is not None:
            reflection = build_reflection(iteration_best)
            messages.append({"role": "assistant", "content": f"```reward\n{iteration_best.reward_text.strip()}\n```"})
            feedback.append(reflection.text())
        if failures:
            feedback.append(prompts.REWARD_FAILURE_FEEDBACK.format(failures="\n".join(failures)).strip())
        if n < iterations - 1:
            messages.append({"role": "user", "content": "\n\n".join(feedback)})
        history.reflections.append("\n\n".join(feedback))
        logger.info(f"Iteration {n}: best score so far {history.best_scores[-1]:.3f}")

    if best is None:
        if run_dir is not None:
            history.save(run_dir)
        if not any(c.parsed for c in history.candidates):
            errors = "; ".join(c.parse_error or "" for c in history.candidates[-samples:])
            raise NoValidCandidate(f"no parseable reward in {history.requests} proposals (last errors: {errors})")
        raise AllCandidatesFailed("every parsed reward failed during training")

    history.best_iteration, history.best_index = best.iteration, best.index
    if run_dir is not None:
        history.save(run_dir)
    return best.program, best.policy, history
