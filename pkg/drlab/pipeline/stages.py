"""
Pipeline stages. Each ``cmd_*`` reads only the upstream artifacts it
declares (hash-verified through the manifest) and records its own outputs.

Run-directory layout::

    eureka/          search history, reward.rwd, pi_initial.json/.bin
    rapp/            bounds.json, prompt_block.txt
    dr/<method>/     dr_config_<i>.json (+ prompts and responses)
    train/<method>/cfg_<i>/seed_<s>/   policy.json/.bin, training.csv
    transfer/        per_policy.csv, summary.csv, report.md
    baseline/<kind>/ history.csv, timings.csv, best_config.json, transfer.csv
    report/          report.md, summary.csv
"""
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from drlab.core.bayrn import bayrn_optimize
from drlab.core.cem import cem_optimize
from drlab.core.dr_gen import build_dr_prompt, generate_ablation, propose_batch
from drlab.core.dr_space import ConfigSpace, TransferObjective
from drlab.core.eureka import run_reward_search, shipped_task_prompt
from drlab.core.fitness import FitnessReport, evaluate_policy
from drlab.core.gaussian_process import KernelParams
from drlab.core.physics import DomainRandomizationConfig
from drlab.core.ppo import PolicyCheckpoint, train_policy
from drlab.core.rapp import RappBounds, SuccessCriterion, compute_rapp
from drlab.core.reward_lang import load_reward_file, print_reward
from drlab.core.seeding import derive_rng
from drlab.errors import DrLabError, EmptyRun, ValidationError
from drlab.pipeline.config import ExperimentConfig
from drlab.pipeline.manifest import RunManifest
from drlab.pipeline.report import (
    PolicyResult,
    aggregate,
    method_table,
    read_csv,
    rows_from_csv,
    sort_rows,
    write_csv,
)
from ll_providers import build_source

logger = logging.getLogger(__name__)

PROPOSAL_METHODS = {"llm": "rapp", "no_prior": "no_prior", "uninformative": "uninformative"}


def _open(config: ExperimentConfig, run_dir: Path) -> Tuple[Path, RunManifest]:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir, RunManifest.open(run_dir, config.snapshot())


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2))
    return path


def _metrics(report: FitnessReport) -> Dict[str, Optional[float]]:
    return {
        "fitness": report.mean,
        "velocity": report.mean_velocity,
        "distance": report.distance,
        "mean_abs_action": report.mean_abs_action,
        "mean_torque_sq": report.mean_torque_sq,
    }


def _pick(paths: List[Path], name: str) -> Path:
    return next(p for p in paths if p.name == name)


def _load_reward(config: ExperimentConfig, manifest: RunManifest, run_dir: Path):
    env_spec, target = config.load_environment()
    (reward_path,) = manifest.require(run_dir, "reward")
    return env_spec, target, load_reward_file(reward_path, env_spec.feature_catalog)


def _load_bounds(manifest: RunManifest, run_dir: Path) -> RappBounds:
    (bounds_path,) = manifest.require(run_dir, "rapp_bounds")
    return RappBounds.from_document(json.loads(bounds_path.read_text()))


# --- eureka ---------------------------------------------------------------

def cmd_eureka(config: ExperimentConfig, run_dir: Path) -> Dict[str, List[Path]]:
    run_dir, manifest = _open(config, run_dir)
    started = time.time()
    env_spec, _ = config.load_environment()
    source = build_source(config.source, base_dir=config.base_dir)
    prompt = shipped_task_prompt(env_spec, config.eureka.safety_instruction)
    out = run_dir / "eureka"
    out.mkdir(parents=True, exist_ok=True)
    train_cfg = config.train.eureka.model_copy(update={"seed": config.pipeline_seed})

    program, policy, history = run_reward_search(
        source, env_spec, prompt,
        iterations=config.eureka.iterations,
        samples=config.eureka.samples,
        train_cfg=train_cfg,
        eval_episodes=config.eureka.eval_episodes,
        eval_seed=config.eval_seed,
        workers=config.workers,
        run_dir=out,
    )
    reward_path = out / "reward.rwd"
    reward_path.write_text(print_reward(program))
    checkpoint = policy.save(out / "pi_initial.json")
    artifacts = {
        "reward": [reward_path],
        "pi_initial": list(checkpoint),
        "search_history": [out / "best.json"],
    }
    manifest.record_stage(run_dir, "eureka", started, artifacts)
    logger.info(f"Best reward score {history.best_scores[-1]:.3f} after {history.requests} proposals")
    return artifacts


# --- rapp -----------------------------------------------------------------

def cmd_rapp(config: ExperimentConfig, run_dir: Path) -> Dict[str, List[Path]]:
    run_dir, manifest = _open(config, run_dir)
    started = time.time()
    env_spec, _ = config.load_environment()
    policy_path = _pick(manifest.require(run_dir, "pi_initial"), "pi_initial.json")
    policy = PolicyCheckpoint.load(policy_path)
    criterion = SuccessCriterion(
        threshold=config.rapp.threshold, episodes_per_value=config.rapp.episodes_per_value
    )
    bounds = compute_rapp(policy, env_spec, criterion, seed=config.eval_seed, workers=config.workers)
    out = run_dir / "rapp"
    bounds_path = _write_json(out / "bounds.json", bounds.document())
    block_path = out / "prompt_block.txt"
    block_path.write_text(bounds.prompt_block() + "\n")
    artifacts = {"rapp_bounds": [bounds_path], "rapp_prompt": [block_path]}
    manifest.record_stage(run_dir, "rapp", started, artifacts, upstream=["eureka"])
    return artifacts


# --- dr-propose -----------------------------------------------------------

def cmd_dr_propose(config: ExperimentConfig, run_dir: Path) -> Dict[str, List[Path]]:
    run_dir, manifest = _open(config, run_dir)
    started = time.time()
    env_spec, _ = config.load_environment()
    specs = env_spec.param_specs
    needs_bounds = any(m in ("llm", "prompt_dr", "random_sampling") for m in config.dr.methods)
    bounds = _load_bounds(manifest, run_dir) if needs_bounds else None
    source = None
    task = shipped_task_prompt(env_spec).l_task

    index: Dict[str, Dict] = {}
    paths: List[Path] = []
    for method in config.dr.methods:
        out = run_dir / "dr" / method
        out.mkdir(parents=True, exist_ok=True)
        configs: List[DomainRandomizationConfig] = []
        error = None
        if method in PROPOSAL_METHODS:
            source = source or build_source(config.source, base_dir=config.base_dir)
            prompt = build_dr_prompt(specs, bounds, PROPOSAL_METHODS[method], task)
            provenance = "llm" if method == "llm" else method
            try:
                batch = propose_batch(source, prompt, config.dr.m, specs, bounds,
                                      config.dr.validation_policy, provenance=provenance)
                batch.save(out)
                configs = batch.configs
            except DrLabError as e:
                error = str(e)
                logger.warning(f"DR proposals for {method} failed: {e}")
        elif method == "random_sampling":
            configs = [
                generate_ablation("random_sampling", bounds, specs, derive_rng(config.pipeline_seed, "random_sampling", i))
                for i in range(config.dr.m)
            ]
        else:
            configs = [generate_ablation(method, bounds, specs, env_id=env_spec.env_id)]

        files = [_write_json(out / f"dr_config_{i}.json", c.to_json_dict()) for i, c in enumerate(configs)]
        paths += files
        index[method] = {"configs": [str(p.relative_to(run_dir)) for p in files], "error": error}
        logger.info(f"{method}: {len(configs)} DR configs")

    index_path = _write_json(run_dir / "dr" / "configs.json", index)
    artifacts = {"dr_index": [index_path], "dr_configs": paths}
    manifest.record_stage(run_dir, "dr-propose", started, artifacts, upstream=["rapp"] if bounds else [])
    return artifacts


def _load_dr_index(manifest: RunManifest, run_dir: Path) -> Dict[str, List[DomainRandomizationConfig]]:
    (index_path,) = manifest.require(run_dir, "dr_index")
    manifest.require(run_dir, "dr_configs")
    index = json.loads(index_path.read_text())
    return {
        method: [DomainRandomizationConfig(**json.loads((run_dir / p).read_text())) for p in entry["configs"]]
        for method, entry in index.items()
    }


# --- dr-train -------------------------------------------------------------

def cmd_dr_train(config: ExperimentConfig, run_dir: Path) -> Dict[str, List[Path]]:
    run_dir, manifest = _open(config, run_dir)
    started = time.time()
    env_spec, _, reward = _load_reward(config, manifest, run_dir)
    dr_configs = _load_dr_index(manifest, run_dir)
    units = [(method, i, dr, seed) for method, cfgs in dr_configs.items()
             for i, dr in enumerate(cfgs) for seed in config.seeds]
    logger.info(f"Training {len(units)} policies ({len(config.seeds)} seeds each)")

    def train_unit(unit) -> Dict:
        method, i, dr, seed = unit
        out = run_dir / "train" / method / f"cfg_{i}" / f"seed_{seed}"
        out.mkdir(parents=True, exist_ok=True)
        record = {"method": method, "config": i, "seed": seed, "status": "ok", "policy": None, "error": None}
        try:
            policy, log = train_policy(env_spec, dr, reward, config.train.final, seed=seed)
        except DrLabError as e:
            log = getattr(e, "log", None)
            record.update(status="failed", error=str(e))
            logger.warning(f"{method} cfg {i} seed {seed} failed: {e}")
        else:
            policy.save(out / "policy.json")
            record["policy"] = str((out / "policy.json").relative_to(run_dir))
        if log is not None:
            log.to_csv(out / "training.csv")
        return record

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(train_unit, units))
    else:
        records = [train_unit(u) for u in units]

    index_path = _write_json(run_dir / "train" / "index.json", records)
    policy_files = [run_dir / r["policy"] for r in records if r["policy"]]
    policy_files += [p.with_suffix(".bin") for p in policy_files]
    artifacts = {"policy_index": [index_path], "policies": policy_files}
    manifest.record_stage(run_dir, "dr-train", started, artifacts, upstream=["eureka", "dr-propose"])
    return artifacts


# --- transfer-eval --------------------------------------------------------

def cmd_transfer_eval(config: ExperimentConfig, run_dir: Path) -> Dict[str, List[Path]]:
    run_dir, manifest = _open(config, run_dir)
    started = time.time()
    env_spec, target = config.load_environment()
    (index_path,) = manifest.require(run_dir, "policy_index")
    manifest.require(run_dir, "policies")
    records = json.loads(index_path.read_text())

    def evaluate(record: Dict) -> PolicyResult:
        if record["status"] != "ok":
            return PolicyResult(record["method"], record["config"], record["seed"], {}, "failed", record["error"])
        policy = PolicyCheckpoint.load(run_dir / record["policy"])
        report = evaluate_policy(policy, env_spec, target, config.eval_episodes, config.eval_seed)
        return PolicyResult(record["method"], record["config"], record["seed"], _metrics(report))

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(evaluate, records))
    else:
        results = [evaluate(r) for r in records]

    rows = aggregate(results)
    out = run_dir / "transfer"
    out.mkdir(parents=True, exist_ok=True)
    per_policy = out / "per_policy.csv"
    write_csv(per_policy, [r.row() for r in results])
    summary = out / "summary.csv"
    write_csv(summary, [r.row() for r in rows])
    report_md = out / "report.md"
    report_md.write_text(f"# Target-world transfer ({env_spec.env_id})\n\n{method_table(rows)}\n")
    artifacts = {"transfer_per_policy": [per_policy], "transfer_summary": [summary, report_md]}
    manifest.record_stage(run_dir, "transfer-eval", started, artifacts, upstream=["dr-train"])
    return artifacts


# --- baselines ------------------------------------------------------------

def cmd_baseline(config: ExperimentConfig, run_dir: Path, kind: str) -> Dict[str, List[Path]]:
    if kind not in ("cem_random", "cem_rapp", "bayrn_rapp"):
        raise ValidationError(f"unknown baseline '{kind}'")
    run_dir, manifest = _open(config, run_dir)
    started = time.time()
    env_spec, target, reward = _load_reward(config, manifest, run_dir)
    specs = env_spec.param_specs
    provenance = "bayrn" if kind.startswith("bayrn") else "cem"
    if kind == "cem_random":
        space = ConfigSpace.from_valid_ranges(specs, provenance)
        upstream = ["eureka"]
    else:
        space = ConfigSpace.from_rapp(_load_bounds(manifest, run_dir), specs, provenance)
        upstream = ["eureka", "rapp"]

    objective = TransferObjective(env_spec, reward, target, config.train.eureka,
                                  config.eval_episodes, seed=config.pipeline_seed).on_space(space)
    rng = derive_rng(config.pipeline_seed, "baseline", kind)
    b = config.baselines
    if kind == "bayrn_rapp":
        best_vector, history = bayrn_optimize(objective, space.lower, space.upper, b.bayrn_init,
                                              b.bayrn_iterations, rng, KernelParams(), kappa=b.kappa, xi=b.xi)
    else:
        init = "default_mean_var" if kind == "cem_random" else "rapp_uniform_init"
        best_vector, history = cem_optimize(objective, space.lower, space.upper, init, b.cem_iterations,
                                            b.cem_samples, b.cem_elite, rng, init_mean=space.default_vector(),
                                            workers=config.workers)
    best_config = space.decode(best_vector)

    out = run_dir / "baseline" / kind
    out.mkdir(parents=True, exist_ok=True)
    history_path = out / "history.csv"
    history.to_csv(history_path)
    # timings vary between reruns and stay out of the manifest
    history.timings_to_csv(out / "timings.csv")
    config_path = _write_json(out / "best_config.json", best_config.to_json_dict())

    results = []
    for seed in config.seeds:
        try:
            policy, _ = train_policy(env_spec, best_config, reward, config.train.final, seed=seed)
            report = evaluate_policy(policy, env_spec, target, config.eval_episodes, config.eval_seed)
            results.append(PolicyResult(kind, 0, seed, _metrics(report)))
        except DrLabError as e:
            logger.warning(f"{kind} final training seed {seed} failed: {e}")
            results.append(PolicyResult(kind, 0, seed, {}, "failed", str(e)))
    transfer_path = out / "transfer.csv"
    write_csv(transfer_path, [r.row() for r in aggregate(results)])
    artifacts = {f"baseline_{kind}": [config_path, transfer_path], f"baseline_{kind}_history": [history_path]}
    manifest.record_stage(run_dir, f"baseline-{kind}", started, artifacts, upstream=upstream)
    return artifacts


# --- report ---------------------------------------------------------------

def cmd_report(run_dir: Path) -> Dict[str, List[Path]]:
    run_dir = Path(run_dir)
    manifest = RunManifest.open(run_dir)
    if not manifest.stages:
        raise EmptyRun(f"no completed stage in {run_dir}")
    started = time.time()
    digest = hashlib.sha256(json.dumps(manifest.config, sort_keys=True).encode()).hexdigest()[:12]
    sections = [f"# drlab run report (config {digest})"]
    rows = []

    if "eureka" in manifest.stages:
        (best_path,) = manifest.require(run_dir, "search_history")
        best = json.loads(best_path.read_text())
        (reward_path,) = manifest.require(run_dir, "reward")
        scores = ", ".join(f"{s:.3f}" for s in best["best_scores"])
        sections.append(
            "## Reward search\n\n"
            f"Best candidate: iteration {best['iteration']}, index {best['index']}, score {best['score']:.3f}\n\n"
            f"Running best per iteration: {scores}\n\n```\n{reward_path.read_text().strip()}\n```"
        )
    if "rapp" in manifest.stages:
        (block_path,) = manifest.require(run_dir, "rapp_prompt")
        sections.append(f"## Reward-aware physics prior\n\n```\n{block_path.read_text().strip()}\n```")
    if "transfer-eval" in manifest.stages:
        summary_path = _pick(manifest.require(run_dir, "transfer_summary"), "summary.csv")
        rows += rows_from_csv(read_csv(summary_path))
    for stage in sorted(s for s in manifest.stages if s.startswith("baseline-")):
        kind = stage[len("baseline-"):]
        transfer_path = _pick(manifest.require(run_dir, f"baseline_{kind}"), "transfer.csv")
        rows += rows_from_csv(read_csv(transfer_path))
    if rows:
        rows = sort_rows(rows)
        sections.append("## Target-world transfer\n\n" + method_table(rows))

    out = run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    report_md = out / "report.md"
    report_md.write_text("\n\n".join(sections) + "\n")
    summary = out / "summary.csv"
    write_csv(summary, [r.row() for r in rows] or [{"method": "", "aggregate": ""}])
    artifacts = {"report": [report_md, summary]}
    manifest.record_stage(run_dir, "report", started, artifacts)
    return artifacts


STAGE_COMMANDS = {
    "eureka": cmd_eureka,
    "rapp": cmd_rapp,
    "dr-propose": cmd_dr_propose,
    "dr-train": cmd_dr_train,
    "transfer-eval": cmd_transfer_eval,
}


def run_pipeline(config: ExperimentConfig, run_dir: Path) -> RunManifest:
    """Run the configured stages in order."""
    for stage in config.stages:
        logger.info(f"=== {stage} ===")
        if stage == "baseline":
            for kind in config.baselines.kinds:
                cmd_baseline(config, run_dir, kind)
        elif stage == "report":
            cmd_report(run_dir)
        else:
            STAGE_COMMANDS[stage](config, run_dir)
    return RunManifest.open(Path(run_dir))
