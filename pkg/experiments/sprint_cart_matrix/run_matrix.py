# experiments/sprint_cart_matrix/run_matrix.py
"""
Ablation-ordering experiment on sprint_cart.

Runs the scripted pipeline once per pipeline seed, then compares the median
target-world fitness of RAPP-bounded DR against No DR and against the
uninformative-prior proposals. Only the two orderings are checked; the
absolute values depend on the training budget.
"""

import csv
import json
import logging
import sys
import os
from pathlib import Path
from statistics import median
from typing import Dict, List

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from drlab.pipeline.cli import setup_logging
from drlab.pipeline.config import load_experiment_config
from drlab.pipeline.stages import run_pipeline

HERE = Path(__file__).parent
PIPELINE_SEEDS = (0, 1, 2)

logger = logging.getLogger("sprint_cart_matrix")


def method_fitness(run_dir: Path) -> Dict[str, float]:
    """Seed-and-config mean target fitness per method for one pipeline run."""
    per_method: Dict[str, List[float]] = {}
    with open(run_dir / "transfer" / "per_policy.csv", newline="") as f:
        for row in csv.DictReader(f):
            if row["status"] == "ok":
                per_method.setdefault(row["method"], []).append(float(row["fitness"]))
    return {m: sum(v) / len(v) for m, v in per_method.items()}


def run_experiment(results_dir: Path, config_path: Path = HERE / "config.json") -> Dict[str, object]:
    base = load_experiment_config(config_path)
    per_seed = {}
    for seed in PIPELINE_SEEDS:
        config = base.model_copy(update={"seeds": [seed]})
        run_dir = results_dir / f"pipeline_seed_{seed}"
        logger.info(f"Pipeline seed {seed} -> {run_dir}")
        run_pipeline(config, run_dir)
        per_seed[seed] = method_fitness(run_dir)

    medians = {
        method: median(scores[method] for scores in per_seed.values() if method in scores)
        for method in {m for scores in per_seed.values() for m in scores}
    }
    summary = {
        "per_seed": per_seed,
        "medians": medians,
        "llm_beats_no_dr": medians.get("llm", float("-inf")) > medians.get("no_dr", float("inf")),
        "llm_beats_uninformative": medians.get("llm", float("-inf")) > medians.get("uninformative", float("inf")),
    }
    (results_dir / "ordering.json").write_text(json.dumps(summary, indent=2, default=str))
    return summary


def main():
    results_dir = HERE / "results"
    results_dir.mkdir(exist_ok=True)
    setup_logging(results_dir)
    summary = run_experiment(results_dir)
    for method, value in sorted(summary["medians"].items(), key=lambda kv: -kv[1]):
        print(f"{method:20} {value:8.3f}")
    print(f"RAPP-bounded DR > No DR:         {summary['llm_beats_no_dr']}")
    print(f"RAPP-bounded DR > Uninformative: {summary['llm_beats_uninformative']}")
    return summary["llm_beats_no_dr"] and summary["llm_beats_uninformative"]


if __name__ == "__main__":
    sys.exit(0 if main() else 1)
