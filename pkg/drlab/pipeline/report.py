"""
Aggregation of per-policy transfer results into method rows, and rendering
of the markdown/CSV summaries.

Per method: seed-means per config, then ``best`` takes the config with the
highest seed-mean and ``average`` the mean over configs. Both carry the
population std across seeds.
"""
import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

METRICS = ("fitness", "velocity", "distance", "mean_abs_action", "mean_torque_sq")


@dataclass
class PolicyResult:
    method: str
    config_index: int
    seed: int
    metrics: Dict[str, Optional[float]]
    status: str = "ok"
    error: Optional[str] = None

    def row(self) -> Dict:
        return {"method": self.method, "config": self.config_index, "seed": self.seed, "status": self.status,
                **{m: self.metrics.get(m) for m in METRICS}, "error": self.error or ""}


@dataclass
class MethodRow:
    method: str
    aggregate: str
    mean: Dict[str, Optional[float]]
    std: Dict[str, Optional[float]]
    configs: int
    failed: int = 0
    notes: List[str] = field(default_factory=list)

    @property
    def label(self) -> str:
        return self.method if self.aggregate == "single" else f"{self.method} ({self.aggregate})"

    def row(self) -> Dict:
        out = {"method": self.method, "aggregate": self.aggregate, "configs": self.configs, "failed": self.failed}
        for m in METRICS:
            out[f"{m}_mean"] = self.mean.get(m)
            out[f"{m}_std"] = self.std.get(m)
        return out


def _nanmean(values) -> Optional[float]:
    arr = np.array([v for v in values if v is not None], dtype=np.float64)
    return float(np.mean(arr)) if arr.size else None


def _nanstd(values) -> Optional[float]:
    arr = np.array([v for v in values if v is not None], dtype=np.float64)
    return float(np.std(arr)) if arr.size else None


def aggregate_method(method: str, results: Sequence[PolicyResult]) -> List[MethodRow]:
    ok = [r for r in results if r.status == "ok"]
    failed = len(results) - len(ok)
    if not ok:
        return [MethodRow(method, "single", {}, {}, configs=0, failed=failed, notes=["all trainings failed"])]

    by_config: Dict[int, List[PolicyResult]] = defaultdict(list)
    for r in ok:
        by_config[r.config_index].append(r)
    configs = sorted(by_config)

    def seed_mean(idx: int, metric: str) -> Optional[float]:
        return _nanmean(r.metrics.get(metric) for r in by_config[idx])

    best_idx = max(configs, key=lambda i: (seed_mean(i, "fitness"), -i))
    best = MethodRow(
        method, "best",
        mean={m: seed_mean(best_idx, m) for m in METRICS},
        std={m: _nanstd(r.metrics.get(m) for r in by_config[best_idx]) for m in METRICS},
        configs=len(configs), failed=failed, notes=[f"config {best_idx}"],
    )
    if len(configs) == 1:
        best.aggregate = "single"
        return [best]

    # per seed, average over configs; std is taken across those seed averages
    by_seed: Dict[int, List[PolicyResult]] = defaultdict(list)
    for r in ok:
        by_seed[r.seed].append(r)
    seed_avgs = {m: [_nanmean(r.metrics.get(m) for r in rs) for rs in by_seed.values()] for m in METRICS}
    average = MethodRow(
        method, "average",
        mean={m: _nanmean(seed_mean(i, m) for i in configs) for m in METRICS},
        std={m: _nanstd(seed_avgs[m]) for m in METRICS},
        configs=len(configs), failed=failed,
    )
    return [best, average]


def aggregate(results: Sequence[PolicyResult]) -> List[MethodRow]:
    grouped: Dict[str, List[PolicyResult]] = defaultdict(list)
    for r in results:
        grouped[r.method].append(r)
    rows = [row for method, rs in grouped.items() for row in aggregate_method(method, rs)]
    return sort_rows(rows)


def sort_rows(rows: List[MethodRow]) -> List[MethodRow]:
    return sorted(rows, key=lambda r: -np.inf if r.mean.get("fitness") is None else r.mean["fitness"], reverse=True)


def write_csv(path: Path, rows: List[Dict]) -> None:
    columns: List[str] = []
    for row in rows:
        columns += [k for k in row if k not in columns]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_csv(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _fmt(mean: Optional[float], std: Optional[float]) -> str:
    if mean is None:
        return "n/a"
    return f"{mean:.3f} ± {std:.3f}" if std is not None else f"{mean:.3f}"


def method_table(rows: Sequence[MethodRow]) -> str:
    header = "| Method | " + " | ".join(METRICS) + " | configs | failed |"
    sep = "|" + "---|" * (len(METRICS) + 3)
    lines = [header, sep]
    for r in rows:
        cells = [_fmt(r.mean.get(m), r.std.get(m)) for m in METRICS]
        lines.append(f"| {r.label} | " + " | ".join(cells) + f" | {r.configs} | {r.failed} |")
    return "\n".join(lines)


def rows_from_csv(records: Sequence[Dict[str, str]]) -> List[MethodRow]:
    """Inverse of ``MethodRow.row`` for summaries read back from disk."""

    def num(value: str) -> Optional[float]:
        return None if value in ("", None) else float(value)

    rows = []
    for rec in records:
        rows.append(MethodRow(
            method=rec["method"],
            aggregate=rec["aggregate"],
            mean={m: num(rec.get(f"{m}_mean", "")) for m in METRICS},
            std={m: num(rec.get(f"{m}_std", "")) for m in METRICS},
            configs=int(rec.get("configs") or 0),
            failed=int(rec.get("failed") or 0),
        ))
    return rows
