"""
Run-directory manifest: which stages finished, what they wrote, and the
sha256 of every artifact so downstream stages can verify their inputs.
"""
import hashlib
import json
import logging
import os
import tempfile
import time
import uuid
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from drlab.errors import MissingArtifact, TamperedArtifact

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ArtifactRecord(BaseModel):
    path: str
    sha256: str


class StageRecord(BaseModel):
    started_at: float
    finished_at: float
    upstream: List[str] = Field(default_factory=list)
    # logical name -> files that make it up
    artifacts: Dict[str, List[ArtifactRecord]] = Field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.finished_at - self.started_at


class RunManifest(BaseModel):
    run_id: str
    config: Dict = Field(default_factory=dict)
    stages: Dict[str, StageRecord] = Field(default_factory=dict)

    @classmethod
    def open(cls, run_dir: Path, config_snapshot: Optional[Dict] = None) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_NAME
        if path.exists():
            manifest = cls.model_validate_json(path.read_text())
            if config_snapshot is not None:
                manifest.config = config_snapshot
            return manifest
        return cls(run_id=uuid.uuid4().hex[:12], config=config_snapshot or {})

    def save(self, run_dir: Path) -> None:
        """Atomic replace so readers never see a half-written manifest."""
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile("w", dir=run_dir, delete=False, prefix=".tmp_manifest_",
                                         suffix=".json") as tmp:
            tmp.write(self.model_dump_json(indent=2))
            tmp_path = tmp.name
        os.replace(tmp_path, run_dir / MANIFEST_NAME)

    def record_stage(self, run_dir: Path, stage: str, started_at: float,
                     artifacts: Dict[str, List[Path]], upstream: Optional[List[str]] = None) -> StageRecord:
        run_dir = Path(run_dir)
        records = {
            name: [ArtifactRecord(path=str(Path(p).relative_to(run_dir)), sha256=file_sha256(Path(p)))
                   for p in sorted(paths)]
            for name, paths in artifacts.items()
        }
        record = StageRecord(started_at=started_at, finished_at=time.time(), upstream=upstream or [],
                             artifacts=records)
        self.stages[stage] = record
        self.save(run_dir)
        logger.info(f"Stage {stage} complete in {record.duration:.1f}s ({sum(len(v) for v in records.values())} files)")
        return record

    def find(self, name: str) -> List[ArtifactRecord]:
        for stage in self.stages.values():
            if name in stage.artifacts:
                return stage.artifacts[name]
        raise MissingArtifact(name)

    def require(self, run_dir: Path, name: str) -> List[Path]:
        """Paths of a verified upstream artifact."""
        run_dir = Path(run_dir)
        paths = []
        for rec in self.find(name):
            path = run_dir / rec.path
            if not path.is_file():
                raise MissingArtifact(name)
            if file_sha256(path) != rec.sha256:
                raise TamperedArtifact(f"artifact '{name}' file {rec.path} changed since it was recorded")
            paths.append(path)
        return paths

    def artifact_hashes(self) -> Dict[str, str]:
        return {rec.path: rec.sha256 for stage in self.stages.values()
                for recs in stage.artifacts.values() for rec in recs}
