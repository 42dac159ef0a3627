"""Run manifest: content hashes tying each stage to its inputs.

Every stage records the hash of the config it ran under and of every file it
wrote. Downstream stages verify the recorded hashes against the files on
disk before consuming them, so silently edited or regenerated artifacts fail
fast instead of producing mixed results.
"""
from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from .errors import MissingArtifactsError, StaleArtifactsError

__all__ = ["Manifest", "file_sha256"]

MANIFEST_NAME = "manifest.json"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.path = self.out_dir / MANIFEST_NAME
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
        else:
            self.data = {"stages": {}}

    def save(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=1, sort_keys=True))

    def _relative(self, path) -> str:
        return str(Path(path).resolve().relative_to(self.out_dir.resolve()))

    def record_stage(self, stage: str, config_hash: str, outputs) -> None:
        self.data["stages"][stage] = {
            "config_hash": config_hash,
            "completed_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "outputs": {self._relative(p): file_sha256(p) for p in outputs},
        }
        self.save()

    def stage_record(self, stage: str) -> dict | None:
        return self.data["stages"].get(stage)

    def verify_stage(self, stage: str) -> None:
        """Raise unless the stage ran and its outputs are byte-identical."""
        record = self.stage_record(stage)
        if record is None:
            raise MissingArtifactsError(
                f"stage '{stage}' has not been run in {self.out_dir}")
        for rel, digest in record["outputs"].items():
            path = self.out_dir / rel
            if not path.exists():
                raise StaleArtifactsError(f"{path} is missing; rerun '{stage}'")
            if file_sha256(path) != digest:
                raise StaleArtifactsError(
                    f"{path} changed since '{stage}' recorded it; rerun with --force")

    def stage_is_fresh(self, stage: str, config_hash: str) -> bool:
        """True when the stage already ran under the same config and its
        outputs are untouched (a cache hit)."""
        record = self.stage_record(stage)
        if record is None or record["config_hash"] != config_hash:
            return False
        try:
            self.verify_stage(stage)
        except (StaleArtifactsError, MissingArtifactsError):
            return False
        return True
