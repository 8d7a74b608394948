import json
import logging
from pathlib import Path
from typing import Optional

import pandas as pd
import pydantic

from app import settings


logger = logging.getLogger(__name__)


class ArtifactStore:
    """
    Owns a run's output directory: CSV frames, JSON documents, the activity log and
    a manifest mapping artifact names to relative paths.
    """

    MANIFEST = "manifest.json"

    def __init__(self, root=None, **kwargs):
        self.root = Path(root or settings.OUTPUT_DIR)
        self.root.mkdir(parents=True, exist_ok=True)
        self.activity_log = self.root / kwargs.get("activity_log", settings.ACTIVITY_LOG_NAME)
        self._manifest = self._read_manifest()

    def _read_manifest(self) -> dict:
        path = self.root / self.MANIFEST
        if path.exists():
            try:
                return json.loads(path.read_text())
            except json.JSONDecodeError:
                logger.warning(f"Ignoring unreadable manifest at {path}.")
        return {"artifacts": {}, "config_hash": None, "seed": None}

    def _save_manifest(self):
        (self.root / self.MANIFEST).write_text(json.dumps(self._manifest, indent=2, sort_keys=True))

    @property
    def manifest(self) -> dict:
        return json.loads(json.dumps(self._manifest))

    def path(self, name: str) -> Path:
        return self.root / name

    def register(self, name: str, relative_path: str) -> Path:
        self._manifest["artifacts"][name] = str(relative_path)
        self._save_manifest()
        return self.path(relative_path)

    def set_run_info(self, config_hash: str, seed: Optional[int]):
        self._manifest["config_hash"] = config_hash
        self._manifest["seed"] = seed
        self._save_manifest()

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.path(name)
        frame.to_csv(path, index=False, float_format="%.17g")
        logger.debug(f"Wrote {len(frame)} rows to {path}.")
        return self.register(name, name)

    def write_document(self, name: str, document: pydantic.BaseModel) -> Path:
        path = self.path(name)
        path.write_text(document.json(indent=2))
        return self.register(name, name)

    def write_json(self, name: str, data: dict) -> Path:
        path = self.path(name)
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str))
        return self.register(name, name)

    def append_activity(self, event: dict):
        with self.activity_log.open("a") as fh:
            fh.write(json.dumps(event, default=str) + "\n")

    def read_activity(self) -> list:
        if not self.activity_log.exists():
            return []
        return [json.loads(line) for line in self.activity_log.read_text().splitlines() if line.strip()]

    def __str__(self):
        return f"ArtifactStore(root={self.root})"

    def __repr__(self):
        return self.__str__()
