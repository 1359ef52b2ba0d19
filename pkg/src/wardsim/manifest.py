"""Run manifests: provenance for every artifact directory."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import ConfigError

MANIFEST_NAME = "manifest.json"


def hash_content(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


@dataclass
class RunManifest:
    command: str
    seed: int | None = None
    config_hash: str = ""
    vocab_hash: str = ""
    checkpoint_id: str = ""
    started: str = ""
    finished: str = ""
    wall_seconds: float = 0.0
    counts: dict = field(default_factory=dict)
    version: int = 1

    @classmethod
    def start(cls, command: str, seed: int | None = None, **kw) -> "RunManifest":
        return cls(command=command, seed=seed, started=_now(), **kw)

    def finish(self) -> "RunManifest":
        self.finished = _now()
        if self.started:
            t0 = datetime.fromisoformat(self.started)
            self.wall_seconds = (datetime.fromisoformat(self.finished) - t0).total_seconds()
        return self

    def write(self, directory: str | Path) -> Path:
        path = Path(directory) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")
        return path

    def to_dict(self) -> dict:
        return asdict(self)


def read_manifest(directory: str | Path) -> RunManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"no manifest in {directory}")
    return RunManifest(**json.loads(path.read_text(encoding="utf-8")))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()
