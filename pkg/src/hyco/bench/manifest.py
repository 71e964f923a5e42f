"""Run manifests: what was run, with which seeds, and what it produced."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from pathlib import Path

from .. import __version__


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """JSON manifest written once before a command runs and again after.

    Metrics only appear in the final write; every output file is listed with
    its SHA-256 hash.
    """

    def __init__(self, path, command: str, config: dict, seeds: dict):
        self.path = Path(path)
        self.data = {
            "command": command,
            "code_version": __version__,
            "config": config,
            "seeds": seeds,
            "started": _now(),
            "finished": None,
            "status": "running",
            "files": {},
            "notes": [],
        }
        self.write()

    def add_files(self, *paths) -> None:
        for p in paths:
            p = Path(p)
            self.data["files"][str(p.relative_to(self.path.parent))] = sha256_file(p)

    def note(self, message: str) -> None:
        self.data["notes"].append(message)

    def finish(self, status: str = "ok", metrics: dict | None = None, error: str | None = None) -> None:
        self.data["finished"] = _now()
        self.data["status"] = status
        if metrics is not None:
            self.data["metrics"] = metrics
        if error is not None:
            self.data["error"] = error
        self.write()

    def write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True, default=float) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
