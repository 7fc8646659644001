"""Append-only run log with content digests of every stage input and output."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


class IntegrityError(RuntimeError):
    """An artifact recorded in the run log is missing or has changed."""


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_path(path: str | Path) -> str | None:
    """Digest of a file, or of a directory as the sorted (relative path, file digest) list. None if absent."""
    path = Path(path)
    if path.is_file():
        return sha256_file(path)
    if path.is_dir():
        h = hashlib.sha256()
        for f in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(f"{f.relative_to(path).as_posix()}\0{sha256_file(f)}\n".encode())
        return "dir:" + h.hexdigest()
    return None


class RunManifest:
    """``run_manifest.jsonl`` under an experiment root; one JSON record per stage execution."""

    FILENAME = "run_manifest.jsonl"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.path = self.root / self.FILENAME

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def append(self, record: dict) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def latest(self, stage: str, status: tuple[str, ...] = ("ok", "skipped")) -> dict | None:
        for rec in reversed(self.records()):
            if rec["stage"] == stage and rec["status"] in status:
                return rec
        return None

    def digests(self, rel_paths) -> dict[str, str | None]:
        return {p: digest_path(self.root / p) for p in rel_paths}


def verify_artifacts(root: str | Path) -> list[str]:
    """Check the outputs of the most recent successful record of every stage.

    Older records may legitimately describe outputs that a later rerun replaced,
    so only the latest one per stage is held to its digests. Returns a list of
    problems; empty means every artifact exists and matches.
    """
    manifest = RunManifest(root)
    if not manifest.path.exists():
        return [f"no {RunManifest.FILENAME} under {root}"]
    problems = []
    stages = dict.fromkeys(r["stage"] for r in manifest.records())
    for stage in stages:
        rec = manifest.latest(stage)
        if rec is None:
            continue
        for rel, expected in rec["outputs"].items():
            found = digest_path(manifest.root / rel)
            if found is None:
                problems.append(f"{stage}: {rel} is missing")
            elif found != expected:
                problems.append(f"{stage}: {rel} digest {found[:16]} != recorded {expected[:16]}")
    return problems
