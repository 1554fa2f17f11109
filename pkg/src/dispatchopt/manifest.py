"""Run manifest: reproducibility ledger listing every emitted artifact.

Two runs with identical config and seed produce manifests that differ only in
their timestamps; everything else (input hashes, artifact hashes, seed,
backend) must match.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from dispatchopt import _kernels, __version__
from dispatchopt.config import sha256_file
from dispatchopt.errors import InputError

MANIFEST_NAME = "manifest.json"


class RunManifest:
    def __init__(self, out_dir: str | Path, config_hash: str, seed: int, inputs: dict[str, str]):
        self.out_dir = Path(out_dir)
        self.data: dict = {
            "format": "dispatchopt.manifest",
            "version": 1,
            "package_version": __version__,
            "kernel_backend": _kernels.BACKEND,
            "config_hash": config_hash,
            "seed": seed,
            "inputs": dict(inputs),
            "stages": {},
        }

    @property
    def path(self) -> Path:
        return self.out_dir / MANIFEST_NAME

    def record_stage(self, stage: str, artifact_paths: list[Path]) -> None:
        artifacts = {}
        for p in artifact_paths:
            rel = str(Path(p).relative_to(self.out_dir))
            artifacts[rel] = sha256_file(p)
        self.data["stages"][stage] = {
            "artifacts": artifacts,
            "completed_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        self.write()

    def write(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(out_dir: str | Path) -> dict:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        raise InputError(f"manifest not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def verify_manifest(out_dir: str | Path) -> list[str]:
    """Re-hash every listed artifact; returns a list of mismatch descriptions."""
    out_dir = Path(out_dir)
    data = load_manifest(out_dir)
    problems: list[str] = []
    for stage, info in data.get("stages", {}).items():
        for rel, digest in info.get("artifacts", {}).items():
            p = out_dir / rel
            if not p.exists():
                problems.append(f"{stage}: missing artifact {rel}")
            elif sha256_file(p) != digest:
                problems.append(f"{stage}: hash mismatch for {rel}")
    return problems


def strip_timestamps(manifest_data: dict) -> dict:
    """Manifest with stage timestamps removed, for determinism comparisons."""
    out = json.loads(json.dumps(manifest_data))
    for info in out.get("stages", {}).values():
        info.pop("completed_at", None)
    return out
