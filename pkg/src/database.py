# src/database.py
import json
import logging
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd

from src.errors import ArtifactError

logger = logging.getLogger(__name__)

HASH_PREFIX = "# config_hash: "
FLOAT_FORMAT = "%.17g"


class RunStore:
    """
    File-backed store for one run directory.

    Layout: config.yaml, manifest.json, stage1/, cells/<cell>/ and report
    tables at the root. Every CSV starts with a "# config_hash: <hash>" line and
    every JSON artifact carries a "config_hash" field.

    The hash line is always the first line of a CSV, so outside readers load a
    table with ``pd.read_csv(path, skiprows=1)`` or ``comment="#"``.
    """

    def __init__(self, root: Union[str, Path], config_hash: Optional[str] = None):
        """Open ``root``; ``config_hash`` defaults to the one recorded in its manifest."""
        self.root = Path(root)
        if config_hash is None:
            manifest = self.root / "manifest.json"
            if not manifest.exists():
                raise ArtifactError(f"{self.root} is not a run directory", ["manifest.json"])
            config_hash = json.loads(manifest.read_text(encoding="utf-8"))["config_hash"]
        self.config_hash = config_hash

    # ---------------- Run lifecycle ----------------

    def create_run(self, config_yaml: str, cells: Sequence[str]) -> Dict[str, Any]:
        """Write the resolved config and a fresh manifest; returns the manifest."""
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "config.yaml").write_text(f"{HASH_PREFIX}{self.config_hash}\n{config_yaml}", encoding="utf-8")
        manifest = {
            "config_hash": self.config_hash,
            "status": "started",
            "created_at": datetime.now(timezone.utc).isoformat(),
            "cells": {cell: "pending" for cell in cells},
        }
        self._write_json(self.root / "manifest.json", manifest)
        logger.info("run directory %s (config %s, %d cells)", self.root, self.config_hash, len(cells))
        return manifest

    def get_manifest(self) -> Dict[str, Any]:
        return self._read_json(self.root / "manifest.json")

    def update_run_status(self, status: str) -> None:
        manifest = self.get_manifest()
        manifest["status"] = status
        manifest["updated_at"] = datetime.now(timezone.utc).isoformat()
        self._write_json(self.root / "manifest.json", manifest)

    def record_cell(self, cell: str, status: str, extra: Optional[Dict[str, Any]] = None) -> None:
        manifest = self.get_manifest()
        manifest["cells"][cell] = status
        if extra:
            manifest.setdefault("cell_info", {})[cell] = extra
        self._write_json(self.root / "manifest.json", manifest)

    def cell_names(self) -> List[str]:
        return list(self.get_manifest()["cells"])

    def cell_dir(self, cell: str) -> Path:
        return self.root / "stage1" if cell == "stage1" else self.root / "cells" / cell

    # ---------------- Checkpoints ----------------

    def save_checkpoint(self, cell: str, checkpoint: Dict[str, Any]) -> Path:
        path = self.cell_dir(cell) / "checkpoint.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        self._write_json(path, {**checkpoint, "config_hash": self.config_hash})
        return path

    def load_checkpoint(self, cell: str) -> Dict[str, Any]:
        return self._read_json(self.cell_dir(cell) / "checkpoint.json")

    # ---------------- Tables ----------------

    def save_metrics(self, cell: str, rows: Sequence[Dict[str, Any]], columns: Sequence[str],
                     name: str = "metrics.csv") -> Path:
        """Append rows to a cell's metric log (created with header on first write)."""
        path = self.cell_dir(cell) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(list(rows), columns=list(columns))
        if path.exists():
            self._check_hash(path)
            frame.to_csv(path, mode="a", header=False, index=False, float_format=FLOAT_FORMAT)
        else:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(f"{HASH_PREFIX}{self.config_hash}\n")
                frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT)
        return path

    def load_metrics(self, cell: str, name: str = "metrics.csv") -> pd.DataFrame:
        return self.read_table(self.cell_dir(cell) / name)

    def save_table(self, name: str, frame: pd.DataFrame, directory: Optional[Path] = None) -> Path:
        """Overwrite a report table at the run root (or ``directory``)."""
        path = (directory or self.root) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"{HASH_PREFIX}{self.config_hash}\n")
            frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT)
        return path

    def read_table(self, path: Union[str, Path]) -> pd.DataFrame:
        path = Path(path)
        if not path.exists():
            raise ArtifactError(f"missing artifact in {self.root}", [str(path)])
        self._check_hash(path)
        return pd.read_csv(path, skiprows=1)

    # ---------------- Completeness ----------------

    def missing_artifacts(self, per_cell: Sequence[str] = ("checkpoint.json", "metrics.csv")) -> List[str]:
        missing = [name for name in ("config.yaml", "manifest.json") if not (self.root / name).exists()]
        if missing:
            return missing
        for name in ("checkpoint.json", "metrics.csv"):
            if not (self.cell_dir("stage1") / name).exists():
                missing.append(f"stage1/{name}")
        for cell, status in self.get_manifest()["cells"].items():
            if cell == "stage1":
                continue
            if status != "done":
                missing.append(f"cells/{cell} (status {status})")
                continue
            missing.extend(f"cells/{cell}/{name}" for name in per_cell if not (self.cell_dir(cell) / name).exists())
        return missing

    def require_complete(self) -> None:
        missing = self.missing_artifacts()
        if missing:
            raise ArtifactError(f"run directory {self.root} is incomplete", missing)

    # ---------------- Internals ----------------

    def _check_hash(self, path: Path) -> None:
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline().strip()
        if not first.startswith(HASH_PREFIX.strip()):
            raise ArtifactError(f"{path} has no config hash line")
        found = first[len(HASH_PREFIX.strip()):].strip()
        if found != self.config_hash:
            raise ArtifactError(f"{path} belongs to config {found}, run is {self.config_hash}")

    def _write_json(self, path: Path, obj: Dict[str, Any]) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(obj, indent=1, sort_keys=True), encoding="utf-8")
        os.replace(tmp, path)

    def _read_json(self, path: Path) -> Dict[str, Any]:
        if not path.exists():
            raise ArtifactError(f"missing artifact in {self.root}", [str(path)])
        obj = json.loads(path.read_text(encoding="utf-8"))
        found = obj.get("config_hash")
        if found is not None and found != self.config_hash:
            raise ArtifactError(f"{path} belongs to config {found}, run is {self.config_hash}")
        return obj
