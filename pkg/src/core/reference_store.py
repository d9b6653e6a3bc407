"""On-disk cache of reference solutions x**, keyed by content hash."""

import logging
import re
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from ..utils.file_handler import FileHandler

logger = logging.getLogger(__name__)

_KEY_PATTERN = re.compile(r"^[0-9a-f]{8,64}$")


@dataclass
class ReferenceEntry:
    key: str
    solution: np.ndarray
    fval: float
    meta: Dict[str, Any]
    path: Path


class ReferenceStore:
    """Manages cached reference solutions on disk.

    Each entry is a directory ``<key>/`` holding ``solution.npy`` and
    ``meta.json``. Files are written atomically, so concurrent runs never
    observe a partial entry.
    """

    def __init__(self, base_dir: Path):
        self.base_dir = Path(base_dir)
        self.base_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def _sanitize_key(key: str) -> str:
        """Keys are hex digests; anything else could escape the cache directory."""
        if not _KEY_PATTERN.match(key):
            raise ValueError(f"Invalid reference key: {key!r}")
        return key

    def _entry_dir(self, key: str) -> Path:
        return self.base_dir / self._sanitize_key(key)

    def solution_path(self, key: str) -> Path:
        return self._entry_dir(key) / "solution.npy"

    def _meta_path(self, key: str) -> Path:
        return self._entry_dir(key) / "meta.json"

    def save(self, key: str, solution: np.ndarray, fval: float, meta: Optional[Dict[str, Any]] = None) -> Path:
        entry_dir = self._entry_dir(key)
        entry_dir.mkdir(parents=True, exist_ok=True)

        data = dict(meta or {})
        data.update({"key": key, "fval": float(fval), "dim": int(np.asarray(solution).size)})

        path = FileHandler.save_array(self.solution_path(key), solution)
        # meta last: its presence marks a complete entry
        FileHandler.save_json(self._meta_path(key), data)
        logger.info("cached reference %s (fval=%.10g)", key[:12], fval)
        return path

    def load(self, key: str) -> Optional[ReferenceEntry]:
        meta_path = self._meta_path(key)
        solution_path = self.solution_path(key)
        if not (meta_path.exists() and solution_path.exists()):
            return None

        meta = FileHandler.load_json(meta_path)
        solution = FileHandler.load_array(solution_path)
        return ReferenceEntry(key, solution, float(meta["fval"]), meta, solution_path)

    def list_entries(self) -> List[dict]:
        entries = []
        if not self.base_dir.exists():
            return entries

        for entry_dir in self.base_dir.iterdir():
            meta_path = entry_dir / "meta.json"
            if entry_dir.is_dir() and meta_path.exists():
                try:
                    meta = FileHandler.load_json(meta_path)
                    entries.append({
                        "key": meta["key"],
                        "fval": meta["fval"],
                        "dim": meta.get("dim"),
                        "image": meta.get("image", ""),
                        "iterations": meta.get("iterations"),
                    })
                except (ValueError, KeyError):
                    continue

        return sorted(entries, key=lambda e: e["key"])

    def delete(self, key: str) -> bool:
        entry_dir = self._entry_dir(key)
        if entry_dir.exists():
            shutil.rmtree(entry_dir)
            return True
        return False
