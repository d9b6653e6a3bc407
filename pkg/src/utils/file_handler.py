"""File handling utilities for fbf-lab."""

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict

import numpy as np
import yaml


class FileHandler:
    """Read and write the files produced by experiment runs."""

    @staticmethod
    def load_json(filepath: Path) -> Dict[str, Any]:
        """Load JSON file."""
        return json.loads(filepath.read_text(encoding='utf-8'))

    @staticmethod
    def save_json(filepath: Path, data: Dict[str, Any], indent: int = 2) -> Path:
        """Save data as JSON file, atomically."""
        text = json.dumps(data, indent=indent, sort_keys=True)
        return FileHandler.atomic_write_bytes(filepath, text.encode('utf-8'))

    @staticmethod
    def load_yaml(filepath: Path) -> Dict[str, Any]:
        """Load a YAML mapping; an empty file gives an empty mapping."""
        data = yaml.safe_load(filepath.read_text(encoding='utf-8'))
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ValueError(f"{filepath} must contain a mapping at the top level")
        return data

    @staticmethod
    def save_yaml(filepath: Path, data: Dict[str, Any]) -> Path:
        """Save data as YAML file."""
        filepath.parent.mkdir(parents=True, exist_ok=True)
        filepath.write_text(
            yaml.dump(data, default_flow_style=False, sort_keys=False),
            encoding='utf-8'
        )
        return filepath

    @staticmethod
    def atomic_write_bytes(filepath: Path, payload: bytes) -> Path:
        """Write through a temporary file in the same directory, then rename."""
        filepath = Path(filepath)
        filepath.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=filepath.parent, prefix=f".{filepath.name}.")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(payload)
            os.replace(tmp, filepath)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return filepath

    @staticmethod
    def save_array(filepath: Path, array: np.ndarray) -> Path:
        """Save an array in .npy format, atomically."""
        filepath = Path(filepath)
        filepath.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=filepath.parent, prefix=f".{filepath.name}.")
        try:
            with os.fdopen(fd, "wb") as f:
                np.save(f, np.asarray(array), allow_pickle=False)
            os.replace(tmp, filepath)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return filepath

    @staticmethod
    def load_array(filepath: Path) -> np.ndarray:
        return np.load(filepath, allow_pickle=False)
