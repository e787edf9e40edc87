import csv
import json
import os
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np
from loguru import logger

FLOAT_DIGITS = 17


def format_float(value: float) -> str:
    return f"{float(value):.{FLOAT_DIGITS}g}"


def _round_trip(value: Any) -> Any:
    """JSON-ready copy with numpy scalars and arrays converted to plain lists."""
    if isinstance(value, dict):
        return {str(k): _round_trip(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_trip(v) for v in value]
    if isinstance(value, np.ndarray):
        return _round_trip(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


class ArtifactStore:
    """Flat directory of JSON, CSV and .npy artifacts referenced by relative path."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def setup(self):
        if not self.root.exists():
            os.makedirs(self.root, exist_ok=True)
            logger.debug(f"Created artifact directory: {self.root}")
        return self

    def path(self, name: str) -> Path:
        return self.root / name

    def exists(self, name: str) -> bool:
        return self.path(name).exists()

    def store_json(self, name: str, payload: Any) -> str:
        file_name = name if name.endswith('.json') else f"{name}.json"
        text = json.dumps(_round_trip(payload), indent=2, sort_keys=True, allow_nan=False)
        with open(self.path(file_name), 'w', encoding='utf-8') as file:
            file.write(text + "\n")
        logger.debug(f"Stored JSON to {self.path(file_name)}")
        return file_name

    def store_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        file_name = name if name.endswith('.csv') else f"{name}.csv"
        with open(self.path(file_name), 'w', newline='', encoding='utf-8') as file:
            writer = csv.writer(file, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
        logger.debug(f"Stored CSV to {self.path(file_name)}")
        return file_name

    def store_array(self, name: str, array: np.ndarray) -> str:
        file_name = name if name.endswith('.npy') else f"{name}.npy"
        np.save(self.path(file_name), np.asarray(array), allow_pickle=False)
        logger.debug(f"Stored array to {self.path(file_name)}")
        return file_name

    def read_json(self, name: str) -> Any:
        file_name = name if name.endswith('.json') else f"{name}.json"
        if not self.exists(file_name):
            logger.debug(f"File {self.path(file_name)} does not exist")
            raise FileNotFoundError(self.path(file_name))
        with open(self.path(file_name), 'r', encoding='utf-8') as file:
            data = json.load(file)
        logger.debug(f"Read JSON from {self.path(file_name)}")
        return data

    def read_array(self, name: str) -> np.ndarray:
        data = np.load(self.path(name), allow_pickle=False)
        logger.debug(f"Read array from {self.path(name)}")
        return data

    def list(self, suffix: Optional[str] = None):
        return sorted(p.name for p in self.root.iterdir() if suffix is None or p.suffix == suffix)
