"""Reading and writing problem files, traces and reports.

Matrices and measures are JSON (``{"weights": ...}`` or a bare list) or CSV.
Traces are CSV with floats written by ``repr`` so that equal runs produce
byte-identical files. Any I/O or parse failure becomes a ``ConfigError``
naming the path.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from mirrorcert.errors import ConfigError
from mirrorcert.measures import ConditionalKernel, DiscreteMeasure


def _read_text(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror or e}") from e


def read_array(path: Path) -> np.ndarray:
    """Load a vector or matrix from a .json or .csv file."""
    path = Path(path)
    text = _read_text(path)
    if path.suffix.lower() == ".csv":
        rows = [row for row in csv.reader(text.splitlines()) if row]
        try:
            return np.array([[float(cell) for cell in row] for row in rows], dtype=np.float64)
        except ValueError as e:
            raise ConfigError(f"{path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    if isinstance(data, dict):
        if "weights" not in data:
            raise ConfigError(f"{path}: expected a 'weights' field")
        data = data["weights"]
    try:
        return np.array(data, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: not a numeric array ({e})") from e


def read_measure(path: Path, *, probability: bool = True) -> DiscreteMeasure:
    """Load a measure; a single row or column is read as a vector."""
    array = read_array(path)
    if array.ndim == 2 and 1 in array.shape:
        array = array.ravel()
    if array.ndim != 1:
        raise ConfigError(f"{path}: expected a vector, got shape {array.shape}")
    return DiscreteMeasure(array, probability=probability)


def read_kernel(path: Path) -> ConditionalKernel:
    return ConditionalKernel(read_array(path))


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no infinities; keep them readable and round-trippable
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return value
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path: Path, data: Any) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_jsonable(data), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot write {path}: {e.strerror or e}") from e
    return path


def read_json(path: Path) -> Any:
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a trace with a fixed header and repr-formatted floats."""
    path = Path(path)
    lines = [",".join(header)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot write {path}: {e.strerror or e}") from e
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    rows = list(csv.reader(_read_text(path).splitlines()))
    if not rows:
        raise ConfigError(f"{path}: empty CSV")
    return rows[0], rows[1:]
