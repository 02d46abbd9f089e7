"""Run reports: inputs digest, JSON-safe conversion, and CSV tables."""

import hashlib
import json
import math
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd


def inputs_digest(source: bytes, suite: str, seed: int) -> str:
    h = hashlib.sha256()
    h.update(source)
    h.update(b"\0")
    h.update(suite.encode("utf-8"))
    h.update(b"\0")
    h.update(str(seed).encode("ascii"))
    return h.hexdigest()


def verdict(passed: bool, **details: Any) -> dict[str, Any]:
    return {"pass": bool(passed), **details}


def jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def dumps(report: dict[str, Any]) -> str:
    return json.dumps(jsonable(report), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_report(report: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(report), encoding="utf-8")
    return path


def field_table(times: np.ndarray, nodes: np.ndarray, y: np.ndarray, z: np.ndarray | None = None,
                stride: int = 1) -> pd.DataFrame:
    """Long-format (t, x, y[, z]) table; stride thins the time slices."""
    rows = range(0, len(times), stride)
    frame = {
        "t": np.repeat(times[list(rows)], len(nodes)),
        "x": np.tile(nodes, len(rows)),
        "y": np.concatenate([y[n] for n in rows]),
    }
    if z is not None:
        # z lives on steps 0..nt-1; the terminal slice has no z
        frame["z"] = np.concatenate([z[n] if n < len(z) else np.full(len(nodes), np.nan) for n in rows])
    return pd.DataFrame(frame)


def export_csv(tables: dict[str, pd.DataFrame], directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in sorted(tables.items()):
        path = directory / f"{name}.csv"
        table.to_csv(path, index=False, lineterminator="\r\n")
        written.append(path)
    return written
