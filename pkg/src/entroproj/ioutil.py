"""Deterministic JSON/CSV emission helpers for run artifacts.

Result files must be byte-identical across reruns with the same config and
seed, so everything is serialized with sorted keys and repr-exact floats;
numpy scalars and arrays are converted to plain Python types first.
"""

import json
from pathlib import Path

import numpy as np

__all__ = ["to_plain", "dump_json", "write_csv"]


def to_plain(obj):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dump_json(doc, path=None):
    text = json.dumps(to_plain(doc), sort_keys=True, indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def write_csv(path, header, rows):
    """Write rows of floats/ints/strings with repr-exact formatting."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            cell = to_plain(cell)
            cells.append(repr(cell) if isinstance(cell, float) else str(cell))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
