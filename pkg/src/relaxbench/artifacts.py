"""Deterministic CSV/JSON writers for run artifacts."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


def _fmt(value) -> str:
    # repr round-trips doubles exactly, which keeps reruns byte-identical
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def jsonable(obj):
    """Convert numpy scalars/arrays, enums, dataclasses and non-finite floats."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(asdict(obj))
    if isinstance(obj, Mapping):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dumps(payload) -> str:
    return json.dumps(jsonable(payload), sort_keys=True, indent=2, allow_nan=False) + "\n"


class ArtifactWriter:
    """Writes files under one root directory and remembers what it wrote."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.written: list[str] = []

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def csv(self, rel: str, header: Sequence[str], columns: Sequence) -> Path:
        cols = [np.asarray(c) for c in columns]
        if len(cols) != len(header):
            raise ValueError("header and column count differ")
        n = len(cols[0]) if cols else 0
        if any(len(c) != n for c in cols):
            raise ValueError("columns must share a length")
        p = self.path(rel)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(n):
                w.writerow([_fmt(c[i]) for c in cols])
        self.written.append(rel)
        return p

    def rows(self, rel: str, header: Sequence[str], rows: Sequence[Mapping]) -> Path:
        return self.csv(rel, header, [[r[h] for r in rows] for h in header])

    def json(self, rel: str, payload) -> Path:
        p = self.path(rel)
        p.write_text(dumps(payload))
        self.written.append(rel)
        return p
