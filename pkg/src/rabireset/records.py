"""On-disk artifacts: CSV tables, summaries, manifests and error records.

Floats are written with ``repr`` (shortest round-tripping form) and JSON with
sorted keys, and nothing time- or host-dependent is recorded, so repeated
runs with the same inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__

# unit by key suffix, longest match first
_UNITS = (
    ("_photons_per_us", "photons/us"),
    ("_rad_per_us", "rad/us"),
    ("_per_us", "1/us"),
    ("_mhz", "MHz"),
    ("_us", "us"),
    ("_photons", "photons"),
)


def fmt(value) -> str:
    """Full-precision text for one cell."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    return rows[0], rows[1:]


def read_columns(path: Path, names: Sequence[str | int]) -> list[np.ndarray]:
    """Float columns by header name or index."""
    header, rows = read_csv(path)
    out = []
    for name in names:
        if isinstance(name, int):
            idx = name
        elif name in header:
            idx = header.index(name)
        else:
            raise ValueError(f"{path}: no column {name!r} (have {', '.join(header)})")
        try:
            out.append(np.array([float(r[idx]) for r in rows if r]))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}: column {name!r} is not numeric: {exc}") from None
    return out


def unit_of(key: str) -> str:
    if key.startswith("kappa_over"):
        return "1 (multiples of kappa_r)"
    for suffix, unit in _UNITS:
        if key.endswith(suffix):
            return unit
    return "1"


def write_summary(path: Path, summaries: Sequence[Mapping]) -> Path:
    """Long-format summary: one row per (point, quantity) with unit and frame."""
    rows = []
    for i, s in enumerate(summaries):
        frame = s.get("frame", "")
        for key, value in s.items():
            if key == "frame":
                continue
            unit = "" if isinstance(value, str) else unit_of(key)
            rows.append((i, key, value, unit, frame))
    return write_csv(path, ("point", "quantity", "value", "unit", "frame"), rows)


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if hasattr(obj, "value") and not isinstance(obj, (str, int)):
        return str(obj)
    return obj


def write_json(path: Path, data: Mapping) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def versions() -> dict:
    import matplotlib
    import scipy
    import yaml

    return {
        "rabireset": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
        "pyyaml": yaml.__version__,
    }


def error_record(exc: BaseException, stage: str) -> dict:
    module = type(exc).__module__.rsplit(".", 1)[-1]
    rec = {"status": "error", "stage": stage, "error": type(exc).__name__, "module": module, "message": str(exc)}
    path = getattr(exc, "path", None)
    if path:
        rec["path"] = path
    hint = getattr(exc, "max_usable_alpha", None)
    if hint is not None:
        rec["max_usable_alpha"] = hint
    return rec
