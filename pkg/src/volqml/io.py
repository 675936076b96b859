"""Deterministic CSV/JSON writers with provenance headers, and a CSV reader."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from volqml import __version__
from volqml.errors import InputError

SCHEMA_LINE = "# volqml-schema v1"


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def provenance(config: dict, seed) -> dict:
    return {"tool": "volqml", "version": __version__, "config_hash": config_hash(config), "seed": seed}


def provenance_line(prov: dict) -> str:
    return f"# volqml {prov['version']} config_hash={prov['config_hash']} seed={prov['seed']}"


def fmt(v) -> str:
    """17 significant digits for reals (round-trip exact), plain ints otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def write_csv(path, columns: list[str], rows, prov: dict) -> Path:
    """Write rows (iterables or dicts keyed by column) with LF endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [provenance_line(prov), SCHEMA_LINE, ",".join(columns)]
    for row in rows:
        vals = [row.get(c) for c in columns] if isinstance(row, dict) else list(row)
        lines.append(",".join(fmt(v) for v in vals))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, payload: dict, prov: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"_provenance": prov}
    body.update(_plain(payload))
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps(body, sort_keys=True, indent=2) + "\n")
    return path


def read_series(path, column: str = "X") -> np.ndarray:
    """Read one numeric column from a CSV (comment lines start with '#').

    A file with a header picks ``column``; a headerless single-column file is
    read as is. Malformed lines raise :class:`InputError` with the line number.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    values = []
    col = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if col is None:
            try:
                float(fields[0])
                if len(fields) != 1:
                    raise InputError("headerless input must have exactly one column", lineno)
                col = 0
            except ValueError:
                if column not in fields:
                    raise InputError(f"header has no column {column!r}", lineno) from None
                col = fields.index(column)
                continue
        if col >= len(fields):
            raise InputError(f"expected at least {col + 1} fields, got {len(fields)}", lineno)
        try:
            v = float(fields[col])
        except ValueError:
            raise InputError(f"not a number: {fields[col]!r}", lineno) from None
        if not math.isfinite(v):
            raise InputError(f"non-finite value {fields[col]!r}", lineno)
        values.append(v)
    return np.array(values, dtype=float)
