"""Field CSV files and deterministic JSON reports.

Field CSV layout::

    # R=<float> d=<int> T=<float> n_t=<int> n_r=<int> kind=<control|state|adjoint>
    v00,v01,...           (n_t + 1 rows of n_r values; row i = time level i)

A radial field is stored with ``n_t=0`` and a single row.  Values are written
with ``repr`` so that a save/load round trip is bit-exact.
"""

from __future__ import annotations

import contextlib
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import FieldFormatError, SerializationError
from .grid import KINDS, RadialField, RadialGrid, SpaceTimeField, TimeGrid

HEADER_KEYS = ("R", "d", "T", "n_t", "n_r", "kind")
REPORT_REQUIRED = ("c_phi", "c_psi", "control_distance", "cross_objectives")


@contextlib.contextmanager
def atomic_writer(path, mode: str = "w"):
    """Write to a temporary sibling and rename over ``path`` on success only."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _header(field) -> str:
    if isinstance(field, SpaceTimeField):
        T, n_t, kind = field.tgrid.T, field.tgrid.n_t, field.kind
    else:
        T, n_t, kind = 1.0, 0, "state"
    g = field.grid
    return f"# R={g.R!r} d={g.d} T={float(T)!r} n_t={n_t} n_r={g.n_r} kind={kind}"


def format_field(field) -> str:
    rows = np.atleast_2d(np.asarray(field.values))
    lines = [_header(field)]
    lines.extend(",".join(repr(float(x)) for x in row) for row in rows)
    return "\n".join(lines) + "\n"


def save_field(field, path) -> None:
    text = format_field(field)
    with atomic_writer(path) as fh:
        fh.write(text)


def _parse_header(line: str) -> dict:
    if not line.startswith("#"):
        raise FieldFormatError("missing '#' header line", row=1, column=None)
    parts = line[1:].split()
    found = {}
    for col, part in enumerate(parts, start=1):
        key, sep, value = part.partition("=")
        if not sep or key not in HEADER_KEYS or key in found:
            raise FieldFormatError(f"bad header entry {part!r}", row=1, column=col)
        found[key] = (value, col)
    missing = [k for k in HEADER_KEYS if k not in found]
    if missing:
        raise FieldFormatError(f"header lacks {missing}", row=1, column=None)
    out = {}
    for key, conv in (("R", float), ("T", float), ("d", int), ("n_t", int), ("n_r", int), ("kind", str)):
        value, col = found[key]
        try:
            out[key] = conv(value)
        except ValueError:
            raise FieldFormatError(f"header value {key}={value!r} is not a valid {conv.__name__}",
                                   row=1, column=col) from None
    if out["kind"] not in KINDS:
        raise FieldFormatError(f"unknown kind {out['kind']!r}", row=1, column=found["kind"][1])
    return out


def parse_field(text: str):
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise FieldFormatError("empty file", row=1, column=None)
    h = _parse_header(lines[0].strip())
    body = lines[1:]
    n_rows = h["n_t"] + 1
    if len(body) != n_rows:
        raise FieldFormatError(f"expected {n_rows} data rows, found {len(body)}",
                               row=len(lines) + (len(body) < n_rows), column=None)
    values = np.empty((n_rows, h["n_r"]))
    for i, line in enumerate(body):
        cells = line.split(",")
        if len(cells) != h["n_r"]:
            raise FieldFormatError(f"expected {h['n_r']} columns, found {len(cells)}",
                                   row=i + 2, column=min(len(cells), h["n_r"]) + 1)
        for j, cell in enumerate(cells):
            try:
                x = float(cell)
            except ValueError:
                raise FieldFormatError(f"non-numeric entry {cell.strip()!r}", row=i + 2, column=j + 1) from None
            if not math.isfinite(x):
                raise FieldFormatError(f"non-finite entry {cell.strip()!r}", row=i + 2, column=j + 1)
            values[i, j] = x
    # grid parameters and control bounds are validated by the constructors
    grid = RadialGrid(h["R"], h["d"], h["n_r"])
    if h["n_t"] == 0:
        return RadialField(grid, values[0])
    return SpaceTimeField(grid, TimeGrid(h["T"], h["n_t"]), values, h["kind"])


def load_field(path):
    """Read a field CSV; ``n_t=0`` files load as :class:`RadialField`."""
    with open(path, newline="") as fh:
        return parse_field(fh.read())


def _check_json(obj, where="report"):
    if isinstance(obj, dict):
        for k, v in obj.items():
            if not isinstance(k, str):
                raise SerializationError(f"non-string key {k!r} in {where}")
            _check_json(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_json(v, f"{where}[{i}]")
    elif isinstance(obj, float):
        if not math.isfinite(obj):
            raise SerializationError(f"non-finite value at {where}")
    elif obj is None or isinstance(obj, (bool, int, str)):
        pass
    else:
        raise SerializationError(f"unsupported type {type(obj).__name__} at {where}")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _encode(obj, indent: int = 0) -> str:
    """JSON text with sorted keys and floats at 17 significant digits."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {_encode(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if not any(isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _encode(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, float):
        text = format(obj, ".17g")
        return text if any(ch in text for ch in ".e") else text + ".0"
    return json.dumps(obj)


def dumps_report(report, required=()) -> str:
    data = _plain(report)
    if not isinstance(data, dict):
        raise SerializationError("report must be a mapping")
    missing = [k for k in required if k not in data]
    if missing:
        raise SerializationError(f"report lacks required keys {missing}")
    _check_json(data)
    return _encode(data) + "\n"


def emit_report(report, path, required=REPORT_REQUIRED) -> None:
    """Serialize deterministically (sorted keys, 17 significant digits) and write atomically."""
    text = dumps_report(report, required)
    with atomic_writer(path) as fh:
        fh.write(text)


def write_table(path, header: str, rows) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    lines = [header] + [",".join(format(float(x), ".17g") for x in row) for row in rows]
    with atomic_writer(path) as fh:
        fh.write("\n".join(lines) + "\n")
