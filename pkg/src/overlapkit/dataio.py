"""Delimited output and matrix file formats.

Tables are written as CSV with a ``#``-prefixed metadata header or as
JSON with a ``meta`` object and a ``rows`` array.  Floats are printed
with 17 significant digits in both formats, so parsing a written file
recovers the exact binary values.

Matrix files are either CSV (first line ``M,N``, then M rows of N
values) or raw binary: a 16-byte header of two little-endian unsigned
64-bit dims followed by row-major little-endian float64 data.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParameterError

__all__ = [
    "render_table",
    "write_table",
    "write_text",
    "read_table",
    "load_matrix",
    "save_matrix_csv",
    "save_matrix_binary",
]


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _json_value(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return json.dumps(str(v))


def render_table(columns, rows, meta, fmt: str = "csv") -> str:
    """Render rows (sequences matching ``columns``) with a metadata block."""
    if fmt == "csv":
        lines = [f"# overlapkit {meta.get('version', '')}".rstrip()]
        for key, value in meta.items():
            if key == "version":
                continue
            lines.append(f"# {key} = {_format_value(value)}")
        lines.append(",".join(columns))
        for row in rows:
            lines.append(",".join(_format_value(v) for v in row))
        return "\n".join(lines) + "\n"
    if fmt == "json":
        meta_items = ",\n".join(
            f'    {json.dumps(str(k))}: {_json_value(v)}' for k, v in meta.items()
        )
        row_items = []
        for row in rows:
            fields = ", ".join(
                f"{json.dumps(c)}: {_json_value(v)}" for c, v in zip(columns, row)
            )
            row_items.append("    {" + fields + "}")
        body = ",\n".join(row_items)
        return (
            '{\n  "meta": {\n' + meta_items + '\n  },\n  "rows": [\n'
            + body + "\n  ]\n}\n"
        )
    raise ParameterError(f"unknown output format {fmt!r}")


def write_text(path, text: str) -> None:
    """Write to a file, or stdout when ``path`` is falsy."""
    if path:
        Path(path).write_text(text)
    else:
        import sys

        sys.stdout.write(text)


def write_table(path, columns, rows, meta, fmt: str = "csv") -> None:
    """Write rows (sequences matching ``columns``) with a metadata block."""
    write_text(path, render_table(columns, rows, meta, fmt=fmt))


def _parse_scalar(text: str):
    if text == "" or text == "null":
        return None
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_table(path) -> tuple[dict, list[str], list[dict]]:
    """Parse a file written by ``write_table``; returns (meta, columns, rows)."""
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        rows = doc.get("rows", [])
        columns = list(rows[0].keys()) if rows else []
        return doc.get("meta", {}), columns, rows
    meta: dict = {}
    columns: list[str] = []
    rows: list[dict] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = _parse_scalar(value.strip())
            continue
        cells = line.split(",")
        if not columns:
            columns = cells
            continue
        rows.append({c: _parse_scalar(v) for c, v in zip(columns, cells)})
    return meta, columns, rows


def load_matrix(path) -> np.ndarray:
    """Load a dense matrix from CSV or raw binary (see module docstring)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open() as fh:
            header = fh.readline().strip()
            try:
                rows, cols = (int(v) for v in header.split(","))
            except ValueError as err:
                raise ParameterError(
                    f"matrix CSV must start with an 'M,N' header, got {header!r}"
                ) from err
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        if data.shape != (rows, cols):
            raise ParameterError(
                f"matrix CSV header says {(rows, cols)}, data has {data.shape}"
            )
        return data
    raw = path.read_bytes()
    if len(raw) < 16:
        raise ParameterError(f"matrix file {path} too short for a binary header")
    rows, cols = np.frombuffer(raw[:16], dtype="<u8")
    expected = 16 + 8 * int(rows) * int(cols)
    if len(raw) != expected:
        raise ParameterError(
            f"matrix file {path} has {len(raw)} bytes, expected {expected}"
        )
    data = np.frombuffer(raw[16:], dtype="<f8").reshape(int(rows), int(cols))
    return data.copy()


def save_matrix_csv(path, a: np.ndarray) -> None:
    a = np.asarray(a, dtype=float)
    lines = [f"{a.shape[0]},{a.shape[1]}"]
    for row in a:
        lines.append(",".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def save_matrix_binary(path, a: np.ndarray) -> None:
    a = np.ascontiguousarray(a, dtype="<f8")
    header = np.array(a.shape, dtype="<u8").tobytes()
    Path(path).write_bytes(header + a.tobytes())
