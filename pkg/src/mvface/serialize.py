"""Plain-text model format shared by all fitted components.

A file is a sequence of sections. A vector section is::

    kind <name>
    dim <d>
    count <n>
    <n lines of d space-separated floats, 17 significant digits>

A scalar/text field is a single line ``field <name> <value>``. Floats are
printed with ``%.17g`` so parsing the text back yields the identical doubles.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np


class FormatError(ValueError):
    pass


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def dump_matrix(name: str, rows) -> str:
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"section {name!r} must be 1-D or 2-D")
    count, dim = arr.shape
    lines = [f"kind {name}", f"dim {dim}", f"count {count}"]
    lines.extend(" ".join(fmt_float(v) for v in row) for row in arr)
    return "\n".join(lines) + "\n"


def dump_field(name: str, value) -> str:
    if isinstance(value, float):
        value = fmt_float(value)
    text = str(value)
    if "\n" in text or not text:
        raise ValueError(f"field {name!r} must be a non-empty single line")
    return f"field {name} {text}\n"


def parse(text: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Return (matrices, fields). Every matrix is 2-D, shape (count, dim)."""
    matrices: dict[str, np.ndarray] = {}
    fields: dict[str, str] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        head, _, rest = line.partition(" ")
        if head == "field":
            name, _, value = rest.partition(" ")
            fields[name] = value
            i += 1
        elif head == "kind":
            name = rest.strip()
            try:
                dim = int(lines[i + 1].split(" ", 1)[1]) if lines[i + 1].startswith("dim ") else None
                count = int(lines[i + 2].split(" ", 1)[1]) if lines[i + 2].startswith("count ") else None
            except (IndexError, ValueError):
                raise FormatError(f"line {i + 1}: malformed header for section {name!r}") from None
            if dim is None or count is None:
                raise FormatError(f"line {i + 1}: section {name!r} needs dim and count lines")
            body = lines[i + 3:i + 3 + count]
            if len(body) != count:
                raise FormatError(f"section {name!r} truncated: expected {count} rows")
            arr = np.empty((count, dim), dtype=np.float64)
            for r, row in enumerate(body):
                vals = row.split()
                if len(vals) != dim:
                    raise FormatError(f"line {i + 4 + r}: expected {dim} values, got {len(vals)}")
                arr[r] = [float(v) for v in vals]
            matrices[name] = arr
            i += 3 + count
        else:
            raise FormatError(f"line {i + 1}: unexpected {head!r}")
    return matrices, fields


def require(mapping: Mapping, key: str, what: str = "section"):
    try:
        return mapping[key]
    except KeyError:
        raise FormatError(f"missing {what} {key!r}") from None
