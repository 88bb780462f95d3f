"""Deterministic result files.

Every writer produces a byte-stable body for identical inputs: floats
are rendered with repr (shortest round-trip form), rows keep caller
order, line endings are always "\\n" and there are no timestamps.
Files land via a temp file in the destination directory followed by an
atomic rename, so readers never observe partial output.
"""

from __future__ import annotations

import json
import math
import os
import tempfile

import numpy as np


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return ""
        return repr(f)
    return str(v)


def csv_body(header, rows) -> str:
    lines = [",".join(header)]
    width = len(header)
    for row in rows:
        if len(row) != width:
            raise ValueError(f"row width {len(row)} does not match header width {width}")
        lines.append(",".join(format_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return None if not math.isfinite(f) else f
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def json_body(obj) -> str:
    # non-finite floats become null: the body must stay valid JSON
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def order_file_body(order) -> str:
    # order files are 1-based, one component index per line
    return "\n".join(str(int(i) + 1) for i in order) + "\n"


def parse_order_file(text: str, component_count: int) -> np.ndarray:
    entries = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        token = raw.strip()
        if not token:
            continue
        try:
            v = int(token)
        except ValueError:
            raise ValueError(f"order file line {ln}: {token!r} is not an integer") from None
        if not 1 <= v <= component_count:
            raise ValueError(
                f"order file line {ln}: index {v} outside 1..{component_count}"
            )
        entries.append(v - 1)
    if not entries:
        raise ValueError("order file contains no indices")
    return np.asarray(entries, dtype=np.int64)


def write_text(path: str, body: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
