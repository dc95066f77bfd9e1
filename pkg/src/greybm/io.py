"""File output: atomic writes, CSV with a metadata block, JSON records."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = ["atomic_write_bytes", "atomic_write_text", "format_float", "write_csv", "read_csv", "dump_json"]


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def format_float(x) -> str:
    """17 significant digits: enough to round-trip any double."""
    return format(float(x), ".17g")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def write_csv(path, header, rows, metadata: dict | None = None) -> None:
    """CSV (UTF-8, comma) preceded by ``# key=value`` metadata lines.

    ``rows`` is an iterable of sequences or a 2-D array; floats use 17 significant digits.
    """
    lines = []
    for k, v in (metadata or {}).items():
        lines.append(f"# {k}={v}")
    lines.append(",".join(header))
    if isinstance(rows, np.ndarray) and rows.dtype.kind == "f":
        lines.extend(",".join(format_float(x) for x in row) for row in rows)
    else:
        lines.extend(",".join(_cell(x) for x in row) for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path):
    """(metadata dict, header list, float array) from a file written by ``write_csv``."""
    meta, header, data = {}, None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                k, _, v = line[2:].partition("=")
                meta[k] = v
            elif header is None:
                header = line.split(",")
            elif line:
                data.append([float(x) for x in line.split(",")])
    return meta, header, np.array(data)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=False, default=_default)
    if path is not None:
        atomic_write_text(path, text + "\n")
    return text
