"""Shared CSV emission: comment-embedded config echo plus RFC-4180 rows."""

from __future__ import annotations

import csv
import json


def format_value(value) -> str:
    # numpy scalars repr as np.float64(...); force plain builtins
    if isinstance(value, float):
        return repr(float(value))
    if hasattr(value, "item"):
        return format_value(value.item())
    return str(value)


def write_csv(path, fieldnames, rows, config: dict | None = None) -> None:
    """Write rows (sequences aligned with fieldnames) with an optional
    leading `# config: {...}` provenance comment."""
    with open(path, "w", newline="") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\r\n")
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
