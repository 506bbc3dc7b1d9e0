"""CSV reports: a header row, then one row per record, 9 significant digits."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.9g}"
    return str(value)


def write_report(rows: Sequence[Dict], path, columns: Optional[Sequence[str]] = None) -> None:
    """Write ``rows`` (dicts with identical keys) as CSV with LF line endings."""
    if columns is None:
        if not rows:
            raise ValueError("columns are required for an empty report")
        columns = list(rows[0])
    columns = list(columns)
    for k, row in enumerate(rows):
        if list(row) != columns:
            raise ValueError(f"row {k} has columns {list(row)}, expected {columns}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def read_report(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
