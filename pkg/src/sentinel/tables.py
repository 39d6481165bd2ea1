"""CSV reading/writing with lossless number formatting."""
from __future__ import annotations

import csv
import math
from typing import Iterable, Sequence

import numpy as np
import pandas as pd


def format_value(value) -> str:
    """Render a cell; floats use the shortest repr that round-trips."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"refusing to write non-finite value {value}")
        return repr(value)
    return str(value)


def write_rows(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_frame(path, frame: pd.DataFrame) -> None:
    write_rows(path, list(frame.columns), frame.itertuples(index=False, name=None))


def read_frame(path, categorical: Sequence[str] = ()) -> pd.DataFrame:
    """Read a CSV; listed columns stay strings, everything else is numeric when it parses."""
    dtype = {c: str for c in categorical}
    frame = pd.read_csv(path, dtype=dtype, keep_default_na=False, float_precision="round_trip")
    return frame
