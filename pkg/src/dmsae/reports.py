"""CSV/JSON emitters for traces, losses, allocations and strategy outputs."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .models import ModelClass
from .selection import SelectionTrace

TRACE_COLUMNS = ["date", "method", "chosen_spec_or_topweight", "model_class", "window", "forecast"]


def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".17g")


def trace_table(traces: Iterable[SelectionTrace]) -> pd.DataFrame:
    rows = []
    for tr in traces:
        spec = tr.chosen
        rows.append(
            {
                "date": tr.date.strftime("%Y-%m-%d"),
                "method": tr.method,
                "chosen_spec_or_topweight": "fallback:AR0" if tr.fallback else spec.spec_id,
                "model_class": 1 if tr.fallback else int(spec.model_class),
                "window": "" if tr.fallback else spec.window,
                "forecast": tr.forecast,
            }
        )
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def group_weights(traces: Iterable[SelectionTrace]) -> pd.DataFrame:
    """Daily weight per window size and per model class (one-hot for DMS)."""
    rows = []
    for tr in traces:
        row = {"date": tr.date.strftime("%Y-%m-%d")}
        for spec, w in tr.weights:
            row[f"w{spec.window}"] = row.get(f"w{spec.window}", 0.0) + w
            row[f"class{int(spec.model_class)}"] = row.get(f"class{int(spec.model_class)}", 0.0) + w
        rows.append(row)
    table = pd.DataFrame(rows).fillna(0.0)
    window_cols = sorted((c for c in table.columns if c.startswith("w")), key=lambda c: int(c[1:]))
    class_cols = [f"class{int(c)}" for c in ModelClass if f"class{int(c)}" in table.columns]
    return table[["date", *window_cols, *class_cols]]


def loss_dump(traces: Iterable[SelectionTrace], spec_ids: Sequence[str]) -> pd.DataFrame:
    """Long table ``date,spec_id,loss`` of the per-candidate losses recorded in traces."""
    rows = []
    for tr in traces:
        d = tr.date.strftime("%Y-%m-%d")
        for sid, value in zip(spec_ids, tr.losses):
            rows.append((d, sid, value))
    return pd.DataFrame(rows, columns=["date", "spec_id", "loss"])


def write_csv(table: pd.DataFrame, path: str | Path, *, index: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=index, float_format="%.17g", lineterminator="\n")
    return path


def write_json(payload, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def clean(value):
    """Recursively replace NaN floats by ``None`` for JSON output."""
    if isinstance(value, dict):
        return {k: clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return None if math.isnan(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value
