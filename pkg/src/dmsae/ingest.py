"""Loading, validating and aligning daily CSV series.

Price files carry a ``date,close`` header. Curve files are wide: ``date`` plus one
column per maturity, named ``m<months>`` (``m0`` is the spot level, ``m3`` the
three-month tenor and so on).

Every frame handed around the engine is a :class:`pandas.DataFrame` indexed by a
strictly increasing :class:`~pandas.DatetimeIndex` named ``date``; that index is
the trading calendar and each row position is one trading day.
"""
from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, DomainError

logger = logging.getLogger(__name__)

SHORT_MATURITY_CUTOFF = {"vix": 3.0, "yield": 24.0}
CURVE_KINDS = tuple(SHORT_MATURITY_CUTOFF)
PRICE_SCHEMA = ("close",)

_MATURITY_COLUMN = re.compile(r"^m(\d+(?:\.\d+)?)$")


@dataclass(frozen=True)
class CurveSnapshot:
    """One day's term structure: levels ``prices`` at ``maturities`` (months)."""

    maturities: tuple[float, ...]
    prices: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.maturities) != len(self.prices):
            raise DomainError("maturities and prices differ in length")
        if len(self.maturities) < 2:
            raise DomainError("a curve needs at least two maturities")
        if any(b <= a for a, b in zip(self.maturities, self.maturities[1:])):
            raise DomainError("maturities must be strictly increasing")

    @property
    def count(self) -> int:
        return len(self.maturities)


# --------------------------------------------------------------------------- CSV


def load_csv(
    path: str | Path,
    schema: Sequence[str] | None = None,
    *,
    allow_missing: bool = False,
) -> pd.DataFrame:
    """Parse a dated CSV into a frame sorted ascending by date.

    Args:
        path: CSV file whose first column is ``date`` in ``YYYY-MM-DD`` form.
        schema: Expected value-column names after ``date``. ``None`` accepts any.
        allow_missing: Treat empty cells as NaN instead of failing.

    Raises:
        DataError: on a header mismatch, malformed date, non-numeric cell or
            duplicate date; the message names the offending line.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "date":
            raise DataError(f"{path}: first column must be 'date', got {header[:1]}")
        columns = header[1:]
        if schema is not None and list(columns) != list(schema):
            raise DataError(f"{path}: header {columns} does not match schema {list(schema)}")
        if len(set(columns)) != len(columns):
            raise DataError(f"{path}: duplicate column names in header")

        dates: list[date] = []
        rows: list[list[float]] = []
        seen: dict[date, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                day = date.fromisoformat(row[0].strip())
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed date {row[0]!r}") from None
            if day in seen:
                raise DataError(f"{path}:{lineno}: duplicate date {day} (first seen on line {seen[day]})")
            seen[day] = lineno
            values = []
            for name, cell in zip(columns, row[1:]):
                cell = cell.strip()
                if not cell:
                    if allow_missing:
                        values.append(math.nan)
                        continue
                    raise DataError(f"{path}:{lineno}: empty cell in column {name!r}")
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric cell {cell!r} in column {name!r}") from None
                if not math.isfinite(value):
                    raise DataError(f"{path}:{lineno}: non-finite cell {cell!r} in column {name!r}")
                values.append(value)
            dates.append(day)
            rows.append(values)

    index = pd.DatetimeIndex(pd.to_datetime(dates), name="date")
    frame = pd.DataFrame(np.asarray(rows, dtype=float).reshape(len(rows), len(columns)), index=index, columns=columns)
    return frame.sort_index()


def load_prices(path: str | Path, name: str) -> pd.DataFrame:
    """Load a ``date,close`` file as a one-column frame named ``name``."""
    frame = load_csv(path, PRICE_SCHEMA)
    if (frame["close"] <= 0).any():
        bad = frame.index[frame["close"] <= 0][0]
        raise DataError(f"{path}: non-positive price on {bad.date()}")
    return frame.rename(columns={"close": name})


def parse_maturities(columns: Iterable[str]) -> list[float]:
    maturities = []
    for col in columns:
        match = _MATURITY_COLUMN.match(col)
        if match is None:
            raise DataError(f"curve column {col!r} is not of the form m<months>")
        maturities.append(float(match.group(1)))
    if any(b <= a for a, b in zip(maturities, maturities[1:])):
        raise DataError("curve maturities must be strictly increasing left to right")
    return maturities


def load_curve(path: str | Path, *, forward_fill: bool = False) -> pd.DataFrame:
    """Load a wide curve file; columns keep their ``m<x>`` names.

    Missing tenors are forward-filled when ``forward_fill`` is set; otherwise any
    date with a missing tenor is dropped.
    """
    frame = load_csv(path, allow_missing=True)
    maturities = parse_maturities(frame.columns)
    if len(maturities) < 2:
        raise DataError(f"{path}: a curve needs at least two maturity columns")
    if forward_fill:
        frame = frame.ffill()
    incomplete = frame.isna().any(axis=1)
    if incomplete.any():
        logger.warning("%s: dropping %d dates with missing tenors", path, int(incomplete.sum()))
        frame = frame.loc[~incomplete]
    return frame


# ---------------------------------------------------------------- transformations


def align_inner(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Join frames on the intersection of their calendars.

    Columns keep the input order; duplicate column names across frames are an error.
    """
    if not frames:
        raise DataError("align_inner needs at least one frame")
    names: list[str] = []
    for f in frames:
        names.extend(f.columns)
    if len(set(names)) != len(names):
        raise DataError(f"column names collide across frames: {names}")
    common = frames[0].index
    for f in frames[1:]:
        common = common.intersection(f.index)
    if len(common) == 0:
        raise DataError("calendars have an empty intersection")
    common = common.sort_values()
    out = pd.concat([f.loc[common] for f in frames], axis=1)
    out.index.name = "date"
    return out


def log_return(prices: pd.Series, k: int) -> pd.Series:
    """k-day log return stamped on its end date; the first ``k`` values are NaN."""
    if k < 1:
        raise DomainError(f"horizon must be >= 1, got {k}")
    values = np.asarray(prices, dtype=float)
    if (values <= 0).any() or not np.isfinite(values).all():
        raise DomainError("log returns need strictly positive, finite prices")
    logp = np.log(values)
    out = np.full(values.shape, np.nan)
    out[k:] = logp[k:] - logp[:-k]
    return pd.Series(out, index=prices.index, name=f"{prices.name}_r{k}")


def estimate_slope(snapshot: CurveSnapshot) -> float:
    """Least-squares slope of level on maturity (intercept discarded)."""
    m = np.asarray(snapshot.maturities, dtype=float)
    p = np.asarray(snapshot.prices, dtype=float)
    dm = m - m.mean()
    sxx = float(dm @ dm)
    if sxx <= 0.0:
        raise DomainError("maturities have zero variance")
    return float(dm @ (p - p.mean())) / sxx


def short_long_split(snapshot: CurveSnapshot, curve_kind: str) -> tuple[float, float]:
    """Mean level of the short end (inclusive cutoff) and of the long end."""
    try:
        cutoff = SHORT_MATURITY_CUTOFF[curve_kind]
    except KeyError:
        raise DomainError(f"unknown curve kind {curve_kind!r}") from None
    short = [p for m, p in zip(snapshot.maturities, snapshot.prices) if m <= cutoff]
    long = [p for m, p in zip(snapshot.maturities, snapshot.prices) if m > cutoff]
    if not short or not long:
        raise DomainError(f"{curve_kind} curve needs maturities on both sides of {cutoff} months")
    return float(np.mean(short)), float(np.mean(long))


def curve_features(curve: pd.DataFrame, curve_kind: str) -> pd.DataFrame:
    """Daily slope, short-end and long-end levels for a wide curve frame.

    Columns are ``<kind>_slope``, ``<kind>_short`` and ``<kind>_long``.
    """
    if curve_kind not in SHORT_MATURITY_CUTOFF:
        raise DomainError(f"unknown curve kind {curve_kind!r}")
    m = np.asarray(parse_maturities(curve.columns))
    levels = curve.to_numpy(dtype=float)
    dm = m - m.mean()
    sxx = float(dm @ dm)
    if sxx <= 0.0:
        raise DomainError("maturities have zero variance")
    slope = ((levels - levels.mean(axis=1, keepdims=True)) * dm).sum(axis=1) / sxx
    short_mask = m <= SHORT_MATURITY_CUTOFF[curve_kind]
    if short_mask.all() or not short_mask.any():
        raise DomainError(f"{curve_kind} curve needs maturities on both sides of the cutoff")
    return pd.DataFrame(
        {
            f"{curve_kind}_slope": slope,
            f"{curve_kind}_short": levels[:, short_mask].mean(axis=1),
            f"{curve_kind}_long": levels[:, ~short_mask].mean(axis=1),
        },
        index=curve.index,
    )


def build_frame(
    prices: Mapping[str, str | Path],
    curves: Mapping[str, str | Path] | None = None,
    *,
    forward_fill_curves: bool = False,
) -> pd.DataFrame:
    """Load every price and curve file and align them on common dates.

    The result holds one column per asset (close level) followed by the
    slope/short/long columns of each curve.
    """
    frames = [load_prices(path, name) for name, path in prices.items()]
    for kind, path in (curves or {}).items():
        frames.append(curve_features(load_curve(path, forward_fill=forward_fill_curves), kind))
    frame = align_inner(frames)
    logger.info("aligned frame: %d dates from %s to %s", len(frame), frame.index[0].date(), frame.index[-1].date())
    return frame


def write_frame(frame: pd.DataFrame, path: str | Path) -> None:
    out = frame.copy()
    out.index = out.index.strftime("%Y-%m-%d")
    out.to_csv(path, float_format="%.17g", lineterminator="\n")


def read_frame(path: str | Path) -> pd.DataFrame:
    return load_csv(path)
