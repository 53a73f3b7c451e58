"""Quarterly strategy selection on trailing Sharpe ratios.

On each quarter-end ``q`` every strategy is scored by the Sharpe ratio of its
last ``lookback`` daily P&L values. The selected strategies' daily weights are
then averaged over the following quarter ``(q, q_next]``.

* uncapped: the top ``N = K * |assets|`` strategies overall;
* capped: the top ``K`` per asset, averaged within each asset and then across
  assets, so no asset exceeds ``1 / |assets|`` of the book.

Strategies with an undefined score (zero variance or short history) rank below
all defined ones and are never selected.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError
from .strategy import StrategyRecord, sharpe, simple_returns

logger = logging.getLogger(__name__)

CAP_MODES = ("capped", "uncapped")
LOOKBACK = 252


def quarter_ends(dates: pd.DatetimeIndex) -> np.ndarray:
    """Row positions of the last trading day of each calendar quarter.

    The final row counts only when it is the last business day of its quarter,
    so truncating the calendar never invents a quarter end.
    """
    if len(dates) == 0:
        return np.empty(0, dtype=int)
    q = dates.year * 4 + (dates.month - 1) // 3
    ends = list(np.flatnonzero(q[1:] != q[:-1]))
    last = dates[-1]
    if last == last + pd.offsets.BQuarterEnd(0):
        ends.append(len(dates) - 1)
    return np.asarray(ends, dtype=int)


def quarter_schedule(dates: pd.DatetimeIndex, start: int, end: int, *, history_start: int = 0, lookback: int = LOOKBACK) -> list[int]:
    """Evaluation rows covering a testing range ``start..end``.

    A quarter end on row ``start - 1`` is included, so a range that opens a
    quarter is traded from its first day; otherwise trading starts after the
    first quarter end inside the range. Drops dates with fewer than ``lookback`` P&L days since
    ``history_start``.
    """
    rows = [int(q) for q in quarter_ends(dates) if start - 1 <= q < end]
    return [q for q in rows if q - history_start >= lookback]


def trailing_sharpe(pnl: np.ndarray, q: int, lookback: int = LOOKBACK) -> float:
    """Sharpe ratio of the ``lookback`` values ending at row ``q``; NaN if undefined."""
    lo = q - lookback + 1
    if lo < 0 or q >= len(pnl):
        return math.nan
    window = np.asarray(pnl[lo : q + 1], dtype=float)
    if np.isnan(window).any():
        return math.nan
    return sharpe(window)


def _rank(scores: Mapping[str, float], order: Sequence[str]) -> list[str]:
    pos = {sid: i for i, sid in enumerate(order)}
    defined = [sid for sid in order if math.isfinite(scores.get(sid, math.nan))]
    return sorted(defined, key=lambda sid: (-scores[sid], pos[sid]))


def daa_select_uncapped(scores: Mapping[str, float], n: int, order: Sequence[str] | None = None) -> list[str]:
    """Top ``n`` ids by score; ties keep ``order`` (default: mapping order)."""
    return _rank(scores, list(order or scores))[:n]


def daa_select_capped(
    scores: Mapping[str, float],
    asset_of: Mapping[str, str],
    k: int,
    assets: Sequence[str],
    order: Sequence[str] | None = None,
) -> dict[str, list[str]]:
    """Top ``k`` ids within each asset."""
    order = list(order or scores)
    return {a: _rank(scores, [sid for sid in order if asset_of[sid] == a])[:k] for a in assets}


@dataclass(frozen=True)
class AllocationPlan:
    quarter_end: pd.Timestamp
    row: int
    cap: str
    selected: tuple[str, ...]
    scores: tuple[tuple[str, float], ...]
    benchmark_assets: tuple[str, ...] = ()


@dataclass
class DaaResult:
    plans: list[AllocationPlan]
    composite: StrategyRecord
    records: dict[str, StrategyRecord]

    def allocation_table(self) -> pd.DataFrame:
        rows = []
        for plan in self.plans:
            chosen = set(plan.selected)
            for sid, sr in plan.scores:
                rec = self.records[sid]
                rows.append(
                    {
                        "quarter_end": plan.quarter_end.strftime("%Y-%m-%d"),
                        "strategy_id": sid,
                        "asset": rec.asset,
                        "k": rec.k,
                        "method": rec.method,
                        "sr_trailing": sr,
                        "selected": int(sid in chosen),
                    }
                )
        return pd.DataFrame(rows, columns=["quarter_end", "strategy_id", "asset", "k", "method", "sr_trailing", "selected"])


def run_daa(
    records: Sequence[StrategyRecord],
    schedule: Sequence[int],
    cap: str,
    *,
    dates: pd.DatetimeIndex,
    asset_prices: Mapping[str, pd.Series],
    end: int | None = None,
    k_select: int | None = None,
    n_select: int | None = None,
    lookback: int = LOOKBACK,
    strategy_id: str | None = None,
) -> DaaResult:
    """Roll the quarterly selection over ``schedule`` and build the composite strategy.

    Args:
        records: Candidate strategies; their frames are reindexed onto ``dates``.
        schedule: Increasing evaluation rows (see :func:`quarter_schedule`).
        cap: ``"capped"`` or ``"uncapped"``.
        dates: Common calendar.
        asset_prices: Close levels per asset, used for benchmark fallbacks.
        end: Last weight row of the composite (default: last row).
        k_select: Per-asset selection size ``K``; default is the number of
            distinct horizons in ``records``.
        n_select: Uncapped selection size; default ``K * |assets|``.
    """
    if cap not in CAP_MODES:
        raise ConfigError(f"cap must be one of {CAP_MODES}, got {cap!r}")
    if not records:
        raise ConfigError("DAA needs at least one strategy")
    schedule = list(schedule)
    if not schedule:
        raise ConfigError("empty DAA schedule")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ConfigError("DAA schedule must be strictly increasing")
    end = len(dates) - 1 if end is None else end
    ids = [r.strategy_id for r in records]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate strategy ids")
    by_id = {r.strategy_id: r for r in records}
    assets = list(dict.fromkeys(r.asset for r in records))
    missing_prices = [a for a in assets if a not in asset_prices]
    if missing_prices:
        raise ConfigError(f"no prices for assets {missing_prices}")
    k_select = k_select or len({r.k for r in records})
    n_select = n_select or k_select * len(assets)

    T = len(dates)
    pnl = np.stack([r.frame["pnl"].reindex(dates).to_numpy(dtype=float) for r in records])
    weight = np.stack([r.frame["weight"].reindex(dates).to_numpy(dtype=float) for r in records])
    weight_vix = np.stack([r.frame["weight_vix"].reindex(dates).to_numpy(dtype=float) for r in records])
    asset_ret = {a: simple_returns(asset_prices[a].reindex(dates).to_numpy(dtype=float)) for a in assets}
    row_of = {sid: i for i, sid in enumerate(ids)}
    asset_of = {r.strategy_id: r.asset for r in records}

    comp_w = np.full((T, len(assets)), np.nan)
    comp_wv = np.full(T, np.nan)
    comp_pnl = np.full(T, np.nan)
    plans = []
    for j, q in enumerate(schedule):
        last = schedule[j + 1] if j + 1 < len(schedule) else end
        days = np.arange(q + 1, min(last, end) + 1)
        if len(days) == 0:
            continue
        scores = {sid: trailing_sharpe(pnl[row_of[sid]], q, lookback) for sid in ids}

        # per asset: list of selected rows, or None for the 0.5 benchmark
        if cap == "uncapped":
            chosen = daa_select_uncapped(scores, n_select, ids)
            groups = {None: [row_of[s] for s in chosen]} if chosen else None
            bench_assets = tuple(assets) if not chosen else ()
        else:
            picked = daa_select_capped(scores, asset_of, k_select, assets, ids)
            chosen = [s for a in assets for s in picked[a]]
            groups = {a: [row_of[s] for s in picked[a]] for a in assets}
            bench_assets = tuple(a for a in assets if not picked[a])

        nxt = days + 1
        in_range = nxt < T
        w_day = np.zeros((len(days), len(assets)))
        wv_day = np.zeros(len(days))
        pi_day = np.zeros(len(days))
        if groups is None:
            for ai, a in enumerate(assets):
                w_day[:, ai] = 0.5 / len(assets)
                pi_day += 0.5 / len(assets) * np.where(in_range, asset_ret[a][np.minimum(nxt, T - 1)], np.nan)
        elif cap == "uncapped":
            sel = groups[None]
            for i in sel:
                ai = assets.index(asset_of[ids[i]])
                w_day[:, ai] += weight[i, days] / len(sel)
                wv_day += weight_vix[i, days] / len(sel)
                pi_day += np.where(in_range, pnl[i, np.minimum(nxt, T - 1)], np.nan) / len(sel)
        else:
            n_assets = len(assets)
            for ai, a in enumerate(assets):
                sel = groups[a]
                if not sel:
                    w_day[:, ai] = 0.5 / n_assets
                    pi_day += 0.5 / n_assets * np.where(in_range, asset_ret[a][np.minimum(nxt, T - 1)], np.nan)
                    continue
                for i in sel:
                    w_day[:, ai] += weight[i, days] / (len(sel) * n_assets)
                    wv_day += weight_vix[i, days] / (len(sel) * n_assets)
                    pi_day += np.where(in_range, pnl[i, np.minimum(nxt, T - 1)], np.nan) / (len(sel) * n_assets)
        if np.isnan(w_day).any() or np.isnan(pi_day[in_range]).any():
            raise ConfigError(f"strategy records do not cover the quarter after {dates[q].date()}")
        comp_w[days] = w_day
        comp_wv[days] = wv_day
        comp_pnl[nxt[in_range]] = pi_day[in_range]
        if bench_assets:
            logger.info("quarter ending %s: benchmark weight for %s", dates[q].date(), ", ".join(bench_assets))
        plans.append(
            AllocationPlan(
                dates[q],
                q,
                cap,
                tuple(chosen),
                tuple((sid, scores[sid]) for sid in ids),
                bench_assets,
            )
        )

    first, stop = schedule[0] + 1, min(end, T - 1)
    idx = dates[first : stop + 1]
    frame = pd.DataFrame(
        {
            "weight": np.nansum(comp_w[first : stop + 1], axis=1),
            "weight_vix": comp_wv[first : stop + 1],
            "pnl": comp_pnl[first : stop + 1],
        },
        index=idx,
    )
    aw = pd.DataFrame(comp_w[first : stop + 1], index=idx, columns=assets)
    composite = StrategyRecord(strategy_id or f"daa_{cap}", "+".join(assets), 0, f"daa_{cap}", "", frame, aw)
    return DaaResult(plans, composite, by_id)
