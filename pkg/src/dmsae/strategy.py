"""Forecast-driven holding weights, daily P&L and performance metrics.

The long-only weight on day ``t`` averages the signs of the ``k`` most recent
k-step forecasts (made on days ``t-k+1..t``)::

    w_t = 1/2 + 1/(2k) * sum_j sign(yhat[t+k-j | t-j])

The cross-asset (CAS) variant only counts predicted rises and buys VIX
alongside them::

    w_t^S = 1/2 + 1/(2k) * #rises      w_t^V = #rises / kstar

P&L on day ``t+1`` is the weight held at ``t`` times the simple return to ``t+1``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataError

TRADING_DAYS = 252
MDD_MODES = ("cumulative", "literal")


def holding_weight(signals: Sequence[float]) -> float:
    """Long-only weight from ``k`` forecasts; NaN or 0 forecasts contribute nothing."""
    k = len(signals)
    if k < 1:
        raise ValueError("need at least one signal")
    score = sum((1 if s > 0 else -1 if s < 0 else 0) for s in signals if not math.isnan(s))
    return 0.5 + score / (2 * k)


def cas_weights(signals: Sequence[float], kstar: float) -> tuple[float, float]:
    """Equity and VIX weights of the cross-asset strategy for ``k = len(signals)``."""
    k = len(signals)
    if k < 1:
        raise ValueError("need at least one signal")
    if kstar <= 0:
        raise ValueError("kstar must be positive")
    rises = sum(1 for s in signals if s > 0)
    return 0.5 + rises / (2 * k), rises / kstar


def _lagged_signals(forecasts: np.ndarray, k: int) -> np.ndarray:
    """(T, k) array whose row t holds forecasts made on t, t-1, ..., t-k+1."""
    T = len(forecasts)
    out = np.full((T, k), np.nan)
    for j in range(k):
        out[j:, j] = forecasts[: T - j]
    return out


def weight_series(forecasts: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`holding_weight`; also returns the number of missing signals per day."""
    sig = _lagged_signals(np.asarray(forecasts, dtype=float), k)
    score = (np.nan_to_num(np.sign(sig), nan=0.0)).sum(axis=1)
    return 0.5 + score / (2 * k), np.isnan(sig).sum(axis=1)


def cas_weight_series(forecasts: np.ndarray, k: int, kstar: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sig = _lagged_signals(np.asarray(forecasts, dtype=float), k)
    rises = (sig > 0).sum(axis=1).astype(float)
    return 0.5 + rises / (2 * k), rises / kstar, np.isnan(sig).sum(axis=1)


def simple_returns(prices: np.ndarray) -> np.ndarray:
    """``r[t] = P[t]/P[t-1] - 1`` with ``r[0] = NaN``."""
    p = np.asarray(prices, dtype=float)
    out = np.full(p.shape, np.nan)
    out[1:] = (p[1:] - p[:-1]) / p[:-1]
    return out


def _as_array(x, name: str) -> tuple[np.ndarray, pd.Index | None]:
    if isinstance(x, pd.Series):
        return x.to_numpy(dtype=float), x.index
    return np.asarray(x, dtype=float), None


def pnl(weights, prices, weights_vix=None, prices_vix=None) -> np.ndarray:
    """Daily P&L ``pi[t+1] = w[t] * r[t+1]`` (plus the VIX leg when given); ``pi[0]`` is NaN."""
    w, w_idx = _as_array(weights, "weights")
    p, p_idx = _as_array(prices, "prices")
    if w.shape != p.shape or (w_idx is not None and p_idx is not None and not w_idx.equals(p_idx)):
        raise DataError("weights and prices are not aligned")
    out = np.full(w.shape, np.nan)
    out[1:] = w[:-1] * simple_returns(p)[1:]
    if weights_vix is not None:
        wv, wv_idx = _as_array(weights_vix, "weights_vix")
        pv, pv_idx = _as_array(prices_vix, "prices_vix")
        if wv.shape != w.shape or pv.shape != w.shape:
            raise DataError("VIX leg is not aligned with the equity leg")
        if wv_idx is not None and p_idx is not None and not wv_idx.equals(p_idx):
            raise DataError("VIX weights are not aligned with the equity leg")
        if pv_idx is not None and p_idx is not None and not pv_idx.equals(p_idx):
            raise DataError("VIX prices are not aligned with the equity leg")
        out[1:] = out[1:] + wv[:-1] * simple_returns(pv)[1:]
    return out


# ------------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metrics:
    sr: float
    anr: float
    mdd: float
    n_days: int
    first_date: str | None = None
    last_date: str | None = None

    def to_dict(self) -> dict:
        return {
            "sr": None if math.isnan(self.sr) else self.sr,
            "anr": self.anr,
            "mdd": self.mdd,
            "n_days": self.n_days,
            "first_date": self.first_date,
            "last_date": self.last_date,
        }


def sharpe(values: np.ndarray) -> float:
    """Annualised Sharpe ratio with the n-1 standard deviation; NaN when undefined."""
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return math.nan
    m = values.mean()
    s = values.std(ddof=1)
    scale = np.abs(values).max()
    if not np.isfinite(s) or s <= 64 * np.finfo(float).eps * scale:
        return math.nan
    return math.sqrt(TRADING_DAYS) * m / s


def max_drawdown(values: np.ndarray, mode: str = "cumulative") -> float:
    """Deepest fall from a running peak.

    ``cumulative`` works on the wealth curve ``prod(1 + pi)`` starting from 1;
    ``literal`` applies the same peak formula to ``1 + pi`` day by day.
    """
    values = np.asarray(values, dtype=float)
    if mode == "cumulative":
        curve = np.concatenate([[1.0], np.cumprod(1.0 + values)])
    elif mode == "literal":
        curve = 1.0 + values
    else:
        raise ValueError(f"mdd mode must be one of {MDD_MODES}")
    if len(curve) == 0:
        return 0.0
    return float(min(0.0, (curve / np.maximum.accumulate(curve) - 1.0).min()))


def metrics(pnl_series, *, mdd_mode: str = "cumulative") -> Metrics:
    """SR, ANR and MDD of a daily P&L series (NaNs dropped)."""
    if isinstance(pnl_series, pd.Series):
        s = pnl_series.dropna()
        values = s.to_numpy(dtype=float)
        first = s.index[0].strftime("%Y-%m-%d") if len(s) and isinstance(s.index, pd.DatetimeIndex) else None
        last = s.index[-1].strftime("%Y-%m-%d") if len(s) and isinstance(s.index, pd.DatetimeIndex) else None
    else:
        values = np.asarray(pnl_series, dtype=float)
        values = values[~np.isnan(values)]
        first = last = None
    if len(values) < 2:
        raise ValueError("metrics need at least two P&L observations")
    return Metrics(sharpe(values), TRADING_DAYS * float(values.mean()), max_drawdown(values, mdd_mode), len(values), first, last)


# ------------------------------------------------------------ strategy records


@dataclass
class StrategyRecord:
    """Daily weights and P&L of one strategy.

    ``frame`` is indexed by date with columns ``weight`` (total equity exposure),
    ``weight_vix`` and ``pnl``. Multi-asset strategies also carry per-asset
    exposures in ``asset_weights``.
    """

    strategy_id: str
    asset: str
    k: int
    method: str
    loss: str
    frame: pd.DataFrame
    asset_weights: pd.DataFrame | None = None
    missing_signals: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def pnl(self) -> pd.Series:
        return self.frame["pnl"]

    def window(self, start, end) -> "StrategyRecord":
        """Restrict to ``[start, end]``; the first day's P&L is dropped (its weight is outside)."""
        frame = self.frame.loc[start:end].copy()
        if len(frame):
            frame.iloc[0, frame.columns.get_loc("pnl")] = np.nan
        aw = None if self.asset_weights is None else self.asset_weights.loc[start:end]
        return StrategyRecord(self.strategy_id, self.asset, self.k, self.method, self.loss, frame, aw, self.missing_signals, dict(self.meta))

    def metrics(self, *, mdd_mode: str = "cumulative") -> Metrics:
        return metrics(self.pnl, mdd_mode=mdd_mode)

    def export_frame(self) -> pd.DataFrame:
        out = self.frame[["weight", "weight_vix", "pnl"]].copy()
        out["cum_wealth"] = (1.0 + out["pnl"].fillna(0.0)).cumprod()
        return out

    def to_csv(self, path: str | Path) -> None:
        out = self.export_frame()
        out.index = out.index.strftime("%Y-%m-%d")
        out.index.name = "date"
        out.to_csv(path, float_format="%.17g", lineterminator="\n")

    def metrics_json(self, path: str | Path, *, mdd_mode: str = "cumulative") -> None:
        Path(path).write_text(json.dumps(self.metrics(mdd_mode=mdd_mode).to_dict(), indent=2, sort_keys=True) + "\n")


def forecast_strategy(
    strategy_id: str,
    forecasts: np.ndarray,
    prices: pd.Series,
    k: int,
    start: int,
    end: int,
    *,
    method: str = "",
    loss: str = "",
    vix_prices: pd.Series | None = None,
    kstar: float | None = None,
) -> StrategyRecord:
    """Long-only (or CAS when ``kstar`` is given) strategy on rows ``start..end``."""
    if len(forecasts) != len(prices):
        raise DataError("forecasts and prices are not aligned")
    if kstar is None:
        w, missing = weight_series(forecasts, k)
        wv = np.zeros_like(w)
    else:
        if vix_prices is None:
            raise ValueError("CAS strategies need VIX prices")
        w, wv, missing = cas_weight_series(forecasts, k, kstar)
    sl = slice(start, end + 1)
    p = prices.to_numpy(dtype=float)[sl]
    leg = None if kstar is None else vix_prices.to_numpy(dtype=float)[sl]
    pi = pnl(w[sl], p, wv[sl] if kstar is not None else None, leg)
    frame = pd.DataFrame({"weight": w[sl], "weight_vix": wv[sl], "pnl": pi}, index=prices.index[sl])
    return StrategyRecord(strategy_id, str(prices.name), k, method, loss, frame, missing_signals=int(missing[sl].sum()))


BENCHMARK_KINDS = ("constant_half_equal", "always_hedged")


def benchmark_weights(kind: str, assets: Sequence[str], dates: pd.DatetimeIndex) -> pd.DataFrame:
    """Per-asset exposure of a benchmark (plus ``VIX`` column for the hedged one)."""
    if not assets:
        raise ValueError("benchmark needs at least one asset")
    if kind == "constant_half_equal":
        return pd.DataFrame(0.5 / len(assets), index=dates, columns=list(assets))
    if kind == "always_hedged":
        if len(assets) != 1:
            raise ValueError("the always-hedged benchmark applies to one equity asset")
        return pd.DataFrame({assets[0]: 0.5, "VIX": 1.0 / 6.0}, index=dates)
    raise ValueError(f"benchmark kind must be one of {BENCHMARK_KINDS}")


def benchmark_strategy(
    kind: str,
    prices: Mapping[str, pd.Series],
    start,
    end,
    *,
    vix_prices: pd.Series | None = None,
    strategy_id: str | None = None,
) -> StrategyRecord:
    """Benchmark record: constant 1/2 per asset averaged, or 1/2 equity + 1/6 VIX."""
    assets = list(prices)
    dates = prices[assets[0]].loc[start:end].index
    weights = benchmark_weights(kind, assets, dates)
    pi = np.zeros(len(dates))
    for a in assets:
        pi = pi + pnl(weights[a].to_numpy(), prices[a].loc[start:end].to_numpy())
    wv = np.zeros(len(dates))
    if kind == "always_hedged":
        if vix_prices is None:
            raise ValueError("always-hedged benchmark needs VIX prices")
        wv = weights["VIX"].to_numpy()
        pi = pi + pnl(wv, vix_prices.loc[start:end].to_numpy())
    frame = pd.DataFrame({"weight": weights[assets].sum(axis=1).to_numpy(), "weight_vix": wv, "pnl": pi}, index=dates)
    sid = strategy_id or f"benchmark_{kind}"
    return StrategyRecord(sid, "+".join(assets), 0, "benchmark", "", frame, weights[assets])


def average_records(records: Sequence[StrategyRecord], strategy_id: str, *, method: str = "portfolio") -> StrategyRecord:
    """Equal-weight blend of strategies on their common dates.

    P&L and VIX weights are plain means; per-asset exposures add up each
    strategy's weight divided by the number of strategies.
    """
    if not records:
        raise ValueError("nothing to average")
    index = records[0].frame.index
    for r in records[1:]:
        index = index.intersection(r.frame.index)
    n = len(records)
    assets = list(dict.fromkeys(r.asset for r in records))
    exposure = pd.DataFrame(0.0, index=index, columns=assets)
    pi = np.zeros(len(index))
    wv = np.zeros(len(index))
    for r in records:
        f = r.frame.loc[index]
        exposure[r.asset] += f["weight"].to_numpy() / n
        wv += f["weight_vix"].to_numpy() / n
        pi += f["pnl"].to_numpy() / n
    frame = pd.DataFrame({"weight": exposure.sum(axis=1).to_numpy(), "weight_vix": wv, "pnl": pi}, index=index)
    ks = {r.k for r in records}
    return StrategyRecord(strategy_id, "+".join(assets), ks.pop() if len(ks) == 1 else 0, method, "", frame, exposure)
