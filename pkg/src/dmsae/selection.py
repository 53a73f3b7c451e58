"""Dynamic model selection (DMS), adaptive ensembling (AE) and the walk-forward loop.

At each decision date ``t`` the candidate set is every spec whose loss is
comparable at ``t`` and which has a k-step forecast made at ``t``.

* DMS returns the forecast of the loss minimiser.
* AE re-solves the DMS problem with loss window ``v1`` at each of the last ``v0``
  dates, gives every winner ``1/v0`` weight and returns the weighted forecast.
  Weight on a winner without a forecast at ``t`` is spread proportionally over
  the remaining weighted candidates.

When nothing is selectable the forecast falls back to the window mean of the
largest window with enough history (AR(0)), and the trace is flagged.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError
from .losses import ForecastStore, LossConfig, error_terms, window_losses
from .models import ModelData, ModelSpec, forecast_paths

logger = logging.getLogger(__name__)

METHODS = ("dms", "ae")


@dataclass(frozen=True)
class SelectionTrace:
    date: pd.Timestamp
    index: int
    method: str
    forecast: float
    weights: tuple[tuple[ModelSpec, float], ...]
    losses: tuple[float, ...]
    fallback: bool = False

    @property
    def chosen(self) -> ModelSpec | None:
        """The selected spec (DMS) or the heaviest-weighted one (AE)."""
        if not self.weights:
            return None
        return max(self.weights, key=lambda sw: (sw[1], -self.weights.index(sw)))[0]


def _argmin(losses: np.ndarray, available: np.ndarray) -> int | None:
    mask = np.isfinite(losses) & available
    if not mask.any():
        return None
    return int(np.argmin(np.where(mask, losses, np.inf)))


def fallback_forecast(store: ForecastStore, t: int) -> float:
    """AR(0) forecast on the largest configured window that fits the history at ``t``."""
    y = store.actuals[: t + 1]
    finite = np.isfinite(y)
    for w in sorted({s.window for s in store.specs}, reverse=True):
        if t + 1 >= w and finite[t + 1 - w :].all():
            return float(y[t + 1 - w :].mean())
    tail = y[finite]
    return float(tail.mean()) if len(tail) else math.nan


def _available(store: ForecastStore, t: int, k: int) -> np.ndarray:
    store._check_time(t)
    return np.isfinite(store.values[:, t, k - 1])


def _fallback_trace(store, t, method, losses) -> SelectionTrace:
    logger.debug("row %d: no selectable candidate, using AR(0) fallback", t)
    return SelectionTrace(store.dates[t], t, method, fallback_forecast(store, t), (), tuple(losses), True)


def dms_decision(store: ForecastStore, t: int, cfg: LossConfig, losses: np.ndarray) -> SelectionTrace:
    available = _available(store, t, cfg.k)
    m = _argmin(losses, available)
    if m is None:
        return _fallback_trace(store, t, "dms", losses)
    spec = store.specs[m]
    return SelectionTrace(store.dates[t], t, "dms", float(store.values[m, t, cfg.k - 1]), ((spec, 1.0),), tuple(losses))


def ae_decision(
    store: ForecastStore,
    t: int,
    cfg: LossConfig,
    winners: Sequence[int | None],
    losses: np.ndarray,
) -> SelectionTrace:
    """Combine the sub-window winners (one per date in the last ``v0``) into an AE forecast."""
    M = len(store.specs)
    counts = np.zeros(M)
    for m in winners:
        if m is not None:
            counts[m] += 1.0
    if counts.sum() == 0:
        return _fallback_trace(store, t, "ae", losses)
    delta = counts / counts.sum()
    forecasts = store.values[:, t, cfg.k - 1]
    available = _available(store, t, cfg.k)
    live = (delta > 0) & available
    if not live.any():
        return _fallback_trace(store, t, "ae", losses)
    if not np.array_equal(live, delta > 0):
        delta = np.where(live, delta, 0.0)
        delta = delta / delta.sum()
    value = 0.0
    for m in np.flatnonzero(live):
        value += delta[m] * forecasts[m]
    weights = tuple((store.specs[m], float(delta[m])) for m in np.flatnonzero(live))
    return SelectionTrace(store.dates[t], t, "ae", float(value), weights, tuple(losses))


def dms_step(store: ForecastStore, t: int, cfg: LossConfig) -> SelectionTrace:
    """Single DMS decision at ``t`` from whatever the store holds."""
    terms = np.full((len(store.specs), len(store.dates)), np.nan)
    for tau in range(max(t - cfg.v + 1, 0), t + 1):
        terms[:, tau] = error_terms(store, tau, cfg)
    return dms_decision(store, t, cfg, window_losses(terms, t, cfg)[0])


def ae_step(store: ForecastStore, t: int, cfg: LossConfig, v0: int, v1: int) -> SelectionTrace:
    """Single AE decision at ``t``; each of the last ``v0`` sub-problems uses loss window ``v1``."""
    sub = cfg.with_window(v1)
    terms = np.full((len(store.specs), len(store.dates)), np.nan)
    for tau in range(max(t - v0 - v1 + 2, 0), t + 1):
        terms[:, tau] = error_terms(store, tau, sub)
    winners = []
    losses = None
    for tau in range(t - v0 + 1, t + 1):
        if tau < 0:
            continue
        losses = window_losses(terms, tau, sub)[0]
        winners.append(_argmin(losses, _available(store, tau, cfg.k)))
    return ae_decision(store, t, cfg, winners, losses)


# ---------------------------------------------------------------- walk-forward


@dataclass
class WalkForwardResult:
    method: str
    cfg: LossConfig
    traces: list[SelectionTrace]
    store: ForecastStore
    forecasts: np.ndarray = field(repr=False)
    start: int = 0
    end: int = 0


def burn_in(specs: Sequence[ModelSpec], v: int, max_step: int) -> int:
    """First row at which a walk-forward may start."""
    return max(s.window for s in specs) + v + max_step


def compute_paths(data: ModelData, specs: Sequence[ModelSpec], max_step: int) -> dict[ModelSpec, np.ndarray]:
    return {s: forecast_paths(data, s, max_step) for s in sorted(specs)}


def walk_forward(
    data: ModelData,
    specs: Sequence[ModelSpec],
    cfg: LossConfig,
    method: str,
    start: int,
    end: int,
    *,
    v0: int | None = None,
    v1: int | None = None,
    paths: Mapping[ModelSpec, np.ndarray] | None = None,
) -> WalkForwardResult:
    """Run DMS or AE over rows ``start..end`` inclusive.

    Args:
        data: Target and regressors for one (asset, horizon).
        specs: Candidate set; forecasts for steps 1..cfg.k are tracked.
        cfg: Loss configuration; ``cfg.v`` is the DMS loss window.
        method: ``"dms"`` or ``"ae"``.
        start, end: Inclusive row range of decision dates.
        v0, v1: AE split of the loss window, ``v0 + v1 == cfg.v``.
        paths: Precomputed :func:`compute_paths` output, reusable across configs.

    The store is filled one origin at a time and its cursor is advanced with
    ``t``, so a decision can only read forecasts and actuals dated at or before ``t``.
    """
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    specs = sorted(specs)
    if not specs:
        raise ConfigError("empty candidate set")
    first = burn_in(specs, cfg.v, cfg.k)
    if start < first:
        raise ConfigError(f"walk-forward starts at row {start} ({data.dates[start].date()}) before burn-in row {first}")
    if end >= len(data) or end < start:
        raise ConfigError(f"invalid walk-forward range {start}..{end} for {len(data)} rows")
    if method == "ae":
        v0 = cfg.v // 2 if v0 is None else v0
        v1 = cfg.v - v0 if v1 is None else v1
        if v0 < 1 or v1 < 1 or v0 + v1 != cfg.v:
            raise ConfigError(f"AE needs v0 + v1 == v with both >= 1, got v0={v0} v1={v1} v={cfg.v}")
    if paths is None:
        paths = compute_paths(data, specs, cfg.k)
    block = np.stack([paths[s][:, : cfg.k] for s in specs])  # (M, T, k)

    store = ForecastStore(specs, data.dates, cfg.k, data.y)
    for origin in range(start):
        store.append_origin(origin, block[:, origin, :])

    loss_cfg = cfg if method == "dms" else cfg.with_window(v1)
    span = loss_cfg.v + (v0 or 1)
    terms = np.full((len(specs), len(data)), np.nan)
    for tau in range(max(start - span, 0), start):
        terms[:, tau] = error_terms(store, tau, loss_cfg)

    winners: dict[int, int | None] = {}
    traces = []
    forecasts = np.full(len(data), np.nan)
    for t in range(start, end + 1):
        store.cursor = t
        store.append_origin(t, block[:, t, :])
        terms[:, t] = error_terms(store, t, loss_cfg)
        losses = window_losses(terms, t, loss_cfg)[0]
        if method == "dms":
            trace = dms_decision(store, t, cfg, losses)
        else:
            for tau in range(t - v0 + 1, t + 1):
                if tau not in winners and tau >= 0:
                    sub_losses = losses if tau == t else window_losses(terms, tau, loss_cfg)[0]
                    winners[tau] = _argmin(sub_losses, _available(store, tau, cfg.k))
            trace = ae_decision(store, t, cfg, [winners[tau] for tau in range(t - v0 + 1, t + 1) if tau >= 0], losses)
        traces.append(trace)
        forecasts[t] = trace.forecast
    store.cursor = None
    n_fallback = sum(tr.fallback for tr in traces)
    if n_fallback:
        logger.info("%s %s: %d fallback days out of %d", method, cfg.label, n_fallback, len(traces))
    return WalkForwardResult(method, cfg, traces, store, forecasts, start, end)
