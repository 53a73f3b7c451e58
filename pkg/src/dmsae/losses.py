"""Forecast history and discounted forecast-error losses.

For a target series ``y`` (k-day returns) the store keeps ``yhat[tau | tau - s]``
for every candidate, origin ``tau - s`` and step ``s = 1..k``. Two loss families
score a candidate at date ``t`` over the trailing ``v`` targets:

* ``single``: ``sum_j lam**j * |yhat[t-j | t-j-k] - y[t-j]|**p``
* ``multi``:  ``sum_j lam**j * sum_s |yhat[t-j | t-j-s] - y[t-j]|**p`` over ``s = 1..k``

Targets whose forecasts are missing are skipped. A candidate with fewer than
``v / 2`` evaluable targets is incomparable (its loss is NaN).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import LookAheadError, SelectionError
from .models import ModelSpec

FAMILIES = ("single", "multi")
DEFAULT_LAMBDAS = (0.8, 0.85, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99, 1.0)
DEFAULT_POWERS = (1.0, 1.5, 2.0)


@dataclass(frozen=True)
class LossConfig:
    family: str = "single"
    lam: float = 1.0
    p: float = 2.0
    v: int = 100
    k: int = 1

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"loss family must be one of {FAMILIES}, got {self.family!r}")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lambda must lie in (0, 1], got {self.lam}")
        if not self.p > 0.0:
            raise ValueError(f"p must be positive, got {self.p}")
        if self.v < 1 or self.k < 1:
            raise ValueError("v and k must be >= 1")

    @property
    def label(self) -> str:
        return f"{self.family}_lam{self.lam:g}_p{self.p:g}"

    def with_window(self, v: int) -> "LossConfig":
        return replace(self, v=v)

    def comparable(self, count: int | np.ndarray) -> bool | np.ndarray:
        return 2 * np.asarray(count) >= self.v


def loss_grid(
    families: Iterable[str] = FAMILIES,
    lambdas: Iterable[float] = DEFAULT_LAMBDAS,
    powers: Iterable[float] = DEFAULT_POWERS,
    *,
    v: int = 100,
    k: int = 1,
) -> list[LossConfig]:
    """Loss configurations in grid order (family, lambda, p)."""
    return [LossConfig(f, float(lam), float(p), v, k) for f in families for lam in lambdas for p in powers]


class ForecastStore:
    """Append-only table of forecasts keyed by (spec, origin row, step).

    ``values[m, origin, s - 1]`` holds the forecast of ``actuals[origin + s]``;
    unfilled entries are NaN. Setting :attr:`cursor` makes reads of actuals or
    forecasts dated after the cursor raise :class:`LookAheadError`.
    """

    def __init__(self, specs: Sequence[ModelSpec], dates: pd.DatetimeIndex, max_step: int, actuals: np.ndarray):
        self.specs = tuple(sorted(specs))
        if len(set(self.specs)) != len(self.specs):
            raise ValueError("duplicate specs in store")
        self.dates = dates
        self.max_step = max_step
        self.actuals = np.asarray(actuals, dtype=float)
        if len(self.actuals) != len(dates):
            raise ValueError("actuals must match the calendar")
        self._pos = {s: i for i, s in enumerate(self.specs)}
        shape = (len(self.specs), len(dates), max_step)
        self.values = np.full(shape, np.nan)
        self.filled = np.zeros(shape, dtype=bool)
        self.cursor: int | None = None

    def __len__(self) -> int:
        return int(self.filled.sum())

    def position(self, spec: ModelSpec) -> int:
        return self._pos[spec]

    def _check_time(self, row: int) -> None:
        if self.cursor is not None and row > self.cursor:
            raise LookAheadError(f"read of row {row} while stepping at row {self.cursor}")

    def append(self, spec: ModelSpec, origin: int, step: int, value: float) -> None:
        m = self._pos[spec]
        if self.filled[m, origin, step - 1]:
            raise ValueError(f"forecast already stored for {spec.spec_id} origin={origin} step={step}")
        self.values[m, origin, step - 1] = value
        self.filled[m, origin, step - 1] = True

    def append_origin(self, origin: int, block: np.ndarray) -> None:
        """Store the forecasts of every spec made at ``origin``; ``block`` is (M, max_step)."""
        if self.filled[:, origin, :].any():
            raise ValueError(f"forecasts already stored for origin {origin}")
        self.values[:, origin, :] = block
        self.filled[:, origin, :] = True

    def get(self, spec: ModelSpec, origin: int, step: int) -> float:
        self._check_time(origin)
        if origin < 0 or step > self.max_step:
            return math.nan
        return float(self.values[self._pos[spec], origin, step - 1])

    def actual(self, row: int) -> float:
        self._check_time(row)
        return float(self.actuals[row]) if row >= 0 else math.nan

    def target_vector(self, spec: ModelSpec, target: int, k: int) -> np.ndarray:
        """``(yhat[target | target-1], ..., yhat[target | target-k])``; NaN where missing."""
        return np.array([self.get(spec, target - s, s) for s in range(1, k + 1)])

    def entries(self, spec: ModelSpec, origins: range | None = None) -> int:
        m = self._pos[spec]
        rows = slice(None) if origins is None else slice(origins.start, origins.stop)
        return int(self.filled[m, rows].sum())


# ------------------------------------------------------------- scalar losses


def _discounted(terms: Sequence[tuple[int, float]], t: int, cfg: LossConfig) -> float:
    if not cfg.comparable(len(terms)):
        return math.nan
    return float(sum(cfg.lam ** (t - tau) * e for tau, e in terms))


def single_valued_loss(store: ForecastStore, spec: ModelSpec, t: int, cfg: LossConfig) -> float:
    """Discounted p-power error of the k-step forecasts over the last ``v`` targets.

    Returns NaN when fewer than ``v / 2`` targets are evaluable.
    """
    terms = []
    for tau in range(t - cfg.v + 1, t + 1):
        f, y = store.get(spec, tau - cfg.k, cfg.k), store.actual(tau)
        if math.isfinite(f) and math.isfinite(y):
            terms.append((tau, abs(f - y) ** cfg.p))
    return _discounted(terms, t, cfg)


def multi_valued_loss(store: ForecastStore, spec: ModelSpec, t: int, cfg: LossConfig) -> float:
    """Discounted ``||yhat_vec - y 1_k||_p^p`` with the vector of all 1..k-step forecasts of each target."""
    terms = []
    for tau in range(t - cfg.v + 1, t + 1):
        y = store.actual(tau)
        if not math.isfinite(y):
            continue
        parts = [abs(f - y) ** cfg.p for f in store.target_vector(spec, tau, cfg.k) if math.isfinite(f)]
        if parts:
            total = 0.0
            for part in parts:
                total += part
            terms.append((tau, total))
    return _discounted(terms, t, cfg)


def loss(store: ForecastStore, spec: ModelSpec, t: int, cfg: LossConfig) -> float:
    fn = single_valued_loss if cfg.family == "single" else multi_valued_loss
    return fn(store, spec, t, cfg)


def rank_candidates(store: ForecastStore, specs: Iterable[ModelSpec], t: int, cfg: LossConfig) -> list[tuple[ModelSpec, float]]:
    """Comparable candidates sorted by loss, ties broken by spec order."""
    scored = [(s, loss(store, s, t, cfg)) for s in specs]
    ranked = sorted(((s, v) for s, v in scored if math.isfinite(v)), key=lambda sv: (sv[1], sv[0].sort_key))
    if not ranked:
        raise SelectionError(f"no comparable candidate at row {t}")
    return ranked


# -------------------------------------------------------- vectorised losses


def error_terms(store: ForecastStore, tau: int, cfg: LossConfig) -> np.ndarray:
    """Per-candidate local loss at target ``tau`` (NaN when nothing is evaluable)."""
    M = len(store.specs)
    y = store.actual(tau)
    if not math.isfinite(y):
        return np.full(M, np.nan)
    steps = (cfg.k,) if cfg.family == "single" else range(1, cfg.k + 1)
    total = np.zeros(M)
    seen = np.zeros(M, dtype=bool)
    for s in steps:
        origin = tau - s
        if origin < 0:
            continue
        store._check_time(origin)
        f = store.values[:, origin, s - 1]
        ok = np.isfinite(f)
        total = np.where(ok, total + np.abs(np.where(ok, f, 0.0) - y) ** cfg.p, total)
        seen |= ok
    return np.where(seen, total, np.nan)


def window_losses(terms: np.ndarray, t: int, cfg: LossConfig) -> tuple[np.ndarray, np.ndarray]:
    """Discounted sums of ``terms`` (M, T) over columns ``t-v+1..t``.

    Returns ``(loss, count)``; incomparable candidates get NaN loss.
    """
    lo = t - cfg.v + 1
    window = terms[:, max(lo, 0) : t + 1]
    ages = np.arange(t - max(lo, 0), -1, -1)
    weights = cfg.lam ** ages.astype(float)
    ok = np.isfinite(window)
    count = ok.sum(axis=1)
    total = (np.where(ok, window, 0.0) * weights).sum(axis=1)
    return np.where(cfg.comparable(count), total, np.nan), count


def loss_vector(store: ForecastStore, t: int, cfg: LossConfig) -> np.ndarray:
    """Losses of every stored candidate at ``t`` via the vectorised route."""
    M, T = len(store.specs), len(store.dates)
    terms = np.full((M, T), np.nan)
    for tau in range(max(t - cfg.v + 1, 0), t + 1):
        terms[:, tau] = error_terms(store, tau, cfg)
    return window_losses(terms, t, cfg)[0]
