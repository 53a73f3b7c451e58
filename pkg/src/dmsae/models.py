"""Candidate model space and rolling-window point forecasts.

Three model classes are supported, each fitted on a trailing window of ``w`` rows
ending at the forecast origin ``t``:

* ``AR``: AR(p) on the target returns, estimated with Yule-Walker and
  forecast by iterating the fitted recursion.
* ``SLOPE``: ``y_t = a + b * s_{t-L}`` with ``s`` a curve slope.
* ``SHORT_LONG``: ``y_t = a + b1 * short_{t-L} + b2 * long_{t-L}``.

Regression models are refitted per forecast step ``L`` so the regressor lag
always matches the step being forecast. Missing forecasts are NaN.

Two routes produce forecasts. :func:`fit_model` / :func:`forecast` handle one
origin at a time; :func:`forecast_paths` computes every origin at once with the
same row kernels and is what the walk-forward engine uses.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .ingest import CURVE_KINDS, log_return

DEFAULT_WINDOWS = (22, 44, 63, 126, 252)
DEFAULT_LAGS = (0, 1, 2, 3, 4, 5)
MAX_AR_LAG = 5
COND_LIMIT = 1e10
# gamma_0 at or below this fraction of mean(y^2) is treated as zero variance
_VARIANCE_FLOOR = 1e-12


class ModelClass(enum.IntEnum):
    AR = 1
    SLOPE = 2
    SHORT_LONG = 3


@dataclass(frozen=True)
class ModelSpec:
    """One (model form, estimation window) candidate for a given target series."""

    model_class: ModelClass
    window: int
    asset: str = ""
    horizon: int = 1
    lag: int = 0
    curve: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "model_class", ModelClass(self.model_class))
        if self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.model_class is ModelClass.AR:
            if not 0 <= self.lag <= MAX_AR_LAG:
                raise ValueError(f"AR lag must be in 0..{MAX_AR_LAG}, got {self.lag}")
            if self.curve is not None:
                raise ValueError("AR specs take no curve")
            if self.window <= self.lag:
                raise ValueError("window must exceed the AR lag")
        else:
            if self.curve not in CURVE_KINDS:
                raise ValueError(f"regression specs need a curve in {CURVE_KINDS}, got {self.curve!r}")
            if self.lag != 0:
                raise ValueError("lag applies to AR specs only")

    @property
    def sort_key(self) -> tuple:
        return (int(self.model_class), self.curve or "", self.lag, self.window)

    def __lt__(self, other: "ModelSpec") -> bool:
        return self.sort_key < other.sort_key

    @property
    def spec_id(self) -> str:
        if self.model_class is ModelClass.AR:
            form = f"AR{self.lag}"
        elif self.model_class is ModelClass.SLOPE:
            form = f"SLOPE-{self.curve}"
        else:
            form = f"SHORTLONG-{self.curve}"
        return f"{form}_w{self.window}"

    @property
    def regressors(self) -> tuple[str, ...]:
        if self.model_class is ModelClass.SLOPE:
            return (f"{self.curve}_slope",)
        if self.model_class is ModelClass.SHORT_LONG:
            return (f"{self.curve}_short", f"{self.curve}_long")
        return ()


def enumerate_specs(
    asset: str = "",
    horizon: int = 1,
    *,
    windows: Iterable[int] = DEFAULT_WINDOWS,
    lags: Iterable[int] = DEFAULT_LAGS,
    curves: Iterable[str] = CURVE_KINDS,
    classes: Iterable[ModelClass] = tuple(ModelClass),
) -> list[ModelSpec]:
    """All candidates in their canonical total order."""
    windows = sorted(set(windows))
    classes = set(ModelClass(c) for c in classes)
    specs = []
    if ModelClass.AR in classes:
        specs += [ModelSpec(ModelClass.AR, w, asset, horizon, lag=p) for p in sorted(set(lags)) for w in windows]
    for cls in (ModelClass.SLOPE, ModelClass.SHORT_LONG):
        if cls in classes:
            specs += [ModelSpec(cls, w, asset, horizon, curve=c) for c in sorted(set(curves)) for w in windows]
    return sorted(specs)


@dataclass(frozen=True)
class ModelData:
    """Target returns and regressors for one (asset, horizon) on a calendar."""

    dates: pd.DatetimeIndex
    y: np.ndarray
    regressors: Mapping[str, np.ndarray]
    asset: str = ""
    horizon: int = 1

    def __len__(self) -> int:
        return len(self.y)

    def until(self, t: int) -> "ModelData":
        """The same data truncated after row ``t``."""
        return ModelData(
            self.dates[: t + 1],
            self.y[: t + 1],
            {k: v[: t + 1] for k, v in self.regressors.items()},
            self.asset,
            self.horizon,
        )

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        try:
            return np.column_stack([self.regressors[n] for n in names])
        except KeyError as exc:
            raise KeyError(f"regressor {exc.args[0]!r} not present in model data") from None


def model_data(frame: pd.DataFrame, asset: str, horizon: int) -> ModelData:
    """Build the k-day return target and any curve regressors found in ``frame``."""
    y = log_return(frame[asset], horizon).to_numpy()
    regs = {}
    for kind in CURVE_KINDS:
        for part in ("slope", "short", "long"):
            col = f"{kind}_{part}"
            if col in frame.columns:
                regs[col] = frame[col].to_numpy(dtype=float)
    return ModelData(frame.index, y, regs, asset, horizon)


def available_curves(data: ModelData) -> tuple[str, ...]:
    return tuple(k for k in CURVE_KINDS if all(f"{k}_{p}" in data.regressors for p in ("slope", "short", "long")))


# ------------------------------------------------------------------ row kernels


def _yule_walker_rows(Y: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Yule-Walker fits for each row of ``Y`` (n, w).

    Returns ``(alpha, phi, usable)`` with ``phi`` of shape (n, p).
    """
    n, w = Y.shape
    ok = np.isfinite(Y).all(axis=1)
    Y = np.where(ok[:, None], Y, 0.0)
    mean = Y.mean(axis=1)
    if p == 0:
        return mean, np.zeros((n, 0)), ok
    X = Y - mean[:, None]
    gam = np.stack([(X[:, : w - j] * X[:, j:]).sum(axis=1) / w for j in range(p + 1)], axis=1)
    meansq = (Y * Y).mean(axis=1)
    usable = ok & (gam[:, 0] > _VARIANCE_FLOOR * meansq) & (gam[:, 0] > 0.0)
    idx = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    R = gam[:, idx]
    r = gam[:, 1:].copy()
    R[~usable] = np.eye(p)
    r[~usable] = 0.0
    phi = np.linalg.solve(R, r[..., None])[..., 0]
    alpha = mean * (1.0 - phi.sum(axis=1))
    return alpha, phi, usable


def _ols_rows(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """OLS with intercept for each row: ``X`` (n, w, q), ``Y`` (n, w).

    Rows whose column-equilibrated normal matrix has condition number above
    ``COND_LIMIT`` are marked unusable.
    """
    n, w, q = X.shape
    ok = np.isfinite(X).all(axis=(1, 2)) & np.isfinite(Y).all(axis=1)
    X = np.where(ok[:, None, None], X, 0.0)
    Y = np.where(ok[:, None], Y, 0.0)
    Z = np.concatenate([np.ones((n, w, 1)), X], axis=2)
    A = (Z[:, :, :, None] * Z[:, :, None, :]).sum(axis=1)
    scale = np.sqrt(np.einsum("nii->ni", A))
    with np.errstate(divide="ignore", invalid="ignore"):
        As = A / (scale[:, :, None] * scale[:, None, :])
        As = np.where(np.isfinite(As), As, 0.0)
        cond = np.linalg.cond(As)
    usable = ok & np.isfinite(cond) & (cond <= COND_LIMIT) & (w > q + 1)

    xm = X.mean(axis=1)
    ym = Y.mean(axis=1)
    Xc = X - xm[:, None, :]
    Yc = Y - ym[:, None]
    S = (Xc[:, :, :, None] * Xc[:, :, None, :]).sum(axis=1)
    b = (Xc * Yc[:, :, None]).sum(axis=1)
    S[~usable] = np.eye(q)
    b[~usable] = 0.0
    beta = np.linalg.solve(S, b[..., None])[..., 0]
    alpha = ym - (xm * beta).sum(axis=1)
    return alpha, beta, usable


def _iterate_ar(alpha: np.ndarray, phi: np.ndarray, history: np.ndarray, steps: int) -> np.ndarray:
    """Plug-in forecasts 1..steps ahead; ``history`` holds the last p values, oldest first."""
    n, p = phi.shape
    out = np.empty((n, steps))
    hist = history.copy()
    for h in range(steps):
        nxt = alpha.copy()
        for j in range(p):
            nxt = nxt + phi[:, j] * hist[:, p - 1 - j]
        out[:, h] = nxt
        if p:
            hist = np.concatenate([hist[:, 1:], nxt[:, None]], axis=1)
    return out


# ------------------------------------------------------------- single-origin API


@dataclass(frozen=True)
class FittedModel:
    spec: ModelSpec | None
    intercept: float
    coefficients: tuple[float, ...]
    fit_index: int = -1
    fit_lag: int = 0
    usable: bool = True
    reason: str = ""


def fit_ar_yule_walker(y_window: Sequence[float], p: int, *, spec: ModelSpec | None = None, fit_index: int = -1) -> FittedModel:
    """Yule-Walker AR(p) fit with biased (1/w) autocovariances.

    ``p = 0`` gives the constant model at the window mean. The intercept is set
    so the fitted process mean equals the window mean.
    """
    y = np.asarray(y_window, dtype=float)
    if not 0 <= p <= MAX_AR_LAG or len(y) <= p:
        raise ValueError(f"need 0 <= p <= {MAX_AR_LAG} and window longer than p (w={len(y)}, p={p})")
    alpha, phi, usable = _yule_walker_rows(np.ascontiguousarray(y[None, :]), p)
    if not usable[0]:
        reason = "non_finite_window" if not np.isfinite(y).all() else "zero_variance"
        return FittedModel(spec, math.nan, (), fit_index, 0, False, reason)
    return FittedModel(spec, float(alpha[0]), tuple(float(c) for c in phi[0]), fit_index, 0, True, "")


def fit_ols(
    X: Sequence[Sequence[float]] | np.ndarray,
    y: Sequence[float],
    *,
    spec: ModelSpec | None = None,
    fit_index: int = -1,
    fit_lag: int = 0,
) -> FittedModel:
    """Least squares of ``y`` on an intercept plus the columns of ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y differ in length")
    alpha, beta, usable = _ols_rows(np.ascontiguousarray(X[None]), np.ascontiguousarray(y[None]))
    if not usable[0]:
        return FittedModel(spec, math.nan, (), fit_index, fit_lag, False, "ill_conditioned")
    return FittedModel(spec, float(alpha[0]), tuple(float(c) for c in beta[0]), fit_index, fit_lag, True, "")


def _lagged(x: np.ndarray, lag: int) -> np.ndarray:
    out = np.full(x.shape, np.nan)
    if lag < len(x):
        out[lag:] = x[: len(x) - lag]
    return out


def fit_model(spec: ModelSpec, data: ModelData, t: int, step: int = 1) -> FittedModel:
    """Fit ``spec`` on the window ending at row ``t``; regressions use lag ``step``."""
    w = spec.window
    start = t - w + 1
    if start < 0 or t >= len(data):
        return FittedModel(spec, math.nan, (), t, step, False, "insufficient_history")
    if spec.model_class is ModelClass.AR:
        window = data.y[start : t + 1]
        if not np.isfinite(window).all():
            return FittedModel(spec, math.nan, (), t, 0, False, "insufficient_history")
        return fit_ar_yule_walker(window, spec.lag, spec=spec, fit_index=t)
    X = data.matrix(spec.regressors)
    lagged = np.column_stack([_lagged(X[:, j], step) for j in range(X.shape[1])])
    Xw, yw = lagged[start : t + 1], data.y[start : t + 1]
    if not (np.isfinite(Xw).all() and np.isfinite(yw).all()):
        return FittedModel(spec, math.nan, (), t, step, False, "insufficient_history")
    return fit_ols(Xw, yw, spec=spec, fit_index=t, fit_lag=step)


def forecast(model: FittedModel, data: ModelData, t: int, step: int) -> float:
    """Point forecast of ``y[t + step]`` from information at row ``t``; NaN if unavailable."""
    if not model.usable or model.spec is None:
        return math.nan
    spec = model.spec
    if spec.model_class is ModelClass.AR:
        p = spec.lag
        hist = data.y[t - p + 1 : t + 1] if p else np.empty(0)
        if len(hist) != p or not np.isfinite(hist).all():
            return math.nan
        path = _iterate_ar(np.array([model.intercept]), np.array([model.coefficients]).reshape(1, p), hist[None, :], step)
        return float(path[0, -1])
    if model.fit_lag != step:
        raise ValueError(f"regression fitted at lag {model.fit_lag} cannot forecast step {step}")
    x_now = data.matrix(spec.regressors)[t]
    if not np.isfinite(x_now).all():
        return math.nan
    value = model.intercept
    for b, x in zip(model.coefficients, x_now):
        value += b * x
    return float(value)


def run_model_sweep(data: ModelData, specs: Sequence[ModelSpec], t: int, max_step: int) -> list[tuple[ModelSpec, int, float]]:
    """Forecasts of every spec for steps 1..max_step at origin ``t`` (NaN = no forecast)."""
    out = []
    for spec in sorted(specs):
        ar_fit = fit_model(spec, data, t) if spec.model_class is ModelClass.AR else None
        for step in range(1, max_step + 1):
            fitted = ar_fit if ar_fit is not None else fit_model(spec, data, t, step)
            out.append((spec, step, forecast(fitted, data, t, step)))
    return out


# ---------------------------------------------------------------- batched route


def forecast_paths(data: ModelData, spec: ModelSpec, max_step: int) -> np.ndarray:
    """Forecasts for every origin: element ``[t, s-1]`` predicts ``y[t + s]`` from rows <= t."""
    T = len(data)
    w = spec.window
    out = np.full((T, max_step), np.nan)
    if T < w:
        return out
    if spec.model_class is ModelClass.AR:
        Y = np.ascontiguousarray(sliding_window_view(data.y, w))
        alpha, phi, usable = _yule_walker_rows(Y, spec.lag)
        hist = Y[:, w - spec.lag :] if spec.lag else np.empty((len(Y), 0))
        paths = _iterate_ar(alpha, phi, hist, max_step)
        paths[~usable] = np.nan
        out[w - 1 :] = paths
        return out

    X = data.matrix(spec.regressors)
    Y = np.ascontiguousarray(sliding_window_view(data.y, w))
    for step in range(1, max_step + 1):
        lagged = np.column_stack([_lagged(X[:, j], step) for j in range(X.shape[1])])
        Xw = np.ascontiguousarray(np.moveaxis(sliding_window_view(lagged, w, axis=0), 2, 1))
        alpha, beta, usable = _ols_rows(Xw, Y)
        pred = alpha + (beta * X[w - 1 :]).sum(axis=1)
        pred[~usable] = np.nan
        out[w - 1 :, step - 1] = pred
    return out
