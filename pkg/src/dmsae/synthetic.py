"""Synthetic daily markets for tests and demos.

Each asset's daily log return is ``beta * vix_slope[t-1] + noise``, so the
slope-regression candidates carry real signal when ``beta`` is large. Curves
are linear in maturity with a slowly mean-reverting slope.

Run ``python -m dmsae.synthetic OUTDIR`` to write a CSV dataset plus a config.
"""
from __future__ import annotations

import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .ingest import align_inner, curve_features

VIX_MATURITIES = (0, 1, 2, 3, 4, 5, 6, 7)
YIELD_MATURITIES = (1, 3, 6, 12, 24, 36, 60, 84, 120, 240, 360)


def business_days(n: int, start: str = "2013-01-02") -> pd.DatetimeIndex:
    return pd.bdate_range(start, periods=n, name="date")


def ar1(rng: np.random.Generator, n: int, phi: float, sigma: float, mean: float = 0.0, burn: int = 200) -> np.ndarray:
    x = np.empty(n + burn)
    x[0] = 0.0
    eps = rng.normal(0.0, sigma, n + burn)
    for t in range(1, n + burn):
        x[t] = phi * x[t - 1] + eps[t]
    return mean + x[burn:]


def market(
    n: int,
    seed: int = 0,
    *,
    assets: Sequence[str] = ("SP500",),
    beta: float = 0.004,
    noise: float = 0.01,
    start: str = "2013-01-02",
) -> tuple[dict[str, pd.DataFrame], dict[str, pd.DataFrame]]:
    """Price frames per asset (``close`` column) and wide curve frames."""
    rng = np.random.default_rng(seed)
    dates = business_days(n, start)
    vix_slope = ar1(rng, n, 0.97, 0.1, 0.5)
    yield_slope = ar1(rng, n, 0.99, 0.0002, 0.006)
    vix_level = ar1(rng, n, 0.98, 0.6, 18.0)
    yield_level = ar1(rng, n, 0.995, 0.02, 1.0)

    vix = pd.DataFrame(
        {f"m{m}": vix_level + vix_slope * m + rng.normal(0, 0.05, n) for m in VIX_MATURITIES}, index=dates
    )
    yld = pd.DataFrame(
        {f"m{m}": yield_level + yield_slope * m + rng.normal(0, 0.01, n) for m in YIELD_MATURITIES}, index=dates
    )
    prices = {}
    signal = np.concatenate([[0.0], (vix_slope - 0.5)[:-1]])
    for i, name in enumerate(assets):
        r = beta * signal * (1 + 0.2 * i) + rng.normal(0.0003, noise, n)
        prices[name] = pd.DataFrame({"close": 100.0 * np.exp(np.cumsum(r))}, index=dates)
    return prices, {"vix": vix, "yield": yld}


def market_frame(n: int, seed: int = 0, **kwargs) -> pd.DataFrame:
    """Aligned frame ready for :func:`dmsae.models.model_data`."""
    prices, curves = market(n, seed, **kwargs)
    frames = [p.rename(columns={"close": a}) for a, p in prices.items()]
    frames += [curve_features(c, kind) for kind, c in curves.items()]
    return align_inner(frames)


def write_csv(frame: pd.DataFrame, path: Path) -> None:
    out = frame.copy()
    out.index = out.index.strftime("%Y-%m-%d")
    out.index.name = "date"
    out.to_csv(path, float_format="%.10g", lineterminator="\n")


DEMO_CONFIG = """\
[data]
forward_fill_curves = false

[assets]
{assets}

[curves]
vix = {root}/vix_curve.csv
yield = {root}/yield_curve.csv

[experiment]
horizons = 2
windows = 22, 44, 63
v = 40
v0 = 20
v1 = 20
families = single, multi
lambdas = 0.9, 1
powers = 1, 2
methods = dms, ae, fixed
validation_start = 2013-08-01
test_start = 2014-01-02
test_end = 2015-12-31
output_dir = {root}/out

[daa]
cap = uncapped
assets = SP500, NAS100, DJIA30
lookback = 63

[cas]
assets = SP500
vix_asset = VIX
kstar = 6k
"""


def write_demo(root: str | Path, n: int = 780, seed: int = 7) -> Path:
    """Write a four-asset dataset and a matching config under ``root``."""
    root = Path(root).resolve()
    root.mkdir(parents=True, exist_ok=True)
    names = ("SP500", "NAS100", "DJIA30", "VIX")
    prices, curves = market(n, seed, assets=names)
    lines = []
    for name, frame in prices.items():
        write_csv(frame, root / f"{name.lower()}.csv")
        lines.append(f"{name} = {root}/{name.lower()}.csv")
    for kind, frame in curves.items():
        write_csv(frame, root / f"{kind}_curve.csv")
    cfg = root / "experiment.ini"
    cfg.write_text(DEMO_CONFIG.format(assets="\n".join(lines), root=root))
    return cfg


if __name__ == "__main__":  # pragma: no cover
    target = sys.argv[1] if len(sys.argv) > 1 else "demo_data"
    print(write_demo(target))
