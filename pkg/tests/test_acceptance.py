"""Acceptance criteria, one test per criterion.

Every test appends a ``PASS``, ``FAIL`` or ``SKIP`` line to :data:`conftest.ACCEPTANCE_LINES`,
which is printed in the pytest terminal summary, before asserting.

Criterion 5 needs real market data: point ``DMSAE_REAL_CONFIG`` at an
experiment config over the real CSVs to enable it.
"""
from __future__ import annotations

import filecmp
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from dmsae.config import load_config
from dmsae.daa import quarter_schedule, run_daa
from dmsae.ingest import align_inner, curve_features
from dmsae.losses import ForecastStore, LossConfig, multi_valued_loss, single_valued_loss
from dmsae.models import ModelClass, ModelData, ModelSpec, enumerate_specs, fit_ar_yule_walker, fit_ols, model_data
from dmsae.runner import RunManifest, run_experiment
from dmsae.selection import burn_in, compute_paths, walk_forward
from dmsae.strategy import cas_weights, forecast_strategy, holding_weight, max_drawdown, metrics, pnl, weight_series
from dmsae.synthetic import market, market_frame, write_csv

REL_TOL = 1e-10


def report(criterion: int, ok: bool | None, detail: str) -> None:
    status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
    line = f"{status} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


# ------------------------------------------------------------ 1: formula oracles


def _nan_to_none(x: float):
    return None if math.isnan(x) else float(x)


def _random_store(rng: np.random.Generator, k: int):
    T = int(rng.integers(k + 4, 40))
    y = rng.normal(0, 0.01, T)
    y[rng.random(T) < 0.1] = np.nan
    spec = ModelSpec(ModelClass.AR, 22)
    store = ForecastStore([spec], pd.bdate_range("2020-01-01", periods=T), k, y)
    table = {}
    for origin in range(T):
        for step in range(1, k + 1):
            if rng.random() < 0.85:
                value = float(rng.normal(0, 0.01))
                store.append(spec, origin, step, value)
                table[(origin, step)] = value
    return store, spec, [_nan_to_none(v) for v in y], table, T


def _compare(a: float, b) -> float:
    if b is None:
        return 0.0 if math.isnan(a) else math.inf
    return oracles.rel_err(a, b)


def test_criterion_1_formula_oracles():
    rng = np.random.default_rng(2024)
    n = 1000
    worst = {}
    t0 = time.perf_counter()

    for name, family, fn, ref in (
        ("single loss", "single", single_valued_loss, oracles.single_loss),
        ("multi loss", "multi", multi_valued_loss, oracles.multi_loss),
    ):
        err = 0.0
        for _ in range(n):
            k = int(rng.integers(1, 4))
            store, spec, y, table, T = _random_store(rng, k)
            t = int(rng.integers(0, T))
            v = int(rng.integers(1, T + 1))
            lam, p = float(rng.uniform(0.5, 1.0)), float(rng.uniform(0.5, 3.0))
            cfg = LossConfig(family, lam, p, v=v, k=k)
            err = max(err, _compare(fn(store, spec, t, cfg), ref(table, y, t, v, lam, p, k)))
        worst[name] = err

    err = 0.0
    for _ in range(n):
        k = int(rng.integers(1, 7))
        signals = list(rng.choice([-1.0, 0.0, 1.0, math.nan], size=k) * rng.uniform(0.1, 2.0, size=k))
        err = max(err, oracles.rel_err(holding_weight(signals), oracles.holding_weight(signals)))
    worst["holding weight"] = err

    err = 0.0
    for _ in range(n):
        k = int(rng.integers(1, 7))
        kstar = int(rng.choice([3, 6])) * k
        signals = list(rng.normal(size=k))
        got, ref = cas_weights(signals, kstar), oracles.cas_weights(signals, kstar)
        err = max(err, oracles.rel_err(got[0], ref[0]), oracles.rel_err(got[1], ref[1]))
    worst["cas weights"] = err

    errs = {"pnl": 0.0, "anr": 0.0, "sr": 0.0, "mdd": 0.0}
    for _ in range(n):
        m = int(rng.integers(3, 80))
        w, wv = rng.uniform(0, 1, m), rng.uniform(0, 0.5, m)
        prices = 100 * np.exp(np.cumsum(rng.normal(0, 0.01, m)))
        vix = 20 * np.exp(np.cumsum(rng.normal(0, 0.05, m)))
        hedge = rng.random() < 0.5
        got = pnl(w, prices, wv if hedge else None, vix if hedge else None)
        ref = oracles.pnl(list(w), list(prices), list(wv) if hedge else None, list(vix) if hedge else None)
        errs["pnl"] = max(errs["pnl"], *(oracles.rel_err(a, b) for a, b in zip(got[1:], ref[1:])))
        values = list(got[1:])
        mt = metrics(np.array(values))
        errs["anr"] = max(errs["anr"], oracles.rel_err(mt.anr, oracles.anr(values)))
        errs["sr"] = max(errs["sr"], oracles.rel_err(mt.sr, oracles.sharpe(values)))
        errs["mdd"] = max(
            errs["mdd"],
            oracles.rel_err(mt.mdd, oracles.max_drawdown(values)),
            oracles.rel_err(max_drawdown(np.array(values), "literal"), oracles.max_drawdown_literal(values)),
        )
    worst.update(errs)

    elapsed = time.perf_counter() - t0
    ok = all(e <= REL_TOL for e in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(1, ok, f"{n} instances each, max rel err [{detail}] (tol {REL_TOL:g}), {elapsed:.1f}s (limit 60s)")
    assert ok


# ------------------------------------------------------------ 2: exact reductions


def test_criterion_2_exact_reductions():
    frame = market_frame(200, seed=8, beta=0.02)
    checks = []

    for k in (1, 3):
        data = model_data(frame, "SP500", k)
        specs = enumerate_specs("SP500", k, windows=(22, 44), lags=(0, 1, 2), curves=("vix", "yield"))
        paths = compute_paths(data, specs, k)
        start = burn_in(specs, 41, k)
        ae = walk_forward(data, specs, LossConfig("multi", 0.95, 1.5, v=41, k=k), "ae", start, 199, v0=1, v1=40, paths=paths)
        dms = walk_forward(data, specs, LossConfig("multi", 0.95, 1.5, v=40, k=k), "dms", start, 199, paths=paths)
        checks.append(np.array_equal(ae.forecasts, dms.forecasts, equal_nan=True))

    rng = np.random.default_rng(7)
    multi_ok = True
    for _ in range(200):
        store, spec, _, _, T = _random_store(rng, 1)
        t, v = int(rng.integers(0, T)), int(rng.integers(1, T + 1))
        lam, p = float(rng.uniform(0.5, 1)), float(rng.uniform(0.5, 3))
        a = single_valued_loss(store, spec, t, LossConfig("single", lam, p, v=v, k=1))
        b = multi_valued_loss(store, spec, t, LossConfig("multi", lam, p, v=v, k=1))
        multi_ok &= (a == b) or (math.isnan(a) and math.isnan(b))
    checks.append(multi_ok)

    dates = pd.bdate_range("2019-01-01", "2020-12-31")
    prices = pd.Series(100 * np.exp(np.cumsum(rng.normal(0.0003, 0.01, len(dates)))), index=dates, name="A")
    recs = [
        forecast_strategy(f"s{i}", rng.normal(size=len(dates)), prices, 1 + i % 3, 1, len(dates) - 1)
        for i in range(9)
    ]
    sched = quarter_schedule(dates, 300, len(dates) - 1, history_start=1, lookback=120)
    kw = dict(dates=dates, asset_prices={"A": prices}, lookback=120, k_select=3)
    capped, uncapped = run_daa(recs, sched, "capped", **kw), run_daa(recs, sched, "uncapped", **kw)
    checks.append(capped.composite.frame.equals(uncapped.composite.frame))
    checks.append([p.selected for p in capped.plans] == [p.selected for p in uncapped.plans])

    ok = all(checks)
    report(
        2, ok,
        f"AE(v0=1) == DMS(v1) k=1 {checks[0]}, k=3 {checks[1]}; multi(k=1) == single {checks[2]}; "
        f"DAA capped == uncapped for one asset {checks[3] and checks[4]}",
    )
    assert ok


# ------------------------------------------------------------ 3: no look-ahead


def _frame_from_raw(prices, curves, last: pd.Timestamp) -> pd.DataFrame:
    frames = [p.loc[:last].rename(columns={"close": a}) for a, p in prices.items()]
    frames += [curve_features(c.loc[:last], kind) for kind, c in curves.items()]
    return align_inner(frames)


def _pipeline(frame: pd.DataFrame):
    """Forecasts, weights and a DAA run over two assets, two horizons and both methods."""
    n = len(frame)
    forecasts, weights, records = {}, {}, []
    for asset in ("SP500", "NAS100"):
        for k in (1, 2):
            data = model_data(frame, asset, k)
            specs = enumerate_specs(asset, k, windows=(22, 44), lags=(0, 1), curves=("vix",))
            paths = compute_paths(data, specs, k)
            cfg = LossConfig("single", 0.95, 2.0, v=40, k=k)
            start = burn_in(specs, 40, 2)
            for method in ("dms", "ae"):
                wf = walk_forward(data, specs, cfg, method, start, n - 1, v0=20, v1=20, paths=paths)
                key = f"{asset}_k{k}_{method}"
                forecasts[key] = wf.forecasts
                weights[key] = weight_series(wf.forecasts, k)[0]
                records.append(forecast_strategy(key, wf.forecasts, frame[asset], k, start, n - 1, method=method))
    start = burn_in([ModelSpec(ModelClass.AR, 44)], 40, 2)
    sched = quarter_schedule(frame.index, start + 63, n - 1, history_start=start, lookback=63)
    prices = {a: frame[a] for a in ("SP500", "NAS100")}
    daa = run_daa(records, sched, "capped", dates=frame.index, asset_prices=prices, lookback=63) if sched else None
    return forecasts, weights, daa


def test_criterion_3_no_look_ahead():
    prices, curves = market(460, seed=17, assets=("SP500", "NAS100"), beta=0.01)
    full_frame = _frame_from_raw(prices, curves, prices["SP500"].index[-1])
    full_f, full_w, full_daa = _pipeline(full_frame)
    rng = np.random.default_rng(99)
    cuts = sorted(int(t) for t in rng.choice(np.arange(200, len(full_frame) - 1), size=10, replace=False))
    failures, plans_checked = [], 0
    for t in cuts:
        last = full_frame.index[t]
        frame = _frame_from_raw(prices, curves, last)
        f, w, daa = _pipeline(frame)
        for key in full_f:
            if not np.array_equal(f[key], full_f[key][: t + 1], equal_nan=True):
                failures.append(f"forecast {key} @ {t}")
            if not np.array_equal(w[key], full_w[key][: t + 1], equal_nan=True):
                failures.append(f"weight {key} @ {t}")
        early = [p for p in full_daa.plans if p.row < t]
        got = [p for p in daa.plans if p.row < t] if daa else []
        plans_checked += len(early)
        if [(p.row, p.selected, p.benchmark_assets) for p in got] != [(p.row, p.selected, p.benchmark_assets) for p in early]:
            failures.append(f"DAA plans @ {t}")
        if daa is not None:
            mine = daa.composite.frame.loc[:last]
            ref = full_daa.composite.frame.loc[mine.index[0] : last]
            if not mine[["weight", "weight_vix"]].equals(ref[["weight", "weight_vix"]]):
                failures.append(f"DAA weights @ {t}")
    ok = not failures
    report(
        3, ok,
        f"{len(cuts)} truncation points, forecasts/weights/DAA selections dated <= t identical "
        f"({plans_checked} quarterly plans compared){'' if ok else '; mismatches: ' + ', '.join(failures[:5])}",
    )
    assert ok


# ------------------------------------------------------------ 4: regime switch


def test_criterion_4_regime_switch():
    n, brk, seeds = 560, 480, 20
    specs = enumerate_specs("X", 1, lags=(0, 1, 2, 3, 4, 5), classes=(ModelClass.AR,))
    cfg = LossConfig("single", 0.95, 2.0, v=100, k=1)
    t0 = time.perf_counter()
    wins = 0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        y = rng.normal(0.0, 0.01, n)
        y[brk:] += 0.01
        y[0] = np.nan
        data = ModelData(pd.bdate_range("2015-01-01", periods=n), y, {}, "X", 1)
        wf = walk_forward(data, specs, cfg, "dms", brk - 30, brk + 29)
        chose_short = [tr.chosen.window == 22 for tr in wf.traces]
        wins += sum(chose_short[30:]) > sum(chose_short[:30])
    elapsed = time.perf_counter() - t0
    ok = wins >= 16 and elapsed < 300
    report(4, ok, f"w=22 chosen more often after the break in {wins}/{seeds} seeds (need >= 16), {elapsed:.1f}s (limit 300s)")
    assert ok


# ------------------------------------------------------------ 5: real-data reproduction

TARGETS = {"sr": 0.558, "mdd": -0.2340, "anr": 0.0992}


def test_criterion_5_real_data(tmp_path):
    path = os.environ.get("DMSAE_REAL_CONFIG")
    if not path or not Path(path).exists():
        report(5, None, "set DMSAE_REAL_CONFIG to a config over the real index CSVs to run")
        pytest.skip("real market data not available")
    cfg = load_config(path).with_overrides(output_dir=tmp_path / "real")
    run_experiment(cfg)
    summary = json.loads((cfg.output_dir / "summary.json").read_text())
    ex = summary["ex_post"]
    ada, fix, bench = (ex[key]["portfolio"] for key in ("adaptive", "fixed", "benchmark"))
    orderings = {
        "ANR adaptive > benchmark > fixed": ada["anr"] > bench["anr"] > fix["anr"],
        "benchmark MDD shallowest": bench["mdd"] > max(ada["mdd"], fix["mdd"]),
    }
    for asset, block in summary.get("cas", {}).items():
        if "cas_6k" in block:
            orderings[f"CAS 6k best SR for {asset}"] = all(block["cas_6k"]["sr"] >= v["sr"] for v in block.values())
    within = {m: abs(ada[m] - target) <= 0.2 * abs(target) for m, target in TARGETS.items()}
    detail = "; ".join(f"{k} {v}" for k, v in orderings.items())
    detail += "; " + ", ".join(f"{m} {ada[m]:.4f} vs {TARGETS[m]:.4f} ({'ok' if within[m] else 'off'})" for m in TARGETS)
    ok = all(orderings.values())
    report(5, ok, f"(soft) {detail}")
    assert ok


# ------------------------------------------------------------ 6: determinism

CONFIG = """\
[assets]
SP500 = {root}/sp500.csv
NAS100 = {root}/nas100.csv

[curves]
vix = {root}/vix_curve.csv

[experiment]
horizons = 2
windows = 22, 44
v = 40
v0 = 20
v1 = 20
lambdas = 0.95
powers = 2
methods = dms, ae, fixed
validation_start = 2013-05-15
test_start = 2013-09-03
output_dir = {out}

[daa]
cap = both
lookback = 40
"""


def test_criterion_6_determinism(tmp_path):
    prices, curves = market(320, seed=5, assets=("SP500", "NAS100"))
    for name, frame in prices.items():
        write_csv(frame, tmp_path / f"{name.lower()}.csv")
    write_csv(curves["vix"], tmp_path / "vix_curve.csv")
    manifests = []
    for run in ("a", "b"):
        path = tmp_path / f"{run}.ini"
        path.write_text(CONFIG.format(root=tmp_path, out=tmp_path / run))
        run_experiment(load_config(path))
        manifests.append(tmp_path / run / "manifest.json")
    a, b = (RunManifest.read(m) for m in manifests)
    files = [o["path"] for o in a.outputs]
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", files, shallow=False)
    same_manifest = manifests[0].read_bytes() == manifests[1].read_bytes()
    ok = not mismatch and not errors and same_manifest and files == [o["path"] for o in b.outputs]
    report(6, ok, f"{len(files)} exported files byte-identical across two runs; manifests identical {same_manifest}")
    assert ok


# ------------------------------------------------------------ 7: estimator checks


def test_criterion_7_estimators():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = np.zeros(252 + 200)
        eps = rng.normal(0, 1, len(x))
        for t in range(1, len(x)):
            x[t] = 0.8 * x[t - 1] + eps[t]
        fit = fit_ar_yule_walker(x[200:], 1)
        hits += abs(fit.coefficients[0] - 0.8) <= 0.15

    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        n, q = int(rng.integers(20, 300)), int(rng.integers(1, 4))
        X = rng.normal(0, 1, (n, q)) * rng.uniform(0.01, 10, q) + rng.normal(0, 5, q)
        y = X @ rng.normal(size=q) + rng.normal(0, 1, n)
        fit = fit_ols(X, y)
        resid = y - fit.intercept - X @ np.array(fit.coefficients)
        Z = np.column_stack([np.ones(n), X])
        scale = np.linalg.norm(Z, axis=0) * np.linalg.norm(y)
        worst = max(worst, float(np.max(np.abs(Z.T @ resid) / scale)))
    ok = hits >= 90 and worst <= 1e-8
    report(7, ok, f"Yule-Walker AR(1) phi=0.8, w=252 within 0.15 on {hits}/100 seeds (need >= 90); "
                  f"OLS max |X'e| / (|X||y|) = {worst:.1e} (tol 1e-8)")
    assert ok
