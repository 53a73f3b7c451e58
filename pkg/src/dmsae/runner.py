"""End-to-end experiment pipeline.

Stages, in order:

1. load and align the CSV inputs;
2. per (asset, horizon k): rolling forecasts for every candidate, then one
   DMS/AE walk-forward per loss configuration, each turned into a long-only
   strategy over validation + testing;
3. ex-post regime: the configuration (and the fixed spec) with the best
   validation Sharpe ratio per (asset, k) is frozen for testing;
4. ex-ante regime: quarterly DAA over all adaptive strategies;
5. cross-asset strategies hedging equity assets with VIX.

Everything is written under ``output_dir`` together with ``manifest.json``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from . import reports
from .config import KSTAR_CHOICES, ExperimentConfig
from .daa import DaaResult, quarter_schedule, run_daa
from .errors import ConfigError, DmsaeError
from .ingest import build_frame
from .losses import LossConfig
from .models import ModelSpec, available_curves, enumerate_specs, model_data
from .selection import burn_in, compute_paths, walk_forward
from .strategy import (
    StrategyRecord,
    average_records,
    benchmark_strategy,
    forecast_strategy,
)

logger = logging.getLogger(__name__)

STAGES = ("backtest", "daa", "cas")


class StageError(DmsaeError):
    """Wraps a failure with the pipeline stage (and date) it happened in."""

    def __init__(self, stage: str, cause: Exception, when: str | None = None):
        self.stage, self.cause, self.when = stage, cause, when
        self.exit_code = getattr(cause, "exit_code", 4)
        where = f" at {when}" if when else ""
        super().__init__(f"stage {stage}{where}: {cause}")


@dataclass(frozen=True)
class Variant:
    """One adaptive configuration: selection method plus loss settings."""

    method: str
    loss: LossConfig

    @property
    def label(self) -> str:
        return f"{self.method}_{self.loss.label}"

    @property
    def key(self) -> tuple:
        return (self.loss.family, self.loss.lam, self.loss.p, self.method)


@dataclass
class Choice:
    key: object
    sr: float
    fallback: bool = False


@dataclass
class TargetResult:
    asset: str
    k: int
    specs: list[ModelSpec]
    forecasts: dict[Variant, np.ndarray] = field(repr=False)
    adaptive: dict[Variant, StrategyRecord] = field(repr=False)
    fixed: dict[ModelSpec, StrategyRecord] = field(repr=False)


@dataclass
class RunManifest:
    config_hash: str
    data_digests: dict[str, str]
    first_tradable_date: str
    validation_start: str
    test_start: str
    test_end: str
    outputs: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        try:
            return cls(**json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"{path}: not a run manifest ({exc})") from None


@dataclass(frozen=True)
class Rows:
    burn_in: int
    validation_start: int
    test_start: int
    test_end: int


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_rows(dates: pd.DatetimeIndex, cfg: ExperimentConfig) -> Rows:
    """Row positions of the validation/testing boundaries, checked against burn-in."""
    first = max(cfg.windows) + cfg.v + cfg.horizons
    if first >= len(dates):
        raise ConfigError(f"{len(dates)} rows cannot cover a burn-in of {first} rows")

    def at_or_after(value: str | None, default: int) -> int:
        if value is None:
            return default
        pos = int(dates.searchsorted(pd.Timestamp(value), side="left"))
        if pos >= len(dates):
            raise ConfigError(f"date {value} is after the last observation {dates[-1].date()}")
        return pos

    val = at_or_after(cfg.validation_start, first)
    if val < first:
        raise ConfigError(
            f"validation_start {dates[val].date()} is inside the burn-in; first tradable date is {dates[first].date()}"
        )
    test = at_or_after(cfg.test_start, min(val + 252, len(dates) - 1))
    if cfg.test_end is None:
        end = len(dates) - 1
    else:
        end = int(dates.searchsorted(pd.Timestamp(cfg.test_end), side="right")) - 1
    if not val + 2 <= test < end:
        raise ConfigError("need validation_start < test_start < test_end with at least two validation days")
    return Rows(first, val, test, end)


def validate_select(
    candidates: Sequence[tuple[object, StrategyRecord]],
    start,
    end,
    *,
    default=None,
) -> Choice:
    """Candidate with the highest validation Sharpe ratio; ties keep grid order.

    When no candidate has a defined ratio the ``default`` key (or the first
    candidate) is returned with ``fallback=True``.
    """
    if not candidates:
        raise ConfigError("nothing to validate")
    best = None
    for key, record in candidates:
        sr = record.window(start, end).metrics().sr
        if math.isfinite(sr) and (best is None or sr > best.sr):
            best = Choice(key, sr)
    if best is None:
        keys = [k for k, _ in candidates]
        return Choice(default if default in keys else keys[0], math.nan, True)
    return best


def _default_key(methods: Sequence[str]) -> tuple:
    return ("single", 1.0, 2.0, methods[0])


# ------------------------------------------------------------------- backtest


def backtest_target(
    frame: pd.DataFrame,
    asset: str,
    k: int,
    cfg: ExperimentConfig,
    rows: Rows,
    *,
    methods: Sequence[str],
) -> TargetResult:
    """All adaptive and fixed strategies for one (asset, horizon)."""
    data = model_data(frame, asset, k)
    specs = enumerate_specs(
        asset, k, windows=cfg.windows, lags=cfg.lags, curves=available_curves(data), classes=cfg.classes
    )
    paths = compute_paths(data, specs, k)
    prices = frame[asset]
    start, end = rows.validation_start, rows.test_end
    result = TargetResult(asset, k, specs, {}, {}, {})
    for loss in cfg.loss_configs(k):
        for method in methods:
            if method == "fixed":
                continue
            variant = Variant(method, loss)
            wf = walk_forward(data, specs, loss, method, start, end, v0=cfg.v0, v1=cfg.v1, paths=paths)
            sid = f"{asset}_k{k}_{variant.label}"
            result.forecasts[variant] = wf.forecasts
            result.adaptive[variant] = forecast_strategy(sid, wf.forecasts, prices, k, start, end, method=method, loss=loss.label)
    if "fixed" in methods:
        for spec in specs:
            f = paths[spec][:, k - 1].copy()
            f[:start] = np.nan
            sid = f"{asset}_k{k}_fixed_{spec.spec_id}"
            result.fixed[spec] = forecast_strategy(sid, f, prices, k, start, end, method="fixed", loss=spec.spec_id)
    logger.info("%s k=%d: %d adaptive, %d fixed strategies", asset, k, len(result.adaptive), len(result.fixed))
    return result


class Experiment:
    """Holds intermediate results of one run and writes its exports."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.written: list[Path] = []
        self.summary: dict = {}
        self.frame: pd.DataFrame | None = None
        self.rows: Rows | None = None
        self.targets: dict[tuple[str, int], TargetResult] = {}

    # ----------------------------------------------------------- plumbing
    def _record(self, path: Path) -> None:
        self.written.append(Path(path))

    def write_strategy(self, record: StrategyRecord, name: str) -> None:
        base = self.out / "strategies" / name
        base.parent.mkdir(parents=True, exist_ok=True)
        record.to_csv(base.with_suffix(".csv"))
        record.metrics_json(base.with_suffix(".json"), mdd_mode=self.cfg.mdd_mode)
        self._record(base.with_suffix(".csv"))
        self._record(base.with_suffix(".json"))

    def _metrics(self, record: StrategyRecord) -> dict:
        return record.metrics(mdd_mode=self.cfg.mdd_mode).to_dict()

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.frame.index

    def date(self, row: int) -> pd.Timestamp:
        return self.dates[row]

    # ------------------------------------------------------------- stages
    def load(self) -> None:
        cfg = self.cfg
        self.frame = build_frame(cfg.assets, cfg.curves, forward_fill_curves=cfg.forward_fill_curves)
        self.rows = resolve_rows(self.dates, cfg)
        logger.info(
            "burn-in %d rows; first tradable %s; validation from %s; testing %s..%s",
            self.rows.burn_in,
            self.date(self.rows.burn_in).date(),
            self.date(self.rows.validation_start).date(),
            self.date(self.rows.test_start).date(),
            self.date(self.rows.test_end).date(),
        )

    def backtest(self, assets: Sequence[str], methods: Sequence[str]) -> None:
        for asset in assets:
            for k in range(1, self.cfg.horizons + 1):
                try:
                    self.targets[(asset, k)] = backtest_target(self.frame, asset, k, self.cfg, self.rows, methods=methods)
                except DmsaeError as exc:
                    raise StageError("backtest", exc, f"{asset} k={k}") from exc

    def ex_post(self, assets: Sequence[str], methods: Sequence[str]) -> None:
        """Validation-selected strategies, their traces and the portfolio table."""
        r = self.rows
        val = (self.date(r.validation_start), self.date(r.test_start - 1))
        test = (self.date(r.test_start), self.date(r.test_end))
        adaptive_methods = [m for m in methods if m != "fixed"]
        choice_rows, metric_rows = [], []
        chosen_adaptive, chosen_fixed = {}, {}
        for (asset, k), target in self.targets.items():
            if asset not in assets:
                continue
            for rec in [*target.adaptive.values(), *target.fixed.values()]:
                for name, (lo, hi) in (("validation", val), ("testing", test)):
                    m = rec.window(lo, hi).metrics(mdd_mode=self.cfg.mdd_mode)
                    metric_rows.append(
                        {"strategy_id": rec.strategy_id, "asset": asset, "k": k, "method": rec.method, "loss": rec.loss,
                         "window": name, "sr": m.sr, "anr": m.anr, "mdd": m.mdd, "n_days": m.n_days}
                    )
            if target.adaptive:
                cands = [(v.key, rec) for v, rec in target.adaptive.items()]
                choice = validate_select(cands, *val, default=_default_key(adaptive_methods))
                variant = next(v for v in target.adaptive if v.key == choice.key)
                chosen_adaptive[(asset, k)] = target.adaptive[variant].window(*test)
                choice_rows.append(
                    {"asset": asset, "k": k, "kind": "adaptive", "method": variant.method, "family": variant.loss.family,
                     "lam": variant.loss.lam, "p": variant.loss.p, "spec": "", "validation_sr": choice.sr,
                     "fallback": int(choice.fallback)}
                )
                # traces: the validation-best configuration of each adaptive method
                for method in adaptive_methods:
                    own = [(v.key, rec) for v, rec in target.adaptive.items() if v.method == method]
                    pick = validate_select(own, *val, default=_default_key([method]))
                    self._write_traces(asset, k, target, next(v for v in target.adaptive if v.key == pick.key))
            if target.fixed:
                cands = [(s, rec) for s, rec in target.fixed.items()]
                choice = validate_select(cands, *val)
                chosen_fixed[(asset, k)] = target.fixed[choice.key].window(*test)
                choice_rows.append(
                    {"asset": asset, "k": k, "kind": "fixed", "method": "fixed", "family": "", "lam": "", "p": "",
                     "spec": choice.key.spec_id, "validation_sr": choice.sr, "fallback": int(choice.fallback)}
                )
        self._record(reports.write_csv(pd.DataFrame(metric_rows), self.out / "strategy_metrics.csv"))
        self._record(reports.write_csv(pd.DataFrame(choice_rows), self.out / "validation_choices.csv"))

        table = {}
        prices = {a: self.frame[a] for a in assets}
        bench = benchmark_strategy("constant_half_equal", prices, *test, strategy_id="benchmark")
        for label, chosen in (("adaptive", chosen_adaptive), ("fixed", chosen_fixed)):
            if not chosen:
                continue
            per_asset = {}
            for asset in assets:
                recs = [rec for (a, _), rec in sorted(chosen.items(), key=lambda kv: kv[0][1]) if a == asset]
                if recs:
                    blend = average_records(recs, f"{label}_{asset}")
                    self.write_strategy(blend, f"{label}_{asset}")
                    per_asset[asset] = self._metrics(blend)
            portfolio = average_records(list(chosen.values()), f"{label}_portfolio")
            self.write_strategy(portfolio, f"{label}_portfolio")
            table[label] = {"portfolio": self._metrics(portfolio), "assets": per_asset}
        self.write_strategy(bench, "benchmark")
        table["benchmark"] = {
            "portfolio": self._metrics(bench),
            "assets": {
                a: self._metrics(benchmark_strategy("constant_half_equal", {a: self.frame[a]}, *test)) for a in assets
            },
        }
        self.summary["ex_post"] = table

    def _write_traces(self, asset: str, k: int, target: TargetResult, variant: Variant) -> None:
        data = model_data(self.frame, asset, k)
        wf = walk_forward(
            data, target.specs, variant.loss, variant.method, self.rows.validation_start, self.rows.test_end,
            v0=self.cfg.v0, v1=self.cfg.v1,
        )
        stem = self.out / "traces" / f"{asset}_k{k}_{variant.method}"
        self._record(reports.write_csv(reports.trace_table(wf.traces), stem.with_name(stem.name + ".csv")))
        self._record(reports.write_csv(reports.group_weights(wf.traces), stem.with_name(stem.name + "_groups.csv")))
        if self.cfg.dump_losses:
            ids = [s.spec_id for s in wf.store.specs]
            self._record(reports.write_csv(reports.loss_dump(wf.traces, ids), stem.with_name(stem.name + "_losses.csv")))

    def _schedule(self) -> list[int]:
        r = self.rows
        schedule = quarter_schedule(
            self.dates, r.test_start, r.test_end, history_start=r.validation_start + 1, lookback=self.cfg.daa_lookback
        )
        if not schedule:
            raise ConfigError("no quarter-end inside the testing range has enough strategy history for DAA")
        return schedule

    def daa(self, assets: Sequence[str], caps: Sequence[str]) -> None:
        records = [rec for (a, _), t in self.targets.items() if a in assets for rec in t.adaptive.values()]
        if not records:
            raise ConfigError("DAA needs adaptive (dms/ae) strategies")
        schedule = self._schedule()
        prices = {a: self.frame[a] for a in assets}
        block = {}
        for cap in caps:
            res = run_daa(
                records, schedule, cap, dates=self.dates, asset_prices=prices, end=self.rows.test_end,
                k_select=self.cfg.horizons, lookback=self.cfg.daa_lookback,
            )
            self._write_daa(res, cap)
            block[cap] = self._metrics(res.composite)
            first = res.composite.frame.index[0]
        bench = benchmark_strategy("constant_half_equal", prices, first, self.date(self.rows.test_end))
        self.write_strategy(bench, "daa_benchmark")
        block["benchmark"] = self._metrics(bench)
        self.summary["daa"] = block

    def _write_daa(self, res: DaaResult, name: str) -> None:
        self._record(reports.write_csv(res.allocation_table(), self.out / "daa" / f"{name}_allocation.csv"))
        res.composite.to_csv(self.out / "daa" / f"{name}_composite.csv")
        res.composite.metrics_json(self.out / "daa" / f"{name}_composite.json", mdd_mode=self.cfg.mdd_mode)
        self._record(self.out / "daa" / f"{name}_composite.csv")
        self._record(self.out / "daa" / f"{name}_composite.json")
        aw = res.composite.asset_weights.copy()
        aw.index = aw.index.strftime("%Y-%m-%d")
        aw.index.name = "date"
        self._record(reports.write_csv(aw, self.out / "daa" / f"{name}_asset_weights.csv", index=True))

    def cas(self, assets: Sequence[str], kstars: Sequence[str]) -> None:
        cfg = self.cfg
        if cfg.vix_asset is None:
            raise ConfigError("cross-asset strategies need [cas] vix_asset")
        vix = self.frame[cfg.vix_asset]
        schedule = self._schedule()
        start, end = self.rows.validation_start, self.rows.test_end
        block = {}
        for asset in assets:
            targets = [self.targets[(asset, k)] for k in range(1, cfg.horizons + 1)]
            prices = {asset: self.frame[asset]}
            out = {}
            plain = [rec for t in targets for rec in t.adaptive.values()]
            if not plain:
                raise ConfigError("cross-asset strategies need adaptive (dms/ae) forecasts")
            common = dict(dates=self.dates, asset_prices=prices, end=end, k_select=cfg.horizons, lookback=cfg.daa_lookback)
            for ks in kstars:
                recs = [
                    forecast_strategy(
                        f"{asset}_k{t.k}_{v.label}_cas{ks}", f, self.frame[asset], t.k, start, end,
                        method=v.method, loss=v.loss.label, vix_prices=vix, kstar=KSTAR_CHOICES[ks] * t.k,
                    )
                    for t in targets
                    for v, f in t.forecasts.items()
                ]
                res = run_daa(recs, schedule, "uncapped", strategy_id=f"cas_{asset}_{ks}", **common)
                self._write_daa(res, f"cas_{asset}_{ks}")
                out[f"cas_{ks}"] = self._metrics(res.composite)
                first = res.composite.frame.index[0]
            res = run_daa(plain, schedule, "uncapped", strategy_id=f"daa_{asset}", **common)
            self._write_daa(res, f"daa_no_vix_{asset}")
            out["daa_no_vix"] = self._metrics(res.composite)
            first = res.composite.frame.index[0]
            last = self.date(end)
            long_only = benchmark_strategy("constant_half_equal", prices, first, last)
            hedged = benchmark_strategy("always_hedged", prices, first, last, vix_prices=vix)
            self.write_strategy(long_only, f"cas_{asset}_benchmark_long_only")
            self.write_strategy(hedged, f"cas_{asset}_benchmark_always_hedged")
            out["benchmark_long_only"] = self._metrics(long_only)
            out["benchmark_always_hedged"] = self._metrics(hedged)
            block[asset] = out
        self.summary["cas"] = block

    def finish(self) -> RunManifest:
        cfg, r = self.cfg, self.rows
        self._record(reports.write_json(reports.clean(self.summary), self.out / "summary.json"))
        digests = {name: sha256_file(path) for name, path in {**cfg.assets, **{f"curve:{k}": p for k, p in cfg.curves.items()}}.items()}
        outputs = sorted(
            ({"path": p.relative_to(self.out).as_posix(), "sha256": sha256_file(p)} for p in set(self.written)),
            key=lambda d: d["path"],
        )
        manifest = RunManifest(
            cfg.digest(),
            digests,
            self.date(r.burn_in).strftime("%Y-%m-%d"),
            self.date(r.validation_start).strftime("%Y-%m-%d"),
            self.date(r.test_start).strftime("%Y-%m-%d"),
            self.date(r.test_end).strftime("%Y-%m-%d"),
            outputs,
        )
        (self.out / "manifest.json").write_text(manifest.to_json())
        return manifest


def run_experiment(
    cfg: ExperimentConfig,
    *,
    stages: Iterable[str] = STAGES,
    methods: Sequence[str] | None = None,
    assets: Sequence[str] | None = None,
    caps: Sequence[str] | None = None,
    kstars: Sequence[str] | None = None,
) -> RunManifest:
    """Run the configured pipeline and write every export plus ``manifest.json``.

    Args:
        cfg: Parsed configuration.
        stages: Subset of ``("backtest", "daa", "cas")``; backtesting always runs.
        methods: Override of ``cfg.methods``.
        assets: Restrict the backtest to these assets (default: every asset
            the requested stages need).
        caps: Override of the DAA cap modes.
        kstars: Override of the CAS hedge ratios.
    """
    stages = set(stages) | {"backtest"}
    unknown = stages - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown stages {sorted(unknown)}")
    methods = tuple(methods or cfg.methods)
    adaptive = [m for m in methods if m != "fixed"]
    daa_assets = list(cfg.daa_assets or cfg.assets)
    cas_assets = list(cfg.cas_assets)
    if assets is None:
        needed = list(cfg.assets)
    else:
        needed = list(assets)
        cas_assets = [a for a in cas_assets if a in needed] or needed
        daa_assets = [a for a in daa_assets if a in needed] or needed
    for a in needed:
        if a not in cfg.assets:
            raise ConfigError(f"unknown asset {a!r}")
    if ("daa" in stages or "cas" in stages) and not adaptive:
        raise ConfigError("DAA and cross-asset stages need dms and/or ae among the methods")

    exp = Experiment(cfg)
    exp.out.mkdir(parents=True, exist_ok=True)
    try:
        exp.load()
    except DmsaeError as exc:
        raise StageError("ingest", exc) from exc
    exp.backtest(needed, methods)
    try:
        exp.ex_post(needed, methods)
    except DmsaeError as exc:
        raise StageError("validation", exc) from exc
    if "daa" in stages:
        try:
            exp.daa([a for a in daa_assets if a in needed], caps or cfg.caps())
        except DmsaeError as exc:
            raise StageError("daa", exc) from exc
    if "cas" in stages and cas_assets:
        try:
            exp.cas(cas_assets, kstars or cfg.kstar)
        except DmsaeError as exc:
            raise StageError("cas", exc) from exc
    return exp.finish()


def report(manifest_path: str | Path, fmt: str = "json") -> str:
    """Collect every metrics JSON listed in a manifest into one CSV or JSON document."""
    manifest_path = Path(manifest_path)
    manifest = RunManifest.read(manifest_path)
    root = manifest_path.parent
    rows = []
    for entry in manifest.outputs:
        path = entry["path"]
        if not path.endswith(".json") or path == "summary.json":
            continue
        full = root / path
        if sha256_file(full) != entry["sha256"]:
            raise ConfigError(f"{path}: content differs from the manifest digest")
        rows.append({"strategy": path[: -len(".json")], **json.loads(full.read_text())})
    if fmt == "json":
        payload = {"manifest": {k: v for k, v in asdict(manifest).items() if k != "outputs"}, "strategies": rows}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        cols = ["strategy", "sr", "anr", "mdd", "n_days", "first_date", "last_date"]
        return pd.DataFrame(rows, columns=cols).to_csv(index=False, float_format="%.17g", lineterminator="\n")
    raise ConfigError(f"unknown report format {fmt!r}")
