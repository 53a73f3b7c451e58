"""Command line entry point ``dmsae``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 anything else.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ALL_METHODS, KSTAR_CHOICES, load_config
from .errors import ConfigError, DataError
from .ingest import build_frame, write_frame
from .runner import report, run_experiment

logger = logging.getLogger("dmsae")


def _pairs(values: list[str], what: str, *, stem_names: bool = False) -> dict[str, Path]:
    """``NAME=path`` items; with ``stem_names`` a bare path is named after its file stem."""
    out = {}
    for item in values or []:
        name, sep, path = item.partition("=")
        if not sep and stem_names:
            name, sep, path = Path(item).stem, "=", item
        if not sep or not name or not path:
            raise ConfigError(f"{what} must look like NAME=path, got {item!r}")
        if name in out:
            raise ConfigError(f"{what} {name!r} given twice")
        out[name] = Path(path)
    return out


def cmd_ingest(args: argparse.Namespace) -> int:
    args.prices = [item for group in args.prices or [] for item in group]
    prices = _pairs(args.prices, "--prices", stem_names=True)
    if not prices:
        raise ConfigError("at least one --prices NAME=csv is required")
    frame = build_frame(prices, _pairs(args.curve, "--curve"), forward_fill_curves=args.forward_fill)
    write_frame(frame, args.out)
    logger.info("wrote %d rows x %d columns to %s", len(frame), frame.shape[1], args.out)
    return 0


def cmd_backtest(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    methods = None
    if args.method:
        methods = (args.method,) if args.method != "all" else ALL_METHODS
    manifest = run_experiment(cfg, stages=("backtest",), methods=methods)
    print(Path(cfg.output_dir) / "manifest.json")
    logger.info("%d output files", len(manifest.outputs))
    return 0


def cmd_daa(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    caps = ("capped", "uncapped") if args.cap == "both" else (args.cap,)
    run_experiment(cfg, stages=("backtest", "daa"), caps=caps)
    print(Path(cfg.output_dir) / "manifest.json")
    return 0


def cmd_cas(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.asset:
        if args.asset not in cfg.assets:
            raise ConfigError(f"unknown asset {args.asset!r}")
        cfg = cfg.with_overrides(cas_assets=(args.asset,))
    if not cfg.cas_assets:
        raise ConfigError("no cross-asset strategy configured; set [cas] assets or pass --asset")
    if cfg.vix_asset is None or cfg.vix_asset not in cfg.assets:
        raise ConfigError("cross-asset strategies need [cas] vix_asset listed under [assets]")
    assets = list(dict.fromkeys([*cfg.cas_assets, cfg.vix_asset]))
    kstars = (args.kstar,) if args.kstar else None
    run_experiment(cfg, stages=("backtest", "cas"), assets=assets, kstars=kstars)
    print(Path(cfg.output_dir) / "manifest.json")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    sys.stdout.write(report(args.run, args.format))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmsae", description="Dynamic model selection and adaptive ensembles for trading.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="align price and curve CSVs into one frame")
    p.add_argument("--prices", action="append", nargs="+", metavar="[NAME=]CSV", help="price files; NAME defaults to the file stem")
    p.add_argument("--curve", action="append", metavar="KIND=CSV", help="vix or yield curve file")
    p.add_argument("--forward-fill", action="store_true", help="forward fill missing curve maturities")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("backtest", help="rolling forecasts, selection and validation")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--method", choices=(*ALL_METHODS, "all"))
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("daa", help="quarterly dynamic allocation across strategies")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--cap", choices=("capped", "uncapped", "both"), default="both")
    p.set_defaults(func=cmd_daa)

    p = sub.add_parser("cas", help="equity strategies hedged with VIX")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--kstar", choices=tuple(KSTAR_CHOICES))
    p.add_argument("--asset")
    p.set_defaults(func=cmd_cas)

    p = sub.add_parser("report", help="collect the metrics of a finished run")
    p.add_argument("--run", required=True, type=Path, help="path to manifest.json")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to exit code 4
        code = getattr(exc, "exit_code", 4)
        print(f"error: {exc}", file=sys.stderr)
        return code if code in (2, 3) else 4


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
