"""Command line front end.

Subcommands: ingest, synth, train, evaluate, sweep, explain.  Every run is
driven by an optional JSON config file plus flag overrides; ``--dump-config``
prints the effective merged config without running anything.

Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage,
3 missing input file, 4 format or layout version mismatch, 5 defective
data.  Errors are a single machine-parsable line on stderr:

    mandicast: error: [<category>] <message>
"""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import logging
import os
import sys

import numpy as np

from . import ingest as ingest_mod
from .config import RunConfig, dump_config, load_config
from .errors import ConfigError, DataError, FormatVersionError, LayoutMismatchError
from .evaluation import (
    alpha_sweep,
    emit_curve_csv,
    emit_curve_svg,
    evaluate,
    format_report,
    objective,
)
from .learners import ModelSpec, explain, predict, train
from .panel import align
from .serialize import load_model, save_model
from .synthgen import SynthConfig, generate, reference_accuracy
from .windowing import SplitSpec, WindowConfig, build_examples, inference_features, split_examples

_CLASS_NAMES = ("Up", "Down", "Stay")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        print(f"mandicast: error: [usage] {message}", file=sys.stderr)
        raise SystemExit(2)


def _fail(code: int, category: str, exc: BaseException) -> int:
    message = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"mandicast: error: [{category}] {message}", file=sys.stderr)
    return code


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config file")
    common.add_argument("--out", help="output directory (default $MANDICAST_OUT or .)")
    common.add_argument("--dump-config", action="store_true",
                        help="print the effective config and exit")
    common.add_argument("--commodity")
    common.add_argument("--family")
    common.add_argument("--seed", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--b", type=int)
    common.add_argument("--f", type=int)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--workers", type=int)
    common.add_argument("--train-end")
    common.add_argument("--val-end")
    common.add_argument("--test-end")

    parser = _Parser(prog="mandicast",
                     description="direction forecasting for sparse market price panels")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common],
                       help="parse raw feed CSVs into a canonical dataset")
    p.add_argument("csv", nargs="+", help="raw feed files")
    p.add_argument("--dedup", default="weighted_mean",
                   choices=ingest_mod.DEDUP_POLICIES)
    p.add_argument("--stamp", action="store_true",
                   help="record the ingest time (breaks byte idempotency)")
    p.set_defaults(run=cmd_ingest)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic panel dataset")
    p.add_argument("--reference-trials", type=int, default=0,
                   help="also print the seasonal-oracle benchmark over N trials")
    p.set_defaults(run=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="fit a model bank")
    p.add_argument("--data", required=True, help="canonical dataset file")
    p.add_argument("--use-validation", action="store_true",
                   help="train through val_end instead of train_end")
    p.set_defaults(run=cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score a trained model on a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.set_defaults(run=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common],
                       help="trace the alpha trade-off curve")
    p.add_argument("--data", required=True)
    p.set_defaults(run=cmd_sweep)

    p = sub.add_parser("explain", parents=[common],
                       help="retrieve the training evidence behind one forecast")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--anchor", required=True, help="forecast anchor date, ISO format")
    p.add_argument("--market", required=True)
    p.add_argument("--horizon", type=int, default=1, help="days ahead, 1-based")
    p.add_argument("--top-k", type=int, dest="top_k")
    p.set_defaults(run=cmd_explain)
    return parser


_OVERRIDE_FIELDS = (
    "commodity", "family", "seed", "alpha", "b", "f", "epsilon",
    "workers", "train_end", "val_end", "test_end", "top_k",
)


def _effective_config(args) -> RunConfig:
    data = load_config(args.config).to_dict() if args.config else {}
    for name in _OVERRIDE_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    return RunConfig.from_dict(data)


def _out_dir(args) -> str:
    out = args.out or os.environ.get("MANDICAST_OUT") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_panel(cfg: RunConfig, ds):
    all_dates = [o.date for s in ds.series for o in s.observations]
    start = dt.date.fromisoformat(cfg.start) if cfg.start else min(all_dates)
    end = dt.date.fromisoformat(cfg.end) if cfg.end else max(all_dates)
    return align(ds.series, start=start, end=end, epsilon=cfg.epsilon)


def _check_markets(bank, panel) -> None:
    if panel.n_markets != bank.n_markets or panel.markets != bank.markets:
        raise LayoutMismatchError(
            f"dataset markets {panel.markets} do not match the model's "
            f"{bank.markets} (layout {bank.layout!r})"
        )


def _split_for(cfg: RunConfig, examples, which: str):
    if which == "all":
        return examples
    spec = SplitSpec(*cfg.split_dates())
    parts = dict(zip(("train", "val", "test"), split_examples(examples, spec)))
    chosen = parts[which]
    if not chosen:
        raise DataError(f"split {which!r} holds no examples")
    return chosen


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    records = []
    issues = []
    for path in args.csv:
        with open(path, encoding="utf-8") as fh:
            recs, probs = ingest_mod.parse_csv(fh)
        records.extend(recs)
        issues.extend((path, p) for p in probs)
    stamp = (
        dt.datetime.now(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        if args.stamp else None
    )
    ds = ingest_mod.build_dataset(
        records, cfg.commodity, dedup=args.dedup,
        sources=tuple(args.csv), stamped=stamp,
    )
    dataset_path = os.path.join(out, "dataset.mset")
    ingest_mod.save_dataset(ds, dataset_path)
    if issues:
        with open(os.path.join(out, "ingest_issues.txt"), "w", encoding="utf-8") as fh:
            for path, issue in issues:
                fh.write(f"{path}:{issue.line}: {issue.reason}\n")
    print(
        f"dataset={dataset_path} records={ds.n_observations()} "
        f"markets={len(ds.markets)} issues={len(issues)} "
        f"digest={ds.provenance.digest}"
    )
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    synth_dict = dict(cfg.synth)
    synth_dict.setdefault("seed", cfg.seed)
    synth_dict.setdefault("commodity", cfg.commodity)
    scfg = SynthConfig.from_dict(synth_dict)
    panel, truth = generate(scfg)
    records = []
    for m, market in enumerate(panel.markets):
        for d in np.flatnonzero(~np.isnan(panel.price[m])):
            records.append(ingest_mod.RawRecord(
                date=panel.start + dt.timedelta(days=int(d)),
                market=market,
                commodity=scfg.commodity,
                modal_price=float(panel.price[m, d]),
            ))
    ds = ingest_mod.build_dataset(
        records, scfg.commodity, dedup="first",
        sources=(f"synth:seed={scfg.seed}",),
    )
    dataset_path = os.path.join(out, "dataset.mset")
    ingest_mod.save_dataset(ds, dataset_path)
    print(
        f"dataset={dataset_path} markets={panel.n_markets} days={panel.n_days} "
        f"stay_prevalence={truth.stay_prevalence():.4f}"
    )
    if args.reference_trials > 0:
        ref = reference_accuracy(scfg, trials=args.reference_trials)
        print(
            f"reference raw={ref.raw:.4f} balanced={ref.balanced:.4f} "
            f"trials={ref.trials}"
        )
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    ds = ingest_mod.load_dataset(args.data)
    panel = _load_panel(cfg, ds)
    examples = build_examples(panel, WindowConfig(b=cfg.b, f=cfg.f))
    if cfg.train_end is not None:
        cutoff = dt.date.fromisoformat(
            cfg.val_end if args.use_validation and cfg.val_end else cfg.train_end
        )
        examples = [ex for ex in examples if ex.last_target_date() <= cutoff]
    if not examples:
        raise DataError("no training examples inside the configured range")
    spec = ModelSpec(family=cfg.family, hyperparameters=cfg.hyperparameters, seed=cfg.seed)
    bank = train(
        spec, examples, cfg.alpha,
        markets=panel.markets, cyclic_doy=cfg.cyclic_doy, workers=cfg.workers,
    )
    model_path = os.path.join(out, "model.mmod")
    save_model(bank, model_path)
    with open(model_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()[:16]
    n_degen = int((bank.degenerate != 0).sum())
    report_lines = [
        f"family={spec.family} alpha={cfg.alpha:.3f} b={cfg.b} f={cfg.f} "
        f"seed={cfg.seed} spec={spec.digest()}",
        f"examples={len(examples)} features={bank.n_features} layout={bank.layout}",
        f"markets={','.join(bank.markets)}",
        f"degenerate_outputs={n_degen}",
        f"floor_clamped_weights={int(bank.weight_flags.sum())}",
        f"model_digest={digest}",
    ]
    with open(os.path.join(out, "train_report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(report_lines) + "\n")
    print(
        f"model={model_path} examples={len(examples)} features={bank.n_features} "
        f"degenerate={n_degen} digest={digest}"
    )
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    bank = load_model(args.model)
    ds = ingest_mod.load_dataset(args.data)
    panel = _load_panel(cfg, ds)
    _check_markets(bank, panel)
    examples = build_examples(panel, WindowConfig(b=bank.b, f=bank.f))
    chosen = _split_for(cfg, examples, args.split)
    report = evaluate(bank, chosen)
    with open(os.path.join(out, "eval_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"split={args.split}\n")
        fh.write(format_report(report))
    csv_lines = [
        "metric,value",
        f"raw_accuracy,{report.raw:.6f}",
        f"balanced_accuracy,{report.balanced:.6f}",
    ]
    for c, name in enumerate(_CLASS_NAMES):
        r = report.recalls[c]
        csv_lines.append(f"recall_{name.lower()},{'' if r is None else f'{r:.6f}'}")
    csv_lines.append(f"n_predictions,{report.n_predictions}")
    for t in range(3):
        for p in range(3):
            csv_lines.append(
                f"confusion_{_CLASS_NAMES[t].lower()}_{_CLASS_NAMES[p].lower()},"
                f"{int(report.confusion.counts[t, p])}"
            )
    with open(os.path.join(out, "eval_report.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(csv_lines) + "\n")
    print(
        f"split={args.split} raw={report.raw:.4f} balanced={report.balanced:.4f} "
        f"predictions={report.n_predictions}"
    )
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    ds = ingest_mod.load_dataset(args.data)
    panel = _load_panel(cfg, ds)
    split = SplitSpec(*cfg.split_dates())
    specs = [
        ModelSpec(
            family=fam,
            hyperparameters=cfg.hyperparameters if fam == cfg.family else {},
            seed=cfg.seed,
        )
        for fam in cfg.families
    ]
    rows = alpha_sweep(
        panel, split, specs, cfg.b, cfg.f, cfg.alpha_grid,
        cyclic_doy=cfg.cyclic_doy,
        refit_with_validation=cfg.refit_with_validation,
        workers=cfg.workers,
    )
    csv_path = os.path.join(out, "curve.csv")
    svg_path = os.path.join(out, "curve.svg")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(emit_curve_csv(rows))
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(emit_curve_svg(rows))
    best = max(rows, key=lambda r: objective(r.val_raw, r.val_balanced, r.alpha))
    print(
        f"curve={csv_path} rows={len(rows)} "
        f"best_family={best.family} best_alpha={best.alpha:.2f} "
        f"val_raw={best.val_raw:.4f} val_balanced={best.val_balanced:.4f}"
    )
    return 0


def cmd_explain(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    bank = load_model(args.model)
    ds = ingest_mod.load_dataset(args.data)
    panel = _load_panel(cfg, ds)
    _check_markets(bank, panel)
    try:
        anchor = dt.date.fromisoformat(args.anchor)
    except ValueError as exc:
        raise ConfigError(f"--anchor: {exc}") from None
    try:
        m = panel.market_index(args.market)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    if not 1 <= args.horizon <= bank.f:
        raise ConfigError(f"--horizon must lie in 1..{bank.f}")
    k = args.horizon - 1
    try:
        features = inference_features(
            panel, anchor, WindowConfig(b=bank.b, f=bank.f), bank.cyclic_doy
        )
        forecast = predict(bank, features)
        evidence = explain(bank, features, (m, k), top_k=cfg.top_k)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    scores = forecast.scores[m, k]
    lines = [
        f"anchor={anchor.isoformat()} market={args.market} horizon={args.horizon}",
        f"prediction={_CLASS_NAMES[forecast.labels[m, k]]} "
        f"scores=up:{scores[0]:.4f},down:{scores[1]:.4f},stay:{scores[2]:.4f}",
        f"evidence top_k={cfg.top_k} family={bank.spec.family}",
    ]
    for rank, (idx, sim) in enumerate(evidence, start=1):
        realized = bank.realized_label(idx, m, k)
        label = "unobserved" if realized is None else _CLASS_NAMES[realized]
        lines.append(
            f"  {rank}. example={idx} anchor={bank.anchor_date(idx).isoformat()} "
            f"similarity={sim:.4f} realized={label}"
        )
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, "explain.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.WARNING, format="mandicast: %(levelname)s: %(message)s"
    )
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _effective_config(args)
        if args.dump_config:
            sys.stdout.write(dump_config(cfg))
            return 0
        return args.run(args, cfg)
    except ConfigError as exc:
        return _fail(2, "config", exc)
    except FileNotFoundError as exc:
        missing = exc.filename if getattr(exc, "filename", None) else str(exc)
        return _fail(3, "missing-input", ValueError(missing))
    except (FormatVersionError, LayoutMismatchError) as exc:
        return _fail(4, "format", exc)
    except DataError as exc:
        return _fail(5, "data", exc)
    except (ValueError, ArithmeticError, OSError, KeyError) as exc:
        return _fail(1, "runtime", exc)


if __name__ == "__main__":
    sys.exit(main())
