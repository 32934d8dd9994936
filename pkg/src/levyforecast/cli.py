"""Command-line entry point: generate, diagnose, train, evaluate, sample.

Exit codes: 0 success, 2 usage or config error, 3 numerical abort, 4 missing
or mismatched artifact.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .config import ConfigError, RunConfig
from .data import DataError, WindowedDataset, generate_synthetic, ingest_csv, make_windows, regime_labels
from .model import HEAD_KINDS, BatchSizeError, Forecaster, NumericalAbort, evaluation_loss, train
from .sampler import RngStream
from .stable import StableParams
from .tails import TailError, bucket_by_hill, hill_estimate, rolling_hill, tail_diagnostics

log = logging.getLogger("levyforecast")

EXIT_OK, EXIT_USAGE, EXIT_ABORT, EXIT_ARTIFACT = 0, 2, 3, 4
EVAL_STREAM = 50_000


class ArtifactError(RuntimeError):
    pass


# helpers -------------------------------------------------------------------------

def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _read_json(path: Path):
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    return json.loads(path.read_text())


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _load_series(cfg: RunConfig) -> np.ndarray:
    d = cfg.dataset
    if d["kind"] == "synthetic":
        return generate_synthetic(cfg.regimes(), int(d["length"]), int(d["seed"]))
    return ingest_csv(d["path"], d["column"], d.get("timestamp_column"), bool(d.get("log_returns")))


def _dataset_path(out: Path) -> Path:
    return out / "dataset.json"


def _run_dir(out: Path, head: str, seed: int) -> Path:
    return out / head / f"seed_{seed}"


def _load_dataset(cfg: RunConfig, out: Path) -> WindowedDataset:
    payload = _read_json(_dataset_path(out))
    if payload.get("data_hash") != cfg.data_hash():
        raise ArtifactError(f"dataset {_dataset_path(out)} was produced by a different data config "
                            f"({payload.get('data_hash')} != {cfg.data_hash()})")
    return WindowedDataset.from_dict(payload["dataset"])


def _load_checkpoint(cfg: RunConfig, path: Path) -> Forecaster:
    payload = _read_json(path)
    if payload.get("config_hash") != cfg.config_hash():
        raise ArtifactError(f"checkpoint {path} does not match the config "
                            f"({payload.get('config_hash')} != {cfg.config_hash()})")
    return Forecaster.from_dict(payload["checkpoint"])


def _segment_diagnostics(series, bounds):
    out = []
    for lo, hi, label in bounds:
        try:
            d = tail_diagnostics(series, lo, hi)
            out.append({"segment": label, "start": lo, "stop": hi, "hill_alpha": d.hill_alpha,
                        "kurtosis": d.kurtosis, "ks_gaussian_stat": d.ks_gaussian_stat,
                        "ks_gaussian_p": d.ks_gaussian_p})
        except TailError as exc:
            out.append({"segment": label, "start": lo, "stop": hi, "error": str(exc)})
    return out


def _diagnostics(cfg: RunConfig, series) -> dict:
    out = {"overall": _segment_diagnostics(series, [(0, len(series), "all")])[0]}
    if cfg.dataset["kind"] == "synthetic":
        regimes = cfg.regimes()
        labels = regime_labels(regimes, len(series))
        per = []
        for i, r in enumerate(regimes):
            pooled = series[labels == i]
            entry = {"regime": i, "alpha": r.params.alpha, "beta": r.params.beta, "gamma": r.params.gamma,
                     "delta": r.params.delta, "n": int(pooled.size)}
            entry.update({k: v for k, v in _segment_diagnostics(pooled, [(0, pooled.size, f"regime_{i}")])[0].items()
                          if k not in ("segment", "start", "stop")})
            per.append(entry)
        out["regimes"] = per
    window = int(cfg.evaluate["hill_window"])
    if len(series) >= window:
        hill = rolling_hill(series, window)
        pos = np.linspace(window - 1, len(series) - 1, min(21, len(series) - window + 1)).round().astype(int)
        out["rolling_hill"] = {"window": window, "positions": pos.tolist(), "values": [float(v) for v in hill[pos]]}
    return out


# commands ----------------------------------------------------------------------

def cmd_generate(cfg: RunConfig, out: Path, args) -> int:
    series = _load_series(cfg)
    m = cfg.model
    ds = make_windows(series, m.context_length, m.horizon, int(cfg.windows["stride"]),
                      tuple(cfg.windows["split_fracs"]), {"source": cfg.dataset["kind"]},
                      cfg.windows["scaling"])
    _write_json(_dataset_path(out), {"data_hash": cfg.data_hash(), "dataset": ds.to_dict()})
    _write_json(out / "dataset.diagnostics.json", {"data_hash": cfg.data_hash(), **_diagnostics(cfg, series)})
    print(f"wrote {_dataset_path(out)}: {len(series)} points, windows "
          + ", ".join(f"{s}={ds.count(s)}" for s in ("train", "val", "test")))
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig, out: Path, args) -> int:
    path = _dataset_path(out)
    series = WindowedDataset.from_dict(_read_json(path)["dataset"]).series if path.exists() else _load_series(cfg)
    diag = _diagnostics(cfg, series)
    _write_json(out / "diagnostics.json", {"data_hash": cfg.data_hash(), **diag})
    window = int(cfg.evaluate["hill_window"])
    if len(series) >= window:
        hill = rolling_hill(series, window)[window - 1:]
        buckets = bucket_by_hill(hill, tuple(cfg.evaluate["hill_thresholds"]))
        _write_csv(out / "rolling_hill.csv", ["position", "hill_alpha", "bucket"],
                   [(i + window - 1, f"{h:.6f}", b) for i, (h, b) in enumerate(zip(hill, buckets))])
    o = diag["overall"]
    print(f"hill={o.get('hill_alpha', float('nan')):.3f} kurtosis={o.get('kurtosis', float('nan')):.2f} "
          f"ks_gaussian_p={o.get('ks_gaussian_p', float('nan')):.3g}")
    for r in diag.get("regimes", []):
        print(f"regime {r['regime']} (alpha={r['alpha']}): hill={r.get('hill_alpha', float('nan')):.3f} "
              f"kurtosis={r.get('kurtosis', float('nan')):.2f}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, out: Path, args) -> int:
    ds = _load_dataset(cfg, out)
    m = cfg.model
    for seed in cfg.seeds:
        run = _run_dir(out, m.head_kind, seed)
        run.mkdir(parents=True, exist_ok=True)
        progress = lambda row: log.info("seed %d epoch %d train %.6g val %.6g", seed, row["epoch"],
                                        row["train_loss"], row["val_loss"])
        try:
            res = train(ds, m, seed, progress=progress)
        except NumericalAbort as exc:
            dump = run / "abort_dump.json"
            _write_json(dump, {"config_hash": cfg.config_hash(), "message": str(exc), "batch": exc.dump})
            print(f"numerical abort (seed {seed}): {exc}; batch dump written to {dump}", file=sys.stderr)
            return EXIT_ABORT
        res.forecaster.meta.update({"config_hash": cfg.config_hash(), "best_val_loss": res.best_val_loss})
        _write_json(run / "checkpoint.json", {"config_hash": cfg.config_hash(),
                                              "checkpoint": res.forecaster.to_dict()})
        keys = list(res.log[0])
        _write_csv(run / "train_log.csv", keys, [[row[k] for k in keys] for row in res.log])
        print(f"{m.head_kind} seed {seed}: best val loss {res.best_val_loss:.6f} at epoch {res.best_epoch}")
    return EXIT_OK


def _test_cases(cfg: RunConfig, ds: WindowedDataset):
    ctx, tgt = ds.raw_arrays("test")
    if len(ctx) == 0:
        raise ArtifactError("dataset has no test windows")
    starts = ds.starts[ds.splits == "test"]
    cap = cfg.evaluate.get("max_cases")
    if cap and len(ctx) > cap:
        # evenly spaced subset keeps the chronological spread of the test range
        pick = np.unique(np.linspace(0, len(ctx) - 1, int(cap)).round().astype(int))
        ctx, tgt, starts = ctx[pick], tgt[pick], starts[pick]
    return ctx, tgt, starts


def _hill_buckets(cfg: RunConfig, ds: WindowedDataset, starts):
    """Volatility bucket per test case from the Hill index of the trailing window at the forecast origin."""
    window = int(cfg.evaluate["hill_window"])
    origins = starts + ds.context_length
    hills = np.full(len(starts), np.nan)
    for i, o in enumerate(origins):
        if o >= window:
            try:
                hills[i] = hill_estimate(ds.series[o - window:o])
            except TailError:
                pass
    labels = np.array(["none"] * len(starts), dtype=object)
    ok = np.isfinite(hills)
    labels[ok] = bucket_by_hill(hills[ok], tuple(cfg.evaluate["hill_thresholds"]))
    return labels


def _summarize(rows):
    keys = rows[0].keys()
    out = {}
    for k in keys:
        vals = np.array([r[k] for r in rows], dtype=float)
        out[k] = float(vals.mean())
        out[f"{k}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return out


def cmd_evaluate(cfg: RunConfig, out: Path, args) -> int:
    heads = args.head or [cfg.model.head_kind]
    ds = _load_dataset(cfg, out)
    ctx, tgt, starts = _test_cases(cfg, ds)
    buckets = _hill_buckets(cfg, ds, starts)
    ev = cfg.evaluate
    cov_levels = tuple(float(v) for v in ev["coverage_levels"])
    ql_levels = tuple(float(v) for v in ev["ql_levels"])
    report_dir = out / "report"
    long_rows, table, summary = [], [], {"config_hash": {}, "heads": {}}
    for head in heads:
        hcfg = cfg.with_head(head)
        per_seed = []
        for seed in cfg.seeds:
            fc = _load_checkpoint(hcfg, _run_dir(out, head, seed) / "checkpoint.json")
            x_va, y_va = ds.arrays("val")
            val_loss = evaluation_loss(fc.params, fc.config, x_va, y_va) if len(x_va) else float("nan")
            samples = fc.forecast_batch(ctx, int(ev["n_trajectories"]), RngStream(seed, EVAL_STREAM))
            rep = metrics.assemble_report(samples, tgt, RngStream(seed, EVAL_STREAM + 1), cov_levels, ql_levels)
            row = rep.row()
            per_seed.append(row)
            name = f"{head}/seed_{seed}"
            long_rows += metrics.long_rows("test", name, rep)
            (report_dir / f"calibration_{head}_seed{seed}.csv").parent.mkdir(parents=True, exist_ok=True)
            (report_dir / f"calibration_{head}_seed{seed}.csv").write_text(metrics.calibration_csv(rep))
            (report_dir / f"pit_hist_{head}_seed{seed}.csv").write_text(metrics.pit_histogram_csv(rep))
            breakdown = {}
            for b in ("low", "medium", "high"):
                mask = buckets == b
                if mask.any():
                    sub = metrics.assemble_report(samples[mask], tgt[mask], RngStream(seed, EVAL_STREAM + 2),
                                                  cov_levels, ql_levels)
                    breakdown[b] = {"count": int(mask.sum()), **sub.row()}
                    long_rows += metrics.long_rows(f"test[{b}]", name, sub)
            _write_json(report_dir / f"{head}_seed{seed}.json",
                        {"config_hash": hcfg.config_hash(), "val_loss": val_loss,
                         "logged_val_loss": fc.meta.get("best_val_loss"), "count": rep.count,
                         "aggregate": row, "per_horizon": rep.per_horizon, "hill_buckets": breakdown})
            print(f"{name}: " + " ".join(f"{k}={v:.4f}" for k, v in row.items() if not k.endswith("_dev")))
        agg = _summarize(per_seed)
        summary["heads"][head] = agg
        summary["config_hash"][head] = hcfg.config_hash()
        table.append((f"{head} (n={len(per_seed)})", agg))
    _write_csv(report_dir / "report.csv", ["dataset", "model", "horizon", "metric", "value"], long_rows)
    _write_json(report_dir / "summary.json", summary)
    text = metrics.format_table(table)
    (report_dir / "table.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def _parse_context(text: str, t: int) -> np.ndarray:
    p = Path(text)
    if p.exists():
        values = [float(v) for line in p.read_text().splitlines() for v in line.replace(",", " ").split()]
    else:
        values = [float(v) for v in text.split(",") if v.strip()]
    if len(values) < t:
        raise ConfigError(f"context has {len(values)} values, model needs {t}")
    return np.array(values[-t:])


def cmd_sample(cfg: RunConfig, out: Path, args) -> int:
    seed = cfg.seeds[0]
    ckpt = Path(args.checkpoint) if args.checkpoint else _run_dir(out, cfg.model.head_kind, seed) / "checkpoint.json"
    fc = _load_checkpoint(cfg, ckpt)
    if args.context:
        context = _parse_context(args.context, fc.config.context_length)
    else:
        ds = _load_dataset(cfg, out)
        context = ds.series[-fc.config.context_length:]
    n = int(args.n or cfg.evaluate["n_trajectories"])
    res = fc.forecast(context, n, RngStream(seed, EVAL_STREAM + 3))
    sdir = out / "samples"
    _write_csv(sdir / "trajectories.csv", ["horizon"] + [f"traj_{j}" for j in range(n)],
               [[h + 1] + [repr(float(v)) for v in row] for h, row in enumerate(res.samples)])
    rows = []
    opt = lambda arr, j: "" if arr is None else float(arr[j])
    for h, law in enumerate(res.laws):
        if hasattr(law, "components"):
            rows += [[h + 1, j, float(w), c.alpha, c.beta, c.gamma, c.delta, "", ""]
                     for j, (w, c) in enumerate(zip(law.weights, law.components))]
        else:
            rows += [[h + 1, j, float(law.weights[j]), "", "", float(law.scale[j]), float(law.loc[j]),
                      opt(law.dof, j), opt(law.skew, j)] for j in range(len(law.weights))]
    _write_csv(sdir / "horizon_params.csv",
               ["horizon", "component", "weight", "alpha", "beta", "scale", "location", "dof", "skew"], rows)
    _write_json(sdir / "meta.json", {"config_hash": cfg.config_hash(), "checkpoint": str(ckpt), "n": n})
    print(f"wrote {n} trajectories x {len(res.laws)} horizons to {sdir}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "diagnose": cmd_diagnose, "train": cmd_train,
            "evaluate": cmd_evaluate, "sample": cmd_sample}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levyforecast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config (defaults apply to missing keys)")
        p.add_argument("--seed", type=int, action="append", help="seed; repeat for several")
        p.add_argument("--out", help="output directory")
        p.add_argument("--head", action="append" if name == "evaluate" else "store", choices=HEAD_KINDS,
                       help="head kind" + (" (repeat to compare heads)" if name == "evaluate" else ""))
        p.add_argument("--override-batch", action="store_true", help="allow batch sizes below 128")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "sample":
            p.add_argument("--checkpoint", help="checkpoint path (default: <out>/<head>/seed_<seed>)")
            p.add_argument("--context", help="comma-separated values or a file of values")
            p.add_argument("-n", type=int, help="trajectory count")
    return parser


def effective_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    d = cfg.to_dict()
    if args.seed:
        d["seeds"] = list(args.seed)
    if args.out:
        d["out"] = args.out
    head = args.head[0] if isinstance(args.head, list) else args.head
    if head:
        d["model"]["head_kind"] = head
    if args.override_batch:
        d["model"]["allow_small_batch"] = True
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = effective_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / f"config.{args.command}.json", {"config_hash": cfg.config_hash(), **cfg.to_dict()})
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, DataError, BatchSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
