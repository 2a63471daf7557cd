"""Command-line entry point: ``latentgraph <command> [options]``.

Commands: generate, train, evaluate, infer-graph, k-sweep, benchmark.
Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from datetime import datetime
from pathlib import Path

import numpy as np

from ._alloc import tune_allocator
from .config import RunConfig, load_config
from .data import (Standardizer, TimeSeriesPanel, gen_cycle_graph, gen_sinusoids, load_csv_panel, make_windows,
                   prepare_splits)
from .exceptions import (ConfigurationError, DataFormatError, NoAdjacencyError, NumericalError, ShapeError,
                         TopologyError, ZeroVarianceError)
from .model import ForecastModel, load_checkpoint, save_checkpoint
from .training import complexity_bench, evaluate, extract_adjacency, k_sweep, train

log = logging.getLogger("latentgraph")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
CONFIG_ERRORS = (ConfigurationError, DataFormatError, ZeroVarianceError, NoAdjacencyError, TopologyError,
                 ShapeError, FileNotFoundError, FileExistsError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers
def _write_text(path: Path, text: str) -> None:
    if not text.endswith("\n"):
        text += "\n"
    path.write_text(text, encoding="utf-8")


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True))


def run_dir(cfg: RunConfig, out: str | None, force: bool) -> Path:
    """``<root>/run-<timestamp>-<seed>`` unless ``--out`` names a directory."""
    if out:
        path = Path(out)
    else:
        stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
        path = Path(cfg.output.root) / f"run-{stamp}-{cfg.seed}"
    if path.exists() and any(path.iterdir()) and not force:
        raise FileExistsError(f"output directory {path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def echo_config(path: Path, cfg: RunConfig, args) -> None:
    """Copy the input config verbatim and write the fully resolved config."""
    if args.config:
        (path / "config.input.json").write_bytes(Path(args.config).read_bytes())
    if args.set:
        _write_text(path / "overrides.txt", "\n".join(args.set))
    _write_text(path / "config.json", cfg.to_json())


def load_panel(cfg: RunConfig) -> tuple[TimeSeriesPanel, dict]:
    """The configured panel plus ground-truth metadata for synthetic sources."""
    src = cfg.data.source
    if src == "cycle":
        spec = cfg.cycle_spec()
        panel, adjacency = gen_cycle_graph(spec)
        return panel, {"source": src, "spec": asdict(spec), "seed": cfg.seed, "adjacency": adjacency.tolist()}
    if src == "sinusoids":
        spec = cfg.sinusoid_spec()
        panel, labels = gen_sinusoids(spec)
        meta = {"source": src, "spec": asdict(spec), "seed": cfg.seed, "clusters": labels.tolist()}
        meta.update(panel.meta)
        return panel, meta
    panel = load_csv_panel(cfg.data.csv.path, cfg.data.csv.delimiter)
    return panel, {"source": src, "path": cfg.data.csv.path}


def _splits(cfg: RunConfig, panel: TimeSeriesPanel, context_len: int, pred_len: int):
    return prepare_splits(panel, context_len, pred_len, cfg.split_spec(), cfg.data.stride, cfg.data.standardize)


def _scaler_from(extra: dict) -> Standardizer:
    if "scaler_mean" not in extra:
        raise ConfigurationError("checkpoint has no standardizer statistics")
    sc = Standardizer()
    sc.mean_, sc.scale_ = extra["scaler_mean"], extra["scaler_scale"]
    sc.n_features_in_ = len(sc.mean_)
    return sc


# ----------------------------------------------------------------- commands
def cmd_generate(cfg: RunConfig, args) -> int:
    if cfg.data.source not in ("cycle", "sinusoids"):
        raise ConfigurationError(f"generate needs data.source cycle or sinusoids, got {cfg.data.source!r}")
    panel, meta = load_panel(cfg)
    if args.dry_run:
        print(f"would write panel {panel.n_series} x {panel.length}")
        return EXIT_OK
    out = run_dir(cfg, args.out, args.force)
    echo_config(out, cfg, args)
    panel.to_csv(out / "panel.csv")
    _write_json(out / "meta.json", meta)
    print(out)
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    panel, _ = load_panel(cfg)
    dims = cfg.model_dims(panel.n_series)
    model = ForecastModel(dims, seed=cfg.seed)
    if args.dry_run:
        print(f"config ok; parameters: {model.n_parameters()}")
        return EXIT_OK
    tcfg = cfg.train_config()
    splits, scaler = _splits(cfg, panel, dims.context_len, dims.pred_len)
    out = run_dir(cfg, args.out, args.force)
    echo_config(out, cfg, args)
    t0 = time.perf_counter()
    result = train(model, splits["train"], splits["val"], tcfg, scaler)
    elapsed = time.perf_counter() - t0
    report = evaluate(model, splits["test"], scaler, tcfg.mape_floor, tcfg.eval_batch_size)
    save_checkpoint(out / "checkpoint.npz", model,
                    extra={"scaler_mean": scaler.mean_, "scaler_scale": scaler.scale_},
                    meta={"seed": cfg.seed, "best_epoch": result.best_epoch})
    _write_text(out / "trace.csv", result.trace_csv())
    _write_json(out / "metrics.json", {
        "split": "test",
        "metrics": report.to_dict(),
        "best_epoch": result.best_epoch,
        "best_val_mae": result.best_val_mae,
        "epochs_run": len(result.trace),
        "n_parameters": model.n_parameters(),
        "n_edges": model.n_edges(),
        "timing": {"train_seconds": elapsed},
    })
    print(f"test MAE {report.mae:.6f}; artifacts in {out}")
    return EXIT_OK


def _checkpoint_inputs(cfg: RunConfig, path):
    """Model, panel and windows standardized with the checkpoint's own statistics."""
    model, extra, _ = load_checkpoint(path)
    panel, _ = load_panel(cfg)
    if panel.n_series != model.dims.n_nodes:
        raise ConfigurationError(f"checkpoint expects {model.dims.n_nodes} series, data has {panel.n_series}")
    scaler = _scaler_from(extra)
    scaled = TimeSeriesPanel(scaler.transform(panel.values, series_axis=0), list(panel.names))
    windows = make_windows(scaled, model.dims.context_len, model.dims.pred_len, cfg.data.stride, cfg.split_spec())
    return model, panel, windows, scaler


def cmd_evaluate(cfg: RunConfig, args) -> int:
    model, _, windows, scaler = _checkpoint_inputs(cfg, args.checkpoint)
    windows = windows[args.split]
    if args.dry_run:
        print(f"would evaluate {len(windows)} {args.split} windows")
        return EXIT_OK
    out = run_dir(cfg, args.out, args.force)
    echo_config(out, cfg, args)
    report = evaluate(model, windows, scaler, cfg.train.mape_floor, cfg.train.eval_batch_size)
    _write_json(out / "metrics.json", {"split": args.split, "checkpoint": str(args.checkpoint),
                                       "metrics": report.to_dict()})
    print(f"{args.split} MAE {report.mae:.6f}")
    return EXIT_OK


def cmd_infer_graph(cfg: RunConfig, args) -> int:
    model, panel, windows, _ = _checkpoint_inputs(cfg, args.checkpoint)
    if model.dims.topology not in ("fc", "bp"):
        raise NoAdjacencyError(f"checkpoint topology {model.dims.topology!r} has no inferred adjacency")
    n_timesteps = args.n_timesteps or cfg.graph.n_timesteps
    snap = extract_adjacency(model, windows[cfg.graph.split], n_timesteps)
    if args.dry_run:
        print(f"would write {snap.matrix.shape[0]}x{snap.matrix.shape[1]} adjacency")
        return EXIT_OK
    out = run_dir(cfg, args.out, args.force)
    echo_config(out, cfg, args)
    snap.to_csv(out / "adjacency.csv")
    snap.to_pgm(out / "adjacency.pgm")
    if snap.kind == "bp":
        np.savetxt(out / "alpha_up.csv", snap.up, fmt="%.6f", delimiter=",")
        np.savetxt(out / "alpha_down.csv", snap.down, fmt="%.6f", delimiter=",")
    for i, j in enumerate(snap.top_incoming()):
        print(f"{panel.names[j]} -> {panel.names[i]}  {snap.matrix[i, j]:.4f}")
    return EXIT_OK


def cmd_k_sweep(cfg: RunConfig, args) -> int:
    panel, _ = load_panel(cfg)
    dims = cfg.model_dims(panel.n_series)
    if args.dry_run:
        n_runs = len(cfg.sweep.k_values) * cfg.sweep.repeats
        print(f"config ok; {n_runs} training runs")
        return EXIT_OK
    splits, scaler = _splits(cfg, panel, dims.context_len, dims.pred_len)
    out = run_dir(cfg, args.out, args.force)
    echo_config(out, cfg, args)
    rows = k_sweep(dims, cfg.train_config(), splits, cfg.sweep.k_values, cfg.sweep.repeats, scaler, args.jobs)
    _write_json(out / "ksweep.json", {"rows": rows, "repeats": cfg.sweep.repeats})
    lines = ["K,mean,std"] + [f"{r['K']},{r['mean']:.10g},{r['std']:.10g}" for r in rows]
    _write_text(out / "ksweep.csv", "\n".join(lines))
    for r in rows:
        print(f"K={r['K']:<3d} val MAE {r['mean']:.5f} +/- {r['std']:.5f}")
    return EXIT_OK


def cmd_benchmark(cfg: RunConfig, args) -> int:
    b = cfg.benchmark
    if args.dry_run:
        print(f"config ok; {len(b.topologies) * len(b.n_values)} timing rows")
        return EXIT_OK
    out = run_dir(cfg, args.out, args.force)
    echo_config(out, cfg, args)
    rep = complexity_bench(topologies=tuple(b.topologies), n_values=tuple(b.n_values), nf=b.nf,
                           batch_size=b.batch_size, repeats=b.repeats, n_aux=b.n_aux, context_len=b.context_len,
                           pred_len=b.pred_len, n_layers=b.n_layers, id_dim=b.id_dim, seed=cfg.seed)
    _write_json(out / "complexity.json", rep.to_dict())
    if cfg.output.write_csv:
        _write_text(out / "complexity.csv", rep.to_csv())
    for r in rep.rows:
        print(f"{r.topology:3s} N={r.n_nodes:<5d} edges={r.n_edges:<8d} forward {r.time_min * 1e3:.2f} ms")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "infer-graph": cmd_infer_graph,
    "k-sweep": cmd_k_sweep,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latentgraph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (defaults are used for missing keys)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted config key, e.g. train.lr=0.002")
        p.add_argument("--out", help="output directory (default: <output.root>/run-<timestamp>-<seed>)")
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty output directory")
        p.add_argument("--dry-run", action="store_true", help="validate inputs and exit without writing")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for k-sweep")
        if name in ("evaluate", "infer-graph"):
            p.add_argument("--checkpoint", required=True, help="checkpoint.npz written by train")
        if name == "evaluate":
            p.add_argument("--split", choices=("train", "val", "test"), default="test")
        if name == "infer-graph":
            p.add_argument("--n-timesteps", type=int, default=None, help="windows averaged (default graph.n_timesteps)")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        tune_allocator()
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
