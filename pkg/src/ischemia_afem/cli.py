"""Command-line front end.

Three subcommands cover the synthetic-experiment workflow: ``generate``
solves the forward problem on a fine grid and stores boundary measurements,
``reconstruct`` runs the adaptive (or uniform) inversion loop on those
measurements, and ``report`` merges run histories into one table plus
convergence plots.

Exit codes: 0 on success, 2 for configuration or data errors, 3 for
numerical failures (partial artifacts are kept for inspection).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

from . import __version__
from .adapt import UNIFORM_LADDER_STEP, run, run_uniform
from .config import load_config
from .data import load_boundary_data, make_data, save_boundary_data
from .errors import ConfigError, SolverError
from .mesh import build_structured

SEED_ENV = "ISCHEMIA_AFEM_SEED"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _inventory(root, skip=("manifest.json",)):
    """Checksums and sizes for every file under root, keyed by relative path."""
    files = {}
    for dirpath, _, names in os.walk(root):
        for name in sorted(names):
            if name in skip:
                continue
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, root)
            files[rel] = {"sha256": _sha256(full),
                          "bytes": os.path.getsize(full)}
    return files


def _write_manifest(path, payload):
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _effective_seed(cfg):
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return cfg.seed, False
    try:
        return int(raw), True
    except ValueError:
        raise ConfigError(f"{SEED_ENV}: not an integer: {raw!r}") from None


def cmd_generate(args):
    cfg = load_config(args.config)
    if cfg.shape is None:
        raise ConfigError("problem.preset: data generation needs a preset "
                          "with a ground-truth shape")
    seed, overridden = _effective_seed(cfg)
    t0 = time.perf_counter()
    datasets = make_data(cfg.shape, cfg.problem.sources, sigma=cfg.problem.sigma,
                         fine_n=cfg.fine_n, noise_pct=cfg.noise_pct, seed=seed,
                         d0=cfg.problem.d0)
    parent = os.path.dirname(cfg.data_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_boundary_data(cfg.data_path, datasets)
    elapsed = time.perf_counter() - t0
    manifest = {
        "tool": "ischemia-afem",
        "version": __version__,
        "command": "generate",
        "config": cfg.resolved(),
        "seed": seed,
        "seed_from_env": overridden,
        "timings": {"total_s": elapsed},
        "files": {os.path.basename(cfg.data_path): {
            "sha256": _sha256(cfg.data_path),
            "bytes": os.path.getsize(cfg.data_path)}},
    }
    _write_manifest(cfg.data_path + ".manifest.json", manifest)
    print(f"wrote {cfg.data_path} ({len(datasets)} sources, fine_n={cfg.fine_n}, "
          f"noise_pct={cfg.noise_pct}, seed={seed}) in {elapsed:.1f}s")
    return 0


def _reconstruction_grids(cfg):
    if cfg.mode == "uniform":
        return {cfg.initial_n + k * UNIFORM_LADDER_STEP
                for k in range(cfg.levels + 1)}
    return {cfg.initial_n}


def cmd_reconstruct(args):
    cfg = load_config(args.config)
    if cfg.out_dir is None:
        raise ConfigError("output.dir: required for reconstruct")
    seed, overridden = _effective_seed(cfg)
    try:
        datasets, _ = load_boundary_data(cfg.data_path)
    except FileNotFoundError:
        raise ConfigError(f"data.path: file not found: {cfg.data_path} "
                          "(run the generate command first)") from None
    except ValueError as exc:
        raise ConfigError(f"data.path: {exc}") from None

    data_n = datasets[0].fine_n or cfg.fine_n
    if data_n in _reconstruction_grids(cfg) and not args.allow_inverse_crime:
        raise ConfigError(
            f"data was generated on the {data_n}-per-side grid that the "
            "reconstruction would also use; committing this inverse crime "
            "requires --allow-inverse-crime")

    mesh = build_structured(cfg.initial_n)
    os.makedirs(cfg.out_dir, exist_ok=True)
    t0 = time.perf_counter()
    try:
        if cfg.mode == "uniform":
            triplet, history, final = run_uniform(
                mesh, datasets, cfg.problem, cfg.levels, cfg.optimizer,
                threads=args.threads, out_dir=cfg.out_dir,
                combine=cfg.loop.combine)
        else:
            triplet, history, final = run(
                mesh, datasets, cfg.problem, cfg.loop, cfg.optimizer,
                threads=args.threads, out_dir=cfg.out_dir)
    except SolverError as exc:
        elapsed = time.perf_counter() - t0
        manifest = {
            "tool": "ischemia-afem",
            "version": __version__,
            "command": "reconstruct",
            "config": cfg.resolved(),
            "seed": seed,
            "seed_from_env": overridden,
            "threads": args.threads,
            "failed_at_level": getattr(exc, "level", None),
            "error": str(exc),
            "timings": {"total_s": elapsed},
            "files": _inventory(cfg.out_dir),
        }
        _write_manifest(os.path.join(cfg.out_dir, "manifest.json"), manifest)
        print(f"error: solver failed at level {getattr(exc, 'level', '?')}: "
              f"{exc}", file=sys.stderr)
        print(f"partial artifacts kept in {cfg.out_dir}", file=sys.stderr)
        return 3
    elapsed = time.perf_counter() - t0

    records = list(history)
    manifest = {
        "tool": "ischemia-afem",
        "version": __version__,
        "command": "reconstruct",
        "config": cfg.resolved(),
        "seed": seed,
        "seed_from_env": overridden,
        "threads": args.threads,
        "timings": {"total_s": elapsed,
                    "levels_s": [r.wall_time for r in records]},
        "files": _inventory(cfg.out_dir),
    }
    _write_manifest(os.path.join(cfg.out_dir, "manifest.json"), manifest)
    last = records[-1]
    print(f"{cfg.mode} run: {len(records)} levels, final nodes {last.nodes}, "
          f"objective {last.objective:.6e}, estimator {last.eta_total:.4e}, "
          f"{elapsed:.1f}s")
    print(f"artifacts in {cfg.out_dir}")
    return 0


def _load_history(run_dir):
    path = os.path.join(run_dir, "history.csv")
    if not os.path.isfile(path):
        raise ConfigError(f"{run_dir}: no history.csv (not a run directory?)")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty history")
    mode = "unknown"
    mpath = os.path.join(run_dir, "manifest.json")
    if os.path.isfile(mpath):
        with open(mpath) as fh:
            manifest = json.load(fh)
        mode = manifest.get("config", {}).get("loop", {}).get("mode", "unknown")
    return rows, mode


def _report_plots(out_dir, table):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({"figure.figsize": (6.0, 4.2), "font.size": 10,
                         "axes.grid": True, "grid.alpha": 0.3})
    runs = sorted({row["run"] for row in table})
    written = []
    specs = [("objective_vs_nodes.png", "objective",
              "objective $J_\\varepsilon$"),
             ("estimator_vs_nodes.png", "eta_total",
              "combined estimator $\\eta^2$")]
    for fname, column, label in specs:
        fig, ax = plt.subplots()
        for name in runs:
            rows = [r for r in table if r["run"] == name]
            nodes = [int(r["nodes"]) for r in rows]
            vals = [float(r[column]) for r in rows]
            marker = "o" if rows[0]["mode"] == "adaptive" else "s"
            ax.loglog(nodes, vals, marker=marker, label=f"{name} ({rows[0]['mode']})")
        ax.set_xlabel("number of nodes")
        ax.set_ylabel(label)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(out_dir, fname)
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def cmd_report(args):
    if not args.runs:
        raise ConfigError("report needs at least one run directory")
    table = []
    labels = set()
    for run_dir in args.runs:
        rows, mode = _load_history(run_dir)
        label = os.path.basename(os.path.normpath(run_dir)) or run_dir
        if label in labels:
            label = f"{label}_{len(labels)}"
        labels.add(label)
        for row in rows:
            eta_total = (float(row["eta1_sq"]) + float(row["eta2_sq"])
                         + float(row["eta3_sq"]))
            table.append({"run": label, "mode": mode, **row,
                          "eta_total": repr(eta_total)})

    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.csv")
    columns = ["run", "mode", "k", "nodes", "objective",
               "eta1_sq", "eta2_sq", "eta3_sq", "eta_total", "marked"]
    with open(report_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(table)
    plot_paths = _report_plots(args.out, table)

    manifest = {
        "tool": "ischemia-afem",
        "version": __version__,
        "command": "report",
        "runs": [os.path.normpath(d) for d in args.runs],
        "files": _inventory(args.out),
    }
    _write_manifest(os.path.join(args.out, "manifest.json"), manifest)
    print(f"wrote {report_path} ({len(table)} rows from {len(args.runs)} runs)")
    for path in plot_paths:
        print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ischemia-afem",
        description="Recover conductivity inclusions from boundary data "
                    "with adaptive finite elements.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate",
                         help="solve the forward problem on a fine grid and "
                              "store boundary measurements")
    gen.add_argument("config", help="run configuration (INI)")
    gen.set_defaults(func=cmd_generate)

    rec = sub.add_parser("reconstruct",
                         help="run the adaptive or uniform inversion loop")
    rec.add_argument("config", help="run configuration (INI)")
    rec.add_argument("--threads", type=int, default=1,
                     help="parallel per-source solves; 1 is the "
                          "reproducibility mode (default)")
    rec.add_argument("--allow-inverse-crime", action="store_true",
                     help="permit reconstructing on the same grid the data "
                          "was generated on")
    rec.set_defaults(func=cmd_reconstruct)

    rep = sub.add_parser("report",
                         help="merge run histories into one table and plots")
    rep.add_argument("runs", nargs="+", help="run directories to merge")
    rep.add_argument("--out", default="report",
                     help="output directory (default: report)")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
