"""Command-line entry point: ``snntopo <subcommand> ...``."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import resource
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, analysis, archspec, encoder, fixtures, maskgen, ramanujan, ranking
from . import topometrics as tm

OUTPUT_ROOT_ENV = "SNNTOPO_OUTPUT_ROOT"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# --- manifests -------------------------------------------------------------------

def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _peak_rss_mb() -> float:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


class RunManifest:
    """Provenance sidecar: version, command, config hash, seeds, input digests, stage stats."""

    def __init__(self, command: str, config: dict, seeds: dict):
        self.command = command
        self.config = config
        self.seeds = seeds
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.stages: list[dict] = []

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def add_input(self, path: str | Path) -> None:
        path = Path(path)
        if path.is_file():
            self.inputs[str(path)] = file_digest(path)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:  # tag anything else with the stage that failed
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        finally:
            self.stages.append({"stage": name, "seconds": round(time.perf_counter() - t0, 6),
                                "peak_rss_mb": round(_peak_rss_mb(), 1)})

    def to_dict(self) -> dict:
        return {"tool": "snntopo", "version": __version__, "command": self.command,
                "config": self.config, "config_hash": self.config_hash, "seeds": self.seeds,
                "inputs": self.inputs, "outputs": self.outputs, "stages": self.stages}

    def write(self, path: Path) -> Path:
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str) + "\n")
        return path


def manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def resolve_out(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# --- shared loaders --------------------------------------------------------------

def load_spec(args, stage: str = "arch") -> archspec.ArchitectureSpec:
    kw = {}
    if getattr(args, "input_size", None):
        kw["input_size"] = tuple(args.input_size)
    if getattr(args, "n_classes", None):
        kw["n_classes"] = args.n_classes
    try:
        return archspec.load_architecture(args.arch, **kw)
    except (OSError, KeyError, ValueError) as exc:
        raise StageError(stage, f"cannot load architecture {args.arch!r}: {exc}") from exc


def load_mask_file(path: str, stage: str = "mask") -> maskgen.SparseMask:
    if not Path(path).exists():
        raise StageError(stage, f"mask file not found: {path}")
    return maskgen.load_mask(path)


def metric_config(args) -> tm.MetricConfig:
    return tm.MetricConfig(motif_size=args.motif_size, motif_edge_budget=args.motif_edge_budget,
                           seed=args.seed, exclude_padding=args.exclude_padding,
                           lanczos_max_iter=args.lanczos_max_iter, workers=args.workers)


KEY_COLUMNS = ("architecture", "dataset", "sparsity", "algorithm", "encoding", "seed")


def _keys(args, spec_name: str, encoding: str, sparsity) -> dict:
    keys = {"architecture": spec_name, "dataset": "", "sparsity": sparsity, "algorithm": "",
            "encoding": encoding, "seed": args.seed}
    for item in getattr(args, "key", None) or []:
        k, _, v = item.partition("=")
        if k not in KEY_COLUMNS:
            raise StageError("metrics", f"unknown key column {k!r}; choose from {KEY_COLUMNS}")
        keys[k] = v
    return keys


# --- subcommands -----------------------------------------------------------------

def cmd_mask(args, man: RunManifest) -> Path:
    out = resolve_out(args.out)
    with man.stage("arch"):
        spec = load_spec(args)
        if Path(args.arch).is_file():
            man.add_input(args.arch)
    with man.stage("mask"):
        if args.import_dense:
            man.add_input(args.import_dense)
            with np.load(args.import_dense) as data:
                tensors = {int(k.split("_")[1]): data[k] for k in data.files}
            mask = maskgen.from_dense(spec, tensors)
        else:
            if args.sparsity is None:
                raise StageError("mask", "--sparsity is required with --method")
            mask = maskgen.generate(args.method, spec, args.sparsity, args.seed, exclude=args.exclude)
        if args.init != "none":
            mask = maskgen.attach_weights(mask, spec, args.seed, maskgen.Init(args.init))
        maskgen.save_mask(mask, out)
    rep = maskgen.density_report(mask)
    print(f"mask: {spec.name} method={args.method if not args.import_dense else 'import'} "
          f"global density {rep.global_density:.6f} over {len(mask.layers)} layers -> {out}")
    return out


def cmd_encode(args, man: RunManifest) -> Path:
    out = resolve_out(args.out)
    with man.stage("arch"):
        spec = load_spec(args)
    with man.stage("mask"):
        mask = load_mask_file(args.mask)
        man.add_input(args.mask)
    with man.stage("encode"):
        g = encoder.encode_network(spec, mask, args.encoding, args.weighted, not args.exclude_padding)
        encoder.save_graph(g, out)
    print(f"encode: {args.encoding} graph with {g.n_nodes} nodes, {g.n_edges} edges, "
          f"{g.partition_sizes.size} partitions -> {out}")
    return out


def cmd_metrics(args, man: RunManifest) -> Path:
    out = resolve_out(args.out)
    cfg = metric_config(args)
    rows = []
    if args.graph:
        for path in args.graph:
            with man.stage("load"):
                g = encoder.load_graph(path)
                man.add_input(path)
            with man.stage("metrics"):
                vec = tm.compute_all(g, cfg)
            rows.append((_keys(args, Path(path).stem, g.kind, ""), vec))
    else:
        if not (args.arch and args.mask):
            raise StageError("metrics", "give --graph FILE or both --arch and --mask")
        with man.stage("arch"):
            spec = load_spec(args)
        with man.stage("mask"):
            mask = load_mask_file(args.mask)
            man.add_input(args.mask)
        with man.stage("encode"):
            g = encoder.encode_network(spec, mask, args.encoding, args.weighted, True)
        with man.stage("metrics"):
            vec = tm.compute_all(g, cfg)
        rows.append((_keys(args, spec.name, args.encoding, mask.meta.get("sparsity", "")), vec))
    tm.write_metrics_csv(out, rows, KEY_COLUMNS)
    for keys, vec in rows:
        print(f"metrics: {keys['architecture']} |V|={vec.meta['n_nodes']} |E|={vec.meta['n_edges']} "
              f"motif sampling {vec.meta['motif_sampling_fraction']:.3g} -> {out}")
    return out


def cmd_ramanujan(args, man: RunManifest) -> Path:
    out = resolve_out(args.out)
    with man.stage("arch"):
        spec = load_spec(args)
    with man.stage("mask"):
        mask = load_mask_file(args.mask)
        man.add_input(args.mask)
    with man.stage("ramanujan"):
        rep = ramanujan.network_report(spec, mask, args.encoding, args.seed)
        corr = ramanujan.density_correlation(rep.layers)
        doc = rep.to_dict()
        doc["correlation_with_density"] = {k: (None if v != v else v) for k, v in corr.correlations.items()}
        doc["notes"] = corr.notes
        out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        if args.series:
            corr.write_series_csv(resolve_out(args.series))
    feasible = sum(layer.feasible for layer in rep.layers)
    print(f"ramanujan: {feasible}/{len(rep.layers)} feasible layers; r(density) = "
          + ", ".join(f"{k}={v:.3f}" for k, v in corr.correlations.items()) + f" -> {out}")
    return out


def _regression_config(args) -> analysis.RegressionConfig:
    cfg = analysis.RegressionConfig(k_folds=args.folds, runs=args.runs, seed=args.seed, workers=args.workers)
    if args.regressors:
        cfg.regressors = tuple(args.regressors)
    return cfg


def cmd_analyze(args, man: RunManifest) -> Path:
    out = resolve_out(args.out)
    with man.stage("load"):
        acc = analysis.load_accuracy_rows(args.records)
        metrics = tm.read_metrics_csv(args.topometrics)
        man.add_input(args.records)
        man.add_input(args.topometrics)
        records, notes = analysis.join_records(acc, metrics)
    with man.stage("regress"):
        rep = analysis.run_regression(records, args.scenario, _regression_config(args))
        rep.notes = notes
        rep.save(out)
    print(f"analyze: scenario {rep.scenario}, {rep.n_records} records")
    for name, s in rep.regressors.items():
        print(f"  {name:<10} adjR2 {s.adj_r2_mean:.4f} +- {s.adj_r2_std:.4f}  MAE {s.mae_mean:.4g}")
    return out


def _metric_table(path: str) -> dict[tuple[str, float], dict[str, np.ndarray]]:
    """Topometric vectors grouped by (architecture, sparsity), min-max scaled over the file."""
    rows = tm.read_metrics_csv(path)
    if not rows:
        raise StageError("rank", f"{path}: no rows")
    X = ranking.minmax_columns(np.array([[float(r[f]) for f in tm.FEATURES] for r in rows]))
    cells: dict[tuple, dict[str, np.ndarray]] = {}
    for r, x in zip(rows, X):
        cells.setdefault((r["architecture"], float(r["sparsity"] or 0.0)), {})[r["algorithm"]] = x
    return cells


def cmd_rank(args, man: RunManifest) -> Path:
    if args.rank_cmd == "eval":
        return cmd_rank_eval(args, man)
    for name in ("topometrics", "importance_arch", "importance_sparsity", "out"):
        if not getattr(args, name):
            raise StageError("rank", f"--{name.replace('_', '-')} is required")
    out = resolve_out(args.out)
    with man.stage("rank"):
        for p in (args.topometrics, args.importance_arch, args.importance_sparsity):
            man.add_input(p)
        w_arch = analysis.load_importance(args.importance_arch)
        w_sp = analysis.load_importance(args.importance_sparsity)
        result, strategy_rows = [], []
        for (arch, s), algs in sorted(_metric_table(args.topometrics).items()):
            ranked = ranking.rank_algorithms(algs, w_arch, w_sp)
            result.append({"architecture": arch, "sparsity": s, "order": ranked.names,
                           "coefficients": ranked.scores, "ties": [list(t) for t in ranked.ties]})
            strategy_rows += [(arch, s, n, c) for n, c in zip(ranked.names, ranked.scores)]
        out.write_text(json.dumps({"rankings": result}, indent=2, sort_keys=True) + "\n")
        if args.strategy_csv:
            ranking.write_strategy_csv(resolve_out(args.strategy_csv), strategy_rows)
    for r in result:
        print(f"rank: {r['architecture']} s={r['sparsity']}: " + " < ".join(r["order"]))
    return out


def cmd_rank_eval(args, man: RunManifest) -> Path:
    out = resolve_out(args.out)
    with man.stage("rank-eval"):
        rows = analysis.load_accuracy_rows(args.records)
        man.add_input(args.records)
        strategies = ranking.load_strategies(args.strategies)
        table = ranking.evaluate_strategies(rows, strategies)
        ranking.write_evaluation_csv(out, table)
    print(f"rank eval: {len(strategies)} strategies, {len(table)} rows -> {out}")
    return out


def cmd_fixtures(args, man: RunManifest) -> Path:
    out = resolve_out(args.out)
    with man.stage("fixtures"):
        written = fixtures.install(out)
    man.outputs.extend(str(p) for p in written)
    print(f"fixtures: {len(written)} files -> {out}")
    return out


def cmd_pipeline(args, man: RunManifest) -> Path:
    """mask -> encode -> metrics -> ramanujan, staged in a temp dir and moved into place."""
    final = resolve_out(args.out)
    occupied = final.exists() and (not final.is_dir() or any(final.iterdir()))
    if occupied and not args.force:
        raise StageError("pipeline", f"output {final} exists (use --force)")
    tmp = Path(tempfile.mkdtemp(prefix=".snntopo-", dir=final.parent))
    try:
        with man.stage("arch"):
            spec = load_spec(args)
        with man.stage("mask"):
            if args.mask:
                mask = load_mask_file(args.mask)
                man.add_input(args.mask)
            else:
                mask = maskgen.generate(args.method, spec, args.sparsity, args.seed)
                if args.init != "none":
                    mask = maskgen.attach_weights(mask, spec, args.seed, maskgen.Init(args.init))
            maskgen.save_mask(mask, tmp / "mask.npz")
        with man.stage("encode"):
            g = encoder.encode_network(spec, mask, args.encoding, args.weighted, True)
            encoder.save_graph(g, tmp / "graph.npz")
        with man.stage("metrics"):
            vec = tm.compute_all(g, metric_config(args))
            keys = _keys(args, spec.name, args.encoding, mask.meta.get("sparsity", args.sparsity))
            keys["algorithm"] = keys["algorithm"] or mask.meta.get("method", "")
            tm.write_metrics_csv(tmp / "topometrics.csv", [(keys, vec)], KEY_COLUMNS)
        if not args.skip_ramanujan:
            with man.stage("ramanujan"):
                rep = ramanujan.network_report(spec, mask, "rolled", args.seed)
                rep.save(tmp / "ramanujan.json")
                ramanujan.density_correlation(rep.layers).write_series_csv(tmp / "ramanujan_series.csv")
        man.outputs.extend(sorted(p.name for p in tmp.iterdir()))
        if final.exists():
            shutil.rmtree(final) if final.is_dir() else final.unlink()
        tmp.rename(final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    print(f"pipeline: {spec.name} |V|={g.n_nodes} |E|={g.n_edges} -> {final}")
    return final


# --- argument parsing ------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--workers", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--input-size", type=int, nargs=2, metavar=("H", "W"),
                   help="override the input resolution (reduced-scale mode)")
    return p


def _metric_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--motif-size", type=int, choices=(3, 4), default=None)
    p.add_argument("--motif-edge-budget", type=int, default=tm.MetricConfig.motif_edge_budget)
    p.add_argument("--lanczos-max-iter", type=int, default=None)
    p.add_argument("--exclude-padding", action="store_true", help="drop padding nodes before measuring")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="snntopo", description=__doc__)
    parser.add_argument("--version", action="version", version=f"snntopo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", parents=[common], help="generate or import a sparse mask")
    p.add_argument("--arch", required=True, help="architecture JSON file or bundled name")
    p.add_argument("--method", choices=sorted(maskgen.GENERATORS), default="erk")
    p.add_argument("--sparsity", type=float)
    p.add_argument("--import-dense", metavar="NPZ", help="import dense 0/1 tensors named layer_<index>")
    p.add_argument("--exclude", type=int, nargs="*", default=(), help="layer indices kept dense")
    p.add_argument("--init", choices=["none"] + [i.value for i in maskgen.Init], default="none")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("encode", parents=[common], help="build a graph encoding")
    p.add_argument("--arch", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--encoding", choices=("unrolled", "rolled", "rolled-channel"), default="unrolled")
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--exclude-padding", action="store_true", help="do not create padding nodes")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--out", required=True, help=".npz for binary CSR, anything else for an edge list")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("metrics", parents=[common], help="compute the topometrics")
    p.add_argument("--graph", nargs="+", help="graph files written by 'encode'")
    p.add_argument("--arch")
    p.add_argument("--mask")
    p.add_argument("--encoding", choices=("unrolled", "rolled", "rolled-channel"), default="unrolled")
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--key", action="append", metavar="COL=VALUE",
                   help=f"set a key column ({', '.join(KEY_COLUMNS)})")
    p.add_argument("--n-classes", type=int)
    _metric_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("ramanujan", parents=[common], help="Ramanujan-bound layer metrics")
    p.add_argument("--arch", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--encoding", choices=("rolled", "rolled-channel", "unrolled"), default="rolled")
    p.add_argument("--series", help="also write the sum-normalized per-layer series CSV")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ramanujan)

    p = sub.add_parser("analyze", parents=[common], help="accuracy-drop regression")
    asub = p.add_subparsers(dest="analyze_cmd", required=True)
    r = asub.add_parser("regress", parents=[common])
    r.add_argument("--records", required=True, help="accuracy CSV")
    r.add_argument("--topometrics", required=True, help="metrics CSV")
    r.add_argument("--scenario", required=True, help="sparsity:S or arch:NAME")
    r.add_argument("--runs", type=int, default=100)
    r.add_argument("--folds", type=int, default=5)
    r.add_argument("--regressors", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_analyze)

    p = sub.add_parser("rank", parents=[common], help="rank algorithms / evaluate rankings")
    p.add_argument("--topometrics")
    p.add_argument("--importance-arch")
    p.add_argument("--importance-sparsity")
    p.add_argument("--strategy-csv", help="also write the ranking as a strategy CSV")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank, rank_cmd=None)
    rsub = p.add_subparsers(dest="rank_cmd")
    e = rsub.add_parser("eval", parents=[common])
    e.add_argument("--records", required=True)
    e.add_argument("--strategies", required=True, help="directory of strategy CSVs")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_rank)

    p = sub.add_parser("pipeline", parents=[common], help="mask, encode, metrics and ramanujan in one go")
    p.add_argument("--arch", required=True)
    p.add_argument("--method", choices=sorted(maskgen.GENERATORS), default="erk")
    p.add_argument("--sparsity", type=float, default=0.9)
    p.add_argument("--mask", help="use this mask instead of generating one")
    p.add_argument("--init", choices=["none"] + [i.value for i in maskgen.Init], default="none")
    p.add_argument("--encoding", choices=("unrolled", "rolled", "rolled-channel"), default="unrolled")
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--key", action="append", metavar="COL=VALUE")
    p.add_argument("--skip-ramanujan", action="store_true")
    p.add_argument("--force", action="store_true", help="replace an existing output directory")
    p.add_argument("--n-classes", type=int)
    _metric_opts(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("fixtures", parents=[common], help="install bundled data")
    p.add_argument("--out", required=True, help="destination directory")
    p.set_defaults(func=cmd_fixtures)
    return parser


def _manifest_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    argv = sys.argv[1:] if argv is None else argv
    man = RunManifest(" ".join(["snntopo"] + list(argv)), _manifest_config(args), {"seed": args.seed})
    try:
        out = args.func(args, man)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    if not man.outputs:
        man.outputs.append(str(out))
    man.write(manifest_path(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
