"""Command-line pipeline: prep -> train-ae -> featurize -> classify, plus graph.

Every command writes its artifact atomically and exits 0 only once it is in
place; failures print ``deconvsax: error: ...`` and exit 1 (2 for usage
errors).
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import classify as K
from . import data as D
from . import graph as G
from . import net as N
from .config import ConfigError, PipelineConfig
from .container import FormatError, atomic_write
from .sax import SaxParams
from .synthetic import GENERATORS, write_synthetic
from .tensor import DimensionError, NumericError

log = logging.getLogger("deconvsax")

MODE_TITLES = {"sax": "SAX", "vector": "Vector"}


class CommandError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    flags = {key: getattr(args, attr, None) for key, attr in (
        ("seed", "seed"), ("epochs", "epochs"), ("filters1", "filters1"), ("filters2", "filters2"),
        ("pool_w", "pool_w"), ("learning_rate", "learning_rate"), ("batch_size", "batch_size"),
        ("workers", "workers"), ("norm", "norm"), ("Q", "Q"), ("quantizer", "quantizer"),
    )}
    if getattr(args, "sax", None) is not None:
        flags["sax"] = args.sax
    return cfg.override(**flags)


def _out(cfg: PipelineConfig, path) -> Path:
    path = cfg.resolve(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _sax_triplet(text: str) -> tuple[int, int, int]:
    try:
        n, w, a = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected n,w,a integers, got {text!r}") from None
    return n, w, a


def _model_for_split(model_path, ds: D.Dataset) -> N.ModelParams:
    params, _, _ = N.load_checkpoint(model_path)
    cfg = params.config
    if (cfg.channels, cfg.length) != (ds.channels, ds.padded_length):
        raise CommandError(
            f"model expects {cfg.channels} channels x {cfg.length} steps, "
            f"split has {ds.channels} x {ds.padded_length}"
        )
    return params


def _maps(params: N.ModelParams, samples: list[D.Sample]) -> np.ndarray:
    return N.encode_dataset(params, [s.values for s in samples])


def _class_names(ds: D.Dataset) -> dict[int, str]:
    inverse = {v: k for k, v in ds.label_map.items()}
    if set(inverse.values()) <= {"-1", "1"}:
        return {-1: "normal", 1: "abnormal"}
    return {lab: inverse.get(lab, str(lab)) for lab in (-1, 1)}


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", Path(name).stem) or "sample"


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = _config(args)
    root = write_synthetic(cfg.resolve(args.out_dir), args.kind, args.n_train, args.n_test, cfg.seed)
    print(f"wrote {args.n_train} train + {args.n_test} test samples to {root}")
    return 0


def cmd_import_cmu(args) -> int:
    cfg = _config(args)
    root = D.import_cmu(args.src, cfg.resolve(args.dst), args.n_train, cfg.seed)
    print(f"wrote native dataset to {root}")
    return 0


def cmd_prep(args) -> int:
    cfg = _config(args)
    ds = D.load_dataset(args.data_dir, format=args.format, name=args.name)
    out = _out(cfg, args.out)
    D.save_split(ds, out)
    print(f"{ds.name}\tchannels={ds.channels}\tlength={ds.padded_length}\ttrain={len(ds.train)}\ttest={len(ds.test)}")
    return 0


def cmd_train_ae(args) -> int:
    cfg = _config(args)
    ds = D.load_split(args.split)
    if not ds.train:
        raise CommandError(f"{args.split}: no training samples")
    net = cfg.network(ds.channels, ds.padded_length)
    tc = cfg.train_config()
    X, _ = ds.train_arrays()

    def report(epoch, loss):
        log.info("epoch %d/%d loss %.6g", epoch + 1, tc.epochs, loss)

    res = N.train(list(X), net, tc, on_epoch=report)
    out = _out(cfg, args.out)
    loss_path = _out(cfg, args.loss_log) if args.loss_log else out.with_name(out.name + ".loss.tsv")
    N.save_checkpoint(out, res.params, tc, {"dataset": ds.name, "epoch_losses": res.epoch_losses})
    atomic_write(loss_path, "epoch\tloss\n" + "".join(f"{i + 1}\t{v!r}\n" for i, v in enumerate(res.epoch_losses)))
    if res.epoch_losses:
        print(f"trained {tc.epochs} epochs: loss {res.epoch_losses[0]:.6g} -> {res.epoch_losses[-1]:.6g}")
    else:
        print("0 epochs: checkpoint holds the initialization")
    return 0


def cmd_featurize(args) -> int:
    cfg = _config(args)
    ds = D.load_split(args.split)
    params = _model_for_split(args.model, ds)
    if len(ds.train) < 2 or len(ds.test) < 1:
        raise CommandError(f"{args.split}: need >= 2 training and >= 1 test samples")
    train_maps, test_maps = _maps(params, ds.train), _maps(params, ds.test)
    y_train, y_test = ds.train_arrays()[1], ds.test_arrays()[1]
    space = cfg.grid()

    if args.mode == "vector":
        f = K.vector_features(train_maps, y_train, test_maps, y_test)
        result = K.grid_search_vector(f.X_train, f.y_train, space["C"], seed=cfg.seed)
    else:
        fixed = None if args.search else cfg.sax_params()
        if fixed is not None:
            space = {**space, "n": (fixed.n,), "w": (fixed.w,), "a": (fixed.a,)}
        result = K.grid_search_sax(train_maps, y_train, space, seed=cfg.seed, workers=cfg.workers, norm=cfg.norm)
        b = result.best
        f = K.sax_features(train_maps, y_train, test_maps, y_test, SaxParams(b["n"], b["w"], b["a"]), norm=cfg.norm)
    f.dataset = ds.name
    f.selection = dict(result.best)
    f.cv_rows = result.rows

    out = _out(cfg, args.out)
    cv_path = _out(cfg, args.cv_out) if args.cv_out else out.with_name(out.name + ".cv.tsv")
    table = result.table()
    K.save_features(out, f)
    atomic_write(cv_path, table)
    sys.stdout.write(table)
    print(f"selected {_describe(f.selection)}; {f.X_train.shape[1]} features")
    return 0


def _describe(sel: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in sel.items())


def cmd_classify(args) -> int:
    cfg = _config(args)
    rows: dict[str, dict[str, tuple[float, float]]] = {}
    notes = []
    labels: dict[str, bytes] = {}
    for path in args.features:
        f = K.load_features(path)
        if f.mode not in MODE_TITLES:
            raise FormatError(f"{path}: unknown feature mode {f.mode!r}")
        key = labels.setdefault(f.dataset, f.y_test.tobytes())
        if key != f.y_test.tobytes():
            raise CommandError(f"{path}: test labels differ from another feature file of dataset {f.dataset!r}")
        if f.mode in rows.get(f.dataset, {}):
            raise CommandError(f"{path}: duplicate {f.mode} features for dataset {f.dataset!r}")
        C = float(f.selection.get("C", 1.0))
        model = K.train_svm(f.X_train, f.y_train, C=C, seed=cfg.seed)
        test_err = K.error_rate(model, f.X_test, f.y_test)
        cv = f.selection.get("cv_error")
        if cv is None:
            cv = K.loo_error(f.X_train, f.y_train, C, cfg.seed)
        rows.setdefault(f.dataset, {})[f.mode] = (float(cv), test_err)
        notes.append(f"# {f.dataset} {f.mode}: {_describe({**f.params, 'C': C})}")
    modes = [m for m in MODE_TITLES if any(m in r for r in rows.values())]
    header = [""] + [f"{MODE_TITLES[m]} {col}" for m in modes for col in ("CV Train", "Test")]
    lines = ["\t".join(header)]
    for name, by_mode in rows.items():
        cells = [name]
        for m in modes:
            cells += [f"{v:.4f}" for v in by_mode[m]] if m in by_mode else ["", ""]
        lines.append("\t".join(cells))
    text = "\n".join(lines + notes) + "\n"
    atomic_write(_out(cfg, args.out), text)
    sys.stdout.write(text)
    return 0


def cmd_graph(args) -> int:
    cfg = _config(args)
    ds = D.load_split(args.split)
    params = _model_for_split(args.model, ds)
    qcfg = cfg.quantizer()
    out_dir = cfg.resolve(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out_dir}: {exc.strerror or exc}") from exc
    formats = [f.strip() for f in args.formats.split(",") if f.strip()]
    parts = ("train", "test") if args.part == "all" else (args.part,)
    names = _class_names(ds)
    per_class: dict[str, list[G.GraphStats]] = {names[-1]: [], names[1]: []}
    sample_lines = ["sample\tsplit\tclass\t" + "\t".join(G.GraphStats.FIELDS)]
    for part in parts:
        samples = getattr(ds, part)
        maps = _maps(params, samples)
        for s, sample_maps in zip(samples, maps):
            stem = f"{part}-{_safe(s.name)}"
            stats = []
            for k, series in enumerate(sample_maps):
                g = G.TransitionGraph.from_series(series, qcfg)
                for fmt in formats:
                    G.export_graph(g, out_dir / f"{stem}.map{k}.{fmt}", fmt)
                stats.append(G.graph_stats(g))
            st = G.mean_stats(stats)
            per_class[names[s.label]].append(st)
            sample_lines.append(f"{s.name}\t{part}\t{names[s.label]}\t" + "\t".join(repr(v) for v in st.as_tuple()))
    per_class = {k: v for k, v in per_class.items() if v}
    if not per_class:
        raise CommandError(f"{args.split}: no samples in part {args.part!r}")
    atomic_write(out_dir / "sample_stats.tsv", "\n".join(sample_lines) + "\n")
    table = G.stats_table(ds.name, per_class)
    atomic_write(out_dir / "network_stats.tsv", table)
    sys.stdout.write(table)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value pipeline configuration file")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    p = argparse.ArgumentParser(prog="deconvsax", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset in the native layout")
    s.add_argument("out_dir")
    s.add_argument("--kind", choices=sorted(GENERATORS), default="ecg_like")
    s.add_argument("--n-train", type=int, default=100)
    s.add_argument("--n-test", type=int, default=100)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("import-cmu", parents=[common], help="convert CMU normal/abnormal files to the native layout")
    s.add_argument("src")
    s.add_argument("dst")
    s.add_argument("--n-train", type=int, required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_import_cmu)

    s = sub.add_parser("prep", parents=[common], help="load, standardize and pad a dataset into a split file")
    s.add_argument("data_dir")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("native", "csv-manifest", "csv"), default="native")
    s.add_argument("--name")
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("train-ae", parents=[common], help="train the autoencoder on the training split")
    s.add_argument("split")
    s.add_argument("--out", required=True)
    s.add_argument("--loss-log", help="per-epoch loss TSV (default <out>.loss.tsv)")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--filters1", type=int)
    s.add_argument("--filters2", type=int)
    s.add_argument("--pool-w", type=int)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--batch-size", type=int)
    s.set_defaults(func=cmd_train_ae)

    s = sub.add_parser("featurize", parents=[common], help="encode a split and select features by LOO CV")
    s.add_argument("split")
    s.add_argument("model")
    s.add_argument("--mode", choices=("vector", "sax"), required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--sax", type=_sax_triplet, metavar="N,W,A", help="fixed SAX parameters (C still searched)")
    g.add_argument("--search", choices=("grid",), help="exhaustive search over the configured grid")
    s.add_argument("--out", required=True)
    s.add_argument("--cv-out", help="CV table TSV (default <out>.cv.tsv)")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--norm", choices=K.NORMS)
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("classify", parents=[common], help="fit the SVM and report CV and test error")
    s.add_argument("features", nargs="+")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("graph", parents=[common], help="export Markov transition graphs of the code maps")
    s.add_argument("split")
    s.add_argument("model")
    s.add_argument("--Q", type=int)
    s.add_argument("--quantizer", choices=("gaussian", "quantile"))
    s.add_argument("--out-dir", required=True)
    s.add_argument("--part", choices=("train", "test", "all"), default="all")
    s.add_argument("--formats", default="graphml,dot")
    s.set_defaults(func=cmd_graph)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, ConfigError, FormatError, DimensionError, NumericError, ValueError, OSError) as exc:
        print(f"deconvsax: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
