"""Command-line interface: ``gbnn train|evaluate|benchmark``.

Exit codes: 0 success, 1 runtime failure (data, numeric divergence, bad
model file), 2 invalid configuration or arguments.
"""
import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import runner
from .config import read_config
from .data import Preprocessor, load_csv, load_dataset, load_idx
from .errors import ConfigError, DivergenceError, GBNNError
from .serialize import load_model, save_model

log = logging.getLogger("gbnn")

THREADS_ENV = "GBNN_THREADS"


def _overrides(args):
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        out["run.seed"] = str(args.seed)
    if getattr(args, "out_dir", None) is not None:
        out["run.out_dir"] = args.out_dir
    return out


def _thread_limit(args):
    threads = args.threads
    if threads is None and os.environ.get(THREADS_ENV):
        threads = int(os.environ[THREADS_ENV])
    if threads is None:
        return _Null()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


class _Null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _write_atomic(path, text):
    tmp = path + ".partial"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(type(obj).__name__)


def cmd_train(args):
    cfg = read_config(args.config, _overrides(args))
    for field in cfg.ignored:
        log.warning("%s is ignored for baseline model %s", field, cfg.model)
    spec = cfg.data
    train, test = runner.load_data(spec, cfg.resolve)
    train, test = runner.make_holdout(cfg, train, test)
    prep_mode = runner.preprocess_mode(spec, train)

    os.makedirs(cfg.out_dir, exist_ok=True)
    name = cfg.name or cfg.model
    sink = runner.MetricsSink(record_time=cfg.record_time)
    model, prep, summary = runner.fit_model(cfg, cfg.model, train, test, sink=sink,
                                            run_id=name, prep_mode=prep_mode)

    model_path = os.path.join(cfg.out_dir, "model.npz")
    extra = {"preprocess": prep.to_dict(), "class_names": train.class_names,
             "kind": cfg.model, "dataset_kind": train.kind,
             "data": {"label_column": spec.label_column, "has_header": spec.has_header}}
    save_model(model_path + ".partial", model, extra)
    os.replace(model_path + ".partial", model_path)
    _write_atomic(os.path.join(cfg.out_dir, "metrics.csv"), sink.to_csv())
    summary.update(model=cfg.model, model_path=model_path, n_train=len(train),
                   n_test=len(test) if test is not None else 0,
                   wall_seconds=round(sink.elapsed(), 3), config=cfg.echo())
    _write_atomic(os.path.join(cfg.out_dir, "summary.json"),
                  json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    print(f"{cfg.model}: train acc {summary['train_acc']:.4f}"
          + (f", test acc {summary['test_acc']:.4f}" if summary.get("test_acc") is not None else "")
          + (f", stages {summary['ensemble_size']}" if "ensemble_size" in summary else ""))
    return 0


def _load_eval_data(paths, extra, args):
    class_names = extra.get("class_names")
    data_opts = extra.get("data", {})
    if len(paths) == 2:
        return load_idx(paths[0], paths[1], class_names)
    if len(paths) != 1:
        raise ConfigError("evaluate takes one CSV/npz file or an IDX image+label pair")
    path = paths[0]
    if path.endswith(".npz"):
        return load_dataset(path)
    label = args.label_column if args.label_column is not None else data_opts.get("label_column", -1)
    try:
        label = int(label)
    except (TypeError, ValueError):
        pass
    header = args.has_header or bool(data_opts.get("has_header", False))
    return load_csv(path, label, header, class_names)


def cmd_evaluate(args):
    model, extra = load_model(args.model)
    ds = _load_eval_data(args.data, extra, args)
    prep = Preprocessor.from_dict(extra.get("preprocess", {"mode": "none"}))
    result = runner.evaluate_model(model, prep.apply(ds))
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    out = args.out or os.path.splitext(args.model)[0] + ".eval.json"
    _write_atomic(out, text + "\n")
    return 0


def cmd_benchmark(args):
    cfg = read_config(args.config, _overrides(args))
    os.makedirs(cfg.out_dir, exist_ok=True)
    sink = runner.MetricsSink(record_time=cfg.record_time)
    rows = []
    for spec in cfg.datasets:
        dataset, _ = runner.load_data(spec, cfg.resolve)
        for kind in cfg.models:
            folds = runner.cross_validate(cfg, spec, dataset, kind, sink)
            accs = np.array([f["test_acc"] for f in folds])
            rows.append({"dataset": spec.name, "model": kind,
                         "mean_acc": float(accs.mean()),
                         "std_acc": float(accs.std(ddof=1)) if len(accs) > 1 else 0.0,
                         "folds": len(folds),
                         "fold_acc": ";".join(repr(float(a)) for a in accs),
                         "selected": ";".join(f"lr={f['lr']!r}/nu={f['nu']!r}" for f in folds)})
            print(f"{spec.name} {kind}: {100 * rows[-1]['mean_acc']:.2f}% "
                  f"+/- {100 * rows[-1]['std_acc']:.2f}")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    _write_atomic(os.path.join(cfg.out_dir, cfg.table), buf.getvalue())
    _write_atomic(os.path.join(cfg.out_dir, "metrics.csv"), sink.to_csv())
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out-dir", dest="out_dir", help="override run.out_dir")
    common.add_argument("--threads", type=int,
                        help=f"BLAS thread count (default: ${THREADS_ENV} or library default)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override any config field; may be repeated")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gbnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train one model from a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a saved model on a dataset")
    p.add_argument("model")
    p.add_argument("data", nargs="+", help="CSV or .npz file, or IDX images + labels")
    p.add_argument("--label-column", dest="label_column")
    p.add_argument("--has-header", dest="has_header", action="store_true")
    p.add_argument("--out", help="where to write the metrics JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", parents=[common],
                       help="k-fold CV with inner grid search for several models")
    p.add_argument("config")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args):
            return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        where = ", ".join(f"{k} {v}" for k, v in (("iteration", exc.iteration),
                                                    ("epoch", exc.epoch)) if v is not None)
        print(f"error: training diverged ({where}): {exc}", file=sys.stderr)
        return 1
    except (GBNNError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
