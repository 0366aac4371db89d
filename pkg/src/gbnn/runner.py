"""Experiment drivers shared by the command-line entry points.

Metrics are emitted as CSV rows with a fixed column order:

* per-epoch rows carry the stage's train/test MSE (boosted models) or the
  eval-mode cross-entropy and accuracy (joint baselines);
* rows with an empty ``epoch`` are per-iteration summaries of a boosted
  ensemble (iteration 0 describes the constant initial model).
"""
import csv
import io
import logging
import time

import numpy as np

from .boosting import BoostedEnsemble, boost_fit
from .data import (IMAGE, Preprocessor, fit_preprocessor, holdout_split, kfold, load_csv,
                   load_dataset, load_idx)
from .errors import ConfigError, DimensionError, GBNNError
from .network import build_network, fit_classification_joint, predict_raw_net
from .tensor import accuracy, cross_entropy

log = logging.getLogger("gbnn")

METRICS_COLUMNS = ("run_id", "iteration", "epoch", "train_ce", "test_ce", "train_acc",
                   "test_acc", "stage_train_mse", "stage_test_mse", "wall_seconds")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsSink:
    """Append-only metrics table, rendered as CSV on demand."""

    def __init__(self, record_time=False):
        self.rows = []
        self.record_time = record_time
        self._t0 = time.perf_counter()

    def add(self, **fields):
        unknown = set(fields) - set(METRICS_COLUMNS)
        if unknown:
            raise ValueError(f"unknown metrics fields {sorted(unknown)}")
        if self.record_time:
            fields["wall_seconds"] = round(time.perf_counter() - self._t0, 3)
        else:
            fields["wall_seconds"] = None
        self.rows.append(tuple(fields.get(c) for c in METRICS_COLUMNS))

    def elapsed(self):
        return time.perf_counter() - self._t0

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()


def read_metrics(path):
    """Parse a metrics CSV back into dicts (empty cells become ``None``)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for key, value in row.items():
                if value == "":
                    rec[key] = None
                elif key == "run_id":
                    rec[key] = value
                elif key in ("iteration", "epoch"):
                    rec[key] = int(value)
                else:
                    rec[key] = float(value)
            out.append(rec)
    return out


def _limit(ds, n):
    if n is None or n >= len(ds):
        return ds
    return ds.subset(np.arange(n))


def load_data(spec, resolve=lambda p: p, class_names=None):
    """Load the training set and, if configured, a separate test set."""
    if spec.format == "csv":
        train = load_csv(resolve(spec.path), spec.label_column, spec.has_header, class_names)
        test = (load_csv(resolve(spec.test_path), spec.label_column, spec.has_header,
                         train.class_names) if spec.test_path else None)
    elif spec.format == "idx":
        train = load_idx(resolve(spec.images), resolve(spec.labels), class_names)
        test = (load_idx(resolve(spec.test_images), resolve(spec.test_labels), train.class_names)
                if spec.test_images and spec.test_labels else None)
    else:
        train = load_dataset(resolve(spec.path))
        test = load_dataset(resolve(spec.test_path)) if spec.test_path else None
    train = _limit(train, spec.limit)
    if test is not None:
        test = _limit(test, spec.test_limit)
    return train, test


def preprocess_mode(spec, ds):
    if spec.preprocess is not None:
        return spec.preprocess
    return "rescale" if ds.kind == IMAGE else "standardize"


def fit_model(cfg, kind, train, test=None, lr=None, nu=None, sink=None, run_id="run",
              prep_mode="standardize"):
    """Preprocess, build and train one model of ``kind``.

    Returns ``(model, preprocessor, summary)``; ``summary`` holds final
    train/test accuracy and cross-entropy.
    """
    prep = fit_preprocessor(train, prep_mode)
    train_p = prep.apply(train)
    test_p = prep.apply(test) if test is not None else None
    rng = np.random.default_rng(cfg.seed)

    if kind.startswith("gb-"):
        bcfg = cfg.boost_config(kind, lr=lr, nu=nu)

        def on_epoch(t, epoch, mse, test_mse):
            if sink is not None:
                sink.add(run_id=run_id, iteration=t, epoch=epoch, stage_train_mse=mse,
                         stage_test_mse=test_mse)

        def on_iteration(rec):
            if sink is not None:
                sink.add(run_id=run_id, iteration=rec["iteration"], train_ce=rec["train_ce"],
                         test_ce=rec["test_ce"], train_acc=rec["train_acc"],
                         test_acc=rec["test_acc"])

        model, blog = boost_fit(train_p, bcfg, rng=rng, valid=test_p,
                                on_iteration=on_iteration, on_epoch=on_epoch)
        last = blog.iterations[-1]
        summary = {k: last[k] for k in ("train_ce", "train_acc", "test_ce", "test_acc")}
        summary["ensemble_size"] = len(model)
        summary["rhos"] = [r.tolist() for r in model.rhos]
        return model, prep, summary

    conv = cfg.filters if kind == "cnn" and cfg.conv is not False else None
    net = build_network(train.input_shape, train.num_classes,
                        hidden=(cfg.hidden_width,) * cfg.dense_layers,
                        conv_filters=conv, conv_dropouts=cfg.dropouts, rng=rng)
    summary = {}

    def on_epoch(epoch, tlog):
        raw = predict_raw_net(net, train_p.features)
        summary.update(train_ce=cross_entropy(train_p.labels_onehot, raw),
                       train_acc=accuracy(train_p.labels_onehot, raw),
                       test_ce=None, test_acc=None)
        if test_p is not None:
            traw = predict_raw_net(net, test_p.features)
            summary.update(test_ce=cross_entropy(test_p.labels_onehot, traw),
                           test_acc=accuracy(test_p.labels_onehot, traw))
        if sink is not None:
            sink.add(run_id=run_id, iteration=0, epoch=epoch + 1, **summary)

    tlog = fit_classification_joint(net, train_p.features, train_p.labels_onehot,
                                    cfg.train_config(lr), on_epoch=on_epoch)
    summary["epochs"] = tlog.epochs_run
    return net, prep, summary


def evaluate_model(model, ds):
    """Accuracy and cross-entropy of ``model`` on an already preprocessed ``ds``.

    Ensembles additionally get a ``prefix`` curve: metrics using the first t
    stages for t = 1..T.
    """
    stages = model.stages if isinstance(model, BoostedEnsemble) else [model]
    expected = stages[0].all_layers()[0]
    try:
        if isinstance(model, BoostedEnsemble):
            curve = list(model.staged_predict_raw(ds.features))
            raw = curve[-1]
        else:
            raw = predict_raw_net(model, ds.features)
            curve = []
    except DimensionError as exc:
        raise DimensionError(
            f"data with feature shape {ds.features.shape[1:]} does not fit the model "
            f"(first layer {expected!r}): {exc}") from exc
    if raw.shape[1] != ds.num_classes:
        raise DimensionError(
            f"model predicts {raw.shape[1]} classes, data has {ds.num_classes}")
    y = ds.labels_onehot
    result = {"n": len(ds), "accuracy": accuracy(y, raw), "cross_entropy": cross_entropy(y, raw)}
    if curve:
        result["prefix"] = [{"stages": t + 1, "accuracy": accuracy(y, r),
                             "cross_entropy": cross_entropy(y, r)} for t, r in enumerate(curve)]
    return result


def _grid_points(cfg, kind):
    nus = cfg.grid_nu if kind.startswith("gb-") else (None,)
    return [(lr, nu) for lr in cfg.grid_lr for nu in nus]


def select_by_inner_cv(cfg, kind, train, prep_mode, seed):
    """Pick (lr, nu) by mean inner-CV accuracy on ``train`` only.

    Ties go to the smaller learning rate, then the smaller shrinkage.
    """
    points = _grid_points(cfg, kind)
    if len(points) == 1:
        return points[0], []
    plan = kfold(len(train), cfg.inner_k, seed=seed)
    scored = []
    for lr, nu in points:
        accs = []
        for tr, va in plan.folds:
            model, prep, _ = fit_model(cfg, kind, train.subset(tr), lr=lr, nu=nu,
                                       prep_mode=prep_mode)
            accs.append(evaluate_model(model, prep.apply(train.subset(va)))["accuracy"])
        scored.append((float(np.mean(accs)), lr, nu))
    best = max(scored, key=lambda s: (s[0], -s[1], -(s[2] if s[2] is not None else 0.0)))
    return (best[1], best[2]), scored


class FoldFailure(GBNNError):
    def __init__(self, fold, cause):
        super().__init__(f"fold {fold} failed: {cause}")
        self.fold = fold
        self.cause = cause


def cross_validate(cfg, spec, dataset, kind, sink=None):
    """Outer k-fold CV with inner grid search; returns per-fold records."""
    prep_mode = preprocess_mode(spec, dataset)
    plan = kfold(len(dataset), cfg.k, seed=cfg.seed)
    folds = []
    for i, (tr, te) in enumerate(plan.folds):
        try:
            train, test = dataset.subset(tr), dataset.subset(te)
            (lr, nu), _ = select_by_inner_cv(cfg, kind, train, prep_mode, cfg.seed + 1000 + i)
            model, prep, summary = fit_model(cfg, kind, train, test, lr=lr, nu=nu, sink=sink,
                                             run_id=f"{spec.name}/{kind}/fold{i}",
                                             prep_mode=prep_mode)
        except (GBNNError, FloatingPointError) as exc:
            raise FoldFailure(i, exc) from exc
        log.info("%s %s fold %d: test acc %.4f (lr=%s nu=%s)", spec.name, kind, i,
                 summary["test_acc"], lr, nu)
        folds.append({"fold": i, "test_acc": summary["test_acc"], "lr": lr, "nu": nu,
                      "ensemble_size": summary.get("ensemble_size")})
    return folds


def make_holdout(cfg, train, test):
    if test is not None or cfg.protocol == "none":
        return train, test
    if cfg.protocol == "kfold":
        raise ConfigError("eval.protocol: kfold is only supported by the benchmark command")
    tr, te = holdout_split(len(train), cfg.test_fraction, seed=cfg.seed)
    return train.subset(tr), train.subset(te)


__all__ = ["METRICS_COLUMNS", "MetricsSink", "Preprocessor", "cross_validate",
           "evaluate_model", "fit_model", "load_data", "make_holdout", "read_metrics",
           "select_by_inner_cv"]
