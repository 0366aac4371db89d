"""Gradient-boosted construction of deep networks (GB-DNN / GB-CNN).

Each boosting iteration copies the previous stage network, freezes its
hidden dense layers, appends one fresh dense layer plus a new linear head,
and regresses the result onto the softmax cross-entropy pseudo-residuals of
the ensemble built so far.  A per-class step length is then chosen by a line
search on the multiclass log-likelihood and folded, together with the
shrinkage factor, into the stage's output head, so the ensemble prediction is
simply the sum of the stage outputs.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import check_onehot
from .errors import ConfigError, DimensionError, NumericError, UsageError
from .network import (TrainConfig, build_network, clone_and_grow, fit_regression,
                      predict_raw_net)
from .tensor import accuracy, cross_entropy, softmax_rows

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def pseudo_residuals(labels_onehot, raw):
    """Negative gradient of the cross-entropy w.r.t. the raw scores: ``y - softmax(raw)``."""
    labels_onehot = np.asarray(labels_onehot, dtype=np.float64)
    raw = np.asarray(raw, dtype=np.float64)
    if labels_onehot.shape != raw.shape:
        raise DimensionError(f"labels {labels_onehot.shape} vs raw {raw.shape}")
    check_onehot(labels_onehot)
    if not np.isfinite(raw).all():
        raise NumericError("pseudo_residuals: non-finite raw scores")
    return labels_onehot - softmax_rows(raw)


def nll(rho, f_prev, s_out, labels):
    """Summed negative log-likelihood of ``softmax(f_prev + rho * s_out)``."""
    logits = f_prev + np.asarray(rho)[None, :] * s_out
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    return float(np.sum(lse) - np.sum(labels * logits))


def nll_grad(rho, f_prev, s_out, labels):
    p = softmax_rows(f_prev + np.asarray(rho)[None, :] * s_out)
    return ((p - labels) * s_out).sum(axis=0)


def golden_section(func, lo, hi, xtol=1e-9, max_iter=200):
    """Minimise a unimodal ``func`` on ``[lo, hi]``; returns ``(x, f(x))``.

    The interval end points are checked too, so a minimum sitting on the
    boundary is returned exactly.
    """
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(max_iter):
        if b - a <= xtol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = func(d)
    best = min(((fc, c), (fd, d), (func(lo), lo), (func(hi), hi)), key=lambda t: t[0])
    return best[1], best[0]


class _CoordinateObjective:
    """NLL as a function of one coordinate rho_k with the others held fixed.

    Evaluation is O(N): the log-sum-exp over the untouched columns is
    computed once per coordinate.
    """

    def __init__(self, f_prev, s_out, labels, rho, k):
        logits = f_prev + rho[None, :] * s_out
        others = np.delete(logits, k, axis=1)
        m = others.max(axis=1)
        self.rest = m + np.log(np.exp(others - m[:, None]).sum(axis=1))
        self.base = f_prev[:, k]
        self.s = s_out[:, k]
        self.y = labels[:, k]
        self.const = -float(np.sum(np.delete(labels * logits, k, axis=1)))

    def __call__(self, r):
        col = self.base + r * self.s
        value = float(np.sum(np.logaddexp(self.rest, col)) - np.sum(self.y * col)) + self.const
        if not math.isfinite(value):
            raise NumericError(f"line search: non-finite NLL at rho={r}")
        return value


def line_search(f_prev, s_out, labels, bounds=(0.0, 10.0), tol=1e-6, max_cycles=50):
    """Per-class step lengths minimising the ensemble NLL over a box.

    Coordinates are optimised one at a time by golden-section search and the
    sweep is repeated until a full cycle improves the objective by less than
    ``tol``.  The search starts from whichever of the all-zeros and all-ones
    vectors (when inside the box) scores better.  Classes whose stage output
    column is identically zero get ``rho = 1``.
    """
    f_prev = np.asarray(f_prev, dtype=np.float64)
    s_out = np.asarray(s_out, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if not f_prev.shape == s_out.shape == labels.shape or f_prev.ndim != 2:
        raise DimensionError(
            f"line_search shapes disagree: {f_prev.shape}, {s_out.shape}, {labels.shape}")
    lo, hi = float(bounds[0]), float(bounds[1])
    if not 0.0 <= lo < hi:
        raise ConfigError(f"line search bounds must satisfy 0 <= lo < hi, got {bounds}")
    k = f_prev.shape[1]

    def total(r):
        value = nll(r, f_prev, s_out, labels)
        if not math.isfinite(value):
            raise NumericError("line search: non-finite NLL")
        return value

    one = min(max(1.0, lo), hi)
    starts = [np.full(k, one)]
    if lo == 0.0:
        starts.append(np.zeros(k))
    active = np.flatnonzero(np.any(s_out != 0.0, axis=0))
    scored = []
    for start in starts:
        start[np.setdiff1d(np.arange(k), active)] = one
        scored.append((total(start), start))
    current, rho = min(scored, key=lambda t: t[0])
    rho = rho.copy()
    if active.size == 0:
        return rho

    span = hi - lo
    for _ in range(max_cycles):
        before = current
        for j in active:
            obj = _CoordinateObjective(f_prev, s_out, labels, rho, j)
            here = obj(rho[j])
            r, value = golden_section(obj, lo, hi, xtol=1e-10 * span)
            if value < here:
                rho[j] = r
        current = total(rho)
        if before - current < tol:
            break
    return rho


def fold_rho(stage, rho, nu):
    """Scale output column k of the stage head (weights and bias) by ``nu * rho[k]``."""
    rho = np.asarray(rho, dtype=np.float64).ravel()
    if rho.shape[0] != stage.num_outputs:
        raise DimensionError(f"rho has {rho.shape[0]} entries, head has {stage.num_outputs}")
    factor = nu * rho
    stage.head.params["W"] *= factor[None, :]
    stage.head.params["b"] *= factor


@dataclass
class BoostConfig:
    """Settings for :func:`boost_fit`.

    ``conv_filters`` switches between GB-CNN (a tuple of per-block filter
    counts) and GB-DNN (``None``).  ``tol`` is the relative train
    cross-entropy improvement below which boosting stops.
    """

    iterations: int = 10
    hidden_width: int = 20
    nu: float = 0.1
    train: TrainConfig = field(default_factory=TrainConfig)
    tol: float = 1e-4
    rho_bounds: tuple = (0.0, 10.0)
    rho_tol: float = 1e-6
    rho_max_cycles: int = 50
    conv_filters: tuple = None
    conv_dropouts: tuple = (0.2, 0.3, 0.4)
    init: str = "zero"

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("boosting iterations must be >= 1")
        if self.hidden_width < 1:
            raise ConfigError("hidden_width must be >= 1")
        if not 0.0 < self.nu <= 1.0:
            raise ConfigError(f"shrinkage nu must lie in (0, 1], got {self.nu}")
        lo, hi = self.rho_bounds
        if not 0.0 <= lo < hi:
            raise ConfigError(f"rho_bounds must satisfy 0 <= lo < hi, got {self.rho_bounds}")
        if self.init not in ("zero", "prior"):
            raise ConfigError("init must be 'zero' or 'prior'")

    @property
    def kind(self):
        return "gb-cnn" if self.conv_filters else "gb-dnn"


class BoostedEnsemble:
    """Additive model: ``raw(x) = init_raw + sum_t stage_t(x)``.

    Stage heads already carry their line-search and shrinkage factors.
    """

    def __init__(self, num_classes, nu, init="zero", init_raw=None, kind="gb-dnn"):
        self.stages = []
        self.num_classes = int(num_classes)
        self.nu = float(nu)
        self.init = init
        self.init_raw = (np.zeros(self.num_classes) if init_raw is None
                         else np.asarray(init_raw, dtype=np.float64))
        self.kind = kind
        self.rhos = []

    def __len__(self):
        return len(self.stages)

    def predict_raw(self, x, n_stages=None):
        if not self.stages:
            raise UsageError("ensemble has no stages")
        stages = self.stages if n_stages is None else self.stages[:n_stages]
        raw = np.tile(self.init_raw, (x.shape[0], 1))
        for stage in stages:
            raw += predict_raw_net(stage, x)
        return raw

    def staged_predict_raw(self, x):
        """Yield the raw prediction after each stage (fixed summation order)."""
        if not self.stages:
            raise UsageError("ensemble has no stages")
        raw = np.tile(self.init_raw, (x.shape[0], 1))
        for stage in self.stages:
            raw = raw + predict_raw_net(stage, x)
            yield raw

    def predict_proba(self, x):
        return softmax_rows(self.predict_raw(x))

    def predict_label(self, x):
        return np.argmax(self.predict_raw(x), axis=1)


@dataclass
class BoostLog:
    """Metrics gathered during :func:`boost_fit`.

    ``iterations`` holds one dict per boosting iteration (index 0 describes
    the initial constant model); ``stage_epochs[t]`` lists per-epoch
    ``(train_mse, test_mse)`` pairs for stage t+1.
    """

    iterations: list = field(default_factory=list)
    stage_epochs: list = field(default_factory=list)

    @property
    def train_ce(self):
        return [rec["train_ce"] for rec in self.iterations]


def _iteration_record(t, y, raw, valid_y, valid_raw, **extra):
    rec = {"iteration": t, "train_ce": cross_entropy(y, raw), "train_acc": accuracy(y, raw),
           "test_ce": None, "test_acc": None}
    if valid_y is not None:
        rec["test_ce"] = cross_entropy(valid_y, valid_raw)
        rec["test_acc"] = accuracy(valid_y, valid_raw)
    rec.update(extra)
    return rec


def _initial_raw(cfg, y):
    if cfg.init == "zero":
        return np.zeros(y.shape[1])
    prior = y.mean(axis=0)
    return np.log(np.clip(prior, 1e-12, None))


def boost_fit(train, cfg, rng=None, valid=None, on_iteration=None, on_epoch=None):
    """Build a boosted ensemble on ``train``.

    ``valid`` (optional) is only monitored, never fitted.  Callbacks:
    ``on_epoch(iteration, epoch, train_mse, test_mse)`` after each stage epoch
    and ``on_iteration(record)`` after each boosting iteration.
    Returns ``(ensemble, log)``.
    """
    if len(train) == 0:
        raise ConfigError("training set is empty")
    rng = np.random.default_rng(cfg.train.seed) if rng is None else rng
    x, y = train.features, train.labels_onehot
    k = y.shape[1]
    if k < 2:
        raise ConfigError("need at least two classes")
    vx = vy = None
    if valid is not None:
        vx, vy = valid.features, valid.labels_onehot

    init_raw = _initial_raw(cfg, y)
    ens = BoostedEnsemble(k, cfg.nu, cfg.init, init_raw, cfg.kind)
    raw = np.tile(init_raw, (x.shape[0], 1))
    vraw = np.tile(init_raw, (vx.shape[0], 1)) if vx is not None else None
    log = BoostLog()
    rec = _iteration_record(0, y, raw, vy, vraw, epochs=0, rho=None)
    log.iterations.append(rec)
    if on_iteration is not None:
        on_iteration(rec)

    net = None
    for t in range(cfg.iterations):
        if net is None:
            net = build_network(train.input_shape, k, hidden=(cfg.hidden_width,),
                                conv_filters=cfg.conv_filters,
                                conv_dropouts=cfg.conv_dropouts, rng=rng, zero_head=True)
        else:
            net = clone_and_grow(net, cfg.hidden_width, rng)

        residual = pseudo_residuals(y, raw)
        vresidual = pseudo_residuals(vy, vraw) if vx is not None else None
        epochs = []

        def record_epoch(epoch, tlog, _net=net, _vres=vresidual, _t=t):
            test_mse = None
            if _vres is not None:
                test_mse = float(np.mean((predict_raw_net(_net, vx) - _vres) ** 2))
            epochs.append((tlog.loss[-1], test_mse))
            if on_epoch is not None:
                on_epoch(_t + 1, epoch + 1, tlog.loss[-1], test_mse)

        stage_cfg = replace(cfg.train, seed=cfg.train.seed + t)
        fit_regression(net, x, residual, stage_cfg, on_epoch=record_epoch, iteration=t + 1)
        log.stage_epochs.append(epochs)

        s_out = predict_raw_net(net, x)
        rho = line_search(raw, s_out, y, cfg.rho_bounds, cfg.rho_tol, cfg.rho_max_cycles)
        fold_rho(net, rho, cfg.nu)
        stage = net.copy()
        ens.stages.append(stage)
        ens.rhos.append(rho)

        prev_ce = log.iterations[-1]["train_ce"]
        raw = raw + predict_raw_net(stage, x)
        if vx is not None:
            vraw = vraw + predict_raw_net(stage, vx)
        rec = _iteration_record(t + 1, y, raw, vy, vraw, epochs=len(epochs), rho=rho.tolist())
        log.iterations.append(rec)
        if on_iteration is not None:
            on_iteration(rec)
        if prev_ce - rec["train_ce"] < cfg.tol * prev_ce:
            break
    return ens, log


def frozen_dense_snapshot(net):
    """Copies of the frozen hidden dense parameters (for freezing checks)."""
    return [{name: p.copy() for name, p in layer.params.items()}
            for layer in net.hidden_dense() if layer.frozen]


__all__ = ["BoostConfig", "BoostLog", "BoostedEnsemble", "boost_fit", "fold_rho",
           "frozen_dense_snapshot", "golden_section", "line_search", "nll", "nll_grad",
           "pseudo_residuals"]
