"""Sequential networks, optimizers and the two training loops.

``fit_regression`` trains a network on real-valued targets with the square
loss (used for every boosting stage); ``fit_classification_joint`` trains the
same kind of network end to end with softmax cross-entropy (the baselines).
"""
import copy
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .data import batches
from .errors import ConfigError, DimensionError, DivergenceError
from .tensor import log_softmax_rows, softmax_rows


class Sequential:
    """Ordered hidden layers followed by a linear output head.

    The head is a :class:`~gbnn.layers.Dense` layer whose outputs are raw,
    unbounded scores; no activation is ever applied after it.
    """

    def __init__(self, layers, head):
        if not isinstance(head, L.Dense):
            raise ConfigError("output head must be a Dense layer")
        self.layers = list(layers)
        self.head = head

    @property
    def num_outputs(self):
        return self.head.out_features

    def all_layers(self):
        return self.layers + [self.head]

    def hidden_dense(self):
        return [layer for layer in self.layers if isinstance(layer, L.Dense)]

    def trainable_layers(self):
        return [layer for layer in self.all_layers() if layer.trainable]

    def copy(self):
        return copy.deepcopy(self)

    def __repr__(self):
        inner = ",\n  ".join(repr(layer) for layer in self.all_layers())
        return f"Sequential(\n  {inner}\n)"


def net_forward(net, x, mode=L.EVAL, rng=None, start=0):
    """Run ``x`` through ``net.all_layers()[start:]``.

    Returns the raw head outputs and the per-layer caches needed by
    :func:`net_backward`.
    """
    caches = []
    out = x
    for layer in net.all_layers()[start:]:
        out, cache = layer.forward(out, mode=mode, rng=rng)
        caches.append(cache)
    return out, caches


def net_backward(net, grad, caches, start=0, stop=None):
    """Backpropagate ``grad`` from the head down to layer index ``stop``.

    ``caches`` must come from ``net_forward(..., start=start)``.  Layers below
    ``stop`` are skipped entirely; by default backprop halts at the lowest
    trainable layer since nothing beneath it would use the gradient.
    """
    stack = net.all_layers()
    if stop is None:
        stop = lowest_trainable(net)
    stop = max(stop, start)
    for idx in range(len(stack) - 1, stop - 1, -1):
        grad = stack[idx].backward(grad, caches[idx - start])
    return grad


def lowest_trainable(net):
    for idx, layer in enumerate(net.all_layers()):
        if layer.trainable:
            return idx
    return len(net.all_layers())


def _static_prefix(net):
    """Number of leading layers that can be evaluated once and cached.

    A prefix qualifies when none of its layers is trained and its output does
    not depend on train/eval mode or on the rng.
    """
    stop = lowest_trainable(net)
    for idx, layer in enumerate(net.all_layers()[:stop]):
        if isinstance(layer, L.BatchNorm) or (isinstance(layer, L.Dropout) and layer.rate > 0):
            return idx
    return stop


class Adam:
    """Adam with bias-corrected moments; frozen layers are never touched."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, layer_list):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for pos, layer in enumerate(layer_list):
            if not layer.trainable:
                continue
            for name, p in layer.params.items():
                g = layer.grads[name]
                key = (pos, name)
                if key not in self.m:
                    self.m[key] = np.zeros_like(p)
                    self.v[key] = np.zeros_like(p)
                m, v = self.m[key], self.v[key]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


class SGD:
    def __init__(self, lr=0.001, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, layer_list):
        for pos, layer in enumerate(layer_list):
            if not layer.trainable:
                continue
            for name, p in layer.params.items():
                g = layer.grads[name]
                if self.momentum:
                    vel = self.velocity.setdefault((pos, name), np.zeros_like(p))
                    vel *= self.momentum
                    vel -= self.lr * g
                    p += vel
                else:
                    p -= self.lr * g


OPTIMIZERS = {"adam": Adam, "sgd": SGD}


@dataclass
class TrainConfig:
    """Hyperparameters for one call of a training loop.

    ``min_delta`` is a relative improvement threshold: an epoch counts as an
    improvement when ``loss < best * (1 - min_delta)``.
    """

    epochs: int = 200
    batch_size: int = 128
    lr: float = 0.001
    optimizer: str = "adam"
    patience: int = 10
    min_delta: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.min_delta < 0:
            raise ConfigError("min_delta must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {sorted(OPTIMIZERS)}")

    def make_optimizer(self):
        return OPTIMIZERS[self.optimizer](lr=self.lr)


@dataclass
class TrainLog:
    """Per-epoch history of a training loop."""

    initial_loss: float = float("nan")
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    stopped_early: bool = False

    @property
    def epochs_run(self):
        return len(self.loss)

    @property
    def best_so_far(self):
        return list(np.minimum.accumulate(self.loss)) if self.loss else []


class _EarlyStopping:
    def __init__(self, patience, min_delta):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.wait = 0

    def update(self, loss):
        """Record ``loss``; return True when training should stop."""
        if loss < self.best * (1.0 - self.min_delta) or self.best == np.inf:
            self.best = loss
            self.wait = 0
        else:
            self.wait += 1
        return self.wait >= self.patience


def _check_trainable(net):
    if not net.trainable_layers():
        raise ConfigError("network has no trainable parameters")


def _prepare(net, x, targets, cfg):
    _check_trainable(net)
    n = x.shape[0]
    if targets.shape[0] != n:
        raise DimensionError(f"{n} inputs but {targets.shape[0]} targets")
    if targets.shape[1] != net.num_outputs:
        raise DimensionError(
            f"targets have {targets.shape[1]} columns, network has {net.num_outputs} outputs")

    start = _static_prefix(net)
    feats = x
    if start:
        feats = _eval_chunked(_Truncated(net, start), x)

    stack = net.all_layers()
    opt = cfg.make_optimizer()
    rng = np.random.default_rng(cfg.seed)
    stopper = _EarlyStopping(cfg.patience, cfg.min_delta)
    log = TrainLog()
    return feats, start, stack, opt, rng, stopper, log, n


class _Truncated:
    """View of the first ``stop`` layers of a network (for prefix caching)."""

    def __init__(self, net, stop):
        self._layers = net.all_layers()[:stop]

    def all_layers(self):
        return self._layers


def _run_epochs(net, feats, targets, cfg, start, stack, opt, rng, stopper, log, n,
                loss_and_grad, norm, on_epoch, iteration):
    # loss_and_grad(out, t) -> (summed batch loss, correct count, grad of the
    # per-batch mean loss); norm turns summed losses into the per-entry mean
    for epoch in range(cfg.epochs):
        total, correct = 0.0, 0
        for idx in batches(n, cfg.batch_size, seed=cfg.seed + epoch):
            out, caches = net_forward(net, feats[idx], mode=L.TRAIN, rng=rng, start=start)
            loss_sum, n_correct, grad = loss_and_grad(out, targets[idx])
            for layer in stack:
                if layer.trainable:
                    layer.zero_grad()
            net_backward(net, grad, caches, start=start)
            opt.step(stack)
            total += loss_sum
            correct += n_correct
        epoch_loss = total / (n * norm)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(
                f"non-finite training loss at epoch {epoch}"
                + (f", iteration {iteration}" if iteration is not None else ""),
                epoch=epoch, iteration=iteration)
        log.loss.append(float(epoch_loss))
        log.accuracy.append(correct / n)
        if on_epoch is not None:
            on_epoch(epoch, log)
        if stopper.update(epoch_loss):
            log.stopped_early = epoch + 1 < cfg.epochs
            break
    return log


def fit_regression(net, x, targets, cfg, on_epoch=None, iteration=None):
    """Minimise the mean squared error ``mean((net(x) - targets)**2)``.

    Only non-frozen layers are updated.  Training stops after ``cfg.epochs``
    epochs or once the epoch loss has not improved for ``cfg.patience``
    epochs.  ``on_epoch(epoch, log)`` is called after every epoch.
    """
    targets = np.asarray(targets, dtype=np.float64)
    feats, start, stack, opt, rng, stopper, log, n = _prepare(
        net, x, targets, cfg)
    k = targets.shape[1]

    out0 = _eval_chunked(net, feats, start=start)
    log.initial_loss = float(np.mean((out0 - targets) ** 2))
    if log.initial_loss == 0.0:
        return log

    def loss_and_grad(out, t):
        diff = out - t
        return float(np.sum(diff * diff)), 0, (2.0 / diff.size) * diff

    return _run_epochs(net, feats, targets, cfg, start, stack, opt, rng, stopper, log, n,
                       loss_and_grad, k, on_epoch, iteration)


def fit_classification_joint(net, x, labels_onehot, cfg, on_epoch=None):
    """Train every layer of ``net`` with softmax cross-entropy on its raw outputs.

    The log holds per-epoch mean cross-entropy and accuracy accumulated over
    the train-mode mini-batches.
    """
    labels_onehot = np.asarray(labels_onehot, dtype=np.float64)
    feats, start, stack, opt, rng, stopper, log, n = _prepare(
        net, x, labels_onehot, cfg)

    out0 = _eval_chunked(net, feats, start=start)
    log.initial_loss = float(-np.sum(labels_onehot * log_softmax_rows(out0)) / n)

    def loss_and_grad(out, y):
        logp = log_softmax_rows(out)
        loss_sum = float(-np.sum(y * logp))
        correct = int(np.sum(out.argmax(axis=1) == y.argmax(axis=1)))
        return loss_sum, correct, (softmax_rows(out) - y) / out.shape[0]

    return _run_epochs(net, feats, labels_onehot, cfg, start, stack, opt, rng, stopper, log, n,
                       loss_and_grad, 1, on_epoch, None)


def _eval_chunked(net, x, start=0, batch_size=256):
    # im2col buffers scale with the batch; chunking bounds peak memory
    outs = [net_forward(net, x[i:i + batch_size], mode=L.EVAL, start=start)[0]
            for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(outs, axis=0)


def predict_raw_net(net, x, batch_size=256):
    """Eval-mode raw outputs, evaluated in chunks to bound memory."""
    return _eval_chunked(net, x, batch_size=batch_size)


def _zero_weights(head):
    # a new boosting stage starts out adding nothing to the ensemble; a random
    # head would start the residual fit far off and tends to kill the ReLUs
    head.params["W"][:] = 0.0
    return head


def clone_and_grow(net, hidden_width, rng):
    """Copy ``net``, freeze its hidden dense layers, append Dense+ReLU and a
    fresh linear head with zero weights.  Convolutional layers keep their
    trainable state and ``net`` itself is left untouched."""
    if hidden_width < 1:
        raise ConfigError("hidden_width must be >= 1")
    grown = net.copy()
    dense = grown.hidden_dense()
    for layer in dense:
        layer.frozen = True
    in_features = dense[-1].out_features if dense else grown.head.in_features
    grown.layers += [L.Dense(in_features, hidden_width, rng=rng), L.ReLU()]
    grown.head = _zero_weights(L.Dense(hidden_width, net.num_outputs, rng=rng))
    return grown


def conv_stack(in_channels, filters=(32, 64, 128), dropouts=(0.2, 0.3, 0.4),
               kernel_size=3, bn_momentum=0.99, rng=None):
    """Blocks of Conv-ReLU-Conv-ReLU-BatchNorm-MaxPool-Dropout, then Flatten."""
    if len(filters) != len(dropouts):
        raise ConfigError("need one dropout rate per conv block")
    stack = []
    ch = in_channels
    for f, d in zip(filters, dropouts):
        stack += [L.Conv2D(ch, f, kernel_size, rng=rng), L.ReLU(),
                  L.Conv2D(f, f, kernel_size, rng=rng), L.ReLU(),
                  L.BatchNorm(f, momentum=bn_momentum), L.MaxPool2D(2), L.Dropout(d)]
        ch = f
    stack.append(L.Flatten())
    return stack


def conv_output_features(image_shape, filters):
    h, w, _ = image_shape
    for _ in filters:
        h, w = h // 2, w // 2
    if h < 1 or w < 1:
        raise ConfigError(f"image {image_shape} too small for {len(filters)} pooling blocks")
    return h * w * filters[-1]


def build_network(input_shape, num_classes, hidden=(20,), conv_filters=None,
                  conv_dropouts=(0.2, 0.3, 0.4), rng=None, zero_head=False):
    """Assemble an optional conv stack, ``len(hidden)`` Dense+ReLU pairs and
    a linear head with ``num_classes`` outputs (zero weights with
    ``zero_head``, as used for boosting stages).

    ``input_shape`` excludes the batch axis: ``(features,)`` for tabular data
    or ``(height, width, channels)`` for images.
    """
    rng = np.random.default_rng() if rng is None else rng
    stack = []
    if conv_filters:
        if len(input_shape) != 3:
            raise ConfigError("a conv stack needs (height, width, channels) inputs")
        stack += conv_stack(input_shape[2], tuple(conv_filters),
                            tuple(conv_dropouts[:len(conv_filters)]), rng=rng)
        width = conv_output_features(input_shape, conv_filters)
    else:
        width = int(np.prod(input_shape))
        if len(input_shape) != 1:
            stack.append(L.Flatten())
    for h in hidden:
        stack += [L.Dense(width, h, rng=rng), L.ReLU()]
        width = h
    head = L.Dense(width, num_classes, rng=rng)
    return Sequential(stack, _zero_weights(head) if zero_head else head)
