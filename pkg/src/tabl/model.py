"""Network topologies A/B/C, mini-batch training, evaluation and attention statistics."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers, linalg
from .data import class_counts
from .errors import NumericalError, ShapeError, ValidationError
from .layers import Activation
from .loss_metrics import ClassWeights, compute_metrics, confusion_matrix, softmax_head, weighted_ce
from .optim import OPTIMIZERS, SCHEDULE, LrSchedule, Optimizer, dropout_mask

log = logging.getLogger(__name__)

TOPOLOGIES = {
    "A": [(40, 10, 3, 1)],
    "B": [(40, 10, 120, 5), (120, 5, 3, 1)],
    "C": [(40, 10, 120, 5), (120, 5, 120, 5), (120, 5, 3, 1)],
}
LAYER_KINDS = ("BL", "TABL")
MAX_NORMS = (3.0, 5.0, 7.0)

# named random sub-streams derived from the run seed
STREAM_INIT, STREAM_SHUFFLE, STREAM_DROPOUT = 0, 1, 2


def substream(seed, stream):
    return np.random.default_rng([int(seed), stream])


@dataclass(frozen=True)
class NetworkSpec:
    topology: str = "A"
    final_layer: str = "TABL"
    hidden_activation: str = "relu"

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ValidationError(f"topology must be one of {sorted(TOPOLOGIES)}, got {self.topology!r}")
        if self.final_layer not in LAYER_KINDS:
            raise ValidationError(f"final layer must be one of {LAYER_KINDS}, got {self.final_layer!r}")
        Activation(self.hidden_activation)

    @property
    def layer_dims(self):
        return TOPOLOGIES[self.topology]

    @property
    def input_shape(self):
        return self.layer_dims[0][:2]

    @property
    def name(self):
        return f"{self.topology}({self.final_layer})"


def init_network(spec, seed=0, dtype=np.float64):
    """Hidden layers are ReLU BLs; the output layer is an identity BL or TABL."""
    rng = substream(seed, STREAM_INIT)
    params = []
    dims = spec.layer_dims
    for i, d in enumerate(dims):
        if i < len(dims) - 1:
            params.append(layers.init_bl(d, rng, spec.hidden_activation, dtype))
        elif spec.final_layer == "TABL":
            params.append(layers.init_tabl(d, rng, Activation.IDENTITY, dtype))
        else:
            params.append(layers.init_bl(d, rng, Activation.IDENTITY, dtype))
    return params


def n_params(params):
    return sum(p.n_params() for p in params)


def check_network(spec, params):
    dims = [tuple(p.dims) for p in params]
    if dims != [tuple(d) for d in spec.layer_dims]:
        raise ShapeError(f"parameters do not match topology {spec.name}", *dims)
    if params[-1].kind != spec.final_layer:
        raise ValidationError(f"final layer is {params[-1].kind}, spec says {spec.final_layer}")


def net_forward(x, spec, params, training=False, rng=None, dropout_rate=0.1):
    """Forward pass; returns ``(probabilities, caches)``.

    ``x`` is ``(40, 10)`` or ``(N, 40, 10)``; probabilities are ``(3, 1)`` or
    ``(N, 3, 1)``. Dropout follows every hidden layer in training mode.
    """
    x = np.asarray(x)
    if x.ndim not in (2, 3) or x.shape[-2:] != tuple(spec.input_shape):
        raise ShapeError(f"{spec.name} expects input windows of shape {spec.input_shape}", x.shape)
    caches = []
    h = x
    last = len(params) - 1
    for i, p in enumerate(params):
        h, cache = layers.layer_forward(h, p)
        mask = None
        if i < last and training and dropout_rate > 0:
            mask = dropout_mask(h.shape, dropout_rate, rng, h.dtype)
            h = h * mask
        caches.append((cache, mask))
    return softmax_head(h), caches


def net_backward(d_logits, caches, params):
    grads = [None] * len(params)
    d = d_logits
    for i in range(len(params) - 1, -1, -1):
        cache, mask = caches[i]
        if mask is not None:
            d = d * mask
        g = layers.layer_backward(d.astype(cache.y_bar.dtype, copy=False), cache, params[i])
        grads[i] = g
        d = g.d_x
    return grads


def predict(params, spec, x, batch_size=4096):
    out = []
    for start in range(0, len(x), batch_size):
        probs, _ = net_forward(x[start:start + batch_size], spec, params, training=False)
        out.append(probs[..., 0].argmax(axis=-1))
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def evaluate(params, spec, split, threads=1, chunk=4096):
    """Inference-mode metrics over every window of ``split``.

    With ``threads > 1`` chunks are scored concurrently and the confusion
    matrices are summed in chunk order.
    """
    if len(split) == 0:
        raise ValidationError("cannot evaluate on an empty split")
    starts = range(0, len(split), chunk)

    def score(start):
        sl = slice(start, start + chunk)
        return confusion_matrix(split.labels[sl], predict(params, spec, split.x[sl]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(score, starts))
    else:
        parts = [score(s) for s in starts]
    return compute_metrics(np.sum(parts, axis=0))


def attention_stats(params, spec, split, batch_size=4096):
    """Per true class, the mean attention on each temporal column of the final TABL.

    Averages ``A`` over its D' rows and over the class's samples; returns a
    ``(3, T)`` array with columns oldest -> newest (NaN rows for absent classes).
    """
    if params[-1].kind != "TABL":
        raise ValidationError("attention statistics need a TABL output layer; this network ends in a BL")
    t = params[-1].dims[1]
    sums = np.zeros((3, t))
    counts = np.zeros(3)
    for start in range(0, len(split), batch_size):
        sl = slice(start, start + batch_size)
        _, caches = net_forward(split.x[sl], spec, params, training=False)
        col = caches[-1][0].a.mean(axis=-2)  # (n, T)
        labels = split.labels[sl]
        np.add.at(sums, labels, col)
        counts += np.bincount(labels, minlength=3)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts[:, None]


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    max_epochs: int = 200
    batch_size: int = 256
    dropout: float = 0.1
    max_norm: float = 5.0
    horizon: int = 10
    setup: int = 2
    fold: int = None
    seed: int = 0
    c: float = 1e6
    schedule: tuple = SCHEDULE
    patience: int = 5
    dtype: str = "float64"
    threads: int = 1
    trace_attention: bool = True

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValidationError("max_epochs and batch_size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.max_norm is not None and float(self.max_norm) not in MAX_NORMS:
            raise ValidationError(f"max_norm must be one of {MAX_NORMS}, got {self.max_norm}")
        if self.setup not in (1, 2):
            raise ValidationError(f"setup must be 1 or 2, got {self.setup}")
        if self.setup == 1 and self.fold is not None and not 1 <= self.fold <= 9:
            raise ValidationError(f"fold must lie in 1..9, got {self.fold}")
        if self.c <= 0:
            raise ValidationError("loss constant c must be positive")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        linalg.resolve_dtype(self.dtype)
        self.schedule = tuple(float(v) for v in self.schedule)

    def to_dict(self):
        return asdict(self)


@dataclass
class AttentionTrace:
    """Entry 0 is the initial state; entry ``k`` is recorded after epoch ``k``."""

    attention: list = field(default_factory=list)  # per epoch: (3, T) nested lists
    lam: list = field(default_factory=list)  # per epoch: [lam per TABL layer]


@dataclass
class TrainResult:
    params: list
    loss: list
    lr: list
    train_accuracy: list
    trace: AttentionTrace
    metrics: object = None


def _record(trace, params, spec, train_set, config):
    trace.lam.append([p.lam for p in params if p.kind == "TABL"])
    if config.trace_attention and params[-1].kind == "TABL":
        trace.attention.append(attention_stats(params, spec, train_set).tolist())


def train(train_set, spec, config, test_set=None, params=None, weights=None, on_epoch=None):
    """Train with shuffled mini-batches and the plateau learning-rate schedule.

    Returns the final-epoch model (no early stopping) with per-epoch loss,
    learning rate, training accuracy and attention / lambda traces. Class
    weights come from ``train_set`` unless given.
    """
    if len(train_set) == 0:
        raise ValidationError("training split is empty")
    dtype = linalg.resolve_dtype(config.dtype)
    weights = weights or class_counts(train_set, config.c)
    if not isinstance(weights, ClassWeights):
        raise ValidationError("weights must be ClassWeights")
    params = params if params is not None else init_network(spec, config.seed, dtype)
    check_network(spec, params)
    x_all = np.asarray(train_set.x, dtype=dtype)
    labels = train_set.labels

    sched = LrSchedule(schedule=config.schedule, patience=config.patience)
    opt = Optimizer(config.optimizer, lr=sched.lr, max_norm=config.max_norm)
    shuffle_rng = substream(config.seed, STREAM_SHUFFLE)
    drop_rng = substream(config.seed, STREAM_DROPOUT)

    result = TrainResult(params=params, loss=[], lr=[], train_accuracy=[], trace=AttentionTrace())
    _record(result.trace, params, spec, train_set, config)

    n = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        lr_used = opt.lr
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb, yb = x_all[idx], labels[idx]
            probs, caches = net_forward(xb, spec, params, training=True, rng=drop_rng,
                                        dropout_rate=config.dropout)
            loss, d_logits = weighted_ce(probs, yb, weights)
            batch_loss = float(loss.sum())
            if not np.isfinite(batch_loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            grads = net_backward(d_logits / len(idx), caches, params)
            opt.step(params, grads)
            total_loss += batch_loss
            correct += int(np.sum(probs[..., 0].argmax(axis=-1) == yb))
        epoch_loss = total_loss / n
        result.loss.append(epoch_loss)
        result.lr.append(lr_used)
        result.train_accuracy.append(correct / n)
        _record(result.trace, params, spec, train_set, config)
        opt.lr = sched.update(epoch_loss)
        log.debug("epoch %d loss %.6g lr %g acc %.4f", epoch, epoch_loss, lr_used, correct / n)
        if on_epoch is not None:
            on_epoch(epoch, result)

    if test_set is not None and len(test_set):
        result.metrics = evaluate(params, spec, test_set, threads=config.threads)
    return result
