"""Optimizers, plateau learning-rate schedule, dropout and max-norm."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .layers import apply_constraints

SCHEDULE = (0.01, 0.005, 0.001, 0.0005, 0.0001)
OPTIMIZERS = ("sgd_nesterov", "adam")


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = SCHEDULE[0]
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValidationError(f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZERS}")


def _check(param, grad):
    param = np.asarray(param, dtype=np.float64) if np.isscalar(param) else param
    grad = np.asarray(grad)
    if np.shape(param) != np.shape(grad):
        raise ShapeError("parameter and gradient shapes differ", np.shape(param), np.shape(grad))
    return param, grad


def sgd_nesterov_step(param, grad, state, key="param"):
    """``v <- mu v - lr g``; ``theta <- theta + mu v - lr g``. Returns the new parameter."""
    param, grad = _check(param, grad)
    v = state.buffers.get(("v", key))
    if v is None:
        v = np.zeros_like(param)
    v = state.momentum * v - state.lr * grad
    state.buffers[("v", key)] = v
    return param + state.momentum * v - state.lr * grad


def adam_step(param, grad, state, key="param"):
    """Bias-corrected Adam. Returns the new parameter."""
    param, grad = _check(param, grad)
    m = state.buffers.get(("m", key), np.zeros_like(param))
    v = state.buffers.get(("v", key), np.zeros_like(param))
    t = state.buffers.get(("t", key), 0) + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
    state.buffers[("m", key)] = m
    state.buffers[("v", key)] = v
    state.buffers[("t", key)] = t
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class LrSchedule:
    """Step down ``SCHEDULE`` whenever the epoch training loss stops improving.

    An epoch improves if its loss is below ``best_loss - tol``. After
    ``patience`` consecutive non-improving epochs the cursor advances
    (saturating at the last entry) and the wait counter resets.
    """

    schedule: tuple = SCHEDULE
    patience: int = 5
    tol: float = 1e-9
    cursor: int = 0
    best_loss: float = float("inf")
    wait: int = 0

    def __post_init__(self):
        self.schedule = tuple(float(v) for v in self.schedule)
        if not self.schedule:
            raise ValidationError("learning-rate schedule is empty")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")

    @property
    def lr(self):
        return self.schedule[self.cursor]

    def update(self, epoch_train_loss):
        loss = float(epoch_train_loss)
        if not np.isfinite(loss):
            raise ValidationError(f"epoch loss is not finite: {loss}")
        if loss < self.best_loss - self.tol:
            self.best_loss = loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.cursor = min(self.cursor + 1, len(self.schedule) - 1)
                self.wait = 0
        return self.lr


def schedule_update(sched, epoch_train_loss):
    return sched.update(epoch_train_loss)


def dropout_mask(shape, rate, rng, dtype=np.float64):
    """Inverted-dropout mask: 0 with probability ``rate``, else ``1/(1-rate)``."""
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def dropout(activations, rate, rng, training=True, return_mask=False):
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {rate}")
    x = np.asarray(activations)
    if not training or rate == 0.0:
        return (x, None) if return_mask else x
    mask = dropout_mask(x.shape, rate, rng, x.dtype)
    return (x * mask, mask) if return_mask else x * mask


def max_norm_project(w, bound, axis="rows"):
    """Rescale each row (``axis="rows"``) or column (``"cols"``) to l2 norm <= ``bound``."""
    if bound <= 0:
        raise ValidationError(f"max-norm bound must be positive, got {bound}")
    w = np.asarray(w)
    reduce_axis = {"rows": 1, "cols": 0}[axis]
    norms = np.sqrt(np.sum(w * w, axis=reduce_axis, keepdims=True))
    scale = np.where(norms > bound, bound / np.where(norms > 0, norms, 1.0), 1.0)
    return w * scale


def constrain_layer(p, max_norm=None):
    """Max-norm on W1 rows and W2 columns, then the TABL constraints (in place)."""
    if max_norm is not None:
        p.w1[...] = max_norm_project(p.w1, max_norm, "rows")
        p.w2[...] = max_norm_project(p.w2, max_norm, "cols")
    return apply_constraints(p)


class Optimizer:
    """Apply one optimizer to every trainable tensor of a list of layers."""

    def __init__(self, kind="adam", lr=SCHEDULE[0], max_norm=None, **hyper):
        self.state = OptimizerState(kind=kind, lr=lr, **hyper)
        self.max_norm = max_norm
        self._update = adam_step if kind == "adam" else sgd_nesterov_step

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = float(value)

    def step(self, layer_params, layer_grads):
        for i, (p, g) in enumerate(zip(layer_params, layer_grads)):
            grads = g.as_dict()
            for name, value in p.trainable().items():
                new = self._update(value, grads[name], self.state, key=(i, name))
                if name == "lam":
                    p.lam = float(new)
                else:
                    value[...] = new
            constrain_layer(p, self.max_norm)
        self.state.step += 1
