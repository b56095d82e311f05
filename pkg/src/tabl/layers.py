"""Bilinear layer (BL) and temporal-attention bilinear layer (TABL).

Both layers map an input ``X`` of shape ``(D, T)`` to ``(D', T')``. Inputs may
also be stacked as ``(N, D, T)``; parameter gradients are then summed over the
sample axis.

BL:   Y = phi(W1 X W2 + B)

TABL: Xbar = W1 X
      E    = Xbar W                   (diag(W) fixed at 1/T)
      A    = row-softmax(E)
      Xt   = lam * (Xbar * A) + (1 - lam) * Xbar
      Y    = phi(Xt W2 + B)
"""

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ShapeError, ValidationError

CHECKPOINT_MAGIC = "TABL-CKPT"
CHECKPOINT_VERSION = 1


class Activation(str, enum.Enum):
    IDENTITY = "identity"
    RELU = "relu"

    def apply(self, z):
        if self is Activation.RELU:
            return np.maximum(z, 0.0)
        return z

    def derivative(self, z):
        # relu'(0) := 0
        if self is Activation.RELU:
            return (z > 0).astype(z.dtype)
        return np.ones_like(z)


def _activation(value):
    try:
        return Activation(value)
    except ValueError:
        raise ValidationError(f"unknown activation {value!r}; expected one of "
                              f"{[a.value for a in Activation]}") from None


@dataclass
class BlParams:
    w1: np.ndarray  # (D', D)
    w2: np.ndarray  # (T, T')
    b: np.ndarray  # (D', T')
    activation: Activation = Activation.RELU

    kind = "BL"

    def __post_init__(self):
        self.activation = _activation(self.activation)
        self._check_shapes()

    def _check_shapes(self):
        w1, w2, b = self.w1, self.w2, self.b
        if w1.ndim != 2 or w2.ndim != 2 or b.ndim != 2:
            raise ShapeError("layer parameters must be matrices", w1.shape, w2.shape, b.shape)
        if b.shape != (w1.shape[0], w2.shape[1]):
            raise ShapeError("bias must be (rows of W1, cols of W2)", w1.shape, w2.shape, b.shape)

    @property
    def dims(self):
        """``(D, T, D', T')``."""
        return (self.w1.shape[1], self.w2.shape[0], self.w1.shape[0], self.w2.shape[1])

    def trainable(self):
        return {"w1": self.w1, "w2": self.w2, "b": self.b}

    def n_params(self):
        return sum(int(np.size(v)) for v in self.trainable().values())

    def copy(self):
        return BlParams(self.w1.copy(), self.w2.copy(), self.b.copy(), self.activation)


@dataclass
class TablParams:
    w1: np.ndarray  # (D', D)
    w: np.ndarray  # (T, T), diagonal pinned to 1/T
    lam: float
    w2: np.ndarray  # (T, T')
    b: np.ndarray  # (D', T')
    activation: Activation = Activation.IDENTITY

    kind = "TABL"

    def __post_init__(self):
        self.activation = _activation(self.activation)
        self.lam = float(self.lam)
        BlParams._check_shapes(self)
        t = self.w2.shape[0]
        if self.w.shape != (t, t):
            raise ShapeError("attention weight must be T x T", self.w.shape, self.w2.shape)
        self.validate()

    def validate(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"lambda must lie in [0, 1], got {self.lam}")
        t = self.w.shape[0]
        if not (self.w.diagonal() == self.w.dtype.type(1.0 / t)).all():
            raise ValidationError(f"diagonal of W must equal 1/T = {1.0 / t}")

    dims = BlParams.dims

    def trainable(self):
        return {"w1": self.w1, "w": self.w, "lam": self.lam, "w2": self.w2, "b": self.b}

    def n_params(self):
        return sum(int(np.size(v)) for v in self.trainable().values())

    def copy(self):
        return TablParams(self.w1.copy(), self.w.copy(), self.lam, self.w2.copy(),
                          self.b.copy(), self.activation)

    def as_bl(self):
        """The BL obtained by dropping the attention path (shares arrays)."""
        return BlParams(self.w1, self.w2, self.b, self.activation)


@dataclass
class BlCache:
    x: np.ndarray
    x_bar: np.ndarray
    y_bar: np.ndarray


@dataclass
class TablCache:
    x: np.ndarray
    x_bar: np.ndarray
    e: np.ndarray
    a: np.ndarray
    x_tilde: np.ndarray
    y_bar: np.ndarray


@dataclass
class BlGrads:
    d_w1: np.ndarray
    d_w2: np.ndarray
    d_b: np.ndarray
    d_x: np.ndarray

    def as_dict(self):
        return {"w1": self.d_w1, "w2": self.d_w2, "b": self.d_b}


@dataclass
class TablGrads:
    d_w1: np.ndarray
    d_w: np.ndarray
    d_lambda: float
    d_w2: np.ndarray
    d_b: np.ndarray
    d_x: np.ndarray = field(repr=False)

    def as_dict(self):
        return {"w1": self.d_w1, "w": self.d_w, "lam": self.d_lambda,
                "w2": self.d_w2, "b": self.d_b}


def _check_input(x, p):
    x = np.asarray(x)
    d, t, _, _ = p.dims
    if x.ndim not in (2, 3) or x.shape[-2:] != (d, t):
        raise ShapeError(f"layer expects input of shape (D, T) = ({d}, {t})", x.shape)
    return x


def _batch_sum(g):
    return g.sum(axis=0) if g.ndim == 3 else g


# parameter shapes are checked at construction and inputs by _check_input,
# so the forward passes call np.matmul directly

def bl_forward(x, p):
    x = _check_input(x, p)
    x_bar = np.matmul(p.w1, x)
    y_bar = np.matmul(x_bar, p.w2) + p.b
    return p.activation.apply(y_bar), BlCache(x, x_bar, y_bar)


def bl_backward(d_y, cache, p):
    d_y = np.asarray(d_y)
    if d_y.shape != cache.y_bar.shape:
        raise ShapeError("upstream gradient must match the layer output", d_y.shape, cache.y_bar.shape)
    g = d_y * p.activation.derivative(cache.y_bar)
    d_w2 = _batch_sum(np.matmul(np.swapaxes(cache.x_bar, -1, -2), g))
    g_w2t = np.matmul(g, p.w2.T)
    d_w1 = _batch_sum(np.matmul(g_w2t, np.swapaxes(cache.x, -1, -2)))
    d_x = np.matmul(p.w1.T, g_w2t)
    return BlGrads(d_w1=d_w1, d_w2=d_w2, d_b=_batch_sum(g), d_x=d_x)


def tabl_forward(x, p):
    x = _check_input(x, p)
    p.validate()
    lam = p.lam
    x_bar = np.matmul(p.w1, x)
    e = np.matmul(x_bar, p.w)
    a = linalg.softmax_rows(e, check=False)
    x_tilde = x_bar * (lam * a + (1.0 - lam))  # lam (Xbar * A) + (1 - lam) Xbar
    y_bar = np.matmul(x_tilde, p.w2) + p.b
    return p.activation.apply(y_bar), TablCache(x, x_bar, e, a, x_tilde, y_bar)


def tabl_backward(d_y, cache, p):
    d_y = np.asarray(d_y)
    if d_y.shape != cache.y_bar.shape:
        raise ShapeError("upstream gradient must match the layer output", d_y.shape, cache.y_bar.shape)
    lam = p.lam
    x_bar, a = cache.x_bar, cache.a

    g = d_y * p.activation.derivative(cache.y_bar)
    d_w2 = _batch_sum(np.matmul(np.swapaxes(cache.x_tilde, -1, -2), g))
    d_x_tilde = np.matmul(g, p.w2.T)

    d_masked = d_x_tilde * x_bar
    d_lambda = float(np.add.reduce((d_masked * (a - 1.0)).ravel()))  # dXt/dlam = Xbar*A - Xbar

    # softmax backward: dE = A * (dA - rowsum(dA * A))
    d_a = lam * d_masked
    d_e = a * (d_a - np.add.reduce(d_a * a, axis=-1, keepdims=True))

    d_w = _batch_sum(np.matmul(np.swapaxes(x_bar, -1, -2), d_e))
    np.fill_diagonal(d_w, 0.0)

    d_x_bar = d_x_tilde * (lam * a + (1.0 - lam)) + np.matmul(d_e, p.w.T)
    d_w1 = _batch_sum(np.matmul(d_x_bar, np.swapaxes(cache.x, -1, -2)))
    d_x = np.matmul(p.w1.T, d_x_bar)
    return TablGrads(d_w1=d_w1, d_w=d_w, d_lambda=d_lambda, d_w2=d_w2,
                     d_b=_batch_sum(g), d_x=d_x)


def layer_forward(x, p):
    return tabl_forward(x, p) if p.kind == "TABL" else bl_forward(x, p)


def layer_backward(d_y, cache, p):
    return tabl_backward(d_y, cache, p) if p.kind == "TABL" else bl_backward(d_y, cache, p)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _check_dims(dims):
    dims = tuple(int(v) for v in dims)
    if len(dims) != 4 or min(dims) < 1:
        raise ValidationError(f"dims must be four positive integers (D, T, D', T'), got {dims}")
    return dims


def he_normal(rng, shape, fan_in, dtype=np.float64):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_bl(dims, rng_seed=None, activation=Activation.RELU, dtype=np.float64):
    """He-initialised BL for ``dims = (D, T, D', T')``; bias starts at zero."""
    d, t, d_out, t_out = _check_dims(dims)
    dtype = linalg.resolve_dtype(dtype)
    rng = _rng(rng_seed)
    w1 = he_normal(rng, (d_out, d), fan_in=d, dtype=dtype)
    w2 = he_normal(rng, (t, t_out), fan_in=t, dtype=dtype)
    return BlParams(w1, w2, np.zeros((d_out, t_out), dtype=dtype), activation)


def init_tabl(dims, rng_seed=None, activation=Activation.IDENTITY, dtype=np.float64):
    """As :func:`init_bl`, plus ``W`` filled with ``1/T`` and ``lam = 0.5``."""
    bl = init_bl(dims, rng_seed, activation, dtype)
    t = bl.dims[1]
    w = np.full((t, t), 1.0 / t, dtype=bl.w1.dtype)
    return TablParams(bl.w1, w, 0.5, bl.w2, bl.b, bl.activation)


def apply_constraints(p):
    """Re-pin ``diag(W)`` to 1/T and clip ``lam`` into [0, 1], in place."""
    if p.kind != "TABL":
        return p
    t = p.w.shape[0]
    np.fill_diagonal(p.w, 1.0 / t)
    p.lam = min(1.0, max(0.0, float(p.lam)))
    return p


def save_checkpoint(path, layers, meta=None):
    """Write layer parameters to an ``.npz`` checkpoint.

    The archive holds a ``header`` entry (JSON text) with ``magic``,
    ``version``, free-form ``meta`` and per-layer ``kind``/``dims``/
    ``activation``/``lam``, plus one C-order (row-major) array per
    parameter named ``layer{i}.{w1,w,w2,b}``.
    """
    header = {"magic": CHECKPOINT_MAGIC, "version": CHECKPOINT_VERSION,
              "meta": meta or {}, "layers": []}
    arrays = {}
    for i, p in enumerate(layers):
        entry = {"kind": p.kind, "dims": list(p.dims), "activation": p.activation.value}
        for name, value in p.trainable().items():
            if name == "lam":
                entry["lam"] = float(value)
            else:
                arrays[f"layer{i}.{name}"] = np.ascontiguousarray(value)
        header["layers"].append(entry)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(layers, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        if "header" not in z.files:
            raise ValidationError(f"{path}: not a checkpoint (missing header)")
        header = json.loads(str(z["header"]))
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path}: bad checkpoint magic {header.get('magic')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {header.get('version')}")
        layers = []
        for i, entry in enumerate(header["layers"]):
            get = lambda name: z[f"layer{i}.{name}"]  # noqa: E731
            if entry["kind"] == "TABL":
                p = TablParams(get("w1"), get("w"), entry["lam"], get("w2"), get("b"), entry["activation"])
            elif entry["kind"] == "BL":
                p = BlParams(get("w1"), get("w2"), get("b"), entry["activation"])
            else:
                raise ValidationError(f"{path}: unknown layer kind {entry['kind']!r}")
            if list(p.dims) != list(entry["dims"]):
                raise ShapeError(f"{path}: layer {i} arrays disagree with recorded dims",
                                 p.dims, entry["dims"])
            layers.append(p)
    return layers, header.get("meta", {})
