"""Central finite-difference verification of the analytic layer gradients.

The scalar objective is ``L = sum(G * layer(X))`` for a fixed random ``G``,
so the analytic gradients are obtained by calling the backward pass with
``d_y = G``. Numeric gradients use the fourth-order central stencil

    (8 (f(t + h) - f(t - h)) - (f(t + 2h) - f(t - 2h))) / 12h

with ``h = 1e-3 * max(1, |t|)``. Its truncation error is O(h^4), so small
gradient entries keep a usable relative accuracy where the two-point rule's
O(h^2) error would swamp them. ``order=2`` selects the plain two-point rule
``(f(t + h) - f(t - h)) / 2h`` with ``h = 1e-5 * max(1, |t|)``.

Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``; the floor
(1e-6) keeps entries whose true gradient is exactly 0 from dividing roundoff
by zero.
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .layers import Activation

TOLERANCE = 1e-5
STEP = 1e-3
TWO_POINT_STEP = 1e-5
FLOOR = 1e-6
KINK_MARGIN = 0.05  # ReLU pre-activation margin for the +-2h steps

TABL_TENSORS = ("w1", "w", "lam", "w2", "b", "x")
BL_TENSORS = ("w1", "w2", "b", "x")


@dataclass
class TensorResult:
    name: str
    max_rel_err: float
    worst_index: tuple

    @property
    def ok(self):
        return self.max_rel_err < TOLERANCE


@dataclass
class GradcheckReport:
    trials: list = field(default_factory=list)  # list of (dims, kind, [TensorResult])

    def worst(self):
        """Per tensor name, the worst result over all trials."""
        out = {}
        for dims, kind, results in self.trials:
            for r in results:
                key = f"{kind}.{r.name}"
                if key not in out or r.max_rel_err > out[key][0].max_rel_err:
                    out[key] = (r, dims)
        return out

    @property
    def ok(self):
        return all(r.ok for _, _, results in self.trials for r in results)

    @property
    def max_rel_err(self):
        return max(r.max_rel_err for _, _, results in self.trials for r in results)


def rel_err(a, n, floor=FLOOR):
    return abs(a - n) / max(abs(a), abs(n), floor)


def _random_tabl(rng, dims, activation):
    p = layers.init_tabl(dims, rng, activation)
    t = dims[1]
    # move away from the uniform initialisation so the attention path is exercised
    p.w[...] = rng.normal(0.0, 1.0, (t, t))
    layers.apply_constraints(p)
    p.lam = float(rng.uniform(0.1, 0.9))
    p.b[...] = rng.normal(0.0, 0.5, p.b.shape)
    return p


def _random_bl(rng, dims, activation):
    p = layers.init_bl(dims, rng, activation)
    p.b[...] = rng.normal(0.0, 0.5, p.b.shape)
    return p


def _entries(p, x, name):
    """Yield ``(index, getter, setter)`` for every free scalar of tensor ``name``."""
    if name == "lam":
        def set_lam(v):
            p.lam = v
        yield (), (lambda: p.lam), set_lam
        return
    arr = x if name == "x" else getattr(p, name)
    for idx in np.ndindex(arr.shape):
        if name == "w" and idx[0] == idx[1]:
            continue  # fixed entries are not free parameters
        def setter(v, idx=idx, arr=arr):
            arr[idx] = v
        yield idx, (lambda idx=idx, arr=arr: arr[idx]), setter


def _analytic(grads, name, idx):
    if name == "x":
        return grads.d_x[idx]
    if name == "lam":
        return grads.d_lambda
    return grads.as_dict()[name][idx]


def _numeric(objective, put, theta, order):
    if order == 2:
        h = TWO_POINT_STEP * max(1.0, abs(theta))
        offsets = (-1, 1)
    else:
        h = STEP * max(1.0, abs(theta))
        offsets = (-2, -1, 1, 2)
    f = {}
    for k in offsets:
        put(theta + k * h)
        f[k] = objective()
    put(theta)
    if order == 2:
        return (f[1] - f[-1]) / (2.0 * h)
    return (8.0 * (f[1] - f[-1]) - (f[2] - f[-2])) / (12.0 * h)


def check_layer(p, x, backward=None, tensors=None, order=4):
    """Compare analytic and numeric gradients of one layer instance."""
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    forward = layers.tabl_forward if p.kind == "TABL" else layers.bl_forward
    if backward is None:
        backward = layers.tabl_backward if p.kind == "TABL" else layers.bl_backward
    if tensors is None:
        tensors = TABL_TENSORS if p.kind == "TABL" else BL_TENSORS
    rng = np.random.default_rng(12345)
    y, cache = forward(x, p)
    g = rng.normal(size=y.shape)
    grads = backward(g, cache, p)

    def objective():
        return float(np.sum(g * forward(x, p)[0]))

    results = []
    for name in tensors:
        worst, worst_idx = 0.0, ()
        for idx, get, put in _entries(p, x, name):
            numeric = _numeric(objective, put, float(get()), order)
            err = rel_err(float(_analytic(grads, name, idx)), numeric)
            if err > worst:
                worst, worst_idx = err, idx
        results.append(TensorResult(name, worst, worst_idx))
    return results


def random_instance(rng, dims, kind="TABL", activation=None):
    """A random layer + input; ReLU instances keep pre-activations well off the kink."""
    if activation is None:
        activation = Activation.RELU if rng.random() < 0.5 else Activation.IDENTITY
    activation = Activation(activation)
    make = _random_tabl if kind == "TABL" else _random_bl
    for _ in range(100):
        p = make(rng, dims, activation)
        x = rng.normal(size=dims[:2])
        y, cache = layers.layer_forward(x, p)
        if activation is Activation.IDENTITY or np.min(np.abs(cache.y_bar)) > KINK_MARGIN:
            return p, x
    return make(rng, dims, Activation.IDENTITY), rng.normal(size=dims[:2])


def run_suite(trials=20, dims=None, seed=0, kinds=("TABL", "BL"), backward=None, max_dim=6, order=4):
    """Run ``trials`` random instances per layer kind.

    ``dims`` fixes ``(D, T, D', T')``; otherwise each trial draws every
    dimension uniformly from ``1..max_dim``. ``backward`` overrides the
    TABL backward pass (used to check that the harness catches bugs).
    """
    rng = np.random.default_rng(seed)
    report = GradcheckReport()
    for kind in kinds:
        for _ in range(trials):
            d = tuple(dims) if dims is not None else tuple(int(v) for v in rng.integers(1, max_dim + 1, 4))
            p, x = random_instance(rng, d, kind)
            bw = backward if kind == "TABL" else None
            report.trials.append((d, kind, check_layer(p, x, backward=bw, order=order)))
    return report
