"""Analytic cost estimators and wall-clock micro-benchmarks.

Compute counts tally one unit per multiply-add of the dense products and one
unit per element for the bias shift, activation, softmax normalisation,
Hadamard mask and lambda blend. Exponentials and row-sum reductions are not
counted.
"""

import csv
import io
import json
import math
import platform
import time
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ValidationError
from .loss_metrics import ClassWeights, weighted_ce
from .model import NetworkSpec, init_network, net_backward, net_forward


@dataclass(frozen=True)
class CostEstimate:
    memory_params: int
    compute_madds: int


def _positive(*dims):
    for d in dims:
        if int(d) != d or d < 1:
            raise ValidationError(f"dimensions must be positive integers, got {dims}")


def cost_bl(d, t, d_out, t_out):
    _positive(d, t, d_out, t_out)
    memory = d * d_out + t * t_out + d_out * t_out
    compute = d_out * d * t + d_out * t * t_out + 2 * d_out * t_out
    return CostEstimate(memory, compute)


def cost_tabl(d, t, d_out, t_out):
    bl = cost_bl(d, t, d_out, t_out)
    return CostEstimate(bl.memory_params + t * t + 1,
                        bl.compute_madds + d_out * t * t + 3 * d_out * t)


def aseq_rnn_modules(d, d_hidden, t):
    """Encoder / memory / decoder costs of a GRU attention seq2seq model."""
    _positive(d, d_hidden, t)
    h = d_hidden
    return {
        "encoder": CostEstimate(3 * h * d + 3 * h * h + 3 * h, t * (3 * h * d + 3 * h * h + 8 * h)),
        "memory": CostEstimate(2 * h * h + h, 2 * h * h * t + 4 * t * t * h + t * t),
        "decoder": CostEstimate(6 * h * h + 7 * h, t * (12 * h + 6 * h * h)),
    }


def cost_aseq_rnn(d, d_hidden, t):
    """Totals ``3D'D + 11D'^2 + 11D'`` memory, ``11TD'^2 + 20TD' + 4T^2D' + 3TD'D + T^2`` compute."""
    _positive(d, d_hidden, t)
    h = d_hidden
    memory = 3 * h * d + 11 * h * h + 11 * h
    compute = 11 * t * h * h + 20 * t * h + 4 * t * t * h + 3 * t * h * d + t * t
    return CostEstimate(memory, compute)


def network_cost(spec):
    total_mem = total_compute = 0
    last = len(spec.layer_dims) - 1
    for i, dims in enumerate(spec.layer_dims):
        c = cost_tabl(*dims) if (i == last and spec.final_layer == "TABL") else cost_bl(*dims)
        total_mem += c.memory_params
        total_compute += c.compute_madds
    return CostEstimate(total_mem, total_compute)


class OpCounter:
    """Pure-Python matrix arithmetic that tallies the operations it performs."""

    def __init__(self):
        self.madds = 0

    def matmul(self, a, b):
        n, k, m = len(a), len(b), len(b[0])
        out = [[0.0] * m for _ in range(n)]
        for i in range(n):
            for j in range(m):
                s = 0.0
                for p in range(k):
                    s += a[i][p] * b[p][j]
                    self.madds += 1
                out[i][j] = s
        return out

    def elementwise(self, fn, *mats):
        rows, cols = len(mats[0]), len(mats[0][0])
        self.madds += rows * cols
        return [[fn(*(m[i][j] for m in mats)) for j in range(cols)] for i in range(rows)]

    def row_softmax(self, e):
        # exponentials and row sums are free; the normalising division is counted
        exps = [[math.exp(v - max(row)) for v in row] for row in e]
        sums = [sum(row) for row in exps]
        return self.elementwise(lambda v, s: v / s, exps, [[s] * len(exps[0]) for s in sums])


def counted_forward(x, p):
    """Forward pass of a BL or TABL through :class:`OpCounter`; returns ``(y, madds)``."""
    ops = OpCounter()
    tolist = lambda m: np.asarray(m, dtype=float).tolist()  # noqa: E731
    relu = p.activation.value == "relu"
    act = (lambda v: max(v, 0.0)) if relu else (lambda v: v)
    x_bar = ops.matmul(tolist(p.w1), tolist(x))
    if p.kind == "TABL":
        lam = p.lam
        e = ops.matmul(x_bar, tolist(p.w))
        a = ops.row_softmax(e)
        masked = ops.elementwise(lambda u, v: u * v, x_bar, a)
        x_bar = ops.elementwise(lambda m, u: lam * m + (1.0 - lam) * u, masked, x_bar)
    y_bar = ops.elementwise(lambda u, v: u + v, ops.matmul(x_bar, tolist(p.w2)), tolist(p.b))
    y = ops.elementwise(act, y_bar)
    return np.array(y), ops.madds


@dataclass
class TimingReport:
    config: str
    forward_ms: float
    backward_ms: float
    total_ms: float
    iterations: int
    machine: str = ""

    def to_dict(self):
        return asdict(self)


TIMING_BLOCKS = 5


def _mean_ms(fn, iterations, warmup):
    """Median over ``TIMING_BLOCKS`` equal blocks of the per-call mean, in ms.

    The median keeps a block hit by a scheduler hiccup from moving the result.
    """
    for _ in range(warmup):
        fn()
    per_block = max(1, iterations // TIMING_BLOCKS)
    means = []
    for _ in range(TIMING_BLOCKS):
        start = time.perf_counter_ns()
        for _ in range(per_block):
            fn()
        means.append((time.perf_counter_ns() - start) / per_block / 1e6)
    return float(np.median(means))


def timing_bench(spec=None, layer_kind="TABL", iterations=10_000, seed=0, warmup=100, machine=""):
    """Mean per-sample forward and backward time of one network.

    ``forward_ms`` times inference on a single 40x10 window; ``backward_ms``
    times the loss gradient plus the backward pass through every layer.
    Each is the median of five block means over ``iterations`` calls. Runs
    with BLAS pinned to one thread.
    """
    if iterations < 1000:
        raise ValidationError("timing needs at least 1000 iterations")
    if warmup < 100:
        raise ValidationError("timing needs at least 100 warmup iterations")
    spec = spec or NetworkSpec("C", layer_kind)
    if spec.final_layer != layer_kind:
        spec = NetworkSpec(spec.topology, layer_kind, spec.hidden_activation)
    params = init_network(spec, seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=spec.input_shape)
    weights = ClassWeights((1, 1, 1))
    probs, caches = net_forward(x, spec, params)

    def forward():
        net_forward(x, spec, params)

    def backward():
        _, d_logits = weighted_ce(probs, 1, weights)
        net_backward(d_logits, caches, params)

    with threadpool_limits(limits=1):
        fwd = _mean_ms(forward, iterations, warmup)
        bwd = _mean_ms(backward, iterations, warmup)
    return TimingReport(spec.name, fwd, bwd, fwd + bwd, iterations,
                        machine or f"{platform.processor() or platform.machine()} / {platform.python_version()}")


def cost_rows(dims_list):
    rows = []
    for dims in dims_list:
        for kind, fn in (("BL", cost_bl), ("TABL", cost_tabl)):
            c = fn(*dims)
            rows.append({"layer": kind, "D": dims[0], "T": dims[1], "D_out": dims[2], "T_out": dims[3],
                         "memory_params": c.memory_params, "compute_madds": c.compute_madds})
    return rows


def to_csv(rows):
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def to_json(rows):
    return json.dumps(rows, indent=2, sort_keys=True)
