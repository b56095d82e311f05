"""End-to-end acceptance checks. Each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
Criterion 9 needs the public FI-2010 files; point TABL_FI2010_DIR at them to enable it.
"""

import math
import os
import sys

import numpy as np
import pytest

from tabl import bench, data, gradcheck, layers, model
from tabl.layers import Activation
from tabl.loss_metrics import ClassWeights, softmax_head, weighted_ce
from tabl.model import NetworkSpec, TrainConfig
from tabl.optim import Optimizer

FI2010_DIR = os.environ.get("TABL_FI2010_DIR")


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return _report


@pytest.fixture(scope="module")
def separable_run():
    """A(TABL) with default settings on 5,000 separable synthetic windows (3,500 train / 1,500 test)."""
    ds = data.synth_lob(3, n_days=10, vectors_per_day=509, mode="separable")
    train_set, test_set = data.make_split(ds, data.SplitPlan(2), 10)
    spec = NetworkSpec("A", "TABL")
    result = model.train(train_set, spec, TrainConfig(max_epochs=200, seed=3), test_set=test_set)
    return spec, train_set, test_set, result


def test_1_gradient_correctness(report):
    r = gradcheck.run_suite(trials=20, seed=2018, kinds=("TABL",))
    names = sorted(r.worst())
    ok = r.ok and r.max_rel_err < 1e-5 and len(r.trials) >= 20 and names == [
        "TABL.b", "TABL.lam", "TABL.w", "TABL.w1", "TABL.w2", "TABL.x"]
    # same instances under the two-point rule, reported but not asserted: its
    # O(h^2) error exceeds 1e-5 relative on gradient entries near 1e-8
    two = gradcheck.run_suite(trials=20, seed=2018, kinds=("TABL",), order=2)
    report(1, ok, f"{len(r.trials)} TABL instances, dims in 1..6, max rel err {r.max_rel_err:.2e} (< 1e-5); "
                  f"two-point rule at h=1e-5: {two.max_rel_err:.2e}")


def test_2_degenerate_equivalence(report, rng):
    worst = 0.0
    for _ in range(100):
        dims = tuple(rng.integers(1, 9, 4))
        act = rng.choice(["identity", "relu"])
        p = layers.init_tabl(dims, rng, act)
        p.w[...] = rng.normal(size=p.w.shape)
        p.b[...] = rng.normal(size=p.b.shape)
        p.lam = 0.0
        layers.apply_constraints(p)
        x = rng.normal(size=dims[:2])
        y_tabl = layers.tabl_forward(x, p)[0]
        y_bl = layers.bl_forward(x, p.as_bl())[0]
        worst = max(worst, float(np.max(np.abs(y_tabl - y_bl) / np.maximum(1.0, np.abs(y_bl)))))
    report(2, worst <= 4 * np.finfo(float).eps, f"100 instances, max scaled difference {worst:.1e}")


def test_3_constraint_invariants(report, rng):
    failures = []
    for kind, bound in (("adam", 3.0), ("sgd_nesterov", 5.0)):
        spec = NetworkSpec("B", "TABL")
        params = model.init_network(spec, 11)
        opt = Optimizer(kind, lr=0.05, max_norm=bound)
        weights = ClassWeights((1, 1, 1), c=1.0)
        for step in range(1000):
            x = rng.normal(scale=3.0, size=(4, 40, 10))
            y = rng.integers(0, 3, 4)
            probs, caches = model.net_forward(x, spec, params, training=True, rng=rng)
            grads = model.net_backward(weighted_ce(probs, y, weights)[1], caches, params)
            opt.step(params, grads)
            last = params[-1]
            t = last.dims[1]
            if not np.all(np.diag(last.w) == 1.0 / t):
                failures.append((kind, step, "diag"))
            if not 0.0 <= last.lam <= 1.0:
                failures.append((kind, step, "lambda"))
            for p in params:
                if np.linalg.norm(p.w1, axis=1).max() > bound + 1e-9 or \
                        np.linalg.norm(p.w2, axis=0).max() > bound + 1e-9:
                    failures.append((kind, step, "max-norm"))
    report(3, not failures, f"2 x 1000 steps, violations: {failures[:3] or 'none'}")


def test_4_complexity_formulas(report, rng):
    def bl(d, t, d2, t2):
        return d * d2 + t * t2 + d2 * t2, d2 * d * t + d2 * t * t2 + 2 * d2 * t2

    def tabl(d, t, d2, t2):
        m, c = bl(d, t, d2, t2)
        return m + t * t + 1, c + d2 * t * t + 3 * d2 * t

    checks = [
        bench.cost_bl(40, 10, 3, 1).compute_madds == 1236 == bl(40, 10, 3, 1)[1],
        bench.cost_tabl(40, 10, 3, 1).compute_madds == 1626 == tabl(40, 10, 3, 1)[1],
        bench.cost_tabl(40, 10, 3, 1).memory_params - bench.cost_bl(40, 10, 3, 1).memory_params == 101,
        bench.cost_aseq_rnn(40, 32, 10).memory_params == 15456,
    ]
    for _ in range(30):
        dims = tuple(int(v) for v in rng.integers(1, 7, 4))
        for kind, fn, init in (("BL", bl, layers.init_bl), ("TABL", tabl, layers.init_tabl)):
            est = getattr(bench, f"cost_{kind.lower()}")(*dims)
            _, madds = bench.counted_forward(rng.normal(size=dims[:2]), init(dims, rng, Activation.RELU))
            checks.append((est.memory_params, est.compute_madds) == fn(*dims))
            checks.append(madds == est.compute_madds)
    report(4, all(checks), f"{sum(checks)}/{len(checks)} exact matches (1236, 1626, T^2+1, 15456, op counter)")


def test_5_timing_ratio(report):
    b = bench.timing_bench(NetworkSpec("C"), "BL", iterations=10_000)
    t = bench.timing_bench(NetworkSpec("C"), "TABL", iterations=10_000)
    ratio = t.total_ms / b.total_ms
    report(5, ratio <= 1.5, f"C(TABL) {t.total_ms:.4f} ms vs C(BL) {b.total_ms:.4f} ms per sample, "
                            f"ratio {ratio:.2f} (<= 1.5)")


def test_6_training_integration(report, separable_run):
    spec, train_set, test_set, result = separable_run
    train_acc = model.evaluate(result.params, spec, train_set).accuracy
    test_acc = result.metrics.accuracy
    ok = len(train_set) + len(test_set) == 5000 and train_acc >= 0.99 and test_acc >= 0.95
    report(6, ok, f"A(TABL) 200 epochs: train acc {train_acc:.4f} (>= 0.99), held-out acc {test_acc:.4f} (>= 0.95)")


def test_7_attention_sanity(report, separable_run):
    spec, train_set, _, result = separable_run
    init = np.array(result.trace.attention[0])
    final = model.attention_stats(result.params, spec, train_set)
    argmax = final.argmax(axis=1)
    uniform = np.max(np.abs(init - 0.1))
    ok = uniform <= 1e-9 and np.all(argmax == final.shape[1] - 1)
    report(7, ok, f"init deviation from 1/T {uniform:.1e}; per-class argmax column {argmax.tolist()} "
                  f"(newest = 9), newest weight {final[:, -1].round(3).tolist()}")


def test_8_lambda_trajectory(report, separable_run):
    lam = [v[0] for v in separable_run[3].trace.lam]
    ok = lam[0] == 0.5 and len(lam) == 201 and all(0.0 <= v <= 1.0 for v in lam)
    report(8, ok, f"lambda starts {lam[0]}, {len(lam)} logged values in [{min(lam):.3f}, {max(lam):.3f}], "
                  f"final {lam[-1]:.3f}")


@pytest.mark.fi2010
@pytest.mark.slow
@pytest.mark.skipif(not FI2010_DIR, reason="optional: set TABL_FI2010_DIR to the FI-2010 files")
def test_9_full_data(report):
    ds = data.load_fi2010(FI2010_DIR)
    train_set, test_set = data.make_split(ds, data.SplitPlan(2), 10)
    f1 = {}
    for topo, kind in (("B", "TABL"), ("C", "TABL"), ("C", "BL")):
        spec = NetworkSpec(topo, kind)
        res = model.train(train_set, spec, TrainConfig(seed=0, threads=4, trace_attention=False), test_set)
        f1[spec.name] = res.metrics.macro_f1
    ok = f1["B(TABL)"] >= 0.60 and f1["C(TABL)"] > f1["C(BL)"]
    report(9, ok, "macro-F1 " + ", ".join(f"{k} {v:.4f}" for k, v in f1.items()))


def test_10_loss_correctness(report, rng):
    w = ClassWeights((1, 1, 1), c=1e6)
    uniform = np.full((3, 1), 1 / 3)
    loss, _ = weighted_ce(uniform, 1, w)
    loss_err = abs(loss - 1e6 * math.log(3)) / (1e6 * math.log(3))

    weights = ClassWeights((40, 25, 70), c=1e6)
    worst = 0.0
    for label in range(3):
        z = rng.normal(size=(3, 1))
        _, grad = weighted_ce(softmax_head(z), label, weights)
        for i in range(3):
            h = 1e-6
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            numeric = (weighted_ce(softmax_head(zp), label, weights)[0]
                       - weighted_ce(softmax_head(zm), label, weights)[0]) / (2 * h)
            worst = max(worst, abs(grad[i, 0] - numeric) / max(abs(grad[i, 0]), abs(numeric), 1e-12))
    report(10, loss_err <= 1e-3 and worst < 1e-6,
           f"uniform loss rel err {loss_err:.1e} (<= 1e-3); fused gradient rel err {worst:.1e} (< 1e-6)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
