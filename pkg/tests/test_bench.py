import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabl import bench, layers
from tabl.errors import ValidationError
from tabl.model import NetworkSpec

dims_st = st.tuples(*[st.integers(1, 6)] * 4)


def test_cost_bl_example():
    c = bench.cost_bl(40, 10, 3, 1)
    assert (c.memory_params, c.compute_madds) == (133, 1236)


def test_cost_tabl_examples():
    c = bench.cost_tabl(40, 10, 3, 1)
    assert (c.memory_params, c.compute_madds) == (234, 1626)
    c = bench.cost_tabl(1, 1, 1, 1)
    assert (c.memory_params, c.compute_madds) == (3 + 2, 4 + 4)
    c = bench.cost_bl(1, 1, 1, 1)
    assert (c.memory_params, c.compute_madds) == (3, 4)


def test_cost_rejects_bad_dims():
    with pytest.raises(ValidationError):
        bench.cost_bl(0, 10, 3, 1)
    with pytest.raises(ValidationError):
        bench.cost_aseq_rnn(40, 2.5, 10)


@settings(max_examples=50, deadline=None)
@given(dims_st)
def test_tabl_minus_bl(dims):
    d, t, d2, t2 = dims
    bl, tabl = bench.cost_bl(*dims), bench.cost_tabl(*dims)
    assert tabl.memory_params - bl.memory_params == t * t + 1
    assert tabl.compute_madds - bl.compute_madds == d2 * t * t + 3 * d2 * t


def test_aseq_rnn_example():
    c = bench.cost_aseq_rnn(40, 32, 10)
    assert (c.memory_params, c.compute_madds) == (15456, 170340)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 20))
def test_aseq_rnn_modules_sum_to_total(d, h, t):
    mods = bench.aseq_rnn_modules(d, h, t)
    total = bench.cost_aseq_rnn(d, h, t)
    assert sum(m.memory_params for m in mods.values()) == total.memory_params
    assert sum(m.compute_madds for m in mods.values()) == total.compute_madds


@settings(max_examples=30, deadline=None)
@given(dims_st, st.sampled_from(["BL", "TABL"]), st.integers(0, 2**16))
def test_op_counter_matches_formula(dims, kind, seed):
    rng = np.random.default_rng(seed)
    init = layers.init_tabl if kind == "TABL" else layers.init_bl
    p = init(dims, rng, "relu")
    p.b[...] = rng.normal(size=p.b.shape)
    x = rng.normal(size=dims[:2])
    y, madds = bench.counted_forward(x, p)
    expected = (bench.cost_tabl if kind == "TABL" else bench.cost_bl)(*dims)
    assert madds == expected.compute_madds
    np.testing.assert_allclose(y, layers.layer_forward(x, p)[0], atol=1e-10)


def test_network_cost():
    a_bl = bench.network_cost(NetworkSpec("A", "BL"))
    assert a_bl == bench.cost_bl(40, 10, 3, 1)
    c_tabl = bench.network_cost(NetworkSpec("C", "TABL"))
    c_bl = bench.network_cost(NetworkSpec("C", "BL"))
    assert c_tabl.memory_params - c_bl.memory_params == 26


def test_cost_rows_and_serialisation():
    rows = bench.cost_rows([(40, 10, 3, 1)])
    assert [r["layer"] for r in rows] == ["BL", "TABL"]
    text = bench.to_csv(rows)
    assert text.splitlines()[0] == "layer,D,T,D_out,T_out,memory_params,compute_madds"
    assert "BL,40,10,3,1,133,1236" in text
    assert '"memory_params": 234' in bench.to_json(rows)


def test_timing_guards():
    with pytest.raises(ValidationError):
        bench.timing_bench(iterations=10)
    with pytest.raises(ValidationError):
        bench.timing_bench(iterations=1000, warmup=5)


def test_timing_report():
    r = bench.timing_bench(NetworkSpec("A"), "BL", iterations=1000)
    assert r.config == "A(BL)"
    assert r.forward_ms > 0 and r.backward_ms > 0
    assert r.total_ms == pytest.approx(r.forward_ms + r.backward_ms)
    assert set(r.to_dict()) == {"config", "forward_ms", "backward_ms", "total_ms", "iterations", "machine"}


@pytest.mark.slow
def test_timing_steady_state():
    # two back-to-back runs agree to within 10% (best of three attempts on a noisy host)
    for _ in range(3):
        a = bench.timing_bench(NetworkSpec("A"), "TABL", iterations=5000).total_ms
        b = bench.timing_bench(NetworkSpec("A"), "TABL", iterations=5000).total_ms
        if abs(a - b) <= 0.1 * max(a, b):
            return
    pytest.fail(f"timings unstable: {a:.4f} vs {b:.4f} ms")
