import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabl import layers, optim
from tabl.errors import ShapeError, ValidationError
from tabl.optim import LrSchedule, OptimizerState


def test_nesterov_zero_grad_is_noop():
    st_ = OptimizerState("sgd_nesterov", lr=0.1)
    p = np.array([1.0, -2.0])
    np.testing.assert_array_equal(optim.sgd_nesterov_step(p, np.zeros(2), st_), p)


def test_nesterov_hand_recurrence():
    st_ = OptimizerState("sgd_nesterov", lr=0.1, momentum=0.9)
    theta = np.array([0.0])
    theta = optim.sgd_nesterov_step(theta, np.array([1.0]), st_)
    assert theta[0] == pytest.approx(-0.19)
    assert st_.buffers[("v", "param")][0] == pytest.approx(-0.1)
    theta = optim.sgd_nesterov_step(theta, np.array([1.0]), st_)
    assert st_.buffers[("v", "param")][0] == pytest.approx(-0.19)
    assert theta[0] == pytest.approx(-0.461)


def test_nesterov_without_momentum_is_sgd(rng):
    st_ = OptimizerState("sgd_nesterov", lr=0.05, momentum=0.0)
    p, g = rng.normal(size=4), rng.normal(size=4)
    np.testing.assert_allclose(optim.sgd_nesterov_step(p, g, st_), p - 0.05 * g)


def test_adam_zero_grad_is_noop():
    st_ = OptimizerState("adam", lr=0.01)
    p = np.array([0.3, 0.7])
    np.testing.assert_array_equal(optim.adam_step(p, np.zeros(2), st_), p)


def test_adam_first_step_is_sign(rng):
    st_ = OptimizerState("adam", lr=0.01)
    p, g = rng.normal(size=10), rng.normal(size=10)
    np.testing.assert_allclose(optim.adam_step(p, g, st_) - p, -0.01 * np.sign(g), rtol=1e-6)


def test_adam_hand_two_steps():
    st_ = OptimizerState("adam", lr=0.1)
    p = optim.adam_step(np.array([0.0]), np.array([2.0]), st_)
    p = optim.adam_step(p, np.array([1.0]), st_)
    m = 0.9 * 0.2 + 0.1 * 1.0
    v = 0.999 * 0.004 + 0.001 * 1.0
    step2 = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert p[0] == pytest.approx(-0.1 * 2 / (2 + 1e-8) - step2, rel=1e-12)


def test_adam_deterministic_replay(rng):
    grads = rng.normal(size=(25, 3))

    def run():
        st_ = OptimizerState("adam", lr=0.01)
        p = np.ones(3)
        for g in grads:
            p = optim.adam_step(p, g, st_)
        return p

    np.testing.assert_array_equal(run(), run())


def test_step_shape_mismatch():
    with pytest.raises(ShapeError):
        optim.adam_step(np.ones(3), np.ones(2), OptimizerState())
    with pytest.raises(ShapeError):
        optim.sgd_nesterov_step(np.ones((2, 2)), np.ones(4), OptimizerState("sgd_nesterov"))


def test_unknown_optimizer():
    with pytest.raises(ValidationError):
        OptimizerState("rmsprop")


def test_schedule_strictly_decreasing_keeps_lr():
    s = LrSchedule()
    for loss in np.linspace(10, 1, 40):
        assert s.update(loss) == 0.01


def test_schedule_plateau_steps_down():
    s = LrSchedule(patience=5)
    lrs = [s.update(3.0) for _ in range(6)]
    assert lrs[:5] == [0.01] * 5
    assert lrs[5] == 0.005


def test_schedule_walks_full_list_and_saturates():
    s = LrSchedule(patience=1)
    s.update(1.0)
    seen = [s.update(1.0) for _ in range(8)]
    assert seen[:4] == [0.005, 0.001, 0.0005, 0.0001]
    assert seen[4:] == [0.0001] * 4


def test_schedule_tolerance():
    s = LrSchedule(patience=2)
    s.update(1.0)
    s.update(1.0 - 1e-12)  # below tolerance: not an improvement
    assert s.update(1.0 - 2e-12) == 0.005


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=60), st.integers(1, 6))
def test_schedule_non_increasing(losses, patience):
    s = LrSchedule(patience=patience)
    lrs = [s.update(v) for v in losses]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    assert all(lr in optim.SCHEDULE for lr in lrs)


def test_schedule_rejects_nonfinite():
    with pytest.raises(ValidationError):
        LrSchedule().update(float("nan"))


def test_dropout_identity_cases(rng):
    x = rng.normal(size=(5, 4))
    np.testing.assert_array_equal(optim.dropout(x, 0.0, rng, training=True), x)
    np.testing.assert_array_equal(optim.dropout(x, 0.1, rng, training=False), x)


def test_dropout_expectation_preserved(rng):
    x = rng.normal(size=(4, 5))
    masks = optim.dropout_mask((100_000, 4, 5), 0.1, rng)
    assert set(np.unique(masks)) <= {0.0, 1 / 0.9}
    np.testing.assert_allclose((x * masks).mean(axis=0), x, rtol=0.01, atol=0.01 * np.abs(x).max())
    assert abs((masks == 0).mean() - 0.1) < 0.002


def test_dropout_rate_domain(rng):
    with pytest.raises(ValidationError):
        optim.dropout(np.ones(3), 1.0, rng)


def test_max_norm_examples():
    w = np.array([[0.0, 2.0]])
    np.testing.assert_array_equal(optim.max_norm_project(w, 3.0), w)
    w = np.array([[6.0, 8.0]])
    out = optim.max_norm_project(w, 5.0)
    np.testing.assert_allclose(out, [[3.0, 4.0]])
    assert np.linalg.norm(out) == pytest.approx(5.0)
    np.testing.assert_array_equal(optim.max_norm_project(np.zeros((2, 3)), 3.0), np.zeros((2, 3)))


def test_max_norm_columns(rng):
    w = rng.normal(size=(10, 4)) * 5
    out = optim.max_norm_project(w, 3.0, "cols")
    assert np.all(np.linalg.norm(out, axis=0) <= 3.0 + 1e-9)
    small = np.linalg.norm(w, axis=0) <= 3.0
    np.testing.assert_array_equal(out[:, small], w[:, small])


def test_max_norm_bound_domain():
    with pytest.raises(ValidationError):
        optim.max_norm_project(np.ones((2, 2)), 0.0)


def test_optimizer_step_preserves_layer_constraints(rng):
    params = [layers.init_bl((6, 5, 4, 3), rng), layers.init_tabl((4, 3, 3, 1), rng)]
    opt = optim.Optimizer("sgd_nesterov", lr=0.5, max_norm=3.0)
    for _ in range(30):
        grads = []
        for p in params:
            g = {k: rng.normal(size=np.shape(v)) * 10 for k, v in p.trainable().items()}
            cls = layers.TablGrads if p.kind == "TABL" else layers.BlGrads
            kw = {f"d_{k}" if k != "lam" else "d_lambda": (float(v) if k == "lam" else v) for k, v in g.items()}
            grads.append(cls(d_x=None, **kw))
        opt.step(params, grads)
        for p in params:
            assert np.all(np.linalg.norm(p.w1, axis=1) <= 3.0 + 1e-9)
            assert np.all(np.linalg.norm(p.w2, axis=0) <= 3.0 + 1e-9)
        assert np.all(np.diag(params[1].w) == 1 / 3)
        assert 0.0 <= params[1].lam <= 1.0
    assert opt.state.step == 30
