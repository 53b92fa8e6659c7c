import numpy as np
import pytest

from wbsac.nn_core import (AdamState, MlpParams, NonFiniteLossError, adam_step, backward, forward,
                           load_params, mlp_forward, n_params, polyak_update, save_params,
                           value_and_grad)
from wbsac.verify import central_difference, gradient_relative_error


def test_zero_net_outputs_zero(rng):
    p = MlpParams.zeros((3, 8, 2))
    np.testing.assert_array_equal(mlp_forward(p, rng.normal(size=3)), [0.0, 0.0])


def test_identity_and_affine_layers():
    ident = MlpParams.from_layers([(np.eye(2), np.zeros(2))])
    np.testing.assert_array_equal(mlp_forward(ident, [1.0, -2.0]), [1.0, -2.0])
    affine = MlpParams.from_layers([(np.array([[1.0], [1.0]]), np.array([0.5]))])
    np.testing.assert_array_equal(mlp_forward(affine, [2.0, 3.0]), [5.5])


def test_relu_on_hidden_only():
    net = MlpParams.from_layers([(np.array([[1.0, -1.0]]), np.zeros(2)),
                                 (np.array([[1.0], [1.0]]), np.array([-3.0]))])
    np.testing.assert_array_equal(mlp_forward(net, [2.0]), [-1.0])


def test_shape_validation():
    p = MlpParams.zeros((3, 4, 1))
    with pytest.raises(ValueError):
        mlp_forward(p, np.zeros(2))
    with pytest.raises(ValueError):
        MlpParams((3, 4, 1), np.zeros(5))
    with pytest.raises(ValueError):
        MlpParams.from_layers([(np.zeros((2, 3)), np.zeros(3)), (np.zeros((4, 1)), np.zeros(1))])


def test_init_bounds_and_layout(rng):
    p = MlpParams.init((5, 16, 3), rng)
    assert p.flat.size == n_params((5, 16, 3)) == 5 * 16 + 16 + 16 * 3 + 3
    (W1, b1), (W2, b2) = p.layers
    assert np.all(np.abs(W1) <= 1 / np.sqrt(5)) and np.all(np.abs(b1) <= 1 / np.sqrt(5))
    assert np.all(np.abs(W2) <= 1 / 4) and np.all(np.abs(b2) <= 1 / 4)
    assert W1.shape == (5, 16) and np.shares_memory(W1, p.flat)


def test_init_deterministic():
    a = MlpParams.init((4, 8, 2), np.random.default_rng(3))
    b = MlpParams.init((4, 8, 2), np.random.default_rng(3))
    np.testing.assert_array_equal(a.flat, b.flat)


def test_constant_loss_zero_grad(rng):
    p = MlpParams.init((3, 8, 2), rng)
    val, g = value_and_grad(p, lambda out: (7.0, np.zeros_like(out)), rng.normal(size=(4, 3)))
    assert val == 7.0 and not g.any()


def test_quadratic_loss_bias_grad():
    p = MlpParams.from_layers([(np.eye(1), np.zeros(1))])
    _, g = value_and_grad(p, lambda out: (0.5 * np.sum(out ** 2), out), np.array([[3.0]]))
    np.testing.assert_array_equal(g, [9.0, 3.0])  # dW = x * out, db = out


def test_nonfinite_loss_raises(rng):
    p = MlpParams.init((2, 4, 1), rng)
    with pytest.raises(NonFiniteLossError):
        value_and_grad(p, lambda out: (np.nan, out), np.ones((1, 2)))


@pytest.mark.parametrize("sizes", [(2, 8, 1), (3, 64, 64, 2), (5, 32, 1)])
def test_gradient_matches_central_difference(sizes, rng):
    p = MlpParams.init(sizes, rng)
    x = rng.normal(size=(6, sizes[0]))
    y = rng.normal(size=(6, sizes[-1]))

    def loss(out):
        return 0.5 * np.mean(np.sum((out - y) ** 2, axis=1)), (out - y) / len(y)

    _, g = value_and_grad(p, loss, x)
    idx = np.arange(p.flat.size) if p.flat.size < 300 else rng.choice(p.flat.size, 300, replace=False)
    fd = central_difference(lambda: loss(forward(p, x).output)[0], p.flat, idx)
    assert gradient_relative_error(g[idx], fd) < 1e-4


def test_input_gradient(rng):
    p = MlpParams.init((3, 16, 1), rng)
    x = rng.normal(size=(1, 3))
    cache = forward(p, x)
    dx = backward(p, cache, np.ones((1, 1)), need_dx=True)
    fd = central_difference(lambda: forward(p, x).output[0, 0], x.ravel(), range(3))
    np.testing.assert_allclose(dx[0], fd, rtol=1e-6, atol=1e-9)


def test_adam_zero_grad_keeps_params(rng):
    p = MlpParams.init((2, 3, 1), rng)
    st = AdamState.for_params(p.flat)
    st.m[:] = 1.0
    st.v[:] = 4.0
    p2, st2 = adam_step(p, np.zeros_like(p.flat), st, 0.1)
    np.testing.assert_allclose(st2.m, 0.9)
    np.testing.assert_allclose(st2.v, 4.0 * 0.999)
    assert st2.step == 1 and st.step == 0
    # with nonzero moments the update is nonzero; only with fresh moments is it a no-op
    p3, _ = adam_step(p, np.zeros_like(p.flat), AdamState.for_params(p.flat), 0.1)
    np.testing.assert_array_equal(p3.flat, p.flat)


def test_adam_first_step_scalar():
    # hand recurrence: m=0.1, v=0.001, m_hat=1, v_hat=1, step = -0.1 * 1 / (1 + 1e-8)
    p = MlpParams((1, 1), np.array([0.0, 0.0]))
    st = AdamState.for_params(p.flat)
    p2, st2 = adam_step(p, np.array([1.0, 0.0]), st, 0.1)
    assert p2.flat[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
    assert p2.flat[1] == 0.0
    assert st2.step == 1


def test_adam_deterministic_sequence(rng):
    p = MlpParams.init((2, 3, 1), rng)
    grads = [rng.normal(size=p.flat.size) for _ in range(3)]
    runs = []
    for _ in range(2):
        q, st = p.copy(), AdamState.for_params(p.flat)
        for g in grads:
            q, st = adam_step(q, g, st, 1e-2)
        runs.append(q.flat)
    np.testing.assert_array_equal(*runs)


def test_polyak_examples():
    t = MlpParams((1, 1), np.zeros(2))
    o = MlpParams((1, 1), np.ones(2))
    np.testing.assert_array_equal(polyak_update(t, o, 1.0).flat, o.flat)
    np.testing.assert_allclose(polyak_update(t, o, 0.005).flat, 0.005)
    twice = polyak_update(polyak_update(t, o, 0.5), o, 0.5)
    np.testing.assert_array_equal(twice.flat, 0.75)
    np.testing.assert_array_equal(t.flat, 0.0)


def test_polyak_errors():
    with pytest.raises(ValueError):
        polyak_update(MlpParams.zeros((1, 1)), MlpParams.zeros((2, 1)), 0.5)
    with pytest.raises(ValueError):
        polyak_update(MlpParams.zeros((1, 1)), MlpParams.zeros((1, 1)), 0.0)


def test_polyak_contraction(rng):
    t, o = MlpParams.init((3, 5, 2), rng), MlpParams.init((3, 5, 2), rng)
    new = polyak_update(t, o, 0.3)
    np.testing.assert_allclose(np.abs(new.flat - o.flat), 0.7 * np.abs(t.flat - o.flat), rtol=1e-12)


def test_checkpoint_roundtrip(tmp_path, rng):
    p = MlpParams.init((3, 5, 2), rng)
    st = AdamState(rng.normal(size=p.flat.size), rng.random(p.flat.size), 7)
    save_params(tmp_path / "p.npz", p, st)
    p2, st2 = load_params(tmp_path / "p.npz")
    assert p2.sizes == p.sizes and st2.step == 7
    np.testing.assert_array_equal(p2.flat, p.flat)
    np.testing.assert_array_equal(st2.v, st.v)
