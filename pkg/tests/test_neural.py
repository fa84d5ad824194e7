import numpy as np
import pytest
from hypothesis import given, strategies as st

from oranslice.neural import (CHECKPOINT_VERSION, MlpModel, ReplayBuffer, Transition, backward_td,
                              epsilon_greedy, forward, linear_epsilon, load_model, save_model, sgd_step,
                              sync_target, td_loss_grad)


def straight_line_forward(weights, biases, x):
    """Independent evaluator: explicit loops, ReLU on hidden layers."""
    h = list(map(float, x))
    for i, (w, b) in enumerate(zip(weights, biases)):
        out = []
        for j in range(w.shape[1]):
            z = b[j] + sum(h[k] * w[k, j] for k in range(w.shape[0]))
            out.append(z if i == len(weights) - 1 else max(z, 0.0))
        h = out
    return np.array(h)


def numeric_grads(model, loss, h=1e-5):
    grads = []
    for p in model.params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    for a, n in zip(analytic, numeric):
        assert np.all(np.abs(a - n) <= rtol * np.maximum(np.abs(a), np.abs(n)) + atol)


def test_zero_weights_output_bias(rng):
    m = MlpModel((3, 4, 2), rng)
    for w in m.weights:
        w[...] = 0
    m.biases[-1][...] = [1.5, -2.0]
    assert forward(m, rng.normal(size=3)).tolist() == [1.5, -2.0]


def test_scalar_net():
    m = MlpModel((1, 1))
    m.set_params([np.array([[2.0]]), np.array([1.0])])
    assert forward(m, [3.0]).tolist() == [7.0]


def test_random_net_matches_straight_line(rng):
    m = MlpModel((4, 8, 3), rng)
    m.biases[0][...] = rng.normal(size=8)
    x = rng.normal(size=4)
    np.testing.assert_allclose(forward(m, x), straight_line_forward(m.weights, m.biases, x), rtol=1e-12)


def test_forward_rejects_wrong_width(rng):
    with pytest.raises(ValueError):
        forward(MlpModel((4, 2), rng), np.zeros(3))


def test_residual_zero_branch_is_identity(rng):
    m = MlpModel((5, 7, 5), rng, residual=True)
    m.weights[-1][...] = 0
    x = rng.normal(size=5)
    assert np.array_equal(forward(m, x), x)


def test_glorot_uniform_limits(rng):
    m = MlpModel((30, 50, 20), rng)
    assert np.abs(m.weights[0]).max() <= np.sqrt(6 / 80)
    assert all(np.all(b == 0) for b in m.biases)


def test_td_target_equal_to_q_gives_zero_grads(rng):
    m = MlpModel((3, 5, 4), rng)
    x = rng.normal(size=3)
    q = forward(m, x)
    assert all(np.all(g == 0) for g in backward_td(m, x, 2, q[2]))


def test_linear_unit_gradient_is_minus_error_times_input():
    m = MlpModel((3, 1))
    m.set_params([np.array([[0.5], [-1.0], [2.0]]), np.array([0.25])])
    x = np.array([1.0, 2.0, -0.5])
    q = forward(m, x)[0]
    y = 4.0
    e = y - q
    gw, gb = backward_td(m, x, 0, y)
    np.testing.assert_allclose(gw[:, 0], -e * x, rtol=1e-12)
    assert gb[0] == pytest.approx(-e)


@given(seed=st.integers(0, 10**6), depth=st.integers(1, 3), width=st.integers(1, 16),
       n_in=st.integers(1, 6), n_out=st.integers(1, 6), residual=st.booleans())
def test_gradients_match_finite_differences(seed, depth, width, n_in, n_out, residual):
    rng = np.random.default_rng(seed)
    if residual:
        n_out = n_in
    sizes = (n_in,) + (width,) * (depth - 1) + (n_out,)
    m = MlpModel(sizes, rng, residual=residual)
    for b in m.biases:
        b[...] = rng.normal(scale=0.1, size=b.shape)
    x = rng.normal(size=(3, n_in))
    a = rng.integers(0, n_out, 3)
    y = rng.normal(size=3)

    def loss():
        return td_loss_grad(m.forward(x), a, y)[0]

    q, cache = m.forward_cached(x)
    analytic, _ = m.backward(cache, td_loss_grad(q, a, y)[1])
    assert_grads_close(analytic, numeric_grads(m, loss))


def test_input_gradient_matches_finite_differences(rng):
    m = MlpModel((4, 6, 4), rng, residual=True)
    x = rng.normal(size=(2, 4))
    w = rng.normal(size=(2, 4))
    _, cache = m.forward_cached(x)
    _, g_in = m.backward(cache, w)
    h = 1e-6
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (np.sum(w * m.forward(xp)) - np.sum(w * m.forward(xm))) / (2 * h)
        assert g_in[idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_sgd_examples():
    m = MlpModel((1, 1), learning_rate=0.1)
    m.set_params([np.array([[1.0]]), np.array([0.0])])
    sgd_step(m, [np.array([[0.5]]), np.array([0.0])])
    assert m.weights[0][0, 0] == pytest.approx(0.95)
    before = [p.copy() for p in m.params]
    sgd_step(m, [np.zeros((1, 1)), np.zeros(1)])
    assert all(np.array_equal(a, b) for a, b in zip(before, m.params))


def test_sgd_shape_mismatch_rejected(rng):
    m = MlpModel((2, 2), rng)
    with pytest.raises(ValueError):
        sgd_step(m, [np.zeros((2, 3)), np.zeros(2)])


@pytest.mark.parametrize("momentum", [0.0, 0.5])
def test_repeated_steps_decrease_quadratic_loss(rng, momentum):
    m = MlpModel((3, 8, 2), rng, learning_rate=1e-2, momentum=momentum)
    x = rng.normal(size=(16, 3))
    a = rng.integers(0, 2, 16)
    y = rng.normal(size=16)
    losses = []
    for _ in range(50):
        q, cache = m.forward_cached(x)
        loss, g = td_loss_grad(q, a, y)
        losses.append(loss)
        sgd_step(m, m.backward(cache, g)[0])
    if momentum == 0:
        assert all(b < a_ for a_, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_epsilon_greedy_examples():
    rng = np.random.default_rng(0)
    assert epsilon_greedy([1, 3, 2], 0.0, rng) == 1
    assert epsilon_greedy([5, 5], 0.0, rng) == 0
    with pytest.raises(ValueError):
        epsilon_greedy([1, 2], 1.5, rng)


def test_epsilon_one_is_uniform():
    rng = np.random.default_rng(7)
    n = 10**5
    counts = np.bincount([epsilon_greedy(np.arange(4.0), 1.0, rng) for _ in range(n)], minlength=4)
    np.testing.assert_allclose(counts / n, 0.25, rtol=0.02)


def test_linear_epsilon_schedule():
    assert linear_epsilon(0, 100, 1.0, 0.05, 0.5) == 1.0
    assert linear_epsilon(25, 100, 1.0, 0.05, 0.5) == pytest.approx(0.525)
    assert linear_epsilon(50, 100, 1.0, 0.05, 0.5) == pytest.approx(0.05)
    assert linear_epsilon(99, 100, 1.0, 0.05, 0.5) == pytest.approx(0.05)


def test_target_sync_snapshot(rng):
    online = MlpModel((2, 3, 2), rng, learning_rate=0.1)
    target = sync_target(online)
    assert target == online and target is not online
    x, period = rng.normal(size=(4, 2)), 3
    for step in range(1, 10):
        q, cache = online.forward_cached(x)
        sgd_step(online, online.backward(cache, np.ones_like(q))[0])
        if step % period == 0:
            snapshot_step, target = step, sync_target(online)
        assert target != online or step % period == 0
    assert snapshot_step == 9 and target == online


def _tr(i):
    return Transition(np.full(2, i, float), np.full(3, i, float), i % 4, i % 7, float(i), -float(i),
                      np.full(2, i + 1, float), np.full(3, i + 1, float))


def test_replay_ring_and_sampling():
    buf = ReplayBuffer(5, np.random.default_rng(0))
    for i in range(8):
        buf.add(_tr(i))
    assert len(buf) == 5
    draws = [buf.sample(5) for _ in range(20)]
    batch = {k: np.concatenate([d[k] for d in draws]) for k in draws[0]}
    assert set(batch["reward_a"].tolist()) <= {3.0, 4.0, 5.0, 6.0, 7.0}
    assert np.array_equal(batch["state_a"][:, 0], batch["reward_a"])
    assert batch["action_b"].dtype == np.int64
    with pytest.raises(ValueError):
        ReplayBuffer(5, np.random.default_rng(0)).sample(1)


def test_replay_rejects_nonfinite_reward():
    buf = ReplayBuffer(5, np.random.default_rng(0))
    bad = _tr(1)
    bad.reward_a = float("nan")
    with pytest.raises(ValueError):
        buf.add(bad)


def test_replay_sampling_deterministic():
    a, b = ReplayBuffer(50, np.random.default_rng(3)), ReplayBuffer(50, np.random.default_rng(3))
    for i in range(50):
        a.add(_tr(i))
        b.add(_tr(i))
    assert np.array_equal(a.sample_indices(20), b.sample_indices(20))


def test_checkpoint_round_trip(tmp_path, rng):
    m = MlpModel((4, 6, 3), rng, learning_rate=0.02, momentum=0.5, residual=False)
    path = tmp_path / "m.npz"
    save_model(m, path)
    back = load_model(path)
    assert back == m
    assert (back.learning_rate, back.momentum) == (0.02, 0.5)
    x = rng.normal(size=4)
    assert np.array_equal(forward(back, x), forward(m, x))


def test_checkpoint_version_checked(tmp_path, rng):
    m = MlpModel((2, 2), rng)
    path = tmp_path / "m.npz"
    np.savez(path, version=np.array(CHECKPOINT_VERSION + 1), layer_sizes=np.array(m.layer_sizes),
             residual=np.array(False), learning_rate=np.array(0.1), momentum=np.array(0.0),
             p0=m.params[0], p1=m.params[1])
    with pytest.raises(ValueError):
        load_model(path)
