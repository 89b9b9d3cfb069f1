import numpy as np
import pytest

from moddrive import nets


def rand_mlp(rng, dims=None):
    dims = dims or [int(rng.integers(2, 7)) for _ in range(4)]
    params = nets.init_mlp(dims, rng)
    # random biases keep pre-activations away from exact zero, where the ReLU
    # subgradient makes finite differences ill-posed
    params.biases = [rng.uniform(-0.5, 0.5, size=b.shape) for b in params.biases]
    return params


def away_from_kinks(params, x, margin=1e-4):
    h = np.asarray(x, dtype=float)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = w @ h + b
        if i < len(params.weights) - 1:
            if np.min(np.abs(z)) <= margin:
                return False
            h = np.maximum(z, 0.0)
    return True


def test_zero_params_zero_output():
    params = nets.MlpParams(
        [np.zeros((4, 3)), np.zeros((4, 4)), np.zeros((2, 4))],
        [np.zeros(4), np.zeros(4), np.zeros(2)])
    y, _ = nets.mlp_forward(params, np.ones(3))
    assert np.array_equal(y, np.zeros(2))


def test_relu_chain_identity():
    params = nets.MlpParams(
        [np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1))],
        [np.zeros(1)] * 3)
    y, _ = nets.mlp_forward(params, np.array([2.0]))
    assert y[0] == pytest.approx(2.0)
    y, _ = nets.mlp_forward(params, np.array([-2.0]))
    assert y[0] == pytest.approx(0.0)   # clipped at the first ReLU


def test_dim_mismatch_raises():
    rng = np.random.default_rng(0)
    params = nets.init_mlp([3, 4, 2], rng)
    with pytest.raises(ValueError):
        nets.mlp_forward(params, np.ones(5))


def test_backward_zero_grad():
    rng = np.random.default_rng(1)
    params = rand_mlp(rng)
    x = rng.standard_normal(params.dims[0])
    y, cache = nets.mlp_forward(params, x)
    grads, gx = nets.mlp_backward(params, cache, np.zeros_like(y))
    assert all(np.all(g == 0) for g in grads)
    assert np.all(gx == 0)


def test_backward_linear_outer_product():
    # single linear layer: dL/dW = grad_y outer x
    rng = np.random.default_rng(2)
    params = nets.MlpParams([rng.standard_normal((3, 4))], [np.zeros(3)])
    x = rng.standard_normal(4)
    _, cache = nets.mlp_forward(params, x)
    g = rng.standard_normal(3)
    grads, gx = nets.mlp_backward(params, cache, g)
    assert np.allclose(grads[0], np.outer(g, x))
    assert np.allclose(grads[1], g)
    assert np.allclose(gx[0], params.weights[0].T @ g)


def finite_diff_grads(params, x, grad_y, h=1e-5):
    """Central finite differences of loss = grad_y . mlp(x)."""
    flat = params.flat()
    out = np.zeros_like(flat)
    for i in range(len(flat)):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        yu, _ = nets.mlp_forward(params.with_flat(up), x)
        yd, _ = nets.mlp_forward(params.with_flat(down), x)
        out[i] = (np.sum(grad_y * yu) - np.sum(grad_y * yd)) / (2 * h)
    return out


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    done = 0
    while done < 20:
        params = rand_mlp(rng)
        x = rng.standard_normal(params.dims[0])
        if not away_from_kinks(params, x):
            continue
        done += 1
        grad_y = rng.standard_normal(params.dims[-1])
        grads, _ = nets.mlp_backward(params, nets.mlp_forward(params, x)[1], grad_y)
        analytic = np.concatenate([g.ravel() for g in grads])
        numeric = finite_diff_grads(params, x, grad_y)
        denom = np.maximum(np.abs(numeric), 1e-3)
        assert np.max(np.abs(analytic - numeric) / denom) < 1e-4


def test_backward_batched_sums_over_batch():
    rng = np.random.default_rng(4)
    params = rand_mlp(rng)
    xs = rng.standard_normal((5, params.dims[0]))
    gys = rng.standard_normal((5, params.dims[-1]))
    _, cache = nets.mlp_forward(params, xs)
    grads, _ = nets.mlp_backward(params, cache, gys)
    # sum of per-sample gradients equals the batched gradient
    acc = [np.zeros_like(g) for g in grads]
    for x, gy in zip(xs, gys):
        g1, _ = nets.mlp_backward(params, nets.mlp_forward(params, x)[1], gy)
        acc = [a + b for a, b in zip(acc, g1)]
    for a, b in zip(acc, grads):
        assert np.allclose(a, b, atol=1e-10)


def test_adam_zero_gradient_no_change():
    rng = np.random.default_rng(5)
    params = rand_mlp(rng)
    state = nets.AdamState.for_arrays(params.arrays())
    zero = [np.zeros_like(a) for a in params.arrays()]
    new, _ = nets.adam_update(params, zero, state, lr=0.1)
    for a, b in zip(params.arrays(), new.arrays()):
        assert np.array_equal(a, b)


def test_adam_first_step_magnitude():
    rng = np.random.default_rng(6)
    params = rand_mlp(rng)
    state = nets.AdamState.for_arrays(params.arrays())
    grads = [np.sign(rng.standard_normal(a.shape)) * rng.uniform(0.5, 3.0)
             for a in params.arrays()]
    new, _ = nets.adam_update(params, grads, state, lr=0.01)
    for a, b, g in zip(params.arrays(), new.arrays(), grads):
        # first bias-corrected step is ~lr * sign(g)
        assert np.allclose(a - b, 0.01 * np.sign(g), atol=1e-6)


def test_adam_converges_on_quadratic():
    # scalar recurrence oracle on f(w) = w^2 from w = 1
    w = np.array([[1.0]])
    params = nets.MlpParams([w], [np.zeros(1)])
    state = nets.AdamState.for_arrays(params.arrays())
    for _ in range(100):
        grads = [2.0 * params.weights[0], np.zeros(1)]
        params, state = nets.adam_update(params, grads, state, lr=0.1)
    assert abs(params.weights[0][0, 0]) < 0.1


def test_softmax_and_sigmoid_sanity():
    z = np.array([1.0, 1.0, 1.0])
    assert np.allclose(nets.softmax(z), 1 / 3)
    assert nets.sigmoid(np.array([0.0]))[0] == pytest.approx(0.5)
    assert nets.sigmoid(np.array([20.0]))[0] < 1.0
    assert nets.sigmoid(np.array([-800.0]))[0] >= 0.0   # no overflow


def test_xavier_init_bounds_and_final_scale():
    rng = np.random.default_rng(7)
    params = nets.init_mlp([10, 32, 32, 4], rng, final_scale=0.01)
    bound0 = np.sqrt(6.0 / (10 + 32))
    assert np.max(np.abs(params.weights[0])) <= bound0
    bound_last = np.sqrt(6.0 / (32 + 4)) * 0.01
    assert np.max(np.abs(params.weights[-1])) <= bound_last
    assert all(np.all(b == 0) for b in params.biases)


def test_flat_round_trip():
    rng = np.random.default_rng(8)
    params = rand_mlp(rng)
    vec = params.flat()
    rebuilt = params.with_flat(vec)
    for a, b in zip(params.arrays(), rebuilt.arrays()):
        assert np.array_equal(a, b)
