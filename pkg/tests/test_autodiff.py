import math

import numpy as np
import pytest

from levyforecast import autodiff as ad
from levyforecast.optim import Adam, CosineSchedule, clip_and_step, clip_by_global_norm, global_norm

STEP = 1e-5


def fd_check(fn, *inputs, tol=1e-4, seed=0):
    """Compare tape gradients of sum(w * fn(inputs)) with central differences."""
    rng = np.random.default_rng(seed)
    params = [ad.parameter(np.array(x, dtype=float)) for x in inputs]
    out = fn(*params)
    w = rng.normal(size=out.shape)
    loss = ad.sum(out * w)
    grads = ad.grad(loss, params)
    for p, g in zip(params, grads):
        flat = p.value.ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + STEP
            up = float(np.sum(fn(*[ad.Tensor(q.value) for q in params]).value * w))
            flat[i] = old - STEP
            dn = float(np.sum(fn(*[ad.Tensor(q.value) for q in params]).value * w))
            flat[i] = old
            fd = (up - dn) / (2 * STEP)
            an = g.ravel()[i]
            assert abs(an - fd) <= tol * max(abs(fd), abs(an), 1e-3), (i, an, fd)


def pts(n=100, lo=-2.0, hi=2.0, seed=1):
    return np.random.default_rng(seed).uniform(lo, hi, n)


UNARY = {
    "exp": (ad.exp, pts()),
    "expm1": (ad.expm1, pts()),
    "log": (ad.log, pts(lo=0.1, hi=5)),
    "sin": (ad.sin, pts()),
    "cos": (ad.cos, pts()),
    "tan": (ad.tan, pts(lo=-1.2, hi=1.2)),
    "abs": (ad.abs, pts()),
    "sigmoid": (ad.sigmoid, pts(lo=-6, hi=6)),
    "tanh": (ad.tanh, pts()),
    "softplus": (ad.softplus, pts(lo=-6, hi=6)),
    "lgamma": (ad.lgamma, pts(lo=0.3, hi=6)),
    "neg": (ad.neg, pts()),
    "stop_pass": (lambda x: ad.stop_gradient(x) * 0 + x, pts()),
    "maximum": (lambda x: ad.maximum(x, 0.3), pts()),
    "minimum": (lambda x: ad.minimum(x, -0.3), pts()),
    "clip": (lambda x: ad.clip(x, -1.0, 1.0), pts()),
    "pow_const": (lambda x: x ** 1.7, pts(lo=0.1, hi=3)),
    "softmax": (lambda x: ad.softmax(ad.reshape(x, (20, 5)), axis=-1), pts()),
    "log_softmax": (lambda x: ad.log_softmax(ad.reshape(x, (20, 5)), axis=-1), pts()),
    "logsumexp": (lambda x: ad.logsumexp(ad.reshape(x, (20, 5)), axis=-1), pts()),
    "sum_axis": (lambda x: ad.sum(ad.reshape(x, (20, 5)), axis=0), pts()),
    "mean": (lambda x: ad.mean(ad.reshape(x, (20, 5)), axis=1, keepdims=True), pts()),
    "getitem": (lambda x: ad.reshape(x, (20, 5))[3:9, 1:4], pts()),
    "getitem_fancy": (lambda x: x[np.array([0, 3, 3, 7])], pts()),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    fn, x = UNARY[name]
    if name in ("abs", "maximum", "minimum", "clip"):
        # keep away from the kinks at 0, 0.3, -0.3 and +-1
        kinks = np.array([0.0, 0.3, -0.3, 1.0, -1.0])
        x = x[np.min(np.abs(x[:, None] - kinks[None, :]), axis=1) > 1e-3]
    fd_check(fn, x)


BINARY = {
    "add": (ad.add, (4, 5), (5,)),
    "sub": (ad.sub, (4, 5), (4, 1)),
    "mul": (ad.mul, (4, 5), (1, 5)),
    "div": (ad.div, (4, 5), (4, 5)),
    "pow": (ad.pow, (4, 5), (4, 5)),
    "matmul": (ad.matmul, (4, 5), (5, 3)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients(name):
    fn, sa, sb = BINARY[name]
    rng = np.random.default_rng(3)
    a = rng.uniform(0.5, 2.0, sa)
    b = rng.uniform(0.5, 2.0, sb)
    fd_check(fn, a, b)


def test_concat_and_stack_gradients():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 4))
    fd_check(lambda x, y: ad.concat([x, ad.tanh(y)], axis=1), a, b)
    fd_check(lambda x, y: ad.stack([x, x * y], axis=1), a, rng.normal(size=(3, 2)))


def test_lstm_gates_gradient():
    rng = np.random.default_rng(5)
    d = 3
    z = rng.normal(size=(4, 4 * d))
    mem = rng.normal(size=(4, d))
    fd_check(ad.lstm_gates, z, mem)


def test_lstm_gates_matches_reference():
    rng = np.random.default_rng(6)
    d = 4
    z = rng.normal(size=(3, 4 * d))
    mem = rng.normal(size=(3, d))
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, g, o = sig(z[:, :d]), sig(z[:, d:2 * d]), np.tanh(z[:, 2 * d:3 * d]), sig(z[:, 3 * d:])
    new_mem = f * mem + i * g
    want = np.concatenate([o * np.tanh(new_mem), new_mem], axis=1)
    assert np.allclose(ad.lstm_gates(ad.Tensor(z), ad.Tensor(mem)).value, want, atol=1e-14)


def test_spec_examples():
    assert ad.sigmoid(ad.Tensor(0.0)).item() == 0.5
    assert ad.softplus(ad.Tensor(0.0)).item() == pytest.approx(math.log(2), abs=1e-12)
    x = ad.parameter(0.0)
    assert ad.grad(ad.tanh(x), [x])[0] == pytest.approx(1.0)
    x = ad.parameter(np.array([1.0, 2.0, 3.0]))
    assert ad.grad(ad.sum(x), [x])[0].tolist() == [1.0, 1.0, 1.0]
    assert ad.grad(ad.sum(x * x), [x])[0].tolist() == [2.0, 4.0, 6.0]


def test_stop_gradient_blocks():
    x = ad.parameter(np.array([0.5, -1.0]))
    y = ad.stop_gradient(x)
    assert np.array_equal(y.value, x.value)
    g = ad.grad(ad.sum(y * x), [x])[0]
    assert np.array_equal(g, x.value)  # only the unblocked factor contributes


def test_clipped_region_has_zero_gradient():
    x = ad.parameter(np.array([-2.0, 0.5, 2.0]))
    g = ad.grad(ad.sum(ad.clip(x, -1.0, 1.0)), [x])[0]
    assert g.tolist() == [0.0, 1.0, 0.0]
    g = ad.grad(ad.sum(ad.maximum(x, 0.0)), [x])[0]
    assert g.tolist() == [0.0, 1.0, 1.0]


def test_non_scalar_loss_rejected():
    x = ad.parameter(np.ones(3))
    with pytest.raises(ValueError):
        ad.backward(x * 2)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        ad.add(ad.Tensor(np.ones(3)), ad.Tensor(np.ones(4)))
    with pytest.raises(ValueError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))


def test_tape_is_topological():
    x = ad.parameter(np.ones(2))
    y = ad.exp(x) * x + ad.sin(x)
    loss = ad.sum(y * y)
    tape = ad.Tape.record(loss)
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    for n in tape.nodes:
        for p in n.parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(n)]


def test_shared_subexpression_accumulates():
    x = ad.parameter(3.0)
    y = x * x
    g = ad.grad(y + y, [x])[0]
    assert g == pytest.approx(12.0)


def test_ndarray_on_left():
    x = ad.parameter(np.array([1.0, 2.0]))
    y = np.array([5.0, 5.0]) - x
    assert isinstance(y, ad.Tensor)
    assert ad.grad(ad.sum(y), [x])[0].tolist() == [-1.0, -1.0]


# optimizer ---------------------------------------------------------------------

def test_clip_examples():
    g = [np.array([0.3, 0.4])]
    out, norm = clip_by_global_norm(g)
    assert norm == pytest.approx(0.5) and np.allclose(out[0], g[0])
    g = [np.array([0.0, 4.0]), np.array([0.0])]
    out, norm = clip_by_global_norm(g)
    assert norm == pytest.approx(4.0) and global_norm(out) == pytest.approx(1.0)
    assert np.allclose(out[0], g[0] / 4)


def test_zero_gradient_leaves_params():
    p = ad.parameter(np.array([1.0, -2.0]))
    opt = Adam([p])
    clip_and_step(opt, [np.zeros(2)], 1e-3)
    assert p.value.tolist() == [1.0, -2.0]


def test_adam_first_step_is_sign_times_lr():
    p = ad.parameter(np.array([1.0, 1.0]))
    opt = Adam([p])
    opt.step([np.array([0.2, -3.0])], 0.1)
    assert np.allclose(p.value, [0.9, 1.1], atol=1e-6)


def test_clip_and_step_rejects_bad_lr():
    p = ad.parameter(np.zeros(1))
    with pytest.raises(ValueError):
        clip_and_step(Adam([p]), [np.ones(1)], 0.0)


def test_cosine_endpoints():
    s = CosineSchedule(5e-4, 100)
    assert s(0) == pytest.approx(5e-4)
    assert s(100) <= 5e-4 * 1e-3 + 1e-18
    assert all(s(i) >= s(i + 1) for i in range(100))


def test_adam_minimizes_quadratic():
    p = ad.parameter(np.array([3.0, -2.0]))
    opt = Adam([p])
    for _ in range(2000):
        g = ad.grad(ad.sum(p * p), [p])
        clip_and_step(opt, g, 0.01)
    assert np.max(np.abs(p.value)) < 1e-2
