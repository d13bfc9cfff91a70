import numpy as np
import pytest

from kpmatch import autodiff as ad
from kpmatch.autodiff import Tape, Tensor


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def analytic_grad(f, *xs):
    ts = [Tensor(x, requires_grad=True) for x in xs]
    with Tape() as tape:
        out = f(*ts)
    tape.backward(out)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def check(f, *xs, atol=1e-6):
    """Scalar-valued f: compare taped gradients with central differences, argument by argument."""
    grads = analytic_grad(f, *xs)
    for k, x in enumerate(xs):
        def fk(v, k=k):
            args = [Tensor(a) for a in xs]
            args[k] = Tensor(v)
            return f(*args).item()
        np.testing.assert_allclose(grads[k], numeric_grad(fk, x), atol=atol, rtol=1e-6)


@pytest.fixture
def xs(rng):
    return rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(4, 2))


def test_scalar_chain():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
        z = y * y
    tape.backward(z)
    assert x.grad == 4 * 27


def test_elementwise(xs):
    a, b, _ = xs
    check(lambda x, y: ad.sum(x * y + x / (ad.exp(y) + 1.0) - y), a, b)
    check(lambda x: ad.sum(ad.log(ad.exp(x) + 2.0)), a)
    check(lambda x: ad.sum(-x * x), a)


def test_broadcast(rng):
    a = rng.normal(size=(3, 4))
    row = rng.normal(size=(4,))
    col = rng.normal(size=(3, 1))
    check(lambda x, r, c: ad.sum((x + r) * c), a, row, col)
    check(lambda x, s: ad.sum(x / s), a, np.array(1.7))


def test_matmul_transpose(xs):
    a, b, w = xs
    check(lambda x, y: ad.sum((x @ y) * (x @ y)), a, w)
    check(lambda x, y: ad.sum(x @ y.T), a, b)


def test_reductions(xs):
    a, _, _ = xs
    check(lambda x: ad.sum(ad.mean(x, axis=0) * ad.sum(x, axis=1, keepdims=True)), a)
    check(lambda x: ad.sum(ad.logsumexp(x, axis=1) * 2.0), a)
    check(lambda x: ad.sum(ad.logsumexp(x, axis=0, keepdims=False)), a)


def test_softmax(xs, rng):
    a, _, _ = xs
    w = rng.normal(size=a.shape)
    check(lambda x: ad.sum(ad.softmax(x, axis=-1) * w), a)
    check(lambda x: ad.sum(ad.softmax(x, axis=0) * w), a)


def test_relu_clip_getitem_concat(xs, rng):
    a, b, _ = xs
    a = np.where(np.abs(a) < 1e-3, 0.5, a)
    check(lambda x: ad.sum(ad.relu(x) * x), a)
    check(lambda x: ad.sum(ad.clip(x, -0.5, 0.5) * x), np.where(np.abs(np.abs(a) - 0.5) < 1e-3, 0.1, a))
    check(lambda x: ad.sum(x[1:, ::2] * 3.0), a)
    check(lambda x, y: ad.sum(ad.concat([x, y * 2.0], axis=1) * 1.5), a, b)


def test_dustbin_augmentation(rng):
    s = rng.normal(size=(3, 2))
    w = rng.normal(size=(4, 3))
    check(lambda x, alpha: ad.sum(ad.augment_dustbin(x, alpha) * w), s, np.array(0.7))


def test_values_identical_with_and_without_tape(xs):
    a, b, w = xs
    f = lambda x, y: ad.softmax(x @ w, axis=1) * ad.logsumexp(y, axis=1)  # noqa: E731
    plain = f(Tensor(a), Tensor(b)).data
    with Tape():
        taped = f(Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)).data
    np.testing.assert_array_equal(plain, taped)


def test_no_recording_without_grad(xs):
    a, _, _ = xs
    with Tape() as tape:
        ad.exp(Tensor(a))
    assert tape.nodes == []


def test_replay_reproduces_values(xs):
    a, b, _ = xs
    x, y = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    with Tape() as tape:
        ad.sum(ad.exp(x) * y - x)
    for node, again in zip(tape.nodes, tape.replay()):
        np.testing.assert_array_equal(node.out.data, again)


def test_gradient_accumulates_over_reuse():
    x = Tensor(2.0, requires_grad=True)
    with Tape() as tape:
        y = x * 3.0 + x * x
    tape.backward(y)
    assert x.grad == 3.0 + 4.0
