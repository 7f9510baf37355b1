import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from amralign import autodiff as ad
from amralign.autodiff import ParamStore, Tensor


def _numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


UNARY = {
    "tanh": (ad.tanh, np.tanh),
    "sigmoid": (ad.sigmoid, lambda a: 1 / (1 + np.exp(-a))),
    "exp": (ad.exp, np.exp),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_against_numpy(name):
    op, ref = UNARY[name]
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 4))
    t = Tensor(x.copy(), requires_grad=True)
    out = (op(t) * Tensor(np.arange(12.0).reshape(3, 4))).sum()
    ad.backward(out)
    np.testing.assert_allclose(op(Tensor(x)).data, ref(x), rtol=1e-12)
    num = _numeric_grad(lambda a: float((ref(a) * np.arange(12.0).reshape(3, 4)).sum()), x.copy())
    np.testing.assert_allclose(t.grad, num, rtol=1e-6, atol=1e-8)


def test_matmul_and_broadcast_gradients():
    rng = np.random.default_rng(1)
    a, b, c = rng.normal(size=(2, 3)), rng.normal(size=(3, 4)), rng.normal(size=(4,))
    ta, tb, tc = (Tensor(v.copy(), requires_grad=True) for v in (a, b, c))
    ad.backward(ad.tanh(ta @ tb + tc).sum())

    def f(a_, b_, c_):
        return float(np.tanh(a_ @ b_ + c_).sum())

    np.testing.assert_allclose(ta.grad, _numeric_grad(lambda v: f(v, b, c), a.copy()), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(tb.grad, _numeric_grad(lambda v: f(a, v, c), b.copy()), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(tc.grad, _numeric_grad(lambda v: f(a, b, v), c.copy()), rtol=1e-6, atol=1e-9)


def test_take_accumulates_repeated_indices():
    t = Tensor(np.arange(4.0), requires_grad=True)
    ad.backward(ad.take(t, np.array([1, 1, 3])).sum())
    np.testing.assert_array_equal(t.grad, [0.0, 2.0, 0.0, 1.0])


def test_concat_stack_reshape_transpose():
    rng = np.random.default_rng(2)
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 1)), requires_grad=True)
    w = rng.normal(size=(4, 2))
    out = (ad.transpose(ad.concat([a, b], axis=1)) * Tensor(w)).sum() + ad.stack([a, a]).sum()
    out = out + ad.reshape(b, (2,)).sum()
    ad.backward(out)
    np.testing.assert_allclose(a.grad, w.T[:, :3] + 2.0)
    np.testing.assert_allclose(b.grad, w.T[:, 3:] + 1.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_logsumexp_and_log_softmax(x):
    ref = np.log(np.exp(x - x.max(axis=1, keepdims=True)).sum(axis=1)) + x.max(axis=1)
    np.testing.assert_allclose(ad.logsumexp(Tensor(x), axis=1).data, ref, rtol=1e-12, atol=1e-12)
    ls = ad.log_softmax(Tensor(x), axis=1).data
    np.testing.assert_allclose(np.exp(ls).sum(axis=1), 1.0, rtol=1e-12)


def test_logsumexp_is_overflow_safe():
    x = Tensor(np.array([1000.0, 1000.0]))
    assert ad.logsumexp(x, axis=0).item() == pytest.approx(1000.0 + np.log(2.0), abs=1e-12)


def test_log_softmax_mask():
    x = Tensor(np.array([[1.0, 2.0, 3.0]]), requires_grad=True)
    mask = np.array([[True, False, True]])
    out = ad.log_softmax(x, axis=1, mask=mask)
    assert out.data[0, 1] == -np.inf
    np.testing.assert_allclose(np.exp(out.data[0, [0, 2]]).sum(), 1.0)
    ad.backward(out[(np.array([0]), np.array([2]))].sum())
    assert x.grad[0, 1] == 0.0
    # d log softmax_2 / d x = onehot - softmax over the unmasked entries
    p = np.exp([1.0, 3.0]) / np.exp([1.0, 3.0]).sum()
    np.testing.assert_allclose(x.grad[0, [0, 2]], [-p[0], 1 - p[1]])


def test_dropout_inverted_scaling_and_switch():
    rng = np.random.default_rng(0)
    x = Tensor(np.ones((200, 200)))
    y = ad.dropout(x, 0.25, rng, train=True)
    kept = y.data[y.data > 0]
    np.testing.assert_allclose(kept, 1 / 0.75)
    assert abs(y.data.mean() - 1.0) < 0.02
    with ad.no_dropout():
        assert ad.dropout(x, 0.25, rng, train=True) is x
    assert ad.dropout(x, 0.25, rng, train=False) is x


def test_backward_rejects_non_scalar_and_nan():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(t * 2.0)
    with pytest.raises(FloatingPointError):
        ad.backward((t * np.nan).sum())


def test_shared_subexpression_and_leaf_accumulation():
    t = Tensor(np.array(3.0), requires_grad=True)
    y = t * t
    ad.backward(y * y)  # t^4 -> 4 t^3
    assert t.grad == pytest.approx(108.0)
    ad.backward(t * 2.0)  # leaf gradients accumulate until cleared
    assert t.grad == pytest.approx(110.0)


def test_adam_step_matches_formula():
    store = ParamStore()
    p = store.add("w", np.array([1.0, -2.0]))
    g = np.array([0.5, -1.0])
    p.grad = g.copy()
    ad.adam_step(store, lr=0.1)
    # after one step m_hat = g and v_hat = g^2, so the update is lr * sign(g) (up to eps)
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) - 0.1 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    p.grad = g.copy()
    ad.adam_step(store, lr=0.1)
    m = 0.9 * 0.1 * g + 0.1 * g
    v = 0.999 * 0.001 * g**2 + 0.001 * g**2
    step = 0.1 * (m / (1 - 0.9**2)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) - 0.1 * g / (np.abs(g) + 1e-8) - step, rtol=1e-12)


def test_grad_check_detects_wrong_gradient():
    store = ParamStore()
    w = store.add("w", np.array([0.3, -0.7]))

    def good():
        return ad.tanh(w).sum()

    assert ad.grad_check(good, store).passed

    def bad_tanh(x):
        out = ad.tanh(x)
        bw = out._backward
        out._backward = lambda g: bw(2.0 * g)
        return out

    rep = ad.grad_check(lambda: bad_tanh(w).sum(), store)
    assert not rep.passed and rep.max_rel_error > 0.3


def test_checkpoint_byte_layout(tmp_path):
    path = tmp_path / "m.bin"
    arr = np.array([[1.0, 2.0, 3.0]])
    ad.save_tensors(path, {"w": arr}, {"kind": "x"})
    meta = b'{"kind": "x"}'
    expected = (
        b"AMRT"
        + struct.pack("<I", 1)
        + struct.pack("<Q", len(meta))
        + meta
        + struct.pack("<I", 1)
        + struct.pack("<I", 1)
        + b"w"
        + struct.pack("<I", 2)
        + struct.pack("<QQ", 1, 3)
        + struct.pack("<3d", 1.0, 2.0, 3.0)
    )
    assert path.read_bytes() == expected
    tensors, m = ad.load_tensors(path)
    assert m == {"kind": "x"}
    np.testing.assert_array_equal(tensors["w"], arr)


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        ad.load_tensors(bad)
    store = ParamStore()
    store.add("w", np.zeros(2))
    with pytest.raises(KeyError):
        store.load_values({})
    with pytest.raises(ValueError):
        store.load_values({"w": np.zeros(3)})
