import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from volsplat import autodiff as ad
from volsplat.autodiff import Tape, Tensor, backward, grad_check
from volsplat.errors import ContractError, DimensionError

RNG = np.random.default_rng(0)
X34 = RNG.normal(size=(3, 4))
POS34 = RNG.uniform(0.5, 2.0, size=(3, 4))
W45 = RNG.normal(size=(4, 5))

UNARY = {
    "exp": (ad.exp, X34),
    "log": (ad.log, POS34),
    "tanh": (ad.tanh, X34),
    "sigmoid": (ad.sigmoid, X34),
    "softplus": (ad.softplus, X34),
    "gelu": (ad.gelu, X34),
    "sqrt": (ad.sqrt, POS34),
    "square": (ad.square, X34),
    "neg": (ad.neg, X34),
    "mean_axis": (lambda x: ad.mean(x, axis=1), X34),
    "sum_keep": (lambda x: ad.tsum(x, axis=0, keepdims=True), X34),
    "reshape": (lambda x: ad.reshape(x, (4, 3)) * np.arange(12.0).reshape(4, 3), X34),
    "transpose": (lambda x: ad.transpose(x) * np.arange(12.0).reshape(4, 3), X34),
    "index": (lambda x: ad.index(x, (slice(None), [0, 2, 2])), X34),
    "take": (lambda x: ad.take(x, [1, 1, 0], axis=0), X34),
    "softmax": (lambda x: ad.softmax(x, axis=1) * np.arange(12.0).reshape(3, 4), X34),
    "layer_norm": (lambda x: ad.layer_norm(x) * np.arange(12.0).reshape(3, 4), X34),
    "matmul": (lambda x: ad.matmul(x, W45), X34),
    "einsum": (lambda x: ad.einsum("ij,jk->ik", x, W45), X34),
    "div": (lambda x: ad.div(1.0, x), POS34),
    "concat": (lambda x: ad.concat([x, x * 2.0], axis=0) * np.arange(24.0).reshape(6, 4), X34),
    "stack": (lambda x: ad.stack([x, ad.exp(x)], axis=1), X34),
    "segment_mean": (lambda x: ad.segment_mean(x, np.array([1, 0, 1]), 2) * np.array([1.0, -2.0])[:, None], X34),
    "gather_weighted": (lambda x: ad.gather_weighted(x, np.array([[0, 2], [1, 1]]), np.array([[0.3, 0.7], [2.0, -1.0]])), X34),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_op_gradient_matches_central_differences(name):
    fn, x = UNARY[name]
    rep = grad_check(lambda t: ad.tsum(ad.square(fn(t))), x, step=1e-6, tol=1e-6)
    assert rep.passed, (name, rep.max_rel_error)


def test_broadcast_binary_ops_unbroadcast_gradients():
    b = RNG.normal(size=(4,))
    for op in (ad.add, ad.sub, ad.mul):
        rep = grad_check(lambda t: ad.tsum(ad.square(op(X34, t))), b)
        assert rep.passed


def test_backward_requires_scalar_root():
    with Tape() as tape:
        x = Tensor(np.ones(3), requires_grad=True)
        y = x * 2.0
        with pytest.raises(ContractError):
            backward(tape, y)


def test_requires_grad_outside_tape_is_contract_error():
    with pytest.raises(ContractError):
        Tensor(np.ones(2), requires_grad=True)


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.matmul(np.ones((2, 3)), np.ones((4, 5)))


def test_softmax_fully_masked_row_is_zero_and_axis_checked():
    x = np.array([[0.0, 1.0], [-np.inf, -np.inf]])
    out = ad.softmax(x, axis=1).data
    assert np.allclose(out[0].sum(), 1.0)
    assert np.array_equal(out[1], [0.0, 0.0])
    with pytest.raises(DimensionError):
        ad.softmax(x, axis=2)


def test_untracked_tensors_do_not_grow_tape():
    with Tape() as tape:
        a = Tensor(np.ones(3))
        _ = ad.exp(a) + 1.0
    assert len(tape) == 0


def test_gradient_accumulates_over_reuse():
    with Tape() as tape:
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = ad.tsum(x * x + x * 3.0)
        g = backward(tape, y)
    assert g[x.node][0] == pytest.approx(7.0)


def test_clip_gradient_zero_where_clamped():
    with Tape() as tape:
        x = Tensor(np.array([-2.0, 0.5, 2.0]), requires_grad=True)
        g = backward(tape, ad.tsum(ad.clip(x, -1.0, 1.0)))
    assert np.array_equal(g[x.node], [0.0, 1.0, 0.0])


@given(arrays(np.float64, (2, 3), elements=st.floats(-3, 3)), arrays(np.float64, (2, 3), elements=st.floats(-3, 3)))
def test_product_rule_property(a, b):
    with Tape() as tape:
        x = Tensor(a, requires_grad=True)
        g = backward(tape, ad.tsum(x * b))
    assert np.array_equal(g[x.node], b)


@given(arrays(np.float64, (3, 5), elements=st.floats(-20, 20)))
def test_softmax_rows_sum_to_one(x):
    out = ad.softmax(x, axis=-1).data
    assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(out >= 0)
