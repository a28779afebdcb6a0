import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtscgan import autodiff as ad
from mtscgan.autodiff import ShapeError, Tensor
from mtscgan.optim import AdamState, adam_step


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=float), requires_grad=grad)


# forward examples

def test_softmax_symmetric():
    np.testing.assert_allclose(ad.softmax(t([0.0, 0.0])).data, [0.5, 0.5])


def test_layernorm_constant_row():
    np.testing.assert_allclose(ad.layernorm(t([5.0, 5.0, 5.0])).data, [0, 0, 0])


def test_matmul_identity():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(t(np.eye(2)), t(m)).data, m)


@pytest.mark.parametrize("op,shapes", [
    (ad.add, ((2, 3), (4, 3))),
    (ad.mul, ((2, 3), (3, 2))),
    (ad.matmul, ((2, 3), (2, 3))),
])
def test_shape_mismatch_names_op_and_shapes(op, shapes):
    with pytest.raises(ShapeError, match=op.__name__) as info:
        op(t(np.zeros(shapes[0])), t(np.zeros(shapes[1])))
    assert str(shapes[0]) in str(info.value) and str(shapes[1]) in str(info.value)


def test_forward_op_dispatch():
    out = ad.forward_op("concat", [t([1.0]), t([2.0, 3.0])], axis=0)
    np.testing.assert_array_equal(out.data, [1, 2, 3])
    with pytest.raises(ValueError):
        ad.forward_op("nope", [])


def test_graph_parents_have_smaller_ids():
    x = t([1.0, 2.0], True)
    y = ad.sum_(ad.exp(x * x) + x)
    for node in ad._topo(y):
        assert all(p.id < node.id for p in node.parents)


# backward examples

def test_square_grad():
    x = t(3.0, True)
    (g,) = ad.grad(x * x, [x])
    assert g.data == 6.0


def test_sum_softmax_grad_is_zero():
    v = t([0.3, -1.2, 2.0], True)
    (g,) = ad.grad(ad.sum_(ad.softmax(v)), [v])
    np.testing.assert_allclose(g.data, 0.0, atol=1e-15)


def test_second_order_norm_of_gradient():
    x = t(3.0, True)
    (g,) = ad.grad(x * x, [x], create_graph=True)
    assert g.data == 6.0
    (gg,) = ad.grad(ad.norm(g.reshape(1), axis=0), [x])
    assert gg.data == pytest.approx(2.0)


def test_backward_errors():
    x = t([1.0, 2.0], True)
    with pytest.raises(ShapeError):
        ad.backward(x * 2.0)
    with pytest.raises(ValueError):
        ad.backward(t(1.0))


def test_backward_accumulates_leaf_grad():
    x = t([1.0, 2.0], True)
    ad.sum_(x * x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_conv1d_rejects_double_backward():
    x = t(np.ones((1, 2, 5)), True)
    w = t(np.ones((3, 2, 3)), True)
    with pytest.raises(NotImplementedError):
        ad.grad(ad.sum_(ad.conv1d(x, w)), [x], create_graph=True)


def test_norm_zero_vector_gradient_is_zero():
    x = t(np.zeros(3), True)
    (g,) = ad.grad(ad.norm(x, axis=0), [x])
    np.testing.assert_array_equal(g.data, 0.0)


# grad_check

def test_grad_check_square():
    assert ad.grad_check(lambda x: ad.sum_(x * x), np.array([1.0, 2.0, 3.0])) < 1e-7


def test_grad_check_layernorm():
    rng = np.random.default_rng(0)
    w = rng.normal(size=5)
    assert ad.grad_check(lambda x: ad.sum_(ad.layernorm(x) * w), rng.normal(size=(3, 5))) < 1e-6


UNARY = {
    "exp": ad.exp, "sigmoid": ad.sigmoid, "softplus": ad.softplus, "gelu": ad.gelu, "square": ad.square,
    "softmax": ad.softmax, "log_softmax": ad.log_softmax, "layernorm": ad.layernorm,
    "tanh_like": lambda x: ad.sigmoid(x) * 2.0 - 1.0,
    "log": lambda x: ad.log(ad.square(x) + 1.0),
    "sqrt": lambda x: ad.sqrt(ad.square(x) + 0.5),
    "pow": lambda x: ad.power(ad.square(x) + 1.0, -0.5),
    "norm": lambda x: ad.norm(x, axis=-1, keepdims=True),
    "mean": lambda x: ad.mean(x, axis=0, keepdims=True),
    "sum": lambda x: ad.sum_(x, axis=1),
    "transpose": lambda x: ad.transpose(x),
    "reshape": lambda x: ad.reshape(x, (-1,)),
    "getitem": lambda x: x[1:, ::2],
    "concat": lambda x: ad.concat([x, ad.square(x)], axis=1),
    "div": lambda x: ad.div(x, ad.square(x) + 1.0),
    "sub_neg": lambda x: -(x - ad.scale(x, 3.0)),
    "relu": lambda x: ad.relu(x),
    "matmul": lambda x: ad.matmul(x, ad.transpose(x)),
    "broadcast": lambda x: ad.broadcast_to(ad.mean(x, axis=1, keepdims=True), x.shape) * x,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_every_op_passes_grad_check_over_seeds(name):
    fn = UNARY[name]
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-2, 2, (3, 4))
        if name == "relu":
            x = np.where(np.abs(x) < 1e-3, 0.5, x)  # kink
        w = rng.normal(size=fn(Tensor(x)).shape)
        err = ad.grad_check(lambda v: ad.sum_(fn(v) * w), x)
        assert err <= 1e-5, (name, seed, err)


def test_conv1d_grad_check():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 9))
    w = ad.Tensor(rng.normal(size=(4, 3, 5)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=4), requires_grad=True)
    mask = rng.normal(size=(2, 4, 9))
    assert ad.grad_check(lambda v: ad.sum_(ad.conv1d(v, w, b) * mask), x) < 1e-6
    xt = Tensor(x)
    assert ad.grad_check_params(lambda: ad.sum_(ad.conv1d(xt, w, b) * mask), [w, b]) < 1e-6


def test_conv1d_matches_direct_sum():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 2, 7))
    w = rng.normal(size=(3, 2, 4))
    out = ad.conv1d(Tensor(x), Tensor(w)).data
    left = 1
    xp = np.pad(x, ((0, 0), (0, 0), (left, 2)))
    ref = np.zeros((1, 3, 7))
    for f in range(3):
        for tt in range(7):
            ref[0, f, tt] = np.sum(w[f] * xp[0, :, tt:tt + 4])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_second_order_finite_difference():
    # f(x) = ||grad_x g(x)||^2 with g a two-layer composition
    rng = np.random.default_rng(3)
    w1 = Tensor(rng.normal(size=(4, 6)))
    w2 = Tensor(rng.normal(size=(6, 1)))

    def g(x):
        return ad.sum_(ad.matmul(ad.gelu(ad.layernorm(ad.matmul(x, w1))), w2))

    def f(x):
        xl = Tensor(x.data, requires_grad=True)
        with ad.set_grad_enabled(True):
            (gx,) = ad.grad(g(xl), [xl], create_graph=True)
        return ad.sum_(ad.square(gx)), xl

    x0 = rng.uniform(-2, 2, (2, 4))
    val, xl = f(Tensor(x0))
    (analytic,) = ad.grad(val, [xl])
    eps = 1e-5
    num = np.zeros_like(x0)
    for i in np.ndindex(x0.shape):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += eps
        xm[i] -= eps
        num[i] = (f(Tensor(xp))[0].item() - f(Tensor(xm))[0].item()) / (2 * eps)
    rel = np.abs(analytic.data - num) / np.maximum(1.0, np.abs(analytic.data))
    assert rel.max() < 1e-4


# properties

@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    y = ad.softmax(Tensor(x)).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all((y >= 0) & (y <= 1))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-10, 10)))
def test_layernorm_moments(x):
    spread = x.std(axis=-1)
    x = x[spread > 1e-2]
    if not len(x):
        return
    y = ad.layernorm(Tensor(x)).data
    assert np.abs(y.mean(axis=-1)).max() <= 1e-10
    var = x.var(axis=-1)
    # eps = 1e-5 inside the square root shrinks the variance by var / (var + eps)
    np.testing.assert_allclose(y.var(axis=-1), var / (var + 1e-5), atol=1e-10)
    big = var > 10.0
    assert np.all(np.abs(y.var(axis=-1)[big] - 1.0) < 1e-6)


def test_graph_replay_is_bit_identical():
    def run():
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
        w = Tensor(rng.normal(size=(8, 8)))
        loss = ad.mean(ad.square(ad.softmax(ad.layernorm(x @ w))))
        (g,) = ad.grad(loss, [x])
        return loss.data.tobytes(), g.data.tobytes()

    assert run() == run()


# adam

def test_adam_first_step():
    p = Tensor(np.zeros(1), requires_grad=True)
    state = AdamState.create([p], lr=0.001, betas=(0.9, 0.999))
    adam_step([p], [np.ones(1)], state)
    # bias-corrected m_hat = 1, v_hat = 1 -> step = lr * 1 / (1 + eps)
    assert p.data[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
    assert state.t == 1


def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = AdamState.create([p])
    adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_moves_against_constant_gradient():
    p = Tensor(np.array([0.0, 0.0]), requires_grad=True)
    state = AdamState.create([p], lr=0.01)
    g = np.array([2.0, -3.0])
    adam_step([p], [g], state)
    first = p.data.copy()
    adam_step([p], [g], state)
    assert np.all(np.sign(first) == -np.sign(g))
    assert np.all(np.abs(p.data) > np.abs(first))
    assert state.t == 2


def test_adam_shape_mismatch():
    p = Tensor(np.zeros(2), requires_grad=True)
    state = AdamState.create([p])
    with pytest.raises(ShapeError):
        adam_step([p], [np.zeros(3)], state)
