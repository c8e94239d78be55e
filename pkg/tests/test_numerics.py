import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from tempograd import numerics as nx
from tempograd.numerics import Adam, AdamState, ContractError, DimensionError, Tensor, adam_step

from .gradcheck import max_rel_error


def param(rng, *shape):
    return Tensor(rng.uniform(-1, 1, size=shape), requires_grad=True)


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for r in range(k):
                out[i, j] += a[i, r] * b[r, j]
    return out


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(nx.matmul(np.eye(2), a).data, a)

    def test_dot(self):
        assert nx.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
        np.testing.assert_allclose(nx.matmul(a, b).data, naive_matmul(a, b), rtol=0, atol=1e-12)

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            nx.matmul(np.ones((2, 3)), np.ones((2, 3)))

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_right_identity_is_exact(self, m, n, seed):
        a = np.random.default_rng(seed).normal(size=(m, n))
        assert np.array_equal(nx.matmul(a, np.eye(n)).data, a)

    def test_batched_gradient(self):
        rng = np.random.default_rng(1)
        a, b = param(rng, 3, 2, 4), param(rng, 4, 5)
        assert max_rel_error(lambda: (nx.matmul(a, b) * nx.matmul(a, b)).sum(), [a, b]) < 1e-4


class TestElementwise:
    def test_relu(self):
        assert nx.elementwise("relu", [-1.0, 0.0, 2.0]).data.tolist() == [0.0, 0.0, 2.0]

    def test_sigmoid(self):
        assert nx.elementwise("sigmoid", [0.0]).data.tolist() == [0.5]

    def test_concat(self):
        assert nx.elementwise("concat", [1.0, 2.0], [3.0]).data.tolist() == [1.0, 2.0, 3.0]

    def test_rows(self):
        x = [[1.0, 2.0], [3.0, 6.0]]
        assert nx.elementwise("sum-rows", x).data.tolist() == [4.0, 8.0]
        assert nx.elementwise("mean-rows", x).data.tolist() == [2.0, 4.0]

    def test_concat_shape_error(self):
        with pytest.raises(DimensionError):
            nx.concat([np.ones((2, 3)), np.ones((3, 3))], axis=-1)

    def test_add_shape_error(self):
        with pytest.raises(DimensionError):
            nx.add(np.ones(3), np.ones(4))

    def test_unknown_op(self):
        with pytest.raises(ContractError):
            nx.elementwise("tanh", [0.0])

    def test_sigmoid_extremes_are_finite(self):
        out = nx.sigmoid(Tensor([-1000.0, 1000.0])).data
        assert out.tolist() == [0.0, 1.0]


@pytest.mark.parametrize(
    "fn",
    [
        lambda x, y: (nx.relu(x) * y).sum(),
        lambda x, y: (nx.sigmoid(x) * y).sum(),
        lambda x, y: nx.cos(x * y).sum(),
        lambda x, y: nx.log(nx.sigmoid(x) + 0.5).sum() + y.sum(),
        lambda x, y: nx.concat([x, y], axis=-1).mean(axis=0).sum() * 3.0,
        lambda x, y: (nx.take(x, np.array([0, 0, 2])) * nx.take(y, np.array([1, 2, 2]))).sum(),
        lambda x, y: (nx.masked_softmax(x, np.array([[1, 1, 0], [0, 0, 0], [1, 0, 1]], bool)) * y).sum(),
        lambda x, y: (x.transpose() @ y).reshape(-1).sum(),
        lambda x, y: (nx.clip(x, -0.5, 0.5) * y).sum(),
        lambda x, y: ((x - y) * (x + 1.0)).sum(axis=1, keepdims=True).sum(),
    ],
    ids=["relu", "sigmoid", "cos", "log", "concat-mean", "take", "softmax", "transpose", "clip", "sub"],
)
def test_op_gradients(fn):
    rng = np.random.default_rng(7)
    x, y = param(rng, 3, 3), param(rng, 3, 3)
    assert max_rel_error(lambda: fn(x, y), [x, y]) < 1e-4


def test_spmm_gradient():
    rng = np.random.default_rng(3)
    a = sp.random(5, 4, density=0.5, random_state=3, format="csr")
    x = param(rng, 4, 2)
    assert max_rel_error(lambda: (nx.spmm(a, x) * nx.spmm(a, x)).sum(), [x]) < 1e-4


class TestBackward:
    def test_product_rule(self):
        x, y = Tensor(2.0, requires_grad=True), Tensor(3.0, requires_grad=True)
        (x * y).backward()
        assert x.grad == 3.0 and y.grad == 2.0

    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        x.sum().backward()
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_three_layer_composite(self):
        rng = np.random.default_rng(11)
        x = param(rng, 4, 5)
        w1, w2, w3 = param(rng, 5, 6), param(rng, 6, 6), param(rng, 6, 1)
        b = param(rng, 6)

        def loss():
            h = nx.relu(x @ w1 + b)
            h = nx.sigmoid(h @ w2)
            return nx.cos(h @ w3).sum()

        assert max_rel_error(loss, [x, w1, w2, w3, b]) < 1e-4

    def test_accumulates_until_zeroed(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        loss.backward()
        assert x.grad.tolist() == [4.0, 8.0]
        x.zero_grad()
        assert x.grad.tolist() == [0.0, 0.0]

    def test_shared_subexpression(self):
        x = Tensor(3.0, requires_grad=True)
        y = x * x
        (y * y + y).backward()  # d/dx (x^4 + x^2) = 4x^3 + 2x
        assert x.grad == pytest.approx(4 * 27 + 6)

    def test_disconnected_leaf_stays_zero(self):
        x, z = Tensor([1.0], requires_grad=True), Tensor([5.0], requires_grad=True)
        (x * 2.0).sum().backward()
        assert z.grad.tolist() == [0.0]

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_deep_chain_no_recursion_limit(self):
        x = Tensor(1.0, requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 0.0
        y.backward()
        assert x.grad == 1.0


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        state = AdamState(lr=0.01)
        p = np.array([1.0, -2.0, 0.5])
        g = np.array([3.0, -0.001, 1e3])
        (new,), state = adam_step([p], [g], state)
        np.testing.assert_allclose(new - p, -0.01 * np.sign(g), rtol=1e-5)
        assert state.step == 1

    def test_zero_grad_is_identity(self):
        state = AdamState(lr=0.1)
        p = np.array([1.0, 2.0])
        for k in range(1, 6):
            (p2,), state = adam_step([p], [np.zeros(2)], state)
            assert np.array_equal(p2, p)
            assert state.step == k

    def test_converges_on_quadratic(self):
        x = Tensor([0.0], requires_grad=True)
        opt = Adam([x], lr=0.1)
        for _ in range(500):
            opt.zero_grad()
            ((x - 3.0) * (x - 3.0)).sum().backward()
            opt.step()
        assert abs(x.data[0] - 3.0) < 0.01

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            adam_step([np.zeros(2)], [np.zeros(3)], AdamState())

    def test_moments_match_parameter_shapes(self):
        state = AdamState()
        params = [np.zeros((2, 3)), np.zeros(4)]
        _, state = adam_step(params, [np.ones((2, 3)), np.ones(4)], state)
        assert [m.shape for m in state.m] == [(2, 3), (4,)]
        assert [v.shape for v in state.v] == [(2, 3), (4,)]
