import math

import numpy as np
import pytest

from revol import nn_core as nn
from revol.errors import CheckpointError, NumericDomainError, ShapeError, StateError

from gradcheck import finite_difference_check


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------

def test_softmax_uniform():
    out = nn.softmax(nn.tensor([[0.0, 0.0, 0.0]]), axis=1)
    np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], rtol=0, atol=1e-15)


def test_log_exp_inverse():
    x = np.linspace(-5, 5, 41).reshape(1, -1)
    out = nn.log(nn.exp(nn.tensor(x)))
    np.testing.assert_allclose(out.data, x, atol=1e-12)


def test_matmul_hand_computed():
    a = nn.tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = nn.tensor([[7.0], [8.0], [9.0]])
    out = nn.matmul(a, b)
    # 1*7+2*8+3*9 = 50 ; 4*7+5*8+6*9 = 122
    np.testing.assert_array_equal(out.data, [[50.0], [122.0]])


def test_shape_errors():
    a = nn.tensor(np.ones((2, 3)))
    b = nn.tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        nn.matmul(a, b)
    with pytest.raises(ShapeError):
        nn.add(a, nn.tensor(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        nn.mul(a, nn.tensor(np.ones((2, 1))))


def test_domain_errors():
    with pytest.raises(NumericDomainError):
        nn.log(nn.tensor([[0.0, 1.0]]))
    with pytest.raises(NumericDomainError):
        nn.sqrt(nn.tensor([[-1.0]]))
    with pytest.raises(NumericDomainError):
        nn.tensor([np.nan])


def test_bias_add_broadcast():
    a = nn.tensor(np.ones((3, 2)))
    b = nn.tensor([[1.0, 2.0]])
    out = nn.add(a, b)
    np.testing.assert_array_equal(out.data, [[2.0, 3.0]] * 3)


def test_softmax_sums_to_one_and_positive(rng):
    for _ in range(50):
        x = rng.normal(0, 5, size=(4, 7))
        out = nn.softmax(nn.tensor(x), axis=1)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)
        assert (out.data > 0).all()


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def test_backward_sum_square():
    store = nn.ParamStore()
    p = store.add("p", [[1.0, 2.0]])
    with nn.Graph() as g:
        loss = nn.tsum(nn.square(p))
    nn.backward(g, loss)
    np.testing.assert_allclose(p.grad, [[2.0, 4.0]])


def test_backward_tanh_at_zero():
    store = nn.ParamStore()
    p = store.add("p", [[0.0]])
    with nn.Graph() as g:
        loss = nn.tsum(nn.tanh(p))
    nn.backward(g, loss)
    np.testing.assert_allclose(p.grad, [[1.0]])


def test_backward_before_forward_is_state_error():
    g = nn.Graph()
    with pytest.raises(StateError):
        nn.backward(g, nn.tensor([[1.0]]))


def test_backward_twice_is_state_error():
    store = nn.ParamStore()
    p = store.add("p", [[1.0]])
    with nn.Graph() as g:
        loss = nn.tsum(nn.square(p))
    nn.backward(g, loss)
    with pytest.raises(StateError):
        nn.backward(g, loss)


def test_backward_requires_scalar_loss():
    store = nn.ParamStore()
    p = store.add("p", [[1.0, 2.0]])
    with nn.Graph() as g:
        out = nn.square(p)
    with pytest.raises(ShapeError):
        nn.backward(g, out)


def test_grad_accumulates_across_backwards():
    store = nn.ParamStore()
    p = store.add("p", [[3.0]])
    for _ in range(2):
        with nn.Graph() as g:
            loss = nn.tsum(nn.square(p))
        nn.backward(g, loss)
    np.testing.assert_allclose(p.grad, [[12.0]])  # 2 * (2*3)


def test_three_layer_composition_matches_fd(rng):
    store = nn.ParamStore()
    w1 = store.add("w1", rng.normal(0, 0.5, (3, 4)))
    b1 = store.add("b1", rng.normal(0, 0.5, (1, 4)))
    w2 = store.add("w2", rng.normal(0, 0.5, (4, 4)))
    w3 = store.add("w3", rng.normal(0, 0.5, (4, 1)))
    x = nn.tensor(rng.normal(0, 1, (5, 3)))

    def forward():
        h1 = nn.tanh(nn.add(nn.matmul(x, w1), b1))
        h2 = nn.sigmoid(nn.matmul(h1, w2))
        return nn.tmean(nn.square(nn.matmul(h2, w3)))

    finite_difference_check(store, forward)


@pytest.mark.parametrize("op_name", [
    "add", "sub", "mul", "div", "exp", "log", "tanh", "sigmoid",
    "square", "sqrt", "softmax", "sum", "mean", "concat", "slice", "matmul",
])
def test_per_op_gradient_matches_fd(op_name, rng):
    # randomized shapes per draw; positive shifts keep log/sqrt/div in domain
    for trial in range(7):
        rows = int(rng.integers(1, 5))
        cols = int(rng.integers(1, 6))
        store = nn.ParamStore()
        a = store.add("a", rng.normal(0.2, 0.8, (rows, cols)))
        b = store.add("b", rng.normal(-0.3, 0.8, (rows, cols)))
        if op_name == "matmul":
            c = store.add("c", rng.normal(0.0, 0.8, (cols, rows + 1)))

        frozen = {}

        def forward():
            if op_name == "add":
                out = nn.add(a, b)
            elif op_name == "sub":
                out = nn.sub(a, b)
            elif op_name == "mul":
                out = nn.mul(a, b)
            elif op_name == "div":
                out = nn.div(a, nn.add(nn.square(b), 0.5))
            elif op_name == "exp":
                out = nn.exp(a)
            elif op_name == "log":
                out = nn.log(nn.add(nn.square(a), 0.5))
            elif op_name == "tanh":
                out = nn.tanh(a)
            elif op_name == "sigmoid":
                out = nn.sigmoid(a)
            elif op_name == "square":
                out = nn.square(a)
            elif op_name == "sqrt":
                out = nn.sqrt(nn.add(nn.square(a), 0.5))
            elif op_name == "softmax":
                out = nn.softmax(a, axis=1)
            elif op_name == "sum":
                out = nn.tsum(a, axis=1)
            elif op_name == "mean":
                out = nn.tmean(a, axis=0)
            elif op_name == "concat":
                out = nn.concat([a, b, a], axis=1)
            elif op_name == "slice":
                out = nn.slice_axis(a, 1, 0, max(1, cols // 2))
            elif op_name == "matmul":
                out = nn.matmul(a, c)
            # weighted sum makes the scalar sensitive to each element
            if "w" not in frozen:
                frozen["w"] = nn.tensor(rng.normal(0, 1, out.shape))
            return nn.tsum(nn.mul(out, frozen["w"]))

        finite_difference_check(store, forward)


# ---------------------------------------------------------------------------
# LSTM cell
# ---------------------------------------------------------------------------

def _lstm_params(store, input_dim, hidden, rng=None, scale=0.5):
    if rng is None:
        wx = store.add_zeros("wx", (input_dim, 4 * hidden))
        wh = store.add_zeros("wh", (hidden, 4 * hidden))
        b = store.add_zeros("b", (1, 4 * hidden))
    else:
        wx = store.add("wx", rng.normal(0, scale, (input_dim, 4 * hidden)))
        wh = store.add("wh", rng.normal(0, scale, (hidden, 4 * hidden)))
        b = store.add("b", rng.normal(0, scale, (1, 4 * hidden)))
    return wx, wh, b


def test_lstm_zero_params_zero_state_gives_zero_h(rng):
    store = nn.ParamStore()
    wx, wh, b = _lstm_params(store, 3, 4)
    x = nn.tensor(rng.normal(0, 2, (2, 3)))
    h0 = nn.tensor(np.zeros((2, 4)))
    c0 = nn.tensor(np.zeros((2, 4)))
    h, c = nn.lstm_cell(x, h0, c0, wx, wh, b)
    np.testing.assert_array_equal(h.data, np.zeros((2, 4)))
    np.testing.assert_array_equal(c.data, np.zeros((2, 4)))


def test_lstm_saturated_forget_gate_preserves_cell():
    store = nn.ParamStore()
    hidden = 3
    wx, wh, b = _lstm_params(store, 2, hidden)
    b.data[0, hidden : 2 * hidden] = 20.0  # forget gate ~ 1
    x = nn.tensor([[0.7, -0.2]])
    c_prev = nn.tensor([[0.4, -0.9, 1.3]])
    h_prev = nn.tensor(np.zeros((1, hidden)))
    _, c = nn.lstm_cell(x, h_prev, c_prev, wx, wh, b)
    np.testing.assert_allclose(c.data, c_prev.data, atol=1e-8)


def test_lstm_unrolled_gradient_matches_fd(rng):
    store = nn.ParamStore()
    wx, wh, b = _lstm_params(store, 2, 3, rng)
    xs = [nn.tensor(rng.normal(0, 1, (2, 2))) for _ in range(5)]

    def forward():
        h = nn.tensor(np.zeros((2, 3)))
        c = nn.tensor(np.zeros((2, 3)))
        for x in xs:
            h, c = nn.lstm_cell(x, h, c, wx, wh, b)
        return nn.tmean(nn.square(h))

    finite_difference_check(store, forward)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_no_grad_no_decay_leaves_params():
    store = nn.ParamStore()
    p = store.add("p", [[1.5, -2.0]])
    nn.adam_step(store, lr=0.01)
    np.testing.assert_array_equal(p.data, [[1.5, -2.0]])


def test_adam_first_step_is_minus_lr():
    for grad_value in (0.5, -3.0, 1e3):
        store = nn.ParamStore()
        p = store.add("p", [[1.0]])
        p.grad = np.array([[grad_value]])
        nn.adam_step(store, lr=1e-3)
        delta = p.data[0, 0] - 1.0
        assert abs(delta + math.copysign(1e-3, grad_value)) < 1e-9


def test_adam_decay_only():
    store = nn.ParamStore()
    p = store.add("p", [[2.0]])
    nn.adam_step(store, lr=0.1, weight_decay=0.01)
    np.testing.assert_allclose(p.data, [[2.0 * (1 - 0.1 * 0.01)]], rtol=1e-15)


def test_adam_zeroes_grads_and_counts_steps():
    store = nn.ParamStore()
    p = store.add("p", [[1.0]])
    p.grad = np.array([[1.0]])
    nn.adam_step(store, lr=1e-3)
    assert p.grad is None
    (entry,) = [e for _, e in store.items()]
    assert entry.step == 1


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    store = nn.ParamStore()
    store.add("layer.w", rng.normal(0, 1, (3, 4)))
    store.add("layer.b", rng.normal(0, 1, (1, 4)))
    path = tmp_path / "model.ckpt"
    nn.save_store(store, path, meta={"w": 8, "mode": 1})
    arrays, meta = nn.load_store(path)
    assert meta == {"w": 8.0, "mode": 1.0}
    for name, e in store.items():
        np.testing.assert_array_equal(arrays[name], e.value.data)
    # file starts with the version tag
    assert path.read_bytes().startswith(b"revol-ckpt-v1\n")


def test_checkpoint_bad_tag_rejected(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"not-a-ckpt\nx <f8 1 0\n---\n" + b"\x00" * 8)
    with pytest.raises(CheckpointError):
        nn.load_arrays(p)


def test_checkpoint_shape_mismatch_rejected(tmp_path, rng):
    store = nn.ParamStore()
    store.add("w", rng.normal(0, 1, (2, 2)))
    path = tmp_path / "model.ckpt"
    nn.save_store(store, path)
    other = nn.ParamStore()
    other.add("w", np.zeros((3, 3)))
    arrays, _ = nn.load_store(path)
    with pytest.raises(CheckpointError):
        other.load_state_arrays(arrays)


def test_determinism_same_seed_same_losses():
    def run(seed):
        rng = np.random.default_rng(seed)
        store = nn.ParamStore()
        w = store.add("w", rng.normal(0, 1, (3, 1)))
        losses = []
        for _ in range(5):
            x = nn.tensor(rng.normal(0, 1, (4, 3)))
            with nn.Graph() as g:
                loss = nn.tmean(nn.square(nn.matmul(x, w)))
            nn.backward(g, loss)
            nn.adam_step(store, lr=1e-2)
            losses.append(loss.item())
        return losses

    assert run(7) == run(7)
    assert run(7) != run(8)
