import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphamr.autodiff import (
    Adam,
    AdamState,
    Tape,
    Tensor,
    activation,
    adam_step,
    concat,
    gradcheck,
    index_rows,
    leaky_relu,
    load_checkpoint,
    log,
    matmul,
    reduce,
    restore,
    save_checkpoint,
    segment_softmax,
    segment_sum,
    sigmoid,
    slice_cols,
    softmax_rows,
    tanh,
)
from graphamr.errors import ContractError, DomainError, ShapeError


def param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


# --- matmul ---------------------------------------------------------------

def test_matmul_identity():
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(x)).data, x)


def test_matmul_hand_arithmetic():
    out = matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]]))
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    a, b = param(rng, 4, 3), param(rng, 3, 5)
    assert gradcheck(lambda: matmul(a, b).sum(), [a, b], h=1e-5, rng=rng) < 1e-6


# --- activations ----------------------------------------------------------

def test_leaky_relu_definition():
    assert leaky_relu(Tensor(-1.0), 0.2).item() == pytest.approx(-0.2)
    assert leaky_relu(Tensor(-1.0)).item() == pytest.approx(-0.2)


def test_sigmoid_at_zero():
    assert sigmoid(Tensor(0.0)).item() == 0.5


def test_sigmoid_is_stable_for_large_inputs():
    out = sigmoid(Tensor([-1000.0, 1000.0])).data
    np.testing.assert_allclose(out, [0.0, 1.0])
    assert np.all(np.isfinite(out))


def test_tanh_gradient_at_zero():
    x = Tensor(np.zeros(1), requires_grad=True)
    with Tape() as tape:
        y = tanh(x).sum()
    tape.backward(y)
    assert x.grad[0] == pytest.approx(1.0)
    h = 1e-5
    fd = (np.tanh(h) - np.tanh(-h)) / (2 * h)
    assert x.grad[0] == pytest.approx(fd, rel=1e-9)


def test_log_domain_error():
    with pytest.raises(DomainError):
        log(Tensor([1.0, 0.0]))


@pytest.mark.parametrize("kind", ["leaky_relu", "sigmoid", "tanh", "exp", "log", "elu"])
def test_activation_gradients(kind):
    rng = np.random.default_rng(7)
    x = Tensor(rng.uniform(0.2, 2.0, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4))
               if kind != "log" else rng.uniform(0.2, 2.0, size=(3, 4)), requires_grad=True)
    w = rng.normal(size=(3, 4))
    assert gradcheck(lambda: (activation(x, kind) * w).sum(), [x], rng=rng) < 1e-6


def test_unknown_activation():
    with pytest.raises(ContractError):
        activation(Tensor(1.0), "swish")


# --- softmax --------------------------------------------------------------

def test_softmax_uniform_row():
    np.testing.assert_allclose(softmax_rows(Tensor([[2.0, 2.0, 2.0]])).data, [[1 / 3] * 3])


def test_softmax_single_unmasked_entry():
    out = softmax_rows(Tensor([[5.0, -3.0, 1.0]]), mask=np.array([[False, True, False]])).data
    np.testing.assert_array_equal(out, [[0.0, 1.0, 0.0]])


def test_softmax_no_overflow():
    out = softmax_rows(Tensor([[1000.0, 0.0]])).data
    assert out[0, 0] == pytest.approx(1.0)
    assert np.all(np.isfinite(out))


def test_softmax_fully_masked_row_errors():
    with pytest.raises(ContractError, match="degenerate"):
        softmax_rows(Tensor(np.zeros((2, 2))), mask=np.array([[True, False], [False, False]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1),
       st.floats(-50, 50))
def test_softmax_rows_sum_to_one_and_shift_invariant(n, m, seed, shift):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=5, size=(n, m))
    mask = rng.random((n, m)) < 0.7
    mask[np.arange(n), rng.integers(m, size=n)] = True
    out = softmax_rows(Tensor(x), mask).data
    assert np.all(np.abs(out.sum(axis=1) - 1.0) < 1e-12)
    assert np.all(out[~mask] == 0.0)
    shifted = softmax_rows(Tensor(x + shift), mask).data
    np.testing.assert_allclose(shifted, out, atol=1e-12)


def test_softmax_gradient():
    rng = np.random.default_rng(3)
    x = param(rng, 4, 5)
    mask = rng.random((4, 5)) < 0.7
    mask[:, 0] = True
    w = rng.normal(size=(4, 5))
    assert gradcheck(lambda: (softmax_rows(x, mask) * w).sum(), [x], rng=rng) < 1e-6


def test_segment_softmax_matches_dense():
    rng = np.random.default_rng(4)
    vals = rng.normal(size=7)
    seg = np.array([0, 0, 1, 1, 1, 2, 0])
    out = segment_softmax(Tensor(vals), seg, 3).data
    for s in range(3):
        v = vals[seg == s]
        np.testing.assert_allclose(out[seg == s], np.exp(v) / np.exp(v).sum(), atol=1e-14)
    x = Tensor(vals, requires_grad=True)
    w = rng.normal(size=7)
    assert gradcheck(lambda: (segment_softmax(x, seg, 3) * w).sum(), [x], rng=rng) < 1e-6


# --- reductions, concat, gathers -------------------------------------------

def test_sum_and_mean():
    assert reduce(Tensor([1.0, 2.0, 3.0]), "sum").item() == 6.0
    assert reduce(Tensor(np.full((3, 2), 4.5)), "mean").item() == 4.5


def test_reduce_axis_out_of_range():
    with pytest.raises(ShapeError):
        reduce(Tensor(np.ones((2, 2))), "sum", axis=2)


def test_concat_backward_splits_ones():
    a = Tensor(np.zeros((2, 3)), requires_grad=True)
    b = Tensor(np.zeros((2, 1)), requires_grad=True)
    with Tape() as tape:
        loss = concat([a, b], axis=1).sum()
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
    np.testing.assert_array_equal(b.grad, np.ones((2, 1)))


def test_concat_shape_mismatch():
    with pytest.raises(ShapeError):
        concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


def test_reductions_and_gathers_gradients():
    rng = np.random.default_rng(5)
    x = param(rng, 5, 3)
    idx = np.array([0, 4, 4, 2, 1, 0])
    seg = np.array([1, 0, 1, 1, 2])
    w = rng.normal(size=(6, 3))
    assert gradcheck(lambda: (index_rows(x, idx) * w).sum(), [x], rng=rng) < 1e-6
    assert gradcheck(lambda: (segment_sum(x, seg, 3) ** 2).sum(), [x], rng=rng) < 1e-6
    assert gradcheck(lambda: (x.mean(axis=0) ** 2).sum() + (x.sum(axis=1) ** 3).mean(),
                     [x], rng=rng) < 1e-6
    assert gradcheck(lambda: (slice_cols(x, 1, 3) ** 2).sum(), [x], rng=rng) < 1e-6
    y = param(rng, 5, 3)
    assert gradcheck(lambda: ((x / (y * y + 1.0)) - x * 2.0).sum(), [x, y], rng=rng) < 1e-6


# --- backward -------------------------------------------------------------

def test_backward_leaf_loss():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        pass
    tape.backward(x)
    assert x.grad == 1.0


def test_backward_sum_of_double():
    x = Tensor(np.ones(4), requires_grad=True)
    with Tape() as tape:
        loss = (2.0 * x).sum()
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.full(4, 2.0))


def test_backward_accumulates_on_repeat():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    tape.backward(loss)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.full(3, 4.0))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        tape.backward(y)


def test_no_recording_outside_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x * 2.0
    assert not y.requires_grad


def test_tape_visits_each_record_once_in_order():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        a = x * 2.0
        b = a + x
        loss = b.sum()
    assert [r.out for r in tape.records] == [a, b, loss]


def test_composite_gin_layer_gradient():
    # (1+eps) h + neighbour sum, then a two-layer MLP, as in one GIN update
    rng = np.random.default_rng(11)
    h = param(rng, 4, 6)
    eps = Tensor(np.zeros(1), requires_grad=True)
    w1, b1, w2 = param(rng, 6, 5, scale=0.5), param(rng, 5), param(rng, 5, 3, scale=0.5)
    src = np.array([0, 0, 1, 1, 2, 3])
    dst = np.array([2, 3, 2, 3, 0, 1])

    def loss():
        agg = segment_sum(index_rows(h, src), dst, 4)
        z = (1.0 + eps) * h + agg
        return (tanh(leaky_relu(z @ w1 + b1) @ w2) ** 2).sum()

    assert gradcheck(loss, [h, eps, w1, b1, w2], rng=rng) < 1e-4


def test_backward_is_deterministic():
    def grads():
        rng = np.random.default_rng(42)
        x = param(rng, 6, 4)
        idx = rng.integers(6, size=20)
        with Tape() as tape:
            loss = (segment_sum(index_rows(x, idx), idx % 3, 3) ** 2).sum()
        tape.backward(loss)
        return x.grad

    assert np.array_equal(grads(), grads())


# --- Adam -----------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    adam_step({"p": p}, AdamState())
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_magnitude_is_lr():
    p = Tensor(np.zeros(3), requires_grad=True)
    p.grad[:] = [0.3, -5.0, 100.0]
    state = AdamState(lr=0.01)
    adam_step({"p": p}, state)
    np.testing.assert_allclose(np.abs(p.data), 0.01, rtol=1e-6)
    np.testing.assert_array_equal(p.grad, 0.0)
    assert state.step == 1


def test_adam_converges_on_quadratic():
    w = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam({"w": w}, lr=0.1)
    for _ in range(200):
        with Tape() as tape:
            loss = ((w - 3.0) ** 2).sum()
        tape.backward(loss)
        opt.step()
    assert abs(w.data[0] - 3.0) < 1e-2


def test_adam_shape_drift_is_rejected():
    p = Tensor(np.zeros(2), requires_grad=True)
    state = AdamState()
    adam_step({"p": p}, state)
    p.data = np.zeros(3)
    p.grad = np.zeros(3)
    with pytest.raises(ContractError):
        adam_step({"p": p}, state)


# --- checkpoints ----------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    params = {"a.w": param(rng, 3, 2), "b": param(rng, 4), "s": Tensor(np.array(2.5), requires_grad=True)}
    save_checkpoint(tmp_path / "c.bin", params)
    loaded = load_checkpoint(tmp_path / "c.bin")
    assert set(loaded) == set(params)
    for k, v in params.items():
        np.testing.assert_array_equal(loaded[k], v.data)
    fresh = {k: Tensor(np.zeros_like(v.data), requires_grad=True) for k, v in params.items()}
    restore(fresh, loaded)
    np.testing.assert_array_equal(fresh["a.w"].data, params["a.w"].data)


def test_checkpoint_layout_is_little_endian(tmp_path):
    save_checkpoint(tmp_path / "c.bin", {"x": np.array([1.0])})
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[:8] == b"GAMRCKPT"
    assert raw[8:16] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
    assert raw[-8:] == np.array([1.0], dtype="<f8").tobytes()


@pytest.mark.parametrize("damage", ["truncate", "append", "magic"])
def test_checkpoint_rejects_damaged_files(tmp_path, damage):
    p = tmp_path / "c.bin"
    save_checkpoint(p, {"x": np.arange(4.0), "y": np.ones((2, 2))})
    raw = p.read_bytes()
    raw = {"truncate": raw[:-5], "append": raw + b"\0", "magic": b"XXXXXXXX" + raw[8:]}[damage]
    p.write_bytes(raw)
    with pytest.raises(ContractError):
        load_checkpoint(p)
