import json
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from facetmatch import numerics as nx
from facetmatch.numerics import (
    Adam,
    AdamState,
    DimensionError,
    DomainError,
    GraphError,
    Tensor,
    TrainingError,
    adam_step,
    grad_check,
)

TOL = 1e-6


def param(rng, *shape, positive=False):
    data = rng.uniform(0.2, 2.0, size=shape) if positive else rng.normal(size=shape)
    return Tensor(data, requires_grad=True)


def weighted(out: Tensor, seed=99) -> Tensor:
    """Random linear read-out so every output coordinate reaches the gradient."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return nx.tsum(out * w)


# ---------------------------------------------------------------- forward examples


def test_matmul_examples():
    out = nx.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[5, 6], [7, 8]]))
    np.testing.assert_array_equal(out.data, [[5, 6], [7, 8]])
    assert nx.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_grad_4x3_3x5():
    rng = np.random.default_rng(0)
    a, b = param(rng, 4, 3), param(rng, 3, 5)
    assert grad_check(lambda: weighted(nx.matmul(a, b)), [a, b], max_coords=None) <= 1e-6


def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    big = nx.softmax_rows(Tensor([[1000.0, 1000.0]])).data
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big, [[0.5, 0.5]])
    np.testing.assert_allclose(nx.softmax_rows(Tensor([[0.0, np.log(3.0)]])).data, [[0.25, 0.75]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (3, 5), elements=st.floats(-50, 50)),
    st.floats(-100, 100),
)
def test_softmax_rows_sum_and_shift(x, c):
    s = nx.softmax_rows(Tensor(x)).data
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(nx.softmax_rows(Tensor(x + c)).data, s, atol=1e-12)


def test_layer_norm_examples():
    g, b = Tensor(np.ones(4)), Tensor(np.zeros(4))
    np.testing.assert_array_equal(nx.layer_norm(Tensor(np.full(4, 3.0)), g, b).data, np.zeros(4))
    out = nx.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    np.testing.assert_allclose(out.data, [1.0, -1.0])
    with pytest.raises(DimensionError):
        nx.layer_norm(Tensor([1.0]), Tensor([1.0]), Tensor([0.0]))


def test_layer_norm_moments():
    rng = np.random.default_rng(1)
    out = nx.layer_norm(Tensor(rng.normal(size=(6, 8)) * 5 + 2), Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-12)
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-9)


def test_l2_normalize_columns_examples():
    np.testing.assert_allclose(nx.l2_normalize_columns(Tensor([[3.0], [4.0]])).data, [[0.6], [0.8]])
    unit = np.array([[0.6, 1.0], [0.8, 0.0]])
    np.testing.assert_allclose(nx.l2_normalize_columns(Tensor(unit)).data, unit, atol=1e-15)
    zero = nx.l2_normalize_columns(Tensor(np.zeros((3, 2))), eps=1e-12).data
    assert np.all(zero == 0) and not np.any(np.isnan(zero))


def test_l2_normalize_zero_column_gradient_is_finite():
    x = Tensor(np.zeros((3, 2)), requires_grad=True)
    nx.tsum(nx.l2_normalize_columns(x)).backward()
    assert np.all(np.isfinite(x.grad))


def test_pool_examples():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 2, 2))
    assert nx.pool(x, "gem", p=1).item() == pytest.approx(2.5, abs=1e-12)
    assert nx.pool(x, "max").item() == 4.0
    assert nx.pool(x, "avg").item() == 2.5
    assert nx.pool(x, "gem", p=3).item() == pytest.approx((100 / 4) ** (1 / 3), abs=1e-12)
    assert nx.pool(x, "gem", p=3).item() == pytest.approx(2.92402, abs=1e-5)


def test_pool_errors():
    with pytest.raises(DomainError):
        nx.pool(Tensor(-np.ones((1, 2, 2))), "gem")
    with pytest.raises(DomainError):
        nx.pool(Tensor(np.ones((1, 2, 2))), "gem", p=0.5)
    with pytest.raises(ValueError):
        nx.pool(Tensor(np.ones((1, 2, 2))), "median")


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4, 4), elements=st.floats(0.1, 10)))
def test_gem_interpolates_avg_and_max(x):
    t = Tensor(x)
    np.testing.assert_allclose(nx.pool(t, "gem", p=1).data, nx.pool(t, "avg").data, atol=1e-12)
    mx = nx.pool(t, "max").data
    n = x.shape[1] * x.shape[2]
    # generalised means are sandwiched: max * n^(-1/p) <= gem_p <= max
    for p in (3.0, 64.0):
        gem = nx.pool(t, "gem", p=p).data
        assert np.all(gem <= mx * (1 + 1e-12))
        assert np.all(gem >= mx * n ** (-1 / p) * (1 - 1e-12))


def test_conv2d_matches_naive_loop():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 2, 2))
    b = rng.normal(size=4)
    out = nx.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2).data
    ref = np.zeros((2, 4, 3, 3))
    for n in range(2):
        for o in range(4):
            for i in range(3):
                for j in range(3):
                    ref[n, o, i, j] = (x[n, :, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_broadcast_mismatch_raises():
    with pytest.raises(DimensionError):
        nx.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


# ---------------------------------------------------------------- gradient suite


def _cases():
    rng = np.random.default_rng(3)
    a, b = param(rng, 3, 4), param(rng, 3, 4)
    row = param(rng, 4)
    pos = param(rng, 3, 4, positive=True)
    nonzero = Tensor(rng.uniform(0.5, 2, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4)), requires_grad=True)
    img = param(rng, 2, 3, 4, 4)
    w = param(rng, 5, 3, 2, 2)
    bias = param(rng, 5)
    table = param(rng, 6, 3)
    gain, shift = param(rng, 4), param(rng, 4)
    batch_a, batch_b = param(rng, 2, 3, 4), param(rng, 2, 4, 5)
    pool_in = Tensor(rng.uniform(0.2, 2.0, size=(2, 3, 2, 2)), requires_grad=True)
    ids = np.array([[0, 2, 2], [5, 1, 0]])
    return {
        "add": (lambda: weighted(a + row), [a, row]),
        "sub": (lambda: weighted(a - b), [a, b]),
        "mul": (lambda: weighted(a * b), [a, b]),
        "div": (lambda: weighted(a / nonzero), [a, nonzero]),
        "neg": (lambda: weighted(-a), [a]),
        "exp": (lambda: weighted(nx.exp(a)), [a]),
        "log": (lambda: weighted(nx.log(pos)), [pos]),
        "sqrt": (lambda: weighted(nx.sqrt(pos)), [pos]),
        "power": (lambda: weighted(nx.power(pos, 2.5)), [pos]),
        "tanh": (lambda: weighted(nx.tanh(a)), [a]),
        "sigmoid": (lambda: weighted(nx.sigmoid(a)), [a]),
        "relu": (lambda: weighted(nx.relu(nonzero)), [nonzero]),
        "clamp_min": (lambda: weighted(nx.clamp_min(nonzero, 0.1)), [nonzero]),
        "sum": (lambda: weighted(nx.tsum(a, axis=1)), [a]),
        "mean": (lambda: weighted(nx.mean(a, axis=0, keepdims=True)), [a]),
        "max": (lambda: weighted(nx.tmax(a, axis=1)), [a]),
        "reshape": (lambda: weighted(nx.reshape(a, (4, 3))), [a]),
        "transpose": (lambda: weighted(nx.transpose(batch_a, (2, 0, 1))), [batch_a]),
        "getitem": (lambda: weighted(a[np.array([0, 2, 2]), np.array([1, 3, 1])]), [a]),
        "slice": (lambda: weighted(a[1:, ::2]), [a]),
        "concat": (lambda: weighted(nx.concat([a, b], axis=1)), [a, b]),
        "stack": (lambda: weighted(nx.stack([a, b], axis=1)), [a, b]),
        "embedding": (lambda: weighted(nx.embedding(table, ids)), [table]),
        "matmul_batched": (lambda: weighted(nx.matmul(batch_a, batch_b)), [batch_a, batch_b]),
        "softmax": (lambda: weighted(nx.softmax(a, axis=-1)), [a]),
        "log_softmax": (lambda: weighted(nx.log_softmax(a, axis=0)), [a]),
        "layer_norm": (lambda: weighted(nx.layer_norm(a, gain, shift)), [a, gain, shift]),
        "l2_normalize": (lambda: weighted(nx.l2_normalize(a, axis=-1)), [a]),
        "l2_normalize_columns": (lambda: weighted(nx.l2_normalize_columns(a)), [a]),
        "pool_max": (lambda: weighted(nx.pool(pool_in, "max")), [pool_in]),
        "pool_avg": (lambda: weighted(nx.pool(pool_in, "avg")), [pool_in]),
        "pool_gem": (lambda: weighted(nx.pool(pool_in, "gem", 3.0)), [pool_in]),
        "conv2d": (lambda: weighted(nx.conv2d(img, w, bias, stride=2)), [img, w, bias]),
        "conv2d_stride1": (lambda: weighted(nx.conv2d(img, w, bias, stride=1)), [img, w, bias]),
    }


@pytest.mark.parametrize("name", sorted(_cases()))
def test_op_gradients(name):
    f, params = _cases()[name]
    assert grad_check(f, params, max_coords=None) <= 1e-4


def test_grad_check_quadratic_and_constant():
    x = Tensor([1.0, 2.0], requires_grad=True)
    f = lambda: nx.tsum(x * x)  # noqa: E731
    f().backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0])
    x.grad = None
    assert grad_check(f, [x]) <= 1e-8
    c = Tensor([1.0, 2.0], requires_grad=True)
    g = lambda: nx.tsum(c * 0.0) + 3.0  # noqa: E731
    g().backward()
    np.testing.assert_array_equal(c.grad, [0.0, 0.0])
    c.grad = None
    assert grad_check(g, [c]) == 0.0


def test_directional_check_catches_wrong_rules(rng):
    from facetmatch.numerics.tensor import _record

    x = param(rng, 4, 3)
    good = lambda: weighted(nx.tanh(x))  # noqa: E731
    assert nx.directional_check(good, [x]) <= 1e-6

    def bad_tanh(a):
        out = np.tanh(a.data)
        return _record(out, (a,), lambda g: (g * (1 - out**2) * 1.01,))  # 1% off

    assert nx.directional_check(lambda: weighted(bad_tanh(x)), [x]) > 1e-3

    # a structurally zero gradient: shifting every logit leaves softmax unchanged
    shift = Tensor(np.zeros(1), requires_grad=True)
    logits = rng.normal(size=(2, 5))
    f = lambda: weighted(nx.softmax(logits + shift, axis=-1))  # noqa: E731
    assert nx.directional_check(f, [shift], atol=1e-9) == 0.0


# ---------------------------------------------------------------- graph semantics


def test_backward_twice_raises():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = nx.tsum(x * x)
    y.backward()
    with pytest.raises(GraphError):
        y.backward()


def test_backward_reverse_order_and_accumulation():
    x = Tensor([3.0], requires_grad=True)
    y = x * x + x * 2.0  # x feeds two branches
    nx.tsum(y).backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_no_grad_records_nothing_and_is_thread_local():
    x = Tensor([1.0], requires_grad=True)
    seen = {}

    def worker():
        seen["other"] = nx.grad_enabled()

    with nx.no_grad():
        y = x * 2.0
        t = threading.Thread(target=worker)
        t.start()
        t.join()
    assert y._backward is None
    assert seen["other"] is True


def test_forward_backward_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(11)
        a, b = param(rng, 5, 4), param(rng, 4, 3)
        loss = nx.tsum(nx.log_softmax(nx.matmul(a, b), axis=1))
        loss.backward()
        return loss.data.tobytes(), a.grad.tobytes(), b.grad.tobytes()

    assert run() == run()


# ---------------------------------------------------------------- Adam


def test_adam_first_step_magnitude():
    p = {"w": Tensor(np.zeros(3), requires_grad=True)}
    state = AdamState(lr=1e-3)
    adam_step(p, {"w": np.ones(3)}, state)
    np.testing.assert_allclose(-p["w"].data, 1e-3 / (1 + 1e-8), rtol=1e-12)
    assert -p["w"].data[0] == pytest.approx(9.99999e-4, rel=1e-6)
    assert state.step == 1


def test_adam_zero_grad_is_identity():
    data = np.random.default_rng(0).normal(size=(2, 3))
    p = {"w": Tensor(data.copy(), requires_grad=True)}
    state = AdamState(lr=0.1)
    for _ in range(3):
        adam_step(p, {"w": np.zeros((2, 3))}, state)
    np.testing.assert_array_equal(p["w"].data, data)
    assert state.step == 3
    assert state.m["w"].shape == state.v["w"].shape == (2, 3)


def test_adam_deterministic_and_nan_guard():
    def run():
        p = {"w": Tensor(np.arange(4.0), requires_grad=True)}
        s = AdamState(lr=0.01)
        adam_step(p, {"w": np.array([0.5, -1.0, 2.0, 0.0])}, s)
        return p["w"].data.tobytes()

    assert run() == run()
    p = {"layer.w": Tensor(np.zeros(2), requires_grad=True)}
    with pytest.raises(TrainingError, match="layer.w"):
        adam_step(p, {"layer.w": np.array([np.nan, 0.0])}, AdamState())


def test_adam_wrapper_reads_grads():
    w = Tensor([1.0, -1.0], requires_grad=True)
    opt = Adam({"w": w}, lr=0.1)
    nx.tsum(w * w).backward()
    opt.step()
    np.testing.assert_allclose(w.data, [0.9, -0.9], rtol=1e-6)
    opt.zero_grad()
    assert w.grad is None


# ---------------------------------------------------------------- checkpoint format


def test_checkpoint_byte_exact_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    arrays = {"b": rng.normal(size=(2, 3)), "a": rng.normal(size=(4,)), "scalar": np.array(1.5)}
    nx.save_arrays(tmp_path / "m.json", arrays, {"note": "x"})
    loaded, meta = nx.load_arrays(tmp_path / "m.json")
    assert meta == {"note": "x"}
    for k in arrays:
        assert loaded[k].tobytes() == arrays[k].tobytes()
        assert loaded[k].shape == arrays[k].shape
    nx.save_arrays(tmp_path / "n.json", loaded, meta)
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "n.json").read_bytes()
    assert (tmp_path / "m.json.bin").read_bytes() == (tmp_path / "n.json.bin").read_bytes()
    manifest = json.loads((tmp_path / "m.json").read_text())
    assert [e["name"] for e in manifest["entries"]] == ["a", "b", "scalar"]
    assert [e["offset"] for e in manifest["entries"]] == [0, 4, 10]


def test_checkpoint_payload_is_little_endian_f8(tmp_path):
    nx.save_arrays(tmp_path / "m.json", {"x": np.array([1.0, 2.0])})
    assert (tmp_path / "m.json.bin").read_bytes() == np.array([1.0, 2.0], dtype="<f8").tobytes()
