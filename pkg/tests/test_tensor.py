"""Autodiff core: forward values against direct-formula oracles, gradients
against central finite differences."""

import gc
import weakref

import numpy as np
import pytest

from rasm import tensor as T
from rasm.tensor import Tensor
from rasm import gradcheck as G
from rasm.errors import ContractError, GatherIndexError, ShapeError


def _t(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ------------------------------------------------------------ forward oracles

def test_matmul_triple_loop_oracle(rng):
    a = rng.normal(size=(4, 5))
    b = rng.normal(size=(5, 2))
    got = T.matmul(_t(a), _t(b)).data
    ref = np.zeros((4, 2))
    for i in range(4):
        for j in range(2):
            for k in range(5):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.abs(got - ref).max() < 1e-6


def test_matmul_identity_and_zeros():
    m = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(T.matmul(_t(np.eye(3)), _t(m)).data, m)
    z = T.matmul(_t(np.zeros((2, 3))), _t(np.ones((3, 4)))).data
    assert np.array_equal(z, np.zeros((2, 4)))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError) as ei:
        T.matmul(_t(np.zeros((2, 3))), _t(np.zeros((4, 2))))
    assert "(2, 3)" in str(ei.value) and "(4, 2)" in str(ei.value)


def test_softmax_uniform_and_degenerate():
    out = T.softmax(_t([0.0, 0.0, 0.0]), axis=-1).data
    assert np.abs(out - 1 / 3).max() < 1e-12
    single = T.softmax(_t([[5.0]]), axis=-1).data
    assert single.shape == (1, 1) and abs(single[0, 0] - 1.0) < 1e-12


def test_softmax_stability_extreme_magnitudes():
    out = T.softmax(_t([1000.0, 0.0]), axis=-1).data
    assert np.isfinite(out).all()
    assert abs(out[0] - 1.0) < 1e-12 and out[1] < 1e-300

    big = T.softmax(_t(np.array([[1e4, -1e4, 0.0]])), axis=-1).data
    assert np.isfinite(big).all()
    assert abs(big.sum() - 1.0) < 1e-6


def test_softmax_rows_sum_to_one(rng):
    x = rng.normal(size=(6, 9)) * 100
    out = T.softmax(_t(x), axis=1).data
    assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-6
    assert (out >= 0).all()


def test_layer_norm_direct_formula(rng):
    x = rng.normal(size=(8,))
    g = rng.normal(size=(8,))
    b = rng.normal(size=(8,))
    got = T.layer_norm(_t(x), _t(g), _t(b)).data
    mu = x.mean()
    var = x.var()
    ref = (x - mu) / np.sqrt(var + T.LN_EPS) * g + b
    assert np.abs(got - ref).max() < 1e-6


def test_layer_norm_constant_input_zero_variance():
    x = np.full((4, 6), 3.7)
    out = T.layer_norm(_t(x), _t(np.ones(6)), _t(np.zeros(6))).data
    assert np.abs(out).max() < 1e-9


def test_layer_norm_gamma_zero_gives_beta():
    x = np.random.default_rng(1).normal(size=(3, 5))
    beta = np.arange(5.0)
    out = T.layer_norm(_t(x), _t(np.zeros(5)), _t(beta)).data
    assert np.abs(out - beta).max() < 1e-12


def test_gelu_at_zero_and_monotone_tail():
    assert T.gelu(_t([0.0])).data[0] == 0.0
    x = np.array([-10.0, 10.0])
    out = T.gelu(_t(x)).data
    assert abs(out[1] - 10.0) < 1e-6 and abs(out[0]) < 1e-6


def test_conv2d_identity_kernel(rng):
    x = rng.normal(size=(3, 6, 7))
    w = np.zeros((3, 3, 1, 1))
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    out = T.conv2d(_t(x), _t(w), 1, 0).data
    assert np.abs(out - x).max() == 0.0


def test_conv2d_direct_oracle(rng):
    x = rng.normal(size=(2, 5, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    got = T.conv2d(_t(x), _t(w), 1, 1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 5, 6))
    for o in range(3):
        for i in range(5):
            for j in range(6):
                ref[o, i, j] = (xp[:, i:i + 3, j:j + 3] * w[o]).sum()
    assert np.abs(got - ref).max() < 1e-10


def test_global_avg_pool_constant_map():
    x = np.stack([np.full((4, 5), 2.5), np.full((4, 5), -1.0)])
    out = T.global_avg_pool(_t(x)).data
    assert np.allclose(out.ravel(), [2.5, -1.0])


def test_reshape_transpose_roundtrip_bit_exact(rng):
    x = rng.normal(size=(3, 4, 5))
    y = T.transpose(T.transpose(_t(x), (2, 0, 1)), (1, 2, 0)).data
    assert np.array_equal(y, x)
    z = T.reshape(T.reshape(_t(x), (12, 5)), (3, 4, 5)).data
    assert np.array_equal(z, x)


def test_gather_forward_and_bounds(rng):
    x = rng.normal(size=(5, 3))
    idx = np.array([4, 0, 2])
    out = T.gather(_t(x), idx, axis=0).data
    assert np.array_equal(out, x[idx])
    with pytest.raises(GatherIndexError) as ei:
        T.gather(_t(x), np.array([1, 5]), axis=0)
    assert "5" in str(ei.value)


# ------------------------------------------------------------ backward basics

def test_backward_sum_gives_ones(rng):
    x = _t(rng.normal(size=(3, 4)))
    T.tsum(x).backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_half_sum_square_gives_x(rng):
    xv = rng.normal(size=(7,))
    x = _t(xv)
    (T.tsum(T.square(x)) * 0.5).backward()
    assert np.abs(x.grad - xv).max() < 1e-12


def test_backward_rejects_non_scalar(rng):
    x = _t(rng.normal(size=(3,)))
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_backward_requires_grad_leaf():
    x = Tensor(np.zeros(3), requires_grad=False)
    y = T.tsum(x * 2.0)
    with pytest.raises(ContractError):
        y.backward()


def test_gradient_accumulates_across_reuse(rng):
    x = _t(rng.normal(size=(4,)))
    y = x + x
    T.tsum(y).backward()
    assert np.allclose(x.grad, 2.0)


def test_no_grad_blocks_recording(rng):
    x = _t(rng.normal(size=(3,)))
    with T.no_grad():
        y = T.square(x)
    assert not y.requires_grad and y._prev == ()


def test_backward_releases_graph_by_refcount(rng):
    # Op closures capture their output, so an un-released graph is a pile of
    # reference cycles that only the cyclic GC can reclaim. Training loops
    # need intermediates to die by refcount, hence gc stays disabled here.
    gc.disable()
    try:
        x = _t(rng.normal(size=(4, 4)))
        y = T.square(x)
        loss = T.tsum(y)
        ref = weakref.ref(y)
        loss.backward()
        assert y._backward is None and y._prev == ()
        del y, loss
        assert ref() is None
        assert np.abs(x.grad - 2.0 * x.data).max() < 1e-12
    finally:
        gc.enable()


def test_record_trace_orders_by_creation(rng):
    x = _t(rng.normal(size=(2,)))
    a = x * 2.0
    b = a + x
    c = T.tsum(T.square(b))
    record = T.ComputationRecord.trace(c)
    seqs = [n._seq for n in record.ops]
    assert seqs == sorted(seqs)
    assert record.ops[-1] is c
    assert next(iter(record.reverse_order())) is c


# ------------------------------------------------- finite-difference property

_CASES = [
    ("add_broadcast", lambda p: T.tsum(T.square(p["a"] + p["b"])),
     {"a": (3, 4), "b": (4,)}),
    ("mul_broadcast", lambda p: T.tsum(T.square(p["a"] * p["b"])),
     {"a": (2, 3, 4), "b": (3, 1)}),
    ("square", lambda p: T.tsum(T.square(p["a"])), {"a": (5, 2)}),
    ("sqrt", lambda p: T.tsum(T.sqrt(p["a"])), {"a": "pos(4,3)"}),
    ("absolute", lambda p: T.tsum(T.absolute(p["a"])), {"a": (6,)}),
    ("mean", lambda p: T.mean(T.square(p["a"])), {"a": (3, 5)}),
    ("gelu", lambda p: T.tsum(T.gelu(p["a"])), {"a": (11,)}),
    ("relu", lambda p: T.tsum(T.square(T.relu(p["a"]))), {"a": (9,)}),
    ("sigmoid", lambda p: T.tsum(T.square(T.sigmoid(p["a"]))), {"a": (7,)}),
    ("softmax", lambda p: T.tsum(T.square(T.softmax(p["a"], axis=-1))),
     {"a": (4, 5)}),
    ("layer_norm",
     lambda p: T.tsum(T.square(T.layer_norm(p["a"], p["g"], p["b"]))),
     {"a": (3, 6), "g": (6,), "b": (6,)}),
    ("matmul", lambda p: T.tsum(T.square(T.matmul(p["a"], p["b"]))),
     {"a": (4, 3), "b": (3, 5)}),
    ("bmm", lambda p: T.tsum(T.square(T.bmm(p["a"], p["b"]))),
     {"a": (2, 3, 4), "b": (2, 4, 2)}),
    ("linear", lambda p: T.tsum(T.square(T.linear(p["a"], p["w"], p["b"]))),
     {"a": (5, 3), "w": (3, 4), "b": (4,)}),
    ("reshape", lambda p: T.tsum(T.square(T.reshape(p["a"], (6, 2)))),
     {"a": (3, 4)}),
    ("transpose",
     lambda p: T.tsum(T.square(T.transpose(p["a"], (1, 0, 2)))),
     {"a": (2, 3, 4)}),
    ("concat",
     lambda p: T.tsum(T.square(T.concat([p["a"], p["b"]], axis=0))),
     {"a": (2, 3), "b": (4, 3)}),
    ("pad_narrow",
     lambda p: T.tsum(T.square(T.narrow(
         T.pad_zero(p["a"], ((1, 1), (2, 0))), 0, 1, 3))),
     {"a": (3, 4)}),
    ("roll", lambda p: T.tsum(T.square(T.roll(p["a"], 2, axis=1))),
     {"a": (3, 5)}),
    ("gather",
     lambda p: T.tsum(T.square(T.gather(
         p["a"], np.array([[0, 2], [1, 1], [3, 0]]), axis=0))),
     {"a": (4, 3)}),
    ("conv2d", lambda p: T.tsum(T.square(T.conv2d(p["x"], p["w"], 2, 1))),
     {"x": (2, 6, 6), "w": (3, 2, 3, 3)}),
    ("conv_transpose2d",
     lambda p: T.tsum(T.square(T.conv_transpose2d(p["x"], p["w"], 2))),
     {"x": (3, 3, 4), "w": (3, 2, 2, 2)}),
    ("avg_pool2d", lambda p: T.tsum(T.square(T.avg_pool2d(p["x"], 2))),
     {"x": (2, 4, 6)}),
    ("global_avg_pool",
     lambda p: T.tsum(T.square(T.global_avg_pool(p["x"]))),
     {"x": (3, 4, 5)}),
    ("mlp",
     lambda p: T.tsum(T.square(T.mlp(p["x"], p["w1"], p["b1"], p["w2"],
                                     p["b2"]))),
     {"x": (4, 3), "w1": (3, 6), "b1": (6,), "w2": (6, 2), "b2": (2,)}),
]


@pytest.mark.parametrize("name,build,shapes",
                         _CASES, ids=[c[0] for c in _CASES])
def test_fd_gradients_f64(name, build, shapes):
    rng = np.random.default_rng(hash(name) % 2 ** 31)
    params = {}
    for k, sh in shapes.items():
        if isinstance(sh, str):  # "pos(...)": keep away from sqrt's kink
            dims = tuple(int(v) for v in sh[4:-1].split(","))
            params[k] = Tensor(rng.uniform(0.5, 2.0, size=dims),
                               requires_grad=True)
        else:
            params[k] = Tensor(rng.normal(size=sh), requires_grad=True)
    errs = G.check(lambda: build(params), params)
    assert max(errs.values()) < 1e-6


def test_fd_gradients_f32_tolerance(rng):
    x = Tensor(rng.normal(size=(4, 5)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.normal(size=(5, 3)).astype(np.float32), requires_grad=True)
    errs = G.check(lambda: T.tsum(T.square(T.matmul(x, w))),
                   {"x": x, "w": w})
    assert max(errs.values()) < 1e-3


def test_fd_random_shapes_sweep():
    # property check over assorted random shapes for the bread-and-butter ops
    rng = np.random.default_rng(42)
    for trial in range(20):
        ndim = int(rng.integers(1, 4))
        shape = tuple(int(rng.integers(1, 5)) for _ in range(ndim))
        x = Tensor(rng.normal(size=shape), requires_grad=True)
        op = [lambda v: T.tsum(T.square(v)),
              lambda v: T.tsum(T.gelu(v)),
              lambda v: T.mean(T.absolute(v) + v * 0.5),
              lambda v: T.tsum(T.square(T.softmax(v, axis=-1))),
              ][trial % 4]
        errs = G.check(lambda: op(x), {"x": x})
        assert max(errs.values()) < 1e-6, f"trial {trial} shape {shape}"


def test_make_op_custom_hook(rng):
    # route a custom op through the public extension point
    xv = rng.normal(size=(5,))
    x = _t(xv)

    def backward(out):
        def run():
            x.grad = (x.grad if x.grad is not None else 0) + 3.0 * out.grad
        return run

    y = T.make_op(3.0 * x.data, (x,), backward)
    T.tsum(T.square(y)).backward()
    assert np.abs(x.grad - 18.0 * xv).max() < 1e-12
