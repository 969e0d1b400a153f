import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from imle_lab import tensor as T
from imle_lab.checkpoint import load_checkpoint, save_checkpoint
from imle_lab.gradcheck import check_grads, directional_check, numerical_grad, rel_error
from imle_lab.optim import SGD, Adam, MissingGradError
from imle_lab.tensor import Tensor

finite = st.floats(-10, 10, allow_nan=False, width=32)


def test_add_example():
    out = T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_matmul_identity():
    a = np.random.default_rng(0).standard_normal((3, 5)).astype(np.float32)
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(3)), Tensor(a)).data, a)


def test_leaky_relu_example():
    assert T.leaky_relu(Tensor([-2.0])).data[0] == pytest.approx(-0.4)


def test_default_dtype_is_f32():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert (Tensor([1.0]) * 2.0).dtype == np.float32


def test_shape_mismatch_names_dims():
    with pytest.raises(T.ShapeError, match=r"lhs dim 1 = 3, rhs dim 0 = 4"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(T.ShapeError, match=r"\(2,\) and \(3,\)"):
        T.add(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_backward_square():
    x = Tensor([3.0], requires_grad=True)
    (x * x).sum().backward()
    assert x.grad[0] == pytest.approx(6.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(T.ShapeError):
        (x * 2.0).backward()


def test_constant_loss_zero_grads():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = (x * 0.0).sum()
    grads = T.grad_map(loss, [x])
    np.testing.assert_array_equal(grads[id(x)], 0.0)


def test_matmul_grad_matches_fd():
    rng = np.random.default_rng(1)
    w, v = rng.standard_normal((4, 3)), rng.standard_normal((3, 1))
    err = check_grads(lambda t: T.matmul(t[0], t[1]).sum(), [w, v])
    assert err <= 1e-4


def test_grads_accumulate_until_zeroed():
    x = Tensor([2.0], requires_grad=True)
    for _ in range(2):
        (x * x).sum().backward()
    assert x.grad[0] == pytest.approx(8.0)
    x.zero_grad()
    (x * x).sum().backward()
    assert x.grad[0] == pytest.approx(4.0)


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 3.0
    assert not y.requires_grad and y._parents == ()


def test_shared_subexpression_visited_once():
    x = Tensor([1.5], requires_grad=True)
    y = x * x
    (y + y).sum().backward()  # d/dx 2x^2 = 4x
    assert x.grad[0] == pytest.approx(6.0)


@pytest.mark.parametrize("name,build,shapes", [
    ("add_broadcast", lambda t: t[0] + t[1], [(3, 4), (4,)]),
    ("mul_broadcast", lambda t: t[0] * t[1], [(3, 4), (1, 4)]),
    ("exp", lambda t: T.exp(t[0]), [(5,)]),
    ("concat", lambda t: T.concat([t[0], t[1]], axis=-1) * T.Tensor(np.arange(7.0)), [(2, 3), (2, 4)]),
    ("mean_axis", lambda t: T.mean(t[0] * t[0], axis=0), [(3, 4)]),
    ("reshape", lambda t: T.reshape(t[0], (2, 6)) * T.Tensor(np.arange(12.0).reshape(2, 6)), [(3, 4)]),
    ("slice", lambda t: t[0][1:, ::2] * 3.0, [(3, 4)]),
    ("scale_offset", lambda t: T.square(T.scale_offset(t[0], t[1], t[2])), [(3, 4), (3, 4), (4,)]),
    ("softplus", lambda t: T.softplus(t[0]), [(6,)]),
    ("sigmoid", lambda t: T.sigmoid(t[0]), [(6,)]),
    ("transpose", lambda t: T.matmul(T.transpose(t[0]), t[1]), [(3, 2), (3, 4)]),
])
def test_op_gradients(name, build, shapes):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    arrays = [rng.standard_normal(s) for s in shapes]
    assert check_grads(build, arrays) <= 1e-4


def test_take_rows_repeated_indices_accumulate():
    x = Tensor(np.ones((3, 2)), requires_grad=True)
    T.take_rows(x, [0, 0, 2]).sum().backward()
    np.testing.assert_array_equal(x.grad, [[2, 2], [0, 0], [1, 1]])


def test_sqrt_zero_gradient_is_finite():
    x = Tensor([0.0, 4.0], requires_grad=True)
    T.sqrt(x).sum().backward()
    np.testing.assert_allclose(x.grad, [0.0, 0.25])


def test_exp_guarded_against_overflow():
    out = T.exp(Tensor([1000.0]))
    assert np.isfinite(out.data).all()


def test_forward_is_deterministic():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((16, 33)).astype(np.float32), rng.standard_normal((33, 9)).astype(np.float32)
    r1 = T.leaky_relu(T.matmul(Tensor(a), Tensor(b))).data
    r2 = T.leaky_relu(T.matmul(Tensor(a), Tensor(b))).data
    assert r1.tobytes() == r2.tobytes()


def test_matmul_rows_do_not_depend_on_batch():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((40, 300)).astype(np.float32), rng.standard_normal((300, 50)).astype(np.float32)
    full = T.matmul(Tensor(a), Tensor(b)).data
    for r in range(0, 40, 7):
        assert full[r].tobytes() == T.matmul(Tensor(a[r:r + 1]), Tensor(b)).data[0].tobytes()


@pytest.mark.parametrize("depth", [1, 2, 3, 4])
def test_chain_rule_random_mlp(depth):
    rng = np.random.default_rng(depth)
    dims = [5] + list(rng.integers(2, 7, size=depth))
    weights = [Tensor(rng.standard_normal((a, b)), requires_grad=True, dtype=np.float64)
               for a, b in zip(dims[:-1], dims[1:])]
    x = rng.standard_normal((4, 5))

    def loss():
        h = Tensor(x, dtype=np.float64)
        for w in weights:
            h = T.leaky_relu(T.matmul(h, w))
        return T.sum_(T.square(h))

    assert directional_check(loss, weights, rng) <= 1e-4


# -- properties ----------------------------------------------------------------------

@given(hnp.arrays(np.float32, st.integers(1, 8), elements=finite),
       hnp.arrays(np.float32, st.integers(1, 8), elements=finite))
def test_add_commutes(a, b):
    if a.shape != b.shape:
        b = np.resize(b, a.shape)
    assert np.array_equal((Tensor(a) + Tensor(b)).data, (Tensor(b) + Tensor(a)).data)


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6), elements=finite))
def test_concat_then_slice_roundtrip(a):
    cat = T.concat([Tensor(a), Tensor(a * 2)], axis=1)
    np.testing.assert_array_equal(cat[:, : a.shape[1]].data, a)
    assert cat.shape == (a.shape[0], 2 * a.shape[1])


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_fd_matches_on_random_products(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4,))
    assert check_grads(lambda t: T.mul(t[0], t[1]) * t[0], [a, b]) <= 1e-4


# -- optimizers ---------------------------------------------------------------------

def test_sgd_step_examples():
    p = Tensor([1.0], requires_grad=True)
    p.grad = np.array([0.5], dtype=np.float32)
    SGD([p], lr=0.1).step()
    assert p.data[0] == pytest.approx(0.95)
    p.grad = np.array([0.0], dtype=np.float32)
    SGD([p], lr=0.1).step()
    assert p.data[0] == pytest.approx(0.95)


def test_adam_single_step_against_hand_computation():
    p = Tensor([1.0, -2.0], requires_grad=True, dtype=np.float64)
    opt = Adam([p], lr=0.01)
    opt.m[0][:] = [0.1, -0.2]
    opt.v[0][:] = [0.01, 0.04]
    opt.t = 3
    g = np.array([0.5, 0.3])
    p.grad = g.copy()
    opt.step()
    # hand computation for t = 4
    m = 0.9 * np.array([0.1, -0.2]) + 0.1 * g
    v = 0.999 * np.array([0.01, 0.04]) + 0.001 * g * g
    mhat, vhat = m / (1 - 0.9 ** 4), v / (1 - 0.999 ** 4)
    expected = np.array([1.0, -2.0]) - 0.01 * mhat / (np.sqrt(vhat) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)


def test_first_adam_step_moves_by_lr():
    p = Tensor([0.0], requires_grad=True, dtype=np.float64)
    p.grad = np.array([3.0])
    Adam([p], lr=0.1).step()
    assert p.data[0] == pytest.approx(-0.1, rel=1e-6)


def test_missing_grad_raises():
    p = Tensor([1.0], requires_grad=True, name="w")
    with pytest.raises(MissingGradError, match="w"):
        SGD([p], lr=0.1).step()


# -- checkpoints ---------------------------------------------------------------------

def test_checkpoint_roundtrip_and_layout(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], dtype=np.float32)}
    stem = save_checkpoint(tmp_path / "ckpt", tensors, meta={"note": "x"})
    loaded, meta = load_checkpoint(stem)
    for k in tensors:
        np.testing.assert_array_equal(loaded[k], tensors[k])
    assert meta == {"note": "x"}
    index = json.loads((tmp_path / "ckpt.json").read_text())["tensors"]
    assert index == [{"name": "a", "shape": [2, 3], "offset": 0}, {"name": "b", "shape": [1], "offset": 24}]
    raw = (tmp_path / "ckpt.bin").read_bytes()
    assert raw[24:28] == np.array([1.5], dtype="<f4").tobytes()


def test_numerical_grad_helper():
    x = np.array([1.0, 2.0])
    g = numerical_grad(lambda: float(np.sum(x ** 3)), x)
    np.testing.assert_allclose(g, 3 * x ** 2, rtol=1e-6)
    assert rel_error(np.zeros(2), np.zeros(2)) == 0.0
