#!/usr/bin/env python3
"""
Tests for the tensor / reverse-mode differentiation core
"""
import numpy as np
import pytest

from snake import diffcore as dc
from snake.errors import CheckpointError, DimensionError, DomainError, GraphError, NumericError


def _param(values):
    return dc.Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def test_matmul_identity():
    m = np.arange(9.0).reshape(3, 3)
    out = dc.matmul(dc.Tensor(np.eye(3)), dc.Tensor(m))
    assert np.array_equal(out.data, m)

    out = dc.matmul(dc.Tensor([[1.0, 2.0], [3.0, 4.0]]), dc.Tensor(np.eye(2)))
    assert np.array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])


def test_matmul_gradient_of_sum():
    rng = np.random.default_rng(0)
    a = _param(rng.normal(size=(4, 5)))
    b = _param(rng.normal(size=(5, 3)))
    with dc.Graph() as graph:
        loss = dc.sum(dc.matmul(a, b))
    graph.backward(loss)
    assert np.allclose(a.grad, np.ones((4, 3)) @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ np.ones((4, 3)))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        dc.matmul(dc.Tensor(np.zeros((2, 3))), dc.Tensor(np.zeros((2, 3))))


def test_softmax_rows():
    out = dc.softmax_rows(dc.Tensor([[0.0, 0.0, 0.0], [1000.0, 0.0, -1000.0]]))
    assert np.allclose(out.data[0], 1.0 / 3.0)
    assert np.isfinite(out.data).all()
    assert out.data[1, 0] == pytest.approx(1.0)

    rng = np.random.default_rng(1)
    out = dc.softmax_rows(dc.Tensor(rng.normal(scale=30.0, size=(20, 7))))
    assert (out.data >= 0).all()
    assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-12


def test_softmax_rejects_nan():
    with pytest.raises(NumericError):
        dc.softmax_rows(dc.Tensor([[0.0, np.nan]]))


def test_softmax_gradient():
    rng = np.random.default_rng(2)
    x = _param(rng.normal(size=(3, 4)))
    weights = dc.Tensor(rng.normal(size=(3, 4)))
    err = dc.grad_check(lambda: dc.sum(dc.mul(dc.softmax_rows(x), weights)), [x], h=1e-5)
    assert err < 1e-6


def test_grad_check_polynomial():
    x = _param([1.0, 2.0, 3.0])
    with dc.Graph() as graph:
        loss = dc.sum(dc.square(x))
    graph.backward(loss)
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])

    x = _param([1.0, 2.0, 3.0])
    assert dc.grad_check(lambda: dc.sum(dc.square(x)), [x]) < 1e-8


def test_grad_check_step_bounds():
    x = _param([1.0])
    with pytest.raises(DomainError):
        dc.grad_check(lambda: dc.sum(x), [x], h=1e-2)
    with pytest.raises(DomainError):
        dc.grad_check(lambda: dc.sum(x), [x], h=1e-8)


def test_grad_check_non_finite():
    x = _param([-1.0])
    with pytest.raises(NumericError):
        dc.grad_check(lambda: dc.sum(dc.sqrt(x)), [x])


def test_backward_twice_is_an_error():
    x = _param([1.0, 2.0])
    with dc.Graph() as graph:
        loss = dc.sum(dc.square(x))
    graph.backward(loss)
    with pytest.raises(GraphError):
        graph.backward(loss)


def test_shared_input_accumulates():
    x = _param([3.0])
    with dc.Graph() as graph:
        loss = dc.sum(dc.add(dc.mul(x, x), x))
    graph.backward(loss)
    assert np.allclose(x.grad, [7.0])


def test_no_recording_outside_graph():
    x = _param([1.0])
    out = dc.square(x)
    assert not out.requires_grad


def test_clamp_blocks_gradient_outside_range():
    x = _param([-2.0, 0.5, 3.0])
    with dc.Graph() as graph:
        loss = dc.sum(dc.clamp(x, 0.0, 1.0))
    graph.backward(loss)
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


def test_conv_transpose_shape_and_gradient():
    rng = np.random.default_rng(3)
    x = _param(rng.normal(size=(2, 3, 3)))
    w = _param(rng.normal(size=(2, 3, 3, 3)))
    b = _param(rng.normal(size=(3,)))
    out = dc.conv_transpose2d(x, w, b)
    assert out.shape == (3, 6, 6)

    weights = dc.Tensor(rng.normal(size=(3, 6, 6)))
    err = dc.grad_check(lambda: dc.sum(dc.mul(dc.conv_transpose2d(x, w, b), weights)), [x, w, b])
    assert err < 1e-4


def test_strided_conv_gradient():
    rng = np.random.default_rng(4)
    x = _param(rng.normal(size=(2, 6, 6)))
    w = _param(rng.normal(size=(3, 2, 3, 3)))
    b = _param(rng.normal(size=(3,)))
    out = dc.conv2d(x, w, b, stride=2, padding=1)
    assert out.shape == (3, 3, 3)
    weights = dc.Tensor(rng.normal(size=(3, 3, 3)))
    err = dc.grad_check(lambda: dc.sum(dc.mul(dc.conv2d(x, w, b, stride=2, padding=1), weights)), [x, w, b])
    assert err < 1e-4


def test_forward_is_deterministic():
    rng = np.random.default_rng(5)
    x = dc.Tensor(rng.normal(size=(1, 8, 8)))
    w = dc.Tensor(rng.normal(size=(4, 1, 3, 3)))
    first = dc.conv2d(x, w).data
    second = dc.conv2d(x, w).data
    assert first.tobytes() == second.tobytes()


def test_glorot_bounds():
    rng = np.random.default_rng(6)
    t = dc.glorot_uniform(rng, (30, 20), 30, 20)
    assert np.abs(t.data).max() <= np.sqrt(6.0 / 50.0)
    assert t.requires_grad


def test_step_decay():
    schedule = dc.StepDecay(1e-3, gamma=0.5, every=20)
    assert schedule.lr_at(0) == 1e-3
    assert schedule.lr_at(19) == 1e-3
    assert schedule.lr_at(20) == 5e-4
    assert schedule.lr_at(45) == 2.5e-4


def test_momentum_sgd():
    p = _param([1.0])
    opt = dc.MomentumSGD({'p': p}, lr=0.1, momentum=0.9)
    p.grad = np.array([1.0])
    opt.step()
    assert p.data[0] == pytest.approx(0.9)
    p.grad = np.array([1.0])
    opt.step()
    assert p.data[0] == pytest.approx(0.71)


def test_adam_first_step_is_lr_sized():
    p = _param([1.0, -1.0])
    opt = dc.Adam({'p': p}, lr=0.01)
    p.grad = np.array([5.0, -0.2])
    opt.step()
    assert np.allclose(p.data, [0.99, -0.99], atol=1e-6)


class _Pair(dc.Module):
    def __init__(self, rng):
        self.w = dc.glorot_uniform(rng, (2, 3), 2, 3)
        self.layers = [dc.zeros_param((3,)), dc.zeros_param((1,))]


def test_module_parameters_and_state():
    model = _Pair(np.random.default_rng(7))
    assert sorted(model.named_parameters()) == ['layers.0', 'layers.1', 'w']

    state = model.state_dict()
    other = _Pair(np.random.default_rng(8))
    other.load_state_dict(state)
    assert np.array_equal(other.w.data, model.w.data)

    with pytest.raises(CheckpointError):
        other.load_state_dict({'w': state['w']})


def test_checkpoint_layout(tmp_path):
    path = tmp_path / 'a.gsnk'
    tensors = {'b': np.arange(6.0).reshape(2, 3), 'a': np.array([1.5])}
    dc.save_checkpoint(str(path), tensors)
    blob = path.read_bytes()
    assert blob[:4] == b'GSNK'
    assert int.from_bytes(blob[4:8], 'little') == 1
    assert int.from_bytes(blob[8:12], 'little') == 2
    # names are written sorted
    assert blob[12:14] == (1).to_bytes(2, 'little') and blob[14:15] == b'a'
    assert len(blob) == 12 + (2 + 1 + 1 + 4 + 8) + (2 + 1 + 1 + 8 + 48)

    loaded = dc.load_checkpoint(str(path))
    assert np.array_equal(loaded['b'], tensors['b'])

    reordered = tmp_path / 'b.gsnk'
    dc.save_checkpoint(str(reordered), {'a': tensors['a'], 'b': tensors['b']})
    assert reordered.read_bytes() == blob


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / 'bad.gsnk'
    path.write_bytes(b'NOPE' + bytes(8))
    with pytest.raises(CheckpointError):
        dc.load_checkpoint(str(path))

    path.write_bytes(b'GSNK' + (2).to_bytes(4, 'little') + bytes(4))
    with pytest.raises(CheckpointError):
        dc.load_checkpoint(str(path))


def test_circular_conv1d_wraps_and_differentiates():
    seq = np.arange(5.0)[:, None]
    # previous + next vertex
    w = np.array([[[1.0, 0.0, 1.0]]])
    out = dc.circular_conv1d(dc.Tensor(seq), dc.Tensor(w)).data[:, 0]
    assert out.tolist() == [5.0, 2.0, 4.0, 6.0, 3.0]

    rng = np.random.default_rng(9)
    x = _param(rng.normal(size=(7, 3)))
    k = _param(rng.normal(size=(2, 3, 5)))
    b = _param(rng.normal(size=(2,)))
    weights = dc.Tensor(rng.normal(size=(7, 2)))
    assert dc.grad_check(lambda: dc.sum(dc.mul(dc.circular_conv1d(x, k, b), weights)), [x, k, b]) < 1e-4
    with pytest.raises(DimensionError):
        dc.circular_conv1d(dc.Tensor(np.zeros((3, 3))), k)
