#!/usr/bin/env python3
"""
Tests for the differential convolution inception module
"""
import numpy as np
import pytest

from snake import diffcore as dc
from snake.dcim import (CDC_PAIRS, DCBranch, DCIM, DDC_PAIRS, PATTERNS, SDC_PAIRS, avg_pool3x3,
                        check_pattern, dcim_forward, diff_conv, standard_conv3x3)
from snake.energymap import analytic_energy_map
from snake.errors import ShapeError


def _brute_conv(x, k, b):
    C, H, W = x.shape
    O = k.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((O, H, W))
    for o in range(O):
        for r in range(H):
            for c in range(W):
                out[o, r, c] = (k[o] * xp[:, r:r + 3, c:c + 3]).sum() + b[o]
    return out


def _brute_diff(x, pairs, kernels, bias):
    C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((kernels.shape[0], H, W))
    for o in range(kernels.shape[0]):
        for r in range(H):
            for c in range(W):
                patch = xp[:, r:r + 3, c:c + 3].reshape(C, 9)
                total = bias[o]
                for m, (i, j) in enumerate(pairs):
                    total += (kernels[o, :, m] * (patch[:, i] - patch[:, j])).sum()
                out[o, r, c] = total
    return out


def _branch(rng, pattern, in_ch=1, out_ch=4):
    branch = DCBranch.create(rng, pattern, in_ch, out_ch)
    branch.bias.data = rng.normal(size=branch.bias.shape)
    return branch


def test_standard_conv_delta_is_identity():
    x = np.random.default_rng(0).normal(size=(1, 6, 6))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    assert np.allclose(standard_conv3x3(dc.Tensor(x), dc.Tensor(k)).data, x)


def test_standard_conv_ones_kernel_interior():
    x = np.full((1, 6, 6), 2.5)
    out = standard_conv3x3(dc.Tensor(x), dc.Tensor(np.ones((1, 1, 3, 3)))).data
    assert np.allclose(out[0, 1:-1, 1:-1], 22.5)


def test_standard_conv_matches_nested_loops():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 8, 8))
    k = rng.normal(size=(3, 1, 3, 3))
    b = rng.normal(size=3)
    out = standard_conv3x3(dc.Tensor(x), dc.Tensor(k), dc.Tensor(b)).data
    assert np.allclose(out, _brute_conv(x, k, b))


def test_standard_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        standard_conv3x3(dc.Tensor(np.zeros((2, 4, 4))), dc.Tensor(np.zeros((1, 1, 3, 3))))


def test_patterns_are_valid():
    for pairs in PATTERNS.values():
        check_pattern(pairs)
    assert len(CDC_PAIRS) == 16
    with pytest.raises(ShapeError):
        check_pattern([(4, 4)])
    with pytest.raises(ShapeError):
        check_pattern([(0, 9)])


def test_kernel_pattern_length_mismatch():
    with pytest.raises(ShapeError):
        DCBranch(SDC_PAIRS, dc.zeros_param((4, 1, 3)), dc.zeros_param((4,)))


def test_diff_conv_constant_input_gives_bias_in_interior():
    rng = np.random.default_rng(2)
    for pairs in (SDC_PAIRS, DDC_PAIRS, CDC_PAIRS):
        branch = _branch(rng, pairs)
        out = diff_conv(dc.Tensor(np.full((1, 7, 7), 3.0)), branch).data
        interior = out[:, 1:-1, 1:-1]
        assert np.allclose(interior, branch.bias.data[:, None, None])


def test_diff_conv_ramp():
    cols = np.tile(np.arange(8.0), (8, 1))[None]
    branch = DCBranch(((5, 4),), dc.Tensor(np.ones((1, 1, 1))), dc.Tensor(np.zeros(1)))
    out = diff_conv(dc.Tensor(cols), branch).data
    assert np.allclose(out[0, 1:-1, 1:-1], 1.0)


def test_diff_conv_matches_pairwise_differences():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 6, 7))
    for pairs in (SDC_PAIRS, DDC_PAIRS, CDC_PAIRS):
        branch = _branch(rng, pairs, in_ch=2, out_ch=3)
        out = diff_conv(dc.Tensor(x), branch).data
        assert np.allclose(out, _brute_diff(x, pairs, branch.kernels.data, branch.bias.data))


def test_diff_conv_is_linear_up_to_bias():
    rng = np.random.default_rng(4)
    branch = _branch(rng, CDC_PAIRS)
    x = rng.normal(size=(1, 6, 6))
    z = rng.normal(size=(1, 6, 6))
    alpha, beta = 1.7, -0.4
    bias = branch.bias.data[:, None, None]
    lhs = diff_conv(dc.Tensor(alpha * x + beta * z), branch).data
    rhs = alpha * diff_conv(dc.Tensor(x), branch).data + beta * diff_conv(dc.Tensor(z), branch).data \
        - (alpha + beta - 1) * bias
    assert np.allclose(lhs, rhs)


def test_cdc_radial_response_flips_across_a_straight_boundary():
    boundary = np.zeros((21, 21), dtype=bool)
    boundary[:, 10] = True
    energy = analytic_energy_map(boundary)
    # east minus centre
    branch = DCBranch(((5, 4),), dc.Tensor(np.ones((1, 1, 1))), dc.Tensor(np.zeros(1)))
    out = diff_conv(dc.Tensor(energy[None]), branch).data[0]
    for offset in range(1, 6):
        left, right = out[10, 10 - offset], out[10, 10 + offset]
        assert left > 0 > right
        # steeper on the side facing the boundary
        assert abs(left) > abs(right)


def test_avg_pool():
    out = avg_pool3x3(dc.Tensor(np.full((1, 5, 5), 9.0))).data
    assert np.allclose(out[0, 1:-1, 1:-1], 9.0)
    assert out[0, 0, 0] == pytest.approx(4.0)


def test_dcim_output_shape_and_constant_input():
    module = DCIM(np.random.default_rng(5), features=16)
    for size in ((12, 12), (9, 15)):
        out = dcim_forward(module, dc.Tensor(np.zeros(size)))
        assert out.shape == (16,) + size
    out = dcim_forward(module, dc.Tensor(np.full((10, 10), 0.7))).data
    interior = out[:, 2:-2, 2:-2]
    assert np.allclose(interior, interior[:, :1, :1])


def test_dcim_too_small():
    with pytest.raises(ShapeError):
        dcim_forward(DCIM(np.random.default_rng(6)), dc.Tensor(np.zeros((2, 5))))


def test_diff_conv_gradients():
    rng = np.random.default_rng(7)
    x = dc.Tensor(rng.normal(size=(1, 6, 6)), requires_grad=True)
    for pairs in (SDC_PAIRS, DDC_PAIRS, CDC_PAIRS):
        branch = _branch(rng, pairs)
        weights = dc.Tensor(rng.normal(size=(4, 6, 6)))
        err = dc.grad_check(lambda: dc.sum(dc.mul(diff_conv(x, branch), weights)),
                            [x, branch.kernels, branch.bias])
        assert err < 1e-4


def test_standard_conv_gradient():
    rng = np.random.default_rng(8)
    x = dc.Tensor(rng.normal(size=(2, 5, 5)), requires_grad=True)
    k = dc.Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    b = dc.Tensor(rng.normal(size=3), requires_grad=True)
    weights = dc.Tensor(rng.normal(size=(3, 5, 5)))
    assert dc.grad_check(lambda: dc.sum(dc.mul(standard_conv3x3(x, k, b), weights)), [x, k, b]) < 1e-4


def test_dcim_gradient():
    rng = np.random.default_rng(9)
    module = DCIM(rng, features=4)
    energy = dc.Tensor(rng.uniform(0, 1, size=(6, 6)))
    weights = dc.Tensor(rng.normal(size=(4, 6, 6)))
    params = list(module.named_parameters().values())
    err = dc.grad_check(lambda: dc.sum(dc.mul(dcim_forward(module, energy), weights)), params)
    assert err < 1e-4
