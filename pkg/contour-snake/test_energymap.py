#!/usr/bin/env python3
"""
Tests for the distance energy map prior and EnergyNet
"""
import math

import numpy as np
import pytest

from snake import diffcore as dc
from snake.dataset import generate_scene
from snake.energymap import (ENERGY_HORIZON, EnergyNet, analytic_energy_map, charbonnier_loss,
                             energy_force_field, energy_from_distance, predict_energy,
                             write_energy_pgm)
from snake.errors import DomainError, GeometryError, ShapeError
from snake.geometry import distance_transform
from snake.pnm import read_pgm


def test_energy_formula_points():
    assert energy_from_distance(0.0) == 255.0
    assert energy_from_distance(math.e - 1) == pytest.approx(223.0, abs=1e-9)
    assert energy_from_distance(ENERGY_HORIZON) == 0.0
    assert energy_from_distance(ENERGY_HORIZON + 1.0) == 0.0
    assert energy_from_distance(3000.0) == 0.0


def test_energy_formula_random():
    d = np.random.default_rng(0).uniform(0, 3000, size=1000)
    expected = np.array([max(0.0, 255.0 - 32.0 * math.log(1.0 + v)) for v in d])
    assert np.abs(energy_from_distance(d) - expected).max() < 1e-9


def test_energy_strictly_decreasing():
    d = np.linspace(0, ENERGY_HORIZON - 1.0, 500)
    assert (np.diff(energy_from_distance(d)) < 0).all()


def test_energy_negative_distance():
    with pytest.raises(DomainError):
        energy_from_distance(-0.5)


def test_analytic_map_single_pixel():
    boundary = np.zeros((9, 9), dtype=bool)
    boundary[4, 4] = True
    e = analytic_energy_map(boundary)
    assert e[4, 4] == 255.0
    for r, c in ((3, 4), (5, 4), (4, 3), (4, 5)):
        assert e[r, c] == pytest.approx(255.0 - 32.0 * math.log(2.0))
    assert e.max() == 255.0 and e.min() >= 0.0


def test_analytic_map_uniform_and_empty():
    assert (analytic_energy_map(np.ones((4, 4), dtype=bool)) == 255.0).all()
    with pytest.raises(GeometryError):
        analytic_energy_map(np.zeros((4, 4), dtype=bool))


def test_analytic_map_matches_brute_force():
    scene = generate_scene(3, 0, 96, 96)
    boundary = scene.boundary
    br, bc = np.nonzero(boundary)
    rows, cols = np.indices(boundary.shape)
    dr = rows[..., None].astype(np.float64) - br
    dc_ = cols[..., None].astype(np.float64) - bc
    d = np.sqrt(dr * dr + dc_ * dc_).min(axis=2)
    assert np.abs(analytic_energy_map(boundary) - energy_from_distance(d)).max() < 1e-12
    assert (analytic_energy_map(boundary)[boundary] == 255.0).all()


def test_force_field_points_to_boundary():
    agree = total = 0
    for index in range(20):
        scene = generate_scene(11, index)
        field = distance_transform(scene.boundary)
        gx, gy = energy_force_field(scene.energy)
        rows, cols = np.nonzero((field.d > 0) & (field.d < 50))
        to_r = field.nearest[0, rows, cols] - rows
        to_c = field.nearest[1, rows, cols] - cols
        inner = gx[rows, cols] * to_c + gy[rows, cols] * to_r
        agree += (inner > 0).sum()
        total += len(rows)
    assert agree / total >= 0.99


def test_charbonnier_values():
    a = dc.Tensor(np.full((4, 4), 0.3))
    assert charbonnier_loss(a, a).item() == pytest.approx(1e-3, rel=1e-12)
    b = dc.Tensor(np.full((4, 4), 1.3))
    assert charbonnier_loss(b, a).item() == pytest.approx(math.sqrt(1 + 1e-6))
    c = dc.Tensor(np.full((4, 4), 0.301))
    assert charbonnier_loss(c, a).item() == pytest.approx(math.sqrt(2) * 1e-3, rel=1e-6)
    with pytest.raises(ShapeError):
        charbonnier_loss(a, dc.Tensor(np.zeros((3, 4))))


def test_charbonnier_gradient():
    rng = np.random.default_rng(1)
    pred = dc.Tensor(rng.normal(size=(5, 5)), requires_grad=True)
    target = dc.Tensor(rng.normal(size=(5, 5)))
    assert dc.grad_check(lambda: charbonnier_loss(pred, target), [pred]) < 1e-5


def test_energy_net_shapes():
    net = EnergyNet(np.random.default_rng(2))
    for size in (64, 128):
        out = predict_energy(net, np.zeros((size, size)))
        assert out.shape == (size, size)
        assert out.data.min() >= 0.0 and out.data.max() <= 255.0
    with pytest.raises(ShapeError):
        predict_energy(net, np.zeros((30, 32)))


def test_energy_net_zero_weights():
    net = EnergyNet(np.random.default_rng(3)).zero_()
    assert not predict_energy(net, np.zeros((16, 16))).data.any()


def test_energy_net_gradient():
    rng = np.random.default_rng(4)
    net = EnergyNet(rng)
    for p in net.named_parameters().values():
        p.data = p.data + rng.normal(scale=0.1, size=p.shape)
    image = dc.Tensor(rng.uniform(0, 1, size=(8, 8)))
    target = dc.Tensor(rng.uniform(0, 1, size=(8, 8)))
    params = [net.down1_w, net.up2_w, net.head_w, net.head_b]
    err = dc.grad_check(lambda: charbonnier_loss(net.forward(image), target), params)
    assert err < 1e-4


def test_energy_pgm_export(tmp_path):
    path = tmp_path / 'e.pgm'
    energy = np.array([[0.4, 0.5, 254.6, 300.0], [1.49, 100.5, -3.0, 255.0]])
    write_energy_pgm(energy, str(path))
    assert path.read_bytes().startswith(b'P5\n4 2\n255\n')
    assert read_pgm(str(path)).tolist() == [[0, 1, 255, 255], [1, 101, 0, 255]]
