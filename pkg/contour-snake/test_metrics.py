#!/usr/bin/env python3
"""
Tests for instance matching and per-class score means
"""
import numpy as np
import pytest

from snake.metrics import UNASSIGNED_CLASS, class_means, match_instances


def _mask(r0, r1, c0, c1, size=20):
    m = np.zeros((size, size), dtype=bool)
    m[r0:r1, c0:c1] = True
    return m


def test_perfect_prediction():
    gt = [(0, _mask(0, 5, 0, 5)), (1, _mask(10, 15, 10, 15))]
    records = match_instances(list(reversed(gt)), gt)
    assert [r['iou'] for r in records] == [1.0, 1.0]
    assert [r['prediction'] for r in records] == [1, 0]


def test_class_must_agree_unless_unassigned():
    gt = [(0, _mask(0, 5, 0, 5))]
    assert match_instances([(2, _mask(0, 5, 0, 5))], gt)[0]['prediction'] is None
    record = match_instances([(UNASSIGNED_CLASS, _mask(0, 5, 0, 5))], gt)[0]
    assert record['prediction'] == 0 and record['dice'] == 1.0


def test_each_prediction_used_once():
    gt = [(0, _mask(0, 10, 0, 10)), (0, _mask(0, 10, 0, 8))]
    preds = [(0, _mask(0, 10, 0, 9))]
    records = match_instances(preds, gt)
    # 90 / 100 beats 80 / 90
    assert records[0]['prediction'] == 0
    assert records[1]['prediction'] is None and records[1]['iou'] == 0.0


def test_class_means_are_unweighted():
    records = [
        {'class': 0, 'iou': 1.0, 'dice': 1.0},
        {'class': 0, 'iou': 0.0, 'dice': 0.0},
        {'class': 0, 'iou': 0.5, 'dice': 0.5},
        {'class': 2, 'iou': 0.9, 'dice': 0.95},
    ]
    summary, miou, mdice = class_means(records)
    assert set(summary) == {'0', '2'}
    assert summary['0']['count'] == 3
    assert miou == pytest.approx((0.5 + 0.9) / 2)
    assert mdice == pytest.approx((0.5 + 0.95) / 2)
    assert class_means([]) == ({}, 0.0, 0.0)
