"""
Training objectives: Charbonnier for the energy map, smooth-L1 for
extreme points and contour deformation
"""
import numpy as np

from . import diffcore as dc
from .errors import ShapeError, GeometryError
from .geometry import pair_to_ground_truth

CHARBONNIER_EPS = 1e-3


def charbonnier_loss(pred, target, eps=CHARBONNIER_EPS):
    """mean over pixels of sqrt((pred - target)^2 + eps^2)"""
    pred, target = dc.as_tensor(pred), dc.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"charbonnier shapes differ: {pred.shape} vs {target.shape}")
    r = dc.sub(pred, target)
    return dc.mean(dc.sqrt(dc.add(dc.square(r), eps * eps)))


def box_extreme_loss(pred, gt):
    """Smooth-L1 (beta 1) averaged over the 8 coordinates of 4 extreme points"""
    pred, gt = dc.as_tensor(pred), dc.as_tensor(gt)
    if pred.shape != (4, 2) or gt.shape != (4, 2):
        raise ShapeError(f"extreme-point loss expects 4 x 2 inputs, got {pred.shape} and {gt.shape}")
    return dc.mean(dc.smooth_l1(dc.sub(pred, gt)))


def contour_loss(pred, gt):
    """(1/N) sum_i smooth-L1 over x and y, after cyclic pairing with gt

    pred is an N x 2 Tensor, gt a plain N x 2 array in the same orientation.
    """
    pred = dc.as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise GeometryError(f"contour loss needs equal point counts, got {pred.shape[0]} and {gt.shape[0]}")
    k = pair_to_ground_truth(pred.data, gt)
    aligned = np.roll(gt, -k, axis=0)
    return dc.mul(dc.sum(dc.smooth_l1(dc.sub(pred, aligned))), 1.0 / len(gt))
