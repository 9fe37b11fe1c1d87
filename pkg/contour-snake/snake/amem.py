"""
Adaptive momentum evolution

Current point features attend over historical point features, with the
previous displacement ("momentum") as the value path. The fused features
run through circular 1-D convolutions along the closed contour and a
linear head emits one (dx, dy) offset per vertex.
"""
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import GeometryError, ShapeError


def box_frame(box):
    """(centre, half_extent) of a box as length-2 arrays"""
    lo = np.array([box.x_min, box.y_min], dtype=np.float64)
    hi = np.array([box.x_max, box.y_max], dtype=np.float64)
    half = (hi - lo) / 2.0
    if not (half > 0).all():
        raise GeometryError(f"degenerate box {tuple(lo)} - {tuple(hi)}")
    return (lo + hi) / 2.0, half


def sample_features(maps, contour, box):
    """N x (F + 2): bilinear map samples plus box-normalised vertex coordinates"""
    centre, half = box_frame(box)
    contour = dc.as_tensor(contour)
    sampled = dc.bilinear_sample(maps, contour)
    coords = dc.mul(dc.sub(contour, centre), 1.0 / half)
    return dc.concat([sampled, coords], axis=1)


@dataclass
class EvolutionState:
    """Inputs of one evolution step

    f_c / f_h are N x (F + 2) point features at the current / historical
    vertices, disp the N x 2 pixel displacement between them and scale
    the box half-extent used to normalise offsets.
    """
    t: int
    contour: dc.Tensor
    f_c: dc.Tensor
    f_h: dc.Tensor
    disp: dc.Tensor
    scale: np.ndarray


def make_state(t, maps, contour, history, box):
    """State for iteration t (1-based); history is None at t = 1"""
    _, half = box_frame(box)
    f_c = sample_features(maps, contour, box)
    if history is None:
        n = contour.shape[0]
        return EvolutionState(t, contour, f_c, f_c, dc.Tensor(np.zeros((n, 2))), half)
    f_h = sample_features(maps, history, box)
    disp = dc.sub(contour, history)
    return EvolutionState(t, contour, f_c, f_h, disp, half)


class AmemHead(dc.Module):
    """Lift, cross-attention, circular conv stack and offset head"""

    def __init__(self, rng, in_features, embed=32, heads=4, conv_layers=4, kernel_size=9, use_amem=True):
        if embed % heads:
            raise ShapeError(f"embedding width {embed} is not divisible by {heads} heads")
        self.heads = heads
        self.use_amem = use_amem
        self.lift_w = dc.glorot_uniform(rng, (in_features, embed), in_features, embed)
        self.lift_b = dc.zeros_param((embed,))
        self.disp_w = dc.glorot_uniform(rng, (2, embed), 2, embed)
        self.wq = dc.glorot_uniform(rng, (embed, embed), embed, embed)
        self.wk = dc.glorot_uniform(rng, (embed, embed), embed, embed)
        self.wv = dc.glorot_uniform(rng, (embed, embed), embed, embed)
        self.conv_w = [dc.glorot_uniform(rng, (embed, embed, kernel_size), embed * kernel_size, embed * kernel_size)
                       for _ in range(conv_layers)]
        self.conv_b = [dc.zeros_param((embed,)) for _ in range(conv_layers)]
        self.out_w = dc.glorot_uniform(rng, (embed, 2), embed, 2)
        self.out_b = dc.zeros_param((2,))
        if not use_amem:
            # attention weights stay out of the parameter tree when unused
            for name in ('disp_w', 'wq', 'wk', 'wv'):
                getattr(self, name).requires_grad = False

    @property
    def embed(self):
        return self.lift_w.shape[1]

    def lift(self, features):
        return dc.add(dc.matmul(features, self.lift_w), self.lift_b)


def cross_attention(f_c, f_h, disp, head):
    """Multi-head attention: queries from f_c, keys from f_h, values from embedded disp

    f_c, f_h are N x C (already lifted); disp is N x 2 in box-normalised units.
    """
    f_c, f_h, disp = dc.as_tensor(f_c), dc.as_tensor(f_h), dc.as_tensor(disp)
    C = f_c.shape[1]
    h = head.heads
    if C % h:
        raise ShapeError(f"feature width {C} is not divisible by {h} heads")
    if f_h.shape != f_c.shape or disp.shape != (f_c.shape[0], 2):
        raise ShapeError(f"attention inputs disagree: f_c {f_c.shape}, f_h {f_h.shape}, disp {disp.shape}")
    d = C // h
    values = dc.matmul(disp, head.disp_w)
    outputs = []
    for i in range(h):
        cols = (slice(None), slice(i * d, (i + 1) * d))
        q = dc.matmul(f_c, dc.getitem(head.wq, cols))
        k = dc.matmul(f_h, dc.getitem(head.wk, cols))
        v = dc.matmul(values, dc.getitem(head.wv, cols))
        scores = dc.mul(dc.matmul(q, dc.transpose(k)), 1.0 / np.sqrt(d))
        outputs.append(dc.matmul(dc.softmax_rows(scores), v))
    return dc.concat(outputs, axis=1)


def circular_conv_stack(x, head):
    for w, b in zip(head.conv_w, head.conv_b):
        x = dc.relu(dc.circular_conv1d(x, w, b))
    return x


def predict_offsets(state, head):
    """N x 2 pixel offsets for the vertices of state.contour"""
    f_c = head.lift(state.f_c)
    x = f_c
    if head.use_amem:
        f_h = head.lift(state.f_h)
        disp = dc.mul(state.disp, 1.0 / state.scale)
        x = dc.add(f_c, cross_attention(f_c, f_h, disp, head))
    x = circular_conv_stack(x, head)
    offsets = dc.add(dc.matmul(x, head.out_w), head.out_b)
    return dc.mul(offsets, state.scale)
