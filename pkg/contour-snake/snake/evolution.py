"""
Instance pipeline: box providers, initial contours, iterative deformation
and the extreme-point head
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import diffcore as dc
from .amem import box_frame, make_state, predict_offsets
from .energymap import ENERGY_MAX, ENERGY_SLOPE
from .errors import DomainError, GeometryError
from .geometry import bounding_box, rasterize, resample
from .losses import box_extreme_loss, contour_loss  # noqa: F401

logger = logging.getLogger(__name__)

MIN_BOX_EXTENT = 4.0
MIN_COMPONENT_PIXELS = 25
ELLIPSE_DENSITY = 16


@dataclass
class Box:
    class_id: int
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise GeometryError(f"degenerate box ({self.x_min}, {self.y_min}) - ({self.x_max}, {self.y_max})")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    def to_dict(self):
        return {
            'class': self.class_id,
            'box': [round(v, 3) for v in (self.x_min, self.y_min, self.x_max, self.y_max)]
        }

    @classmethod
    def from_dict(cls, data):
        x_min, y_min, x_max, y_max = data['box']
        return cls(int(data['class']), float(x_min), float(y_min), float(x_max), float(y_max))


@dataclass
class Instance:
    """One object being segmented: its box, per-iteration contours, final mask"""
    box: Box
    contours: list = field(default_factory=list)
    mask: np.ndarray = None

    @property
    def class_id(self):
        return self.box.class_id

    @property
    def contour(self):
        return self.contours[-1] if self.contours else None

    def to_dict(self, with_history=False):
        data = self.box.to_dict()
        data['contour'] = _points_to_list(self.contour) if self.contour is not None else []
        if with_history:
            data['iterations'] = [_points_to_list(c) for c in self.contours]
        return data

    @classmethod
    def from_dict(cls, data):
        contours = [np.asarray(c, dtype=np.float64) for c in data.get('iterations', [])]
        if not contours and data.get('contour'):
            contours = [np.asarray(data['contour'], dtype=np.float64)]
        return cls(Box.from_dict(data), contours)


def _points_to_list(points):
    return [[round(float(x), 3), round(float(y), 3)] for x, y in points]


def instances_to_json(instances, with_history=False):
    return {'instances': [inst.to_dict(with_history) for inst in instances]}


# --- box providers ---

def _fit_box(class_id, x_min, y_min, x_max, y_max, width, height):
    """Clip to the image and enforce the minimum extent"""
    x_min, x_max = max(0.0, x_min), min(float(width), x_max)
    y_min, y_max = max(0.0, y_min), min(float(height), y_max)
    if x_max - x_min < MIN_BOX_EXTENT:
        cx = min(max((x_min + x_max) / 2.0, MIN_BOX_EXTENT / 2), width - MIN_BOX_EXTENT / 2)
        x_min, x_max = cx - MIN_BOX_EXTENT / 2, cx + MIN_BOX_EXTENT / 2
    if y_max - y_min < MIN_BOX_EXTENT:
        cy = min(max((y_min + y_max) / 2.0, MIN_BOX_EXTENT / 2), height - MIN_BOX_EXTENT / 2)
        y_min, y_max = cy - MIN_BOX_EXTENT / 2, cy + MIN_BOX_EXTENT / 2
    return Box(class_id, x_min, y_min, x_max, y_max)


def boxes_from_ground_truth(scene, jitter, rng):
    """Tight GT boxes with each side moved by uniform(-jitter, jitter) * side length"""
    if not 0 <= jitter <= 0.3:
        raise DomainError(f"jitter must be in [0, 0.3], got {jitter}")
    height, width = scene.image.shape
    boxes = []
    for inst in scene.instances:
        x_min, y_min, x_max, y_max = bounding_box(inst.polygon)
        w, h = x_max - x_min, y_max - y_min
        if jitter > 0:
            dx0, dy0, dx1, dy1 = rng.uniform(-jitter, jitter, size=4)
            x_min, x_max = x_min + dx0 * w, x_max + dx1 * w
            y_min, y_max = y_min + dy0 * h, y_max + dy1 * h
        boxes.append(_fit_box(inst.class_id, x_min, y_min, x_max, y_max, width, height))
    return boxes


def threshold_distance(threshold):
    """Distance at which the energy falls to threshold"""
    return float(np.expm1((ENERGY_MAX - threshold) / ENERGY_SLOPE))


def boxes_from_energy(energy, threshold=200.0):
    """Boxes of the regions enclosed by the high-energy boundary band

    Low-energy components that touch the image border are background;
    each enclosed component is grown back by the band's half-width.
    """
    if not 0 < threshold < ENERGY_MAX:
        raise DomainError(f"energy threshold must be in (0, 255), got {threshold}")
    energy = np.asarray(energy, dtype=np.float64)
    height, width = energy.shape
    labels, count = ndimage.label(energy < threshold, structure=np.ones((3, 3), dtype=int))
    grow = threshold_distance(threshold)
    boxes = []
    for index, found in enumerate(ndimage.find_objects(labels), start=1):
        if found is None:
            continue
        rows, cols = found
        if rows.start == 0 or cols.start == 0 or rows.stop == height or cols.stop == width:
            continue
        if (labels[found] == index).sum() < MIN_COMPONENT_PIXELS:
            continue
        boxes.append(_fit_box(-1, cols.start - grow, rows.start - grow,
                              cols.stop + grow, rows.stop + grow, width, height))
    logger.debug("energy threshold %.1f gave %d of %d components as boxes", threshold, len(boxes), count)
    return boxes


# --- contours ---

def initial_contour(box, n, shape='box'):
    """n points along the box (or its inscribed ellipse), positive orientation

    The box contour starts at the top-left corner, the ellipse at the top centre.
    """
    if not (box.x_min < box.x_max and box.y_min < box.y_max):
        raise GeometryError("cannot build a contour from a degenerate box")
    if shape == 'box':
        corners = np.array([
            [box.x_min, box.y_min],
            [box.x_max, box.y_min],
            [box.x_max, box.y_max],
            [box.x_min, box.y_max],
        ])
        return resample(corners, n)
    if shape == 'ellipse':
        centre, half = box_frame(box)
        theta = np.linspace(0.0, 2.0 * np.pi, ELLIPSE_DENSITY * n, endpoint=False)
        dense = np.stack([centre[0] + half[0] * np.sin(theta),
                          centre[1] - half[1] * np.cos(theta)], axis=1)
        return resample(dense, n)
    raise GeometryError(f"unknown initial contour shape '{shape}'")


def extreme_points(contour):
    """Top, left, bottom, right vertices (first index wins ties), 4 x 2"""
    pts = np.asarray(contour, dtype=np.float64)
    order = (np.argmin(pts[:, 1]), np.argmin(pts[:, 0]), np.argmax(pts[:, 1]), np.argmax(pts[:, 0]))
    return pts[list(order)].copy()


class ExtremePointHead(dc.Module):
    """Linear map from mean-pooled point features to 4 box-normalised points"""

    def __init__(self, rng, in_features):
        self.w = dc.glorot_uniform(rng, (in_features, 8), in_features, 8)
        self.b = dc.zeros_param((8,))

    def forward(self, features, box):
        centre, half = box_frame(box)
        pooled = dc.mean(features, axis=0, keepdims=True)
        out = dc.reshape(dc.add(dc.matmul(pooled, self.w), self.b), (4, 2))
        return dc.add(dc.mul(out, half), centre)


def extreme_point_head(head, features, box):
    return head.forward(features, box)


def run_iterations(box, maps, head, config, offsets_fn=None):
    """Contour Tensors for t = 1..T, starting from the box

    offsets_fn(t, contour) -> N x 2 replaces the learned head, which lets
    tests inject oracle offsets.
    """
    height, width = maps.shape[1], maps.shape[2]
    upper = np.array([float(width), float(height)])
    contour = dc.Tensor(initial_contour(box, config.points, config.init_shape))
    history = None
    contours = []
    for t in range(1, config.iterations + 1):
        if offsets_fn is not None:
            offsets = dc.Tensor(offsets_fn(t, contour.data))
        else:
            offsets = predict_offsets(make_state(t, maps, contour, history, box), head)
        history, contour = contour, dc.clamp(dc.add(contour, offsets), 0.0, upper)
        contours.append(contour)
    return contours


def evolve(instance, maps, head, config, offsets_fn=None):
    """Run every iteration for one instance and rasterise the last contour"""
    maps = dc.as_tensor(maps)
    contours = run_iterations(instance.box, maps, head, config, offsets_fn)
    instance.contours = [c.data.copy() for c in contours]
    instance.mask = rasterize(instance.contours[-1], maps.shape[2], maps.shape[1])
    return instance
