"""
Polygon and mask geometry

Contours are N x 2 float64 arrays of (x, y) pixel coordinates, implicitly
closed. Masks are H x W boolean arrays indexed [row, column]; pixel
(x, y) covers [x, x+1) x [y, y+1) and has its centre at (x+0.5, y+0.5).
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.draw import line as draw_line

from .errors import GeometryError

logger = logging.getLogger(__name__)

MIN_VERTEX_GAP = 1e-9


def as_contour(points):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise GeometryError(f"contour must be an N x 2 array, got shape {pts.shape}")
    if len(pts) < 3:
        raise GeometryError(f"contour needs at least 3 points, got {len(pts)}")
    return pts


def validate_contour(points):
    """Raise GeometryError unless the contour has >= 3 distinct consecutive points"""
    pts = as_contour(points)
    gaps = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    if (gaps <= MIN_VERTEX_GAP).any():
        raise GeometryError(f"contour has consecutive duplicate vertices at index {int(np.argmin(gaps))}")
    return pts


def signed_area(points):
    """Shoelace area; positive is the orientation every generated contour uses"""
    pts = np.asarray(points, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def perimeter(points):
    pts = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1).sum())


def is_simple(points):
    """True when no two non-adjacent edges intersect"""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    a = pts
    b = np.roll(pts, -1, axis=0)

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    for i in range(n):
        j = np.arange(i + 2, n)
        if i == 0:
            j = j[j != n - 1]
        if len(j) == 0:
            continue
        d1 = orient(a[i], b[i], a[j])
        d2 = orient(a[i], b[i], b[j])
        d3 = orient(a[j], b[j], a[i])
        d4 = orient(a[j], b[j], b[i])
        if ((d1 * d2 < 0) & (d3 * d4 < 0)).any():
            return False
    return True


def resample(points, n):
    """n points at equal arc-length spacing, starting at the first vertex"""
    if n < 3:
        raise GeometryError(f"resample needs n >= 3, got {n}")
    pts = as_contour(points)
    nxt = np.roll(pts, -1, axis=0)
    seg = np.linalg.norm(nxt - pts, axis=1)
    total = seg.sum()
    if not total > 0:
        raise GeometryError("cannot resample a polygon with zero perimeter")

    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(n) * (total / n)
    edge = np.searchsorted(cum, targets, side='right') - 1
    edge = np.clip(edge, 0, len(pts) - 1)
    # zero-length edges never get selected: side='right' skips them
    t = (targets - cum[edge]) / np.where(seg[edge] > 0, seg[edge], 1.0)
    return pts[edge] + t[:, None] * (nxt[edge] - pts[edge])


def pair_to_ground_truth(pred, gt):
    """Cyclic shift k minimising sum_i |pred_i - gt_(i+k) mod N|; smallest k on ties"""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise GeometryError(f"cannot pair contours of {len(pred)} and {len(gt)} points")
    n = len(pred)
    idx = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
    cost = np.linalg.norm(pred[None, :, :] - gt[idx], axis=2).sum(axis=1)
    return int(np.argmin(cost))


def align_to_ground_truth(pred, gt):
    """gt re-indexed so vertex i pairs with pred vertex i"""
    k = pair_to_ground_truth(pred, gt)
    return np.roll(np.asarray(gt, dtype=np.float64), -k, axis=0)


def rasterize(points, width, height):
    """Even-odd fill tested at pixel centres; parts outside the image are dropped"""
    pts = np.asarray(points, dtype=np.float64)
    x1, y1 = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)

    yc = np.arange(height) + 0.5
    xc = np.arange(width) + 0.5
    # half-open crossing rule so shared vertices count once
    crosses = ((y1[None, :] <= yc[:, None]) & (yc[:, None] < y2[None, :])) | \
              ((y2[None, :] <= yc[:, None]) & (yc[:, None] < y1[None, :]))
    dy = np.where(y2 != y1, y2 - y1, 1.0)
    xint = x1[None, :] + (yc[:, None] - y1[None, :]) * (x2 - x1)[None, :] / dy[None, :]
    right_of = xint[:, None, :] > xc[None, :, None]
    count = (right_of & crosses[:, None, :]).sum(axis=2)
    return (count % 2) == 1


def points_in_polygon(points, polygon):
    """Even-odd containment of each query point, same rule as rasterize"""
    q = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    poly = np.asarray(polygon, dtype=np.float64)
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    qx, qy = q[:, 0:1], q[:, 1:2]
    crosses = ((y1 <= qy) & (qy < y2)) | ((y2 <= qy) & (qy < y1))
    dy = np.where(y2 != y1, y2 - y1, 1.0)
    xint = x1 + (qy - y1) * (x2 - x1) / dy
    return ((crosses & (xint > qx)).sum(axis=1) % 2) == 1


def distance_to_polygon(points, polygon):
    """Distance from each query point to the nearest edge of a closed polygon"""
    q = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    a = np.asarray(polygon, dtype=np.float64)
    ab = np.roll(a, -1, axis=0) - a
    length2 = np.maximum((ab * ab).sum(axis=1), 1e-18)
    aq = q[:, None, :] - a[None, :, :]
    t = np.clip((aq * ab[None]).sum(axis=2) / length2, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(q[:, None, :] - closest, axis=2).min(axis=1)


def boundary_mask(polygons, width, height):
    """1-pixel 8-connected outline of every polygon, clipped to the image"""
    mask = np.zeros((height, width), dtype=bool)
    for poly in polygons:
        pix = np.floor(np.asarray(poly, dtype=np.float64)).astype(np.int64)
        nxt = np.roll(pix, -1, axis=0)
        for (c0, r0), (c1, r1) in zip(pix, nxt):
            rr, cc = draw_line(int(r0), int(c0), int(r1), int(c1))
            keep = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
            mask[rr[keep], cc[keep]] = True
    return mask


@dataclass
class DistanceField:
    """Euclidean distance to the nearest set boundary pixel, with its location"""
    d: np.ndarray
    nearest: np.ndarray  # 2 x H x W (row, column) of the nearest boundary pixel

    @property
    def height(self):
        return self.d.shape[0]

    @property
    def width(self):
        return self.d.shape[1]

    def nearest_boundary(self, row, col):
        """(row, col) of the boundary pixel closest to pixel (row, col)"""
        return int(self.nearest[0, row, col]), int(self.nearest[1, row, col])


def distance_transform(boundary):
    """Exact EDT between pixel centres"""
    boundary = np.asarray(boundary, dtype=bool)
    if not boundary.any():
        raise GeometryError("distance transform needs at least one boundary pixel")
    _, nearest = ndimage.distance_transform_edt(~boundary, return_indices=True)
    rows, cols = np.indices(boundary.shape)
    dr = (nearest[0] - rows).astype(np.float64)
    dc = (nearest[1] - cols).astype(np.float64)
    return DistanceField(d=np.sqrt(dr * dr + dc * dc), nearest=nearest)


def _check_pair(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise GeometryError(f"mask dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def mask_iou(a, b):
    a, b = _check_pair(a, b)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def mask_dice(a, b):
    a, b = _check_pair(a, b)
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / total)


def bounding_box(points):
    """(x_min, y_min, x_max, y_max) of a contour"""
    pts = np.asarray(points, dtype=np.float64)
    return (float(pts[:, 0].min()), float(pts[:, 1].min()),
            float(pts[:, 0].max()), float(pts[:, 1].max()))
