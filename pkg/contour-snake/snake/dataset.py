"""
Synthetic multi-organ phantoms

Each scene holds 3-6 smooth Fourier-perturbed blobs of three size classes,
packed so neighbours nearly touch, then blurred and noised. Every scene is
drawn from its own seed substream so any split can be regenerated
byte-for-byte from the manifest.
"""
import os
import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage

from .energymap import analytic_energy_map
from .errors import ConfigError, DataIOError, GeometryError
from .geometry import (boundary_mask, distance_to_polygon, is_simple, points_in_polygon,
                       rasterize, signed_area, validate_contour)
from .pnm import read_pgm, write_pgm

logger = logging.getLogger(__name__)

GENERATOR_VERSION = 1
SPLITS = ('train', 'val', 'test')

BLOB_VERTICES = 64
HARMONICS = (2, 3, 4, 5)
MAX_AMPLITUDE = 0.15
CLASS_RADII = {0: (11.0, 14.0), 1: (14.0, 18.0), 2: (18.0, 22.0)}
CLASS_INTENSITY = {0: 90.0, 1: 150.0, 2: 210.0}
BACKGROUND = 30.0
BLUR_SIGMA = 1.5
BLUR_TRUNCATE = 2.0  # 7 x 7 support at sigma 1.5
NOISE_SIGMA = 8.0
MIN_GAP, MAX_GAP = -2.0, 10.0
MIN_AREA = 300.0
PLACEMENT_ATTEMPTS = 100
SCENE_ATTEMPTS = 50
BORDER = 2.0


@dataclass
class SceneInstance:
    class_id: int
    polygon: np.ndarray
    mask: np.ndarray = None

    def to_dict(self):
        return {
            'class': int(self.class_id),
            'polygon': [[round(float(x), 3), round(float(y), 3)] for x, y in self.polygon]
        }


@dataclass
class Phantom:
    """Image plus ground truth; masks, outline and energy are derived"""
    image: np.ndarray
    instances: list
    name: str = None
    _energy: np.ndarray = field(default=None, repr=False)

    @property
    def height(self):
        return self.image.shape[0]

    @property
    def width(self):
        return self.image.shape[1]

    @property
    def boundary(self):
        return boundary_mask([inst.polygon for inst in self.instances], self.width, self.height)

    @property
    def energy(self):
        """Analytic energy of the combined outline, cached"""
        if self._energy is None:
            self._energy = analytic_energy_map(self.boundary)
        return self._energy

    def annotation(self):
        return {'image': self.name, 'instances': [inst.to_dict() for inst in self.instances]}


@dataclass
class DatasetManifest:
    seed: int = 42
    count: int = 300
    splits: dict = None
    height: int = 128
    width: int = 128
    version: int = GENERATOR_VERSION

    def __post_init__(self):
        if self.splits is None:
            self.splits = split_sizes(self.count)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"malformed dataset manifest: {e}")

    def split_range(self, split):
        """Scene indices belonging to a split"""
        if split not in SPLITS:
            raise ConfigError(f"unknown split '{split}', expected one of {', '.join(SPLITS)}")
        start = 0
        for name in SPLITS:
            if name == split:
                return range(start, start + self.splits[name])
            start += self.splits[name]


def split_sizes(count):
    """200 / 50 / 50 for 300 scenes, same proportions otherwise"""
    train = int(round(count * 2 / 3))
    val = int(round(count / 6))
    return {'train': train, 'val': val, 'test': count - train - val}


# --- shapes ---

def blob_polygon(center, axes, rotation, amplitudes, phases, n=BLOB_VERTICES):
    """r(t) = 1 + sum_k a_k cos(k t + phi_k) applied to a rotated ellipse"""
    theta = np.arange(n) * (2.0 * np.pi / n)
    r = np.ones(n)
    for k, a, phi in zip(HARMONICS, amplitudes, phases):
        r += a * np.cos(k * theta + phi)
    local = np.stack([axes[0] * r * np.cos(theta), axes[1] * r * np.sin(theta)], axis=1)
    c, s = np.cos(rotation), np.sin(rotation)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.asarray(center, dtype=np.float64)


def generate_blob(rng, class_id, center=(0.0, 0.0)):
    """One class-sized blob polygon (64 vertices, positive orientation)"""
    lo, hi = CLASS_RADII[class_id]
    r0 = rng.uniform(lo, hi)
    stretch = rng.uniform(0.8, 1.25)
    rotation = rng.uniform(0.0, np.pi)
    amplitudes = rng.uniform(0.0, MAX_AMPLITUDE, size=len(HARMONICS))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(HARMONICS))
    axes = (r0 * np.sqrt(stretch), r0 / np.sqrt(stretch))
    return blob_polygon(center, axes, rotation, amplitudes, phases)


def signed_gap(a, b):
    """Boundary separation of two polygons, negative by the penetration depth"""
    a_in_b = points_in_polygon(a, b)
    b_in_a = points_in_polygon(b, a)
    if a_in_b.any() or b_in_a.any():
        depth = 0.0
        if a_in_b.any():
            depth = max(depth, distance_to_polygon(a[a_in_b], b).max())
        if b_in_a.any():
            depth = max(depth, distance_to_polygon(b[b_in_a], a).max())
        return -float(depth)
    return float(min(distance_to_polygon(a, b).min(), distance_to_polygon(b, a).min()))


def _place(rng, placed, class_id, height, width):
    """Blob placed within gap bounds of the existing ones, or None"""
    shape = generate_blob(rng, class_id)
    lo = shape.min(axis=0)
    hi = shape.max(axis=0)
    if (hi - lo > np.array([width, height]) - 2 * BORDER).any():
        return None
    for _ in range(PLACEMENT_ATTEMPTS):
        cx = rng.uniform(BORDER - lo[0], width - BORDER - hi[0])
        cy = rng.uniform(BORDER - lo[1], height - BORDER - hi[1])
        candidate = shape + np.array([cx, cy])
        if not placed:
            return candidate, np.array([cx, cy])
        gaps = [signed_gap(candidate, other) for other, _ in placed]
        if min(gaps) >= MIN_GAP and min(gaps) <= MAX_GAP:
            return candidate, np.array([cx, cy])
    return None


def _clip_radially(polygon, center, occluders, steps=24):
    """Pull vertices hidden under later polygons back toward the blob centre"""
    out = polygon.copy()
    hidden = np.zeros(len(polygon), dtype=bool)
    for occ in occluders:
        hidden |= points_in_polygon(polygon, occ)
    if not hidden.any():
        return out
    for occ in occluders:
        if points_in_polygon(center, occ)[0]:
            raise GeometryError("blob centre is covered by a later blob")

    def covered(p):
        return any(points_in_polygon(p, occ)[0] for occ in occluders)

    for i in np.flatnonzero(hidden):
        lo, hi = 0.0, 1.0  # fraction of the ray from centre; lo visible, hi covered
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            if covered(center + mid * (polygon[i] - center)):
                hi = mid
            else:
                lo = mid
        out[i] = center + lo * (polygon[i] - center)
    return out


def render_scene(polygons, class_ids, height, width, rng=None, blur=BLUR_SIGMA, noise=NOISE_SIGMA):
    """Paint polygons in order (later ones on top), then blur and add noise"""
    canvas = np.full((height, width), BACKGROUND)
    for poly, cls in zip(polygons, class_ids):
        canvas[rasterize(poly, width, height)] = CLASS_INTENSITY[cls]
    if blur > 0:
        canvas = ndimage.gaussian_filter(canvas, sigma=blur, truncate=BLUR_TRUNCATE, mode='nearest')
    if noise > 0:
        canvas = canvas + rng.normal(0.0, noise, size=canvas.shape)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


def derive_masks(polygons, height, width):
    """Per-instance masks, each minus every later-drawn mask"""
    masks = [rasterize(p, width, height) for p in polygons]
    covered = np.zeros((height, width), dtype=bool)
    for i in range(len(masks) - 1, -1, -1):
        masks[i] = masks[i] & ~covered
        covered |= masks[i]
    return masks


def _build_scene(rng, height, width):
    count = int(rng.integers(3, 7))
    classes = [int(c) for c in rng.integers(0, 3, size=count)]
    placed = []
    for cls in classes:
        result = _place(rng, placed, cls, height, width)
        if result is None:
            raise GeometryError(f"could not place blob {len(placed) + 1} of {count}")
        placed.append(result)

    polygons = []
    for i, (poly, center) in enumerate(placed):
        clipped = _clip_radially(poly, center, [p for p, _ in placed[i + 1:]])
        clipped = np.round(clipped, 3)
        validate_contour(clipped)
        if signed_area(clipped) < MIN_AREA or not is_simple(clipped):
            raise GeometryError(f"blob {i} is too occluded to keep")
        polygons.append(clipped)

    image = render_scene(polygons, classes, height, width, rng)
    masks = derive_masks(polygons, height, width)
    instances = [SceneInstance(c, p, m) for c, p, m in zip(classes, polygons, masks)]
    return Phantom(image=image, instances=instances)


def generate_scene(seed, index, height=128, width=128):
    """Scene `index` of the dataset seeded by `seed`; retried on placement failure"""
    for attempt in range(SCENE_ATTEMPTS):
        rng = np.random.default_rng(np.random.SeedSequence([seed, index, attempt]))
        try:
            return _build_scene(rng, height, width)
        except GeometryError as e:
            logger.debug("scene %d attempt %d rejected: %s", index, attempt, e.reason)
    raise GeometryError(f"scene {index} could not be generated in {SCENE_ATTEMPTS} attempts",
                        f"image {width} x {height} may be too small for the blob sizes")


# --- on-disk layout ---

def scene_stem(split, index):
    return f"{split}/{index:05d}"


def save_phantom(root, split, index, phantom):
    stem = scene_stem(split, index)
    phantom.name = stem + '.pgm'
    write_pgm(os.path.join(root, phantom.name), phantom.image)
    path = os.path.join(root, stem + '.json')
    try:
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(phantom.annotation(), fh)
            fh.write('\n')
    except OSError as e:
        raise DataIOError(f"cannot write annotation: {e.strerror}", path=path)


def load_phantom(root, annotation_path):
    """Phantom from an annotation JSON; masks re-derived from the polygons"""
    try:
        with open(annotation_path, 'r', encoding='utf-8') as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise DataIOError("annotation not found", path=annotation_path)
    except (OSError, json.JSONDecodeError) as e:
        raise DataIOError(f"cannot read annotation: {e}", path=annotation_path)

    image = read_pgm(os.path.join(root, data['image']))
    polygons = [np.asarray(inst['polygon'], dtype=np.float64) for inst in data['instances']]
    masks = derive_masks(polygons, image.shape[0], image.shape[1])
    instances = [SceneInstance(int(inst['class']), p, m)
                 for inst, p, m in zip(data['instances'], polygons, masks)]
    return Phantom(image=image, instances=instances, name=data['image'])


def write_manifest(root, manifest):
    path = os.path.join(root, 'manifest.json')
    try:
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
            fh.write('\n')
    except OSError as e:
        raise DataIOError(f"cannot write manifest: {e.strerror}", path=path)
    return path


def load_manifest(root):
    path = os.path.join(root, 'manifest.json')
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            return DatasetManifest.from_dict(json.load(fh))
    except FileNotFoundError:
        raise DataIOError("dataset manifest not found", path=path)
    except json.JSONDecodeError as e:
        raise DataIOError(f"dataset manifest is not valid JSON: {e}", path=path)


def generate_dataset(root, seed=42, count=300, height=128, width=128):
    """Write every split plus manifest.json under root; returns the manifest path"""
    manifest = DatasetManifest(seed=seed, count=count, height=height, width=width)
    return regenerate(manifest, root)


def regenerate(manifest, root):
    """Rebuild the dataset a manifest describes"""
    if manifest.version != GENERATOR_VERSION:
        raise ConfigError(f"manifest was written by generator version {manifest.version}, "
                          f"this is version {GENERATOR_VERSION}")
    try:
        for split in SPLITS:
            os.makedirs(os.path.join(root, split), exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create dataset directory: {e.strerror}", path=root)

    for split in SPLITS:
        for index in manifest.split_range(split):
            phantom = generate_scene(manifest.seed, index, manifest.height, manifest.width)
            save_phantom(root, split, index, phantom)
        logger.info("wrote %d %s scenes", manifest.splits[split], split)
    return write_manifest(root, manifest)


def load_split(root, split):
    """Every phantom of a split, in index order"""
    manifest = load_manifest(root)
    return [load_phantom(root, os.path.join(root, scene_stem(split, index) + '.json'))
            for index in manifest.split_range(split)]
