"""
Distance energy map prior

The analytic map turns the distance to the nearest ground-truth boundary
into energy 255 - 32 ln(1 + d), floored at 0. EnergyNet learns to predict
it from the raw image.
"""
import logging

import numpy as np

from . import diffcore as dc
from .errors import DomainError, ShapeError
from .geometry import distance_transform
from .losses import charbonnier_loss  # noqa: F401
from .pnm import write_pgm

logger = logging.getLogger(__name__)

ENERGY_MAX = 255.0
ENERGY_SLOPE = 32.0
# beyond this distance the energy is exactly zero
ENERGY_HORIZON = float(np.expm1(ENERGY_MAX / ENERGY_SLOPE))


def energy_from_distance(d):
    """max(0, 255 - 32 ln(1 + d)); works on scalars and arrays"""
    arr = np.asarray(d, dtype=np.float64)
    if (arr < 0).any():
        raise DomainError(f"distance must be non-negative, got min {float(arr.min())}")
    e = np.maximum(0.0, ENERGY_MAX - ENERGY_SLOPE * np.log1p(arr))
    e = np.where(arr >= ENERGY_HORIZON, 0.0, e)
    if np.ndim(d) == 0:
        return float(e)
    return e


def analytic_energy_map(boundaries):
    """Per-pixel energy of an H x W boundary mask"""
    field = distance_transform(boundaries)
    return energy_from_distance(field.d)


def energy_force_field(energy):
    """(gx, gy) central-difference gradient; points uphill, toward boundaries"""
    gy, gx = np.gradient(np.asarray(energy, dtype=np.float64))
    return gx, gy


def write_energy_pgm(energy, path):
    """Round-to-nearest 8-bit export; lossy, for inspection only"""
    clipped = np.clip(np.asarray(energy, dtype=np.float64), 0.0, ENERGY_MAX)
    write_pgm(path, np.floor(clipped + 0.5).astype(np.uint8))


class EnergyNet(dc.Module):
    """Encoder-decoder: two stride-2 convs down, two transposed convs up, 1x1 head

    Works in normalised units (energy / 255, image / 255).
    """

    def __init__(self, rng, widths=(8, 16)):
        w1, w2 = widths
        self.down1_w = dc.glorot_uniform(rng, (w1, 1, 3, 3), 9, w1 * 9)
        self.down1_b = dc.zeros_param((w1,))
        self.down2_w = dc.glorot_uniform(rng, (w2, w1, 3, 3), w1 * 9, w2 * 9)
        self.down2_b = dc.zeros_param((w2,))
        self.up1_w = dc.glorot_uniform(rng, (w2, w1, 3, 3), w2 * 9, w1 * 9)
        self.up1_b = dc.zeros_param((w1,))
        self.up2_w = dc.glorot_uniform(rng, (w1, w1, 3, 3), w1 * 9, w1 * 9)
        self.up2_b = dc.zeros_param((w1,))
        self.head_w = dc.glorot_uniform(rng, (1, w1, 1, 1), w1, 1)
        self.head_b = dc.zeros_param((1,))

    def forward(self, image):
        """H x W normalised image -> H x W normalised energy"""
        image = dc.as_tensor(image)
        if image.data.ndim != 2:
            raise ShapeError(f"EnergyNet expects an H x W image, got shape {image.shape}")
        H, W = image.shape
        if H % 4 or W % 4:
            raise ShapeError(f"image dimensions must be divisible by 4, got {H} x {W}")

        x = dc.reshape(image, (1, H, W))
        enc1 = dc.relu(dc.conv2d(x, self.down1_w, self.down1_b, stride=2, padding=1))
        enc2 = dc.relu(dc.conv2d(enc1, self.down2_w, self.down2_b, stride=2, padding=1))
        dec1 = dc.relu(dc.conv_transpose2d(enc2, self.up1_w, self.up1_b))
        dec1 = dc.add(dec1, enc1)
        dec2 = dc.relu(dc.conv_transpose2d(dec1, self.up2_w, self.up2_b))
        out = dc.conv2d(dec2, self.head_w, self.head_b, stride=1, padding=0)
        return dc.reshape(out, (H, W))


def predict_energy(net, image, training=False):
    """Energy in 0..255 units for an H x W image in 0..255

    Clamped to [0, 255] only when not training, so gradients keep flowing.
    """
    pixels = dc.as_tensor(image)
    raw = dc.mul(net.forward(dc.mul(pixels, 1.0 / ENERGY_MAX)), ENERGY_MAX)
    if training:
        return raw
    return dc.clamp(raw, 0.0, ENERGY_MAX)
