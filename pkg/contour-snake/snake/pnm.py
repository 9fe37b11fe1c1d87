"""
Binary PGM (P5) / PPM (P6) image I/O
"""
import os
import logging

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError

from .errors import DataIOError, ShapeError

logger = logging.getLogger(__name__)


def read_pgm(path):
    """8-bit grayscale image as an H x W uint8 array"""
    if not os.path.isfile(path):
        raise DataIOError("image not found", path=path)
    try:
        with Image.open(path) as img:
            if img.format != 'PPM' or img.mode != 'L':
                raise DataIOError(f"expected an 8-bit binary PGM, got {img.format} mode {img.mode}", path=path)
            return np.array(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise DataIOError(f"cannot decode image: {e}", path=path)


def write_pgm(path, pixels):
    """Write an H x W array of 0..255 values as P5, maxval 255"""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ShapeError(f"PGM needs an H x W array, got shape {pixels.shape}")
    _save(Image.fromarray(pixels.astype(np.uint8)), path)


def write_ppm(path, rgb):
    """Write an H x W x 3 uint8 array as P6"""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"PPM needs an H x W x 3 array, got shape {rgb.shape}")
    _save(Image.fromarray(rgb.astype(np.uint8)), path)


def _save(img, path):
    try:
        img.save(path, format='PPM')
    except OSError as e:
        raise DataIOError(f"cannot write image: {e}", path=path)


def draw_overlay(gray, polylines):
    """RGB copy of a grayscale image with closed polylines drawn on top

    polylines is a list of (points, (r, g, b)) drawn in order.
    """
    img = Image.fromarray(np.asarray(gray, dtype=np.uint8)).convert('RGB')
    canvas = ImageDraw.Draw(img)
    for points, colour in polylines:
        pts = [(float(x), float(y)) for x, y in points]
        if len(pts) >= 2:
            canvas.line(pts + [pts[0]], fill=tuple(colour), width=1)
    return np.array(img, dtype=np.uint8)
