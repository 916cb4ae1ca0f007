""" Parametric lesion corpus for desk-scale runs and tests.

Each class is drawn from its own colour and shape family on a skin-toned
background, so the seven classes are visually separable. Every record carries
the exact lesion mask it was drawn from; hairy records also carry the mask of
the dark strokes superimposed on them.
"""
import logging
from dataclasses import dataclass, replace

import cv2
import numpy as np

from .dataset import DatasetManifest, ImageRecord
from .exceptions import ManifestError
from .fields import KIND_SEGMENTATION, KIND_SYNTHETIC, ClassLabel
from .utils import derive_rng, round_half_even

logger = logging.getLogger(__name__)

SKIN_RGB = (228, 192, 170)
HAIR_RGB = (26, 18, 12)

# base colour of each lesion family; luminance is kept well above the hair
# strokes so strokes crossing a lesion still stand out
LESION_RGB = {
    ClassLabel.MEL: (145, 105, 80),
    ClassLabel.NV: (160, 115, 85),
    ClassLabel.BCC: (215, 135, 150),
    ClassLabel.AKIEC: (190, 100, 90),
    ClassLabel.BKL: (175, 150, 105),
    ClassLabel.DF: (150, 110, 130),
    ClassLabel.VASC: (200, 70, 95),
}


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int
    image_size: int = 64
    hair_fraction: float = 0.0
    seed: int = 0
    noise: float = 3.0
    lesion_scale: tuple = (0.22, 0.34)

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ManifestError("n_per_class must be at least 1, got {0}".format(self.n_per_class))
        if self.image_size < 32:
            raise ManifestError("image_size must be at least 32, got {0}".format(self.image_size))
        if not 0.0 <= self.hair_fraction <= 1.0:
            raise ManifestError("hair_fraction must lie in [0, 1], got {0}".format(self.hair_fraction))


def generate_synthetic(spec):
    records = []
    for label in ClassLabel:
        hairy = _hairy_ordinals(spec, label)
        for ordinal in range(spec.n_per_class):
            records.append(_draw_record(spec, label, ordinal, ordinal in hairy))
    records.sort(key=lambda r: r.id)
    manifest = DatasetManifest(records=records, kind=KIND_SYNTHETIC, seed=spec.seed)
    logger.info("Generated %d synthetic images (%d hairy) at side %d",
                len(manifest), sum(1 for r in records if r.hairy), spec.image_size)
    return manifest


def generate_segmentation(spec):
    """ Synthetic (image, mask) pairs without class labels. """
    synthetic = generate_synthetic(spec)
    return synthetic.with_records([replace(r, label=None) for r in synthetic.records],
                                  kind=KIND_SEGMENTATION)


def _hairy_ordinals(spec, label):
    count = round_half_even(spec.n_per_class, spec.hair_fraction)
    rng = derive_rng(spec.seed, int(label), 7919)
    return set(rng.permutation(spec.n_per_class)[:count].tolist())


def _draw_record(spec, label, ordinal, hairy):
    side = spec.image_size
    rng = derive_rng(spec.seed, int(label), ordinal)
    image = _skin(rng, side, spec.noise)
    lesion = _LESION_DRAWERS[label](rng, side, spec.lesion_scale)
    _paint_lesion(rng, image, lesion, LESION_RGB[label], label)

    strokes = None
    if hairy:
        strokes = _hair_strokes(rng, side)
        jitter = rng.integers(-4, 5, size=3)
        image[strokes] = np.clip(np.array(HAIR_RGB) + jitter, 0, 255)

    return ImageRecord(id='syn_{0}_{1:04d}'.format(label.code, ordinal),
                       label=label,
                       pixels=image.astype(np.uint8),
                       mask=lesion,
                       hairy=bool(hairy),
                       hair_mask=strokes)


def _skin(rng, side, noise):
    base = np.array(SKIN_RGB, dtype=np.float64) + rng.uniform(-10, 10, size=3)
    yy, xx = np.mgrid[0:side, 0:side] / float(side)
    angle = rng.uniform(0, 2 * np.pi)
    shading = 8.0 * (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5))
    image = base[None, None, :] + shading[:, :, None]
    image += rng.normal(0.0, noise, size=image.shape)
    return np.clip(image, 0, 255)


def _center_and_radius(rng, side, scale):
    radius = rng.uniform(*scale) * side
    margin = radius + 2
    cx = rng.uniform(margin, side - margin)
    cy = rng.uniform(margin, side - margin)
    return cx, cy, radius


def _disk(side, cx, cy, radius):
    canvas = np.zeros((side, side), dtype=np.uint8)
    cv2.circle(canvas, (int(round(cx)), int(round(cy))), max(1, int(round(radius))), 255, -1)
    return canvas > 0


def _draw_irregular(rng, side, scale):
    cx, cy, radius = _center_and_radius(rng, side, scale)
    theta = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    wobble = np.ones_like(theta)
    for harmonic in (3, 5, 7):
        wobble += rng.uniform(0.05, 0.12) * np.cos(harmonic * theta + rng.uniform(0, 2 * np.pi))
    r = radius * wobble / wobble.max()
    points = np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)
    canvas = np.zeros((side, side), dtype=np.uint8)
    cv2.fillPoly(canvas, [np.round(points).astype(np.int32)], 255)
    return canvas > 0


def _draw_circle(rng, side, scale):
    return _disk(side, *_center_and_radius(rng, side, scale))


def _draw_ellipse(rng, side, scale):
    cx, cy, radius = _center_and_radius(rng, side, scale)
    axes = (int(round(radius)), max(1, int(round(radius * rng.uniform(0.55, 0.75)))))
    canvas = np.zeros((side, side), dtype=np.uint8)
    cv2.ellipse(canvas, (int(round(cx)), int(round(cy))), axes,
                float(rng.uniform(0, 180)), 0, 360, 255, -1)
    return canvas > 0


def _draw_rectangle(rng, side, scale):
    cx, cy, radius = _center_and_radius(rng, side, scale)
    box = ((cx, cy), (1.5 * radius, 1.1 * radius), float(rng.uniform(0, 90)))
    canvas = np.zeros((side, side), dtype=np.uint8)
    cv2.fillPoly(canvas, [np.round(cv2.boxPoints(box)).astype(np.int32)], 255)
    return canvas > 0


def _draw_small_disk(rng, side, scale):
    low, high = scale
    return _disk(side, *_center_and_radius(rng, side, (0.6 * low, 0.6 * high)))


def _draw_cluster(rng, side, scale):
    cx, cy, radius = _center_and_radius(rng, side, scale)
    mask = np.zeros((side, side), dtype=bool)
    for k in range(3):
        angle = 2 * np.pi * k / 3 + rng.uniform(-0.3, 0.3)
        mask |= _disk(side, cx + 0.45 * radius * np.cos(angle),
                      cy + 0.45 * radius * np.sin(angle), 0.55 * radius)
    return mask


_LESION_DRAWERS = {
    ClassLabel.MEL: _draw_irregular,
    ClassLabel.NV: _draw_circle,
    ClassLabel.BCC: _draw_ellipse,
    ClassLabel.AKIEC: _draw_rectangle,
    ClassLabel.BKL: _draw_ellipse,
    ClassLabel.DF: _draw_small_disk,
    ClassLabel.VASC: _draw_cluster,
}


def _paint_lesion(rng, image, mask, rgb, label):
    color = np.array(rgb, dtype=np.float64) + rng.uniform(-8, 8, size=3)
    # smooth radial shading only: fine dark texture would read as hair
    distance = cv2.distanceTransform(mask.astype(np.uint8), cv2.DIST_L2, 5)
    depth = distance / max(float(distance.max()), 1.0)
    if label in (ClassLabel.BKL, ClassLabel.DF):
        tint = 20.0 * depth
    else:
        tint = -12.0 * depth
    painted = color[None, None, :] + tint[:, :, None]
    image[mask] = np.clip(painted[mask] + rng.normal(0.0, 2.0, size=painted[mask].shape), 0, 255)


def _hair_strokes(rng, side):
    strokes = np.zeros((side, side), dtype=np.uint8)
    # thin enough for the default blackhat disk to close at every desk side
    thickness = max(1, side // 128)
    t = np.linspace(0.0, 1.0, 48)[:, None]
    for _ in range(int(rng.integers(2, 5))):
        start, control, end = rng.uniform(0, side - 1, size=(3, 2))
        curve = (1 - t) ** 2 * start + 2 * (1 - t) * t * control + t ** 2 * end
        cv2.polylines(strokes, [np.round(curve).astype(np.int32)], False, 255,
                      thickness=thickness, lineType=cv2.LINE_8)
    return strokes > 0
