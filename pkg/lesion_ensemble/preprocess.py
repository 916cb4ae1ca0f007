""" Geometric normalization and the two-stage hair pipeline: a small network
decides whether an image is hairy, and only hairy images go through
blackhat detection and inpainting.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np
import pandas as pd
import torch

from .dataset import save_manifest
from .exceptions import PreprocessError, UntrainedModelError
from .fields import STAGE_HAIR_REMOVED, STAGE_RESIZED

logger = logging.getLogger(__name__)

DEFAULT_HAIR_THRESHOLD = 0.5
HAIR_RADIUS_DIVISOR = 60
MIN_HAIR_RADIUS = 2
INPAINT_RADIUS = 3


@dataclass(frozen=True)
class HairVerdict:
    image_id: str
    hairy: bool
    score: float

    def to_row(self):
        return {'image_id': self.image_id, 'hairy': self.hairy, 'score': self.score}


@dataclass(frozen=True)
class HairMask:
    mask: np.ndarray
    coverage: float

    @classmethod
    def from_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool)
        coverage = float(mask.sum()) / mask.size if mask.size else 0.0
        return cls(mask=mask, coverage=coverage)


def pad_to_square(image):
    """ Centers `image` on a max(H, W) square; the border replicates the
    nearest edge pixels. Odd remainders put the extra row/column last.
    """
    image = np.asarray(image)
    if image.ndim < 2 or image.shape[0] == 0 or image.shape[1] == 0:
        raise PreprocessError("Cannot pad an empty raster of shape {0}".format(image.shape))
    height, width = image.shape[:2]
    side = max(height, width)
    top = (side - height) // 2
    left = (side - width) // 2
    padding = [(top, side - height - top), (left, side - width - left)]
    padding += [(0, 0)] * (image.ndim - 2)
    return np.pad(image, padding, mode='edge')


def resize(image, side, interpolation=cv2.INTER_LINEAR):
    image = np.asarray(image)
    if image.ndim < 2 or image.shape[0] != image.shape[1]:
        raise PreprocessError("resize expects a square raster, got {0}".format(image.shape))
    if side < 1:
        raise PreprocessError("side must be at least 1, got {0}".format(side))
    if image.shape[0] == side:
        return image.copy()
    return cv2.resize(image, (side, side), interpolation=interpolation)


def resize_mask(mask, side):
    resized = resize(np.asarray(mask, dtype=np.uint8) * 255, side, interpolation=cv2.INTER_NEAREST)
    return resized >= 128


def hair_radius(side, divisor=HAIR_RADIUS_DIVISOR, minimum=MIN_HAIR_RADIUS):
    return max(minimum, int(round(side / float(divisor))))


def blackhat_response(gray, radius):
    """ Closing minus image with a disk structuring element: bright where the
    image has dark structures thinner than the disk.
    """
    kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (2 * radius + 1, 2 * radius + 1))
    return cv2.morphologyEx(gray, cv2.MORPH_BLACKHAT, kernel)


def remove_hair(image, radius=None, inpaint_radius=INPAINT_RADIUS):
    """ Detects dark curvilinear structures on the luminance channel, thresholds
    the blackhat response at mean + 2 * stddev and inpaints the masked pixels.
    Pixels outside the returned mask are never modified.
    """
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise PreprocessError("remove_hair expects an H x W x 3 raster, got {0}".format(image.shape))
    radius = radius or hair_radius(max(image.shape[:2]))
    gray = cv2.cvtColor(image, cv2.COLOR_RGB2GRAY)
    response = blackhat_response(gray, radius).astype(np.float64)
    threshold = response.mean() + 2.0 * response.std()
    mask = response > threshold
    hair_mask = HairMask.from_mask(mask)
    if not mask.any():
        return image.copy(), hair_mask

    inpainted = cv2.inpaint(image, mask.astype(np.uint8) * 255, inpaint_radius, cv2.INPAINT_TELEA)
    cleaned = image.copy()
    cleaned[mask] = inpainted[mask]
    return cleaned, hair_mask


def hair_score(image, model):
    from .nets import to_batch
    if not model.is_trained:
        raise UntrainedModelError("Hair classifier has not been trained")
    prepared = resize(pad_to_square(image), model.input_side)
    model.eval()
    with torch.no_grad():
        return float(model(to_batch([prepared]))[0, 0])


def classify_hair(image, model, threshold=DEFAULT_HAIR_THRESHOLD, image_id=''):
    score = hair_score(image, model)
    return HairVerdict(image_id=image_id, hairy=score >= threshold, score=score)


def preprocess_image(image, side, hair_model=None, force_hair_removal=False,
                     threshold=DEFAULT_HAIR_THRESHOLD, radius=None, image_id=''):
    """ pad -> resize -> (classify -> remove hair). Returns the processed
    raster, its stage and the hair verdict (None when no classifier ran).
    """
    pixels = resize(pad_to_square(image), side)
    verdict = None
    if hair_model is not None:
        verdict = classify_hair(image, hair_model, threshold=threshold, image_id=image_id)
    if force_hair_removal or (verdict is not None and verdict.hairy):
        pixels, _ = remove_hair(pixels, radius=radius)
        return pixels, STAGE_HAIR_REMOVED, verdict
    return pixels, STAGE_RESIZED, verdict


def preprocess_manifest(manifest, out_dir, side, hair_model=None, force_hair_removal=False,
                        threshold=DEFAULT_HAIR_THRESHOLD, radius=None, workers=1):
    """ Preprocesses every record and persists the result as
    `<out_dir>/manifest.json` plus a `hair_verdicts.csv` log.
    Returns (manifest, verdicts).
    """
    out_dir = Path(out_dir)

    def process(record):
        pixels, stage, verdict = preprocess_image(
            manifest.image(record), side, hair_model=hair_model,
            force_hair_removal=force_hair_removal, threshold=threshold,
            radius=radius, image_id=record.id)
        mask = manifest.segmentation(record)
        strokes = manifest.strokes(record)
        processed = replace(record,
                            stage=stage,
                            pixels=pixels,
                            mask=resize_mask(pad_to_square(mask), side) if mask is not None else None,
                            hair_mask=resize_mask(pad_to_square(strokes), side) if strokes is not None else None,
                            path=None, mask_path=None, hair_mask_path=None,
                            transform=None, source_id=None)
        return processed, verdict

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(process, manifest.records))
    else:
        results = [process(record) for record in manifest.records]

    processed = manifest.with_records([r for r, _ in results])
    verdicts = [v for _, v in results if v is not None]
    persisted = save_manifest(processed, out_dir / 'manifest.json')
    pd.DataFrame([v.to_row() for v in verdicts], columns=['image_id', 'hairy', 'score']) \
        .to_csv(out_dir / 'hair_verdicts.csv', index=False)
    removed = sum(1 for r in processed.records if r.stage == STAGE_HAIR_REMOVED)
    logger.info("Preprocessed %d images to side %d (%d with hair removed)", len(processed), side, removed)
    return persisted, verdicts
