""" Dihedral augmentation of square rasters.

Every transform is a flip (none, vertical, horizontal) followed by a
counter-clockwise rotation by a multiple of 90 degrees, so it is an exact
pixel permutation. Augmented records keep a reference to their source pixels
and carry the transform tag; the transform is applied when pixels are read.
"""
import logging
import re
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import AugmentError
from .fields import EXTENDED_AUGMENT_CLASSES

logger = logging.getLogger(__name__)

ROTATIONS = (0, 90, 180, 270)
FLIP_NONE = 'none'
FLIP_VERTICAL = 'vertical'
FLIP_HORIZONTAL = 'horizontal'
FLIPS = (FLIP_NONE, FLIP_VERTICAL, FLIP_HORIZONTAL)

_FLIP_SUFFIX = {FLIP_NONE: '', FLIP_VERTICAL: '_fv', FLIP_HORIZONTAL: '_fh'}
_TAG_PATTERN = re.compile(r'^_r(0|90|180|270)(_fv|_fh)?$')


@dataclass(frozen=True)
class TransformId:
    rotation: int = 0
    flip: str = FLIP_NONE

    def __post_init__(self):
        if self.rotation not in ROTATIONS:
            raise AugmentError("Rotation must be one of {0}, got {1}".format(ROTATIONS, self.rotation))
        if self.flip not in FLIPS:
            raise AugmentError("Flip must be one of {0}, got {1}".format(FLIPS, self.flip))

    @property
    def tag(self):
        return '_r{0}{1}'.format(self.rotation, _FLIP_SUFFIX[self.flip])


def parse_tag(tag):
    match = _TAG_PATTERN.match(tag)
    if match is None:
        raise AugmentError("Invalid transform tag {0}".format(tag))
    flip = {None: FLIP_NONE, '_fv': FLIP_VERTICAL, '_fh': FLIP_HORIZONTAL}[match.group(2)]
    return TransformId(rotation=int(match.group(1)), flip=flip)


def transform_set(extended=False):
    """ The 8 standard transforms (rotations x {none, vertical}), followed by
    the 4 horizontal-flip transforms when `extended`. Reflections that coincide
    at the group level are kept: the multiplicities depend on all of them.
    """
    flips = FLIPS if extended else FLIPS[:2]
    return [TransformId(rotation, flip) for flip in flips for rotation in ROTATIONS]


STANDARD_TRANSFORMS = transform_set(extended=False)
EXTENDED_TRANSFORMS = transform_set(extended=True)


def apply(image, t):
    """ Flip first, then rotate counter-clockwise. Works for H x W and
    H x W x C rasters alike.
    """
    image = np.asarray(image)
    if image.ndim < 2 or image.shape[0] != image.shape[1]:
        raise AugmentError("Augmentation needs a square raster, got {0}".format(image.shape))
    if t.flip == FLIP_VERTICAL:
        image = np.flipud(image)
    elif t.flip == FLIP_HORIZONTAL:
        image = np.fliplr(image)
    return np.ascontiguousarray(np.rot90(image, k=t.rotation // 90, axes=(0, 1)))


def apply_tag(image, tag):
    return apply(image, parse_tag(tag))


def transforms_for(label):
    if label is None:
        raise AugmentError("Cannot augment an unlabeled record")
    return EXTENDED_TRANSFORMS if label in EXTENDED_AUGMENT_CLASSES else STANDARD_TRANSFORMS


def expand(record):
    if record.transform is not None:
        raise AugmentError("Record {0} is already augmented ({1})".format(record.id, record.transform))
    if record.label is None:
        raise AugmentError("Cannot augment unlabeled record {0}".format(record.id))
    return [replace(record,
                    id=record.id + t.tag,
                    transform=t.tag,
                    source_id=record.id)
            for t in transforms_for(record.label)]


def expand_manifest(manifest):
    records = []
    for record in sorted(manifest.records, key=lambda r: r.id):
        records.extend(expand(record))
    expanded = manifest.with_records(records)
    logger.info("Expanded %d records into %d augmented records", len(manifest), len(expanded))
    return expanded
