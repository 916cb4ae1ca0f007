""" Image corpora as deterministic, immutable manifests.

A manifest is an ordered tuple of `ImageRecord`s plus the metadata needed to
reproduce it (seed, kind, options). Records reference their pixels by a path
relative to the manifest root, or carry them in memory until the manifest is
saved. Pixels are only decoded on demand.
"""
import logging
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from PIL import Image

from .exceptions import ManifestError, MissingImageError
from .fields import (CLASS_CODES, DEFAULT_MASK_SUFFIX, KIND_CLASSIFICATION,
                     KIND_SEGMENTATION, KIND_SYNTHETIC, KIND_UNLABELED,
                     STAGE_HAIR_REMOVED, STAGE_PADDED, STAGE_RAW, STAGE_RESIZED,
                     ClassLabel)
from .utils import read_image, read_json, read_mask, write_image, write_json, write_mask

logger = logging.getLogger(__name__)

MANIFEST_FORMAT_VERSION = 1
IMAGE_EXTENSIONS = ('.jpg', '.jpeg', '.png')
VALID_KINDS = (KIND_CLASSIFICATION, KIND_SEGMENTATION, KIND_SYNTHETIC, KIND_UNLABELED)
VALID_STAGES = (STAGE_RAW, STAGE_PADDED, STAGE_RESIZED, STAGE_HAIR_REMOVED)
RECORD_FIELDS = ('id', 'label', 'stage', 'path', 'mask_path', 'hairy',
                 'hair_mask_path', 'transform', 'source_id')


@dataclass(frozen=True)
class ImageRecord:
    id: str
    label: Optional[ClassLabel] = None
    stage: str = STAGE_RAW
    path: Optional[str] = None
    mask_path: Optional[str] = None
    hairy: Optional[bool] = None
    hair_mask_path: Optional[str] = None
    transform: Optional[str] = None
    source_id: Optional[str] = None
    pixels: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    mask: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    hair_mask: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.label is not None and not isinstance(self.label, ClassLabel):
            object.__setattr__(self, 'label', ClassLabel(self.label))
        if self.stage not in VALID_STAGES:
            raise ManifestError("Unknown stage {0} for record {1}".format(self.stage, self.id))
        if self.pixels is not None:
            if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
                raise ManifestError("Record {0} pixels must be H x W x 3, got {1}"
                                    .format(self.id, self.pixels.shape))
            for name in ('mask', 'hair_mask'):
                other = getattr(self, name)
                if other is not None and other.shape != self.pixels.shape[:2]:
                    raise ManifestError("Record {0} {1} shape {2} does not match image {3}"
                                        .format(self.id, name, other.shape, self.pixels.shape[:2]))

    @property
    def labeled(self):
        return self.label is not None

    def image(self, root=None):
        pixels = self.pixels if self.pixels is not None else read_image(self._resolve(root, self.path))
        return self._transformed(pixels)

    def segmentation(self, root=None):
        if self.mask is not None:
            mask = self.mask
        elif self.mask_path is not None:
            mask = read_mask(self._resolve(root, self.mask_path))
        else:
            return None
        return self._transformed(mask)

    def strokes(self, root=None):
        if self.hair_mask is not None:
            mask = self.hair_mask
        elif self.hair_mask_path is not None:
            mask = read_mask(self._resolve(root, self.hair_mask_path))
        else:
            return None
        return self._transformed(mask)

    def to_row(self):
        return {'id': self.id,
                'label': self.label.code if self.label is not None else None,
                'stage': self.stage,
                'path': self.path,
                'mask_path': self.mask_path,
                'hairy': self.hairy,
                'hair_mask_path': self.hair_mask_path,
                'transform': self.transform,
                'source_id': self.source_id}

    @classmethod
    def from_row(cls, row):
        unknown = set(row) - set(RECORD_FIELDS)
        if unknown:
            raise ManifestError("Unknown record fields {0}".format(sorted(unknown)))
        values = dict(row)
        label = values.get('label')
        values['label'] = ClassLabel.from_code(label) if label is not None else None
        return cls(**values)

    def _transformed(self, raster):
        if self.transform is None:
            return raster
        from .augment import apply_tag
        return apply_tag(raster, self.transform)

    def _resolve(self, root, relative):
        if relative is None:
            raise ManifestError("Record {0} has neither in-memory pixels nor a path".format(self.id))
        if root is None:
            return Path(relative)
        return Path(root) / relative


@dataclass(frozen=True)
class DatasetManifest:
    records: Tuple[ImageRecord, ...]
    kind: str
    seed: int = 0
    options: Dict[str, str] = field(default_factory=dict)
    root: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'records', tuple(self.records))
        if self.kind not in VALID_KINDS:
            raise ManifestError("Unknown manifest kind {0}".format(self.kind))
        seen = set()
        for record in self.records:
            if record.id in seen:
                raise ManifestError("Duplicate image id {0}".format(record.id))
            seen.add(record.id)
        if self.kind == KIND_CLASSIFICATION:
            unlabeled = [r.id for r in self.records if r.label is None]
            if unlabeled:
                raise ManifestError("Classification manifest has unlabeled records: {0}"
                                    .format(', '.join(unlabeled[:5])))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, index):
        return self.records[index]

    @property
    def ids(self):
        return [r.id for r in self.records]

    @property
    def mask_suffix(self):
        return self.options.get('mask_suffix', DEFAULT_MASK_SUFFIX)

    @property
    def class_counts(self):
        counts = Counter(r.label for r in self.records if r.label is not None)
        return {label: counts.get(label, 0) for label in ClassLabel}

    @property
    def labels(self):
        return [r.label for r in self.records]

    @property
    def fully_labeled(self):
        return all(r.label is not None for r in self.records)

    def image(self, record):
        return record.image(self.root)

    def segmentation(self, record):
        return record.segmentation(self.root)

    def strokes(self, record):
        return record.strokes(self.root)

    def with_records(self, records, **changes):
        return replace(self, records=tuple(records), **changes)

    def subset(self, ids):
        """ Keeps the records whose id is in `ids`, preserving manifest order. """
        wanted = set(ids)
        return self.with_records(r for r in self.records if r.id in wanted)

    def to_frame(self):
        return pd.DataFrame([r.to_row() for r in self.records], columns=list(RECORD_FIELDS))

    def header(self):
        return {'format_version': MANIFEST_FORMAT_VERSION,
                'kind': self.kind,
                'seed': int(self.seed),
                'options': dict(self.options),
                'n_records': len(self.records),
                'class_counts': {label.code: count for label, count in self.class_counts.items()}}

    def to_dict(self):
        data = self.header()
        data['records'] = [r.to_row() for r in self.records]
        return data

    @classmethod
    def from_dict(cls, data, root=None):
        version = data.get('format_version')
        if version != MANIFEST_FORMAT_VERSION:
            raise ManifestError("Unsupported manifest format version {0}".format(version))
        manifest = cls(records=[ImageRecord.from_row(row) for row in data['records']],
                       kind=data['kind'],
                       seed=int(data.get('seed', 0)),
                       options=dict(data.get('options') or {}),
                       root=Path(root) if root is not None else None)
        stored = data.get('class_counts')
        if stored is not None:
            actual = {label.code: count for label, count in manifest.class_counts.items()}
            if stored != actual:
                raise ManifestError("Manifest header counts {0} do not match records {1}"
                                    .format(stored, actual))
        return manifest


def save_manifest(manifest, path):
    """ Persists `manifest` as `path` and returns the manifest as it will be
    loaded back. In-memory rasters are written as PNG files beside the
    manifest; paths of already-persisted records are rebased onto the new root.
    """
    path = Path(path)
    root = path.parent.resolve()
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for record in manifest.records:
        # augmented twins share the files of their source record
        stem = record.source_id or record.id
        changes = {'pixels': None, 'mask': None, 'hair_mask': None}
        if record.pixels is not None:
            changes['path'] = 'images/{0}.png'.format(stem)
            write_image(root / changes['path'], record.pixels)
        else:
            changes['path'] = _rebase(manifest.root, root, record.path)
        if record.mask is not None:
            changes['mask_path'] = 'masks/{0}{1}.png'.format(stem, manifest.mask_suffix)
            write_mask(root / changes['mask_path'], record.mask)
        else:
            changes['mask_path'] = _rebase(manifest.root, root, record.mask_path)
        if record.hair_mask is not None:
            changes['hair_mask_path'] = 'hair_masks/{0}_hair.png'.format(stem)
            write_mask(root / changes['hair_mask_path'], record.hair_mask)
        else:
            changes['hair_mask_path'] = _rebase(manifest.root, root, record.hair_mask_path)
        records.append(replace(record, **changes))
    persisted = manifest.with_records(records, root=root)
    write_json(path, persisted.to_dict())
    logger.info("Saved %s manifest with %d records to %s", manifest.kind, len(records), path)
    return persisted


def load_manifest(path):
    path = Path(path)
    if not path.exists():
        raise MissingImageError("Manifest not found: {0}".format(path))
    return DatasetManifest.from_dict(read_json(path), root=path.parent.resolve())


def ingest_classification(root_dir, ground_truth, seed=0, workers=1,
                          extensions=IMAGE_EXTENSIONS):
    """ Builds a classification manifest from an image directory and a one-hot
    ground-truth table (`image,MEL,NV,BCC,AKIEC,BKL,DF,VASC`).
    """
    root = Path(root_dir).resolve()
    table = pd.read_csv(ground_truth, dtype={'image': str})
    missing_columns = [c for c in ['image'] + CLASS_CODES if c not in table.columns]
    if missing_columns:
        raise ManifestError("Ground truth table {0} is missing columns {1}"
                            .format(ground_truth, missing_columns))
    duplicated = table['image'][table['image'].duplicated()].tolist()
    if duplicated:
        raise ManifestError("Duplicate image id {0} in ground truth".format(duplicated[0]))

    indicators = table[CLASS_CODES].astype(float) > 0
    positives = indicators.sum(axis=1)
    bad_rows = table['image'][positives != 1].tolist()
    if bad_rows:
        raise ManifestError("Image {0} does not have exactly one positive class indicator"
                            .format(bad_rows[0]))

    ids = sorted(table['image'].tolist())
    label_by_id = dict(zip(table['image'], indicators.values.argmax(axis=1)))
    paths = _locate_images(root, ids, extensions, workers)
    records = [ImageRecord(id=image_id,
                           label=ClassLabel(int(label_by_id[image_id])),
                           path=paths[image_id])
               for image_id in ids]
    manifest = DatasetManifest(records=records, kind=KIND_CLASSIFICATION, seed=seed, root=root)
    logger.info("Ingested %d classification images from %s: %s", len(manifest), root,
                {label.code: count for label, count in manifest.class_counts.items()})
    return manifest


def ingest_segmentation(root_dir, mask_dir=None, mask_suffix=DEFAULT_MASK_SUFFIX,
                        seed=0, workers=1):
    """ Pairs every image in `root_dir` with `<id><mask_suffix>.png` from
    `mask_dir` (defaults to `root_dir`).
    """
    root = Path(root_dir).resolve()
    masks = Path(mask_dir).resolve() if mask_dir is not None else root
    images = {p.stem: p for p in _list_images(root)
              if not p.stem.endswith(mask_suffix)}
    ids = sorted(images)

    def pair(image_id):
        mask_path = masks / '{0}{1}.png'.format(image_id, mask_suffix)
        if not mask_path.exists():
            raise MissingImageError("Image {0} has no mask {1}".format(image_id, mask_path))
        image_size = _image_size(images[image_id])
        mask_size = _image_size(mask_path)
        if image_size != mask_size:
            raise ManifestError("Mask of {0} is {1}, image is {2}"
                                .format(image_id, mask_size, image_size))
        return ImageRecord(id=image_id,
                           path=os.path.relpath(images[image_id], root),
                           mask_path=os.path.relpath(mask_path, root))

    records = _parallel_map(pair, ids, workers)
    manifest = DatasetManifest(records=records, kind=KIND_SEGMENTATION, seed=seed,
                               options={'mask_suffix': mask_suffix}, root=root)
    logger.info("Ingested %d segmentation pairs from %s", len(manifest), root)
    return manifest


def ingest_unlabeled(root_dir, seed=0):
    """ Label-absent manifest, e.g. for validation or test images without ground truth. """
    root = Path(root_dir).resolve()
    records = [ImageRecord(id=p.stem, path=os.path.relpath(p, root))
               for p in sorted(_list_images(root), key=lambda p: p.stem)]
    manifest = DatasetManifest(records=records, kind=KIND_UNLABELED, seed=seed, root=root)
    logger.info("Ingested %d unlabeled images from %s", len(manifest), root)
    return manifest


def _list_images(root):
    if not root.is_dir():
        raise MissingImageError("Image directory not found: {0}".format(root))
    return [p for p in root.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS]


def _locate_images(root, ids, extensions, workers):
    def locate(image_id):
        for ext in extensions:
            candidate = root / (image_id + ext)
            if candidate.exists():
                return candidate.name
        raise MissingImageError("Missing image file for id {0} under {1}".format(image_id, root))
    return dict(zip(ids, _parallel_map(locate, ids, workers)))


def _parallel_map(func, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def _image_size(path):
    with Image.open(path) as img:
        return img.size


def _rebase(old_root, new_root, relative):
    if relative is None:
        return None
    absolute = Path(old_root) / relative if old_root is not None else Path(relative).resolve()
    return os.path.relpath(absolute, new_root)
