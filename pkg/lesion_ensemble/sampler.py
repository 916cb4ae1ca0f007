import logging
from dataclasses import dataclass
from typing import Dict

from .dataset import DatasetManifest
from .exceptions import SamplerError
from .fields import ClassLabel
from .utils import derive_rng, round_half_even

logger = logging.getLogger(__name__)

DEFAULT_DEV_FRACTION = '0.1'


@dataclass(frozen=True)
class SplitPlan:
    dev_counts: Dict[ClassLabel, int]
    train_counts: Dict[ClassLabel, int]
    seed: int

    @classmethod
    def from_manifests(cls, train, dev, seed):
        return cls(dev_counts=dev.class_counts, train_counts=train.class_counts, seed=seed)

    def to_dict(self):
        return {'seed': self.seed,
                'dev_counts': {label.code: n for label, n in self.dev_counts.items()},
                'train_counts': {label.code: n for label, n in self.train_counts.items()}}


@dataclass(frozen=True)
class BalancedDataset:
    index: int
    records: DatasetManifest
    anchor_class: ClassLabel
    cap: int

    @property
    def class_counts(self):
        return self.records.class_counts


def dev_count(n_class, dev_fraction=DEFAULT_DEV_FRACTION):
    """ Size of the development stratum: round-half-to-even(fraction * n). """
    return round_half_even(n_class, dev_fraction)


def split(manifest, seed, dev_fraction=DEFAULT_DEV_FRACTION):
    """ Stratified train/dev split, sampling each class without replacement.
    Returns (train, dev) manifests in the input order.
    """
    _assert_labeled(manifest)
    frame = manifest.to_frame()
    dev_ids = []
    for label in ClassLabel:
        group = frame[frame['label'] == label.code]
        if group.empty:
            logger.warning("Class %s has no records; its strata are empty", label.code)
            continue
        n_dev = dev_count(len(group), dev_fraction)
        picked = group.sample(n=n_dev, random_state=derive_rng(seed, int(label)))
        dev_ids.extend(picked['id'].tolist())

    dev_set = set(dev_ids)
    dev = manifest.with_records(
        [r for r in manifest.records if r.id in dev_set], seed=seed)
    train = manifest.with_records(
        [r for r in manifest.records if r.id not in dev_set], seed=seed)
    logger.info("Split %d records into %d train / %d dev", len(manifest), len(train), len(dev))
    return train, dev


def balance(train, anchor, n_sets, seed):
    """ Builds `n_sets` datasets in which every class is capped at the anchor
    class count. Classes above the cap get a fresh subsample per set (seeded
    with seed + index); classes at or below it are copied whole.
    """
    if n_sets < 1:
        raise SamplerError("n_sets must be at least 1, got {0}".format(n_sets))
    _assert_labeled(train)
    anchor = anchor if isinstance(anchor, ClassLabel) else ClassLabel.from_code(anchor)
    counts = train.class_counts
    cap = counts[anchor]
    if cap == 0:
        raise SamplerError("Anchor class {0} has no training records".format(anchor.code))

    frame = train.to_frame()
    datasets = []
    for index in range(1, n_sets + 1):
        keep = set()
        for label in ClassLabel:
            group = frame[frame['label'] == label.code]
            if len(group) > cap:
                group = group.sample(n=cap, random_state=derive_rng(seed + index, int(label)))
            keep.update(group['id'].tolist())
        records = train.with_records([r for r in train.records if r.id in keep], seed=seed + index)
        datasets.append(BalancedDataset(index=index, records=records, anchor_class=anchor, cap=cap))
        logger.info("Balanced set %d: %s", index,
                    {label.code: n for label, n in records.class_counts.items()})
    return datasets


def _assert_labeled(manifest):
    if not manifest.fully_labeled:
        missing = [r.id for r in manifest.records if r.label is None]
        raise SamplerError("Sampling needs labeled records; unlabeled: {0}".format(', '.join(missing[:5])))
