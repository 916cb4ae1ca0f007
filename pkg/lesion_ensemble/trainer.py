""" SGD training loops for the segmentation, classification and hair models.

All three share one loop: per-epoch learning rate from `lr_schedule`, a seeded
single-process data loader, divergence checks and a checkpoint written at the
end (optionally the best development epoch instead).
"""
import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset

from .exceptions import ManifestError, TrainingDivergedError
from .fields import KIND_SEGMENTATION, LOSS_BCE, LOSS_BCE_DICE, LOSS_CROSS_ENTROPY
from .metrics import class_metrics, confusion
from .nets import save_checkpoint, to_batch
from .preprocess import pad_to_square, resize, resize_mask
from .sampler import BalancedDataset
from .utils import write_json

logger = logging.getLogger(__name__)

TARGET_LABEL = 'label'
TARGET_MASK = 'mask'
TARGET_HAIR = 'hair'
VALID_LOSSES = (LOSS_BCE_DICE, LOSS_CROSS_ENTROPY, LOSS_BCE)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    decay: float = 0.9
    decay_every: int = 10
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0
    loss: str = LOSS_CROSS_ENTROPY
    momentum: float = 0.0
    select_best: bool = False
    early_stop_patience: Optional[int] = None

    def __post_init__(self):
        if self.lr0 < 0:
            raise ValueError("lr0 must be nonnegative, got {0}".format(self.lr0))
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1], got {0}".format(self.decay))
        if self.decay_every < 1:
            raise ValueError("decay_every must be at least 1, got {0}".format(self.decay_every))
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.loss not in VALID_LOSSES:
            raise ValueError("Unknown loss {0}; expected one of {1}".format(self.loss, VALID_LOSSES))

    @classmethod
    def segmentation(cls, **overrides):
        return cls(**dict({'epochs': 100, 'loss': LOSS_BCE_DICE}, **overrides))

    @classmethod
    def classification(cls, **overrides):
        return cls(**dict({'epochs': 50, 'loss': LOSS_CROSS_ENTROPY}, **overrides))

    @classmethod
    def hair(cls, **overrides):
        return cls(**dict({'epochs': 20, 'loss': LOSS_BCE}, **overrides))

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    lr: float
    dev_metric: Optional[float]
    seconds: float


@dataclass
class RunRecord:
    epochs: List[EpochStats] = field(default_factory=list)
    checkpoint_path: Optional[str] = None
    early_stopped: bool = False
    best_epoch: Optional[int] = None

    @property
    def losses(self):
        return [e.loss for e in self.epochs]

    def to_dict(self):
        return asdict(self)


def lr_schedule(config, epoch):
    """ lr0 * decay ^ floor(epoch / decay_every) """
    if epoch < 0:
        raise ValueError("epoch must be nonnegative, got {0}".format(epoch))
    return config.lr0 * config.decay ** (epoch // config.decay_every)


class ManifestDataset(Dataset):
    """ Serves (image tensor, target) pairs from a manifest at a fixed side.
    Decoded samples are cached, since augmented manifests re-read the same
    source files many times.
    """

    def __init__(self, manifest, side, target=TARGET_LABEL, cache=True):
        if target not in (TARGET_LABEL, TARGET_MASK, TARGET_HAIR):
            raise ValueError("Unknown target {0}".format(target))
        self.manifest = manifest
        self.side = side
        self.target = target
        self._cache = {} if cache else None
        self._validate()

    def _validate(self):
        for record in self.manifest.records:
            if self.target == TARGET_LABEL and record.label is None:
                raise ManifestError("Record {0} has no class label".format(record.id))
            if self.target == TARGET_MASK and record.mask is None and record.mask_path is None:
                raise ManifestError("Record {0} has no segmentation mask".format(record.id))
            if self.target == TARGET_HAIR and record.hairy is None:
                raise ManifestError("Record {0} has no hair flag".format(record.id))

    def __len__(self):
        return len(self.manifest)

    def __getitem__(self, index):
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        record = self.manifest.records[index]
        image = self._fit(self.manifest.image(record))
        x = to_batch([image])[0]
        if self.target == TARGET_LABEL:
            y = torch.tensor(int(record.label), dtype=torch.long)
        elif self.target == TARGET_MASK:
            mask = self.manifest.segmentation(record)
            if mask.shape[0] != self.side or mask.shape[0] != mask.shape[1]:
                mask = resize_mask(pad_to_square(mask), self.side)
            y = torch.from_numpy(mask.astype(np.float32))[None]
        else:
            y = torch.tensor([1.0 if record.hairy else 0.0])
        if self._cache is not None:
            self._cache[index] = (x, y)
        return x, y

    def _fit(self, image):
        if image.shape[:2] != (self.side, self.side):
            image = resize(pad_to_square(image), self.side)
        return image


def compute_loss(kind, logits, target):
    if kind == LOSS_CROSS_ENTROPY:
        return F.cross_entropy(logits, target)
    if kind == LOSS_BCE:
        return F.binary_cross_entropy_with_logits(logits, target)
    bce = F.binary_cross_entropy_with_logits(logits, target)
    return bce + (1.0 - soft_dice(torch.sigmoid(logits), target))


def soft_dice(probabilities, target, eps=1e-6):
    intersection = (probabilities * target).sum()
    return (2.0 * intersection + eps) / (probabilities.sum() + target.sum() + eps)


def dice_coefficient(pred, target):
    """ Dice of two boolean masks; two empty masks agree perfectly. """
    pred = np.asarray(pred, dtype=bool)
    target = np.asarray(target, dtype=bool)
    denominator = pred.sum() + target.sum()
    if denominator == 0:
        return 1.0
    return 2.0 * np.logical_and(pred, target).sum() / float(denominator)


def make_loader(dataset, config, shuffle=True):
    generator = torch.Generator()
    generator.manual_seed(config.seed)
    return DataLoader(dataset, batch_size=config.batch_size, shuffle=shuffle,
                      generator=generator, num_workers=0)


def predict_outputs(model, manifest, side, batch_size=32, target=TARGET_LABEL):
    """ Eval-mode forward pass over a manifest; returns a numpy array of the
    model's activated outputs in manifest order.
    """
    dataset = ManifestDataset(manifest, side, target=target, cache=False) \
        if target != TARGET_LABEL else _ImagesOnly(manifest, side)
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False, num_workers=0)
    outputs = []
    model.eval()
    with torch.no_grad():
        for x, _ in loader:
            outputs.append(model(x).numpy())
    if not outputs:
        return np.zeros((0,) + _empty_output_shape(model), dtype=np.float32)
    return np.concatenate(outputs, axis=0)


class _ImagesOnly(ManifestDataset):
    """ Images without targets, so unlabeled manifests can be scored. """

    def __init__(self, manifest, side):
        self.manifest = manifest
        self.side = side
        self.target = None
        self._cache = None

    def __getitem__(self, index):
        record = self.manifest.records[index]
        return to_batch([self._fit(self.manifest.image(record))])[0], index


def _empty_output_shape(model):
    return (getattr(model, 'n_classes', 1),)


def evaluate_cls(model, manifest, batch_size=32):
    """ (probabilities, predictions, ConfusionMatrix) on a labeled manifest. """
    probabilities = predict_outputs(model, manifest, model.spec.input_side, batch_size)
    predictions = probabilities.argmax(axis=1) if len(probabilities) else np.zeros(0, dtype=int)
    cm = confusion([int(r.label) for r in manifest.records], predictions.tolist(),
                   n_classes=model.n_classes)
    return probabilities, predictions, cm


def evaluate_seg(model, manifest, batch_size=16):
    """ Mean dice of the thresholded sigmoid map over a segmentation manifest. """
    side = model.spec.input_side
    dataset = ManifestDataset(manifest, side, target=TARGET_MASK, cache=False)
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False, num_workers=0)
    scores = []
    model.eval()
    with torch.no_grad():
        for x, y in loader:
            predicted = (model(x) >= 0.5).numpy()
            for p, t in zip(predicted, y.numpy() >= 0.5):
                scores.append(dice_coefficient(p, t))
    return float(np.mean(scores)) if scores else 0.0


def evaluate_hair(model, manifest, threshold=0.5, batch_size=32):
    scores = predict_outputs(model, manifest, model.input_side, batch_size, target=TARGET_HAIR)
    predicted = scores[:, 0] >= threshold
    truth = np.array([bool(r.hairy) for r in manifest.records])
    return float((predicted == truth).mean()) if len(truth) else 0.0


def train_seg(model, data, config, checkpoint_path=None):
    if data.kind != KIND_SEGMENTATION:
        raise ManifestError("train_seg needs a segmentation manifest, got {0}".format(data.kind))
    dataset = ManifestDataset(data, model.spec.input_side, target=TARGET_MASK)
    return _fit(model, dataset, config, checkpoint_path, name='segmentation')


def train_cls(model, train, dev, config, checkpoint_path=None):
    """ `train` may be a BalancedDataset or a manifest; the development
    balanced accuracy is logged every epoch when `dev` is given.
    """
    manifest = train.records if isinstance(train, BalancedDataset) else train
    dataset = ManifestDataset(manifest, model.spec.input_side, target=TARGET_LABEL)
    dev_eval = None
    if dev is not None and len(dev):
        def dev_eval(m):
            return class_metrics(evaluate_cls(m, dev, config.batch_size)[2]).balanced_accuracy
    return _fit(model, dataset, config, checkpoint_path, dev_eval=dev_eval, name='classification')


def train_hair(model, data, config, checkpoint_path=None, dev=None, threshold=0.5):
    dataset = ManifestDataset(data, model.input_side, target=TARGET_HAIR)
    dev_eval = None
    if dev is not None and len(dev):
        def dev_eval(m):
            return evaluate_hair(m, dev, threshold=threshold)
    record = _fit(model, dataset, config, None, dev_eval=dev_eval, name='hair')
    if record.epochs:
        model.mark_trained()
    if checkpoint_path is not None:
        _save_run(model, record, config, checkpoint_path)
    return record


def _fit(model, dataset, config, checkpoint_path, dev_eval=None, name='model'):
    loader = make_loader(dataset, config)
    optimizer = torch.optim.SGD(model.parameters(), lr=lr_schedule(config, 0),
                                momentum=config.momentum)
    record = RunRecord()
    best_metric, best_state, stale = None, None, 0

    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = lr_schedule(config, epoch)
        for group in optimizer.param_groups:
            group['lr'] = lr
        model.train()
        total, seen = 0.0, 0
        for step, (x, y) in enumerate(loader):
            optimizer.zero_grad()
            loss = compute_loss(config.loss, model.logits(x), y)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, step, value)
            loss.backward()
            optimizer.step()
            total += value * len(x)
            seen += len(x)
            logger.debug("%s epoch %d step %d loss %.6f", name, epoch, step, value)

        dev_metric = dev_eval(model) if dev_eval is not None else None
        stats = EpochStats(epoch=epoch, loss=total / max(seen, 1), lr=lr, dev_metric=dev_metric,
                           seconds=time.perf_counter() - started)
        record.epochs.append(stats)
        logger.info("%s epoch %d/%d loss %.4f lr %.6g%s", name, epoch + 1, config.epochs,
                    stats.loss, lr, '' if dev_metric is None else ' dev %.4f' % dev_metric)

        if dev_metric is not None:
            if best_metric is None or dev_metric > best_metric:
                best_metric, stale = dev_metric, 0
                record.best_epoch = epoch
                if config.select_best:
                    best_state = copy.deepcopy(model.state_dict())
            else:
                stale += 1
                if config.early_stop_patience is not None and stale >= config.early_stop_patience:
                    record.early_stopped = True
                    logger.info("%s stopped early after epoch %d", name, epoch + 1)
                    break

    if config.select_best and best_state is not None:
        model.load_state_dict(best_state)
    model.eval()

    if checkpoint_path is not None:
        _save_run(model, record, config, checkpoint_path)
    return record


def _save_run(model, record, config, checkpoint_path):
    checkpoint_path = Path(checkpoint_path)
    save_checkpoint(model, checkpoint_path, metadata={
        'epochs': len(record.epochs),
        'final_loss': record.losses[-1] if record.epochs else None,
        'train_config': config.to_dict()})
    record.checkpoint_path = str(checkpoint_path)
    write_json(checkpoint_path.with_suffix('.run.json'), record.to_dict())
