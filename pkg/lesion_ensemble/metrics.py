import logging
from dataclasses import dataclass
from pathlib import Path

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from .exceptions import ManifestError, MetricsUndefinedError
from .fields import CLASS_CODES, N_CLASSES, ClassLabel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    """ Rows are the true class, columns the predicted class. """
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("A confusion matrix must be square, got shape {0}".format(counts.shape))
        if (counts < 0).any():
            raise ValueError("Confusion counts must be nonnegative")
        object.__setattr__(self, 'counts', counts.astype(np.int64))

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def normalized(self):
        return normalize_rows(self)

    def to_frame(self):
        names = _class_names(self.n_classes)
        return pd.DataFrame(self.counts, index=pd.Index(names, name='true'),
                            columns=pd.Index(names, name='predicted'))

    def to_dict(self):
        return {'labels': _class_names(self.n_classes), 'counts': self.counts.tolist()}

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


@dataclass(frozen=True)
class ClassMetrics:
    tpr: np.ndarray
    present: np.ndarray
    balanced_accuracy: float
    accuracy: float

    def to_dict(self):
        names = _class_names(len(self.tpr))
        return {'balanced_accuracy': self.balanced_accuracy,
                'accuracy': self.accuracy,
                'tpr': {name: float(v) for name, v in zip(names, self.tpr)},
                'present': {name: bool(v) for name, v in zip(names, self.present)}}


def confusion(truth, pred, n_classes=N_CLASSES):
    truth = [int(t) for t in truth]
    pred = [int(p) for p in pred]
    if len(truth) != len(pred):
        raise ValueError("truth has {0} labels but pred has {1}".format(len(truth), len(pred)))
    for value in truth + pred:
        if not 0 <= value < n_classes:
            raise ValueError("Label {0} is outside 0..{1}".format(value, n_classes - 1))
    if not truth:
        return ConfusionMatrix(np.zeros((n_classes, n_classes), dtype=np.int64))
    return ConfusionMatrix(confusion_matrix(truth, pred, labels=list(range(n_classes))))


def normalize_rows(cm):
    """ Divides every row by its sum; all-zero rows stay zero. Accepts a
    ConfusionMatrix or an already normalized array.
    """
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    counts = counts.astype(np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


def true_positive_rates(cm):
    """ Per-class recall and the mask of classes with at least one true sample. """
    rows = cm.counts.sum(axis=1)
    diagonal = np.diag(cm.counts).astype(np.float64)
    tpr = np.divide(diagonal, rows, out=np.zeros_like(diagonal), where=rows > 0)
    return tpr, rows > 0


def class_metrics(cm):
    if cm.total == 0:
        raise MetricsUndefinedError("Metrics are undefined for an empty confusion matrix")
    tpr, present = true_positive_rates(cm)
    absent = [name for name, p in zip(_class_names(cm.n_classes), present) if not p]
    if absent:
        logger.debug("Classes without true samples left out of balanced accuracy: %s", absent)
    return ClassMetrics(tpr=tpr,
                        present=present,
                        balanced_accuracy=float(tpr[present].mean()),
                        accuracy=float(np.trace(cm.counts)) / cm.total)


def render_heatmap(matrix, path, title=''):
    """ Writes a row-normalized confusion heatmap as an image. """
    normalized = normalize_rows(matrix)
    names = _class_names(normalized.shape[0])
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    image = ax.imshow(normalized, vmin=0.0, vmax=1.0, cmap='Blues')
    ax.set_xticks(range(len(names)))
    ax.set_yticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha='right')
    ax.set_yticklabels(names)
    ax.set_xlabel('Predicted')
    ax.set_ylabel('True')
    for i in range(len(names)):
        for j in range(len(names)):
            value = normalized[i, j]
            ax.text(j, i, '{0:.2f}'.format(value), ha='center', va='center', fontsize=7,
                    color='white' if value > 0.5 else 'black')
    if title:
        ax.set_title(title)
    fig.colorbar(image, ax=ax)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def evaluate_predictions(predictions, manifest):
    """ Scores a predictions file (`image,MEL,...,VASC` probabilities or
    `image,label` codes) against a labeled manifest.
    """
    frame = pd.read_csv(predictions, dtype={'image': str})
    if 'label' in frame.columns:
        predicted = {image: ClassLabel.from_code(code) for image, code in zip(frame['image'], frame['label'])}
    else:
        argmax = frame[CLASS_CODES].values.argmax(axis=1)
        predicted = {image: ClassLabel(int(i)) for image, i in zip(frame['image'], argmax)}
    missing = [r.id for r in manifest.records if r.id not in predicted]
    if missing:
        raise ManifestError("No prediction for image {0}".format(missing[0]))
    truth = [r.label for r in manifest.records]
    if any(t is None for t in truth):
        raise ManifestError("Evaluation needs a labeled manifest")
    cm = confusion(truth, [predicted[r.id] for r in manifest.records])
    return cm, class_metrics(cm)


def _class_names(n_classes):
    if n_classes == N_CLASSES:
        return list(CLASS_CODES)
    return [str(i) for i in range(n_classes)]
