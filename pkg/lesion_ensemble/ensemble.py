""" TPR-weighted combination of K classifiers.

P has shape (images, classes, networks) and W has shape (networks, classes);
W[k, j] is network k's true positive rate for class j on the development set.
The weighted score for image i and class j is

    sum_k W[k, j] * P[i, j, k]  /  sum_j' sum_k W[k, j'] * P[i, j', k]
"""
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import DegenerateScoreError, ModelSpecError
from .fields import CLASS_CODES, N_CLASSES, ClassLabel
from .metrics import class_metrics, true_positive_rates
from .nets import KIND_CLS, load_checkpoint
from .trainer import evaluate_cls, predict_outputs

logger = logging.getLogger(__name__)

PREDICTIONS_FILE = 'predictions.csv'
LABELS_FILE = 'labels.csv'
WEIGHTS_FILE = 'weights.csv'


def compute_weights(dev_confusions):
    if not dev_confusions:
        raise ValueError("compute_weights needs at least one confusion matrix")
    shapes = {cm.counts.shape for cm in dev_confusions}
    if len(shapes) != 1:
        raise ValueError("Confusion matrices disagree on shape: {0}".format(sorted(shapes)))
    return np.stack([true_positive_rates(cm)[0] for cm in dev_confusions])


def weighted_scores(probabilities, weights, image_ids=None):
    P = np.asarray(probabilities, dtype=np.float64)
    W = np.asarray(weights, dtype=np.float64)
    if P.ndim != 3 or W.ndim != 2:
        raise ValueError("Expected P of shape (I, J, K) and W of shape (K, J), got {0} and {1}"
                         .format(P.shape, W.shape))
    if W.shape != (P.shape[2], P.shape[1]):
        raise ValueError("Weight shape {0} does not match probabilities {1}".format(W.shape, P.shape))
    if (W < 0).any():
        raise ValueError("Weights must be nonnegative")

    numerator = np.einsum('ijk,kj->ij', P, W)
    denominator = numerator.sum(axis=1)
    degenerate = np.flatnonzero(denominator <= 0)
    if degenerate.size:
        index = int(degenerate[0])
        image = image_ids[index] if image_ids is not None else index
        raise DegenerateScoreError(image)
    return numerator / denominator[:, None]


def mean_scores(probabilities):
    """ Unweighted average over networks. """
    P = np.asarray(probabilities, dtype=np.float64)
    if P.ndim != 3:
        raise ValueError("Expected P of shape (I, J, K), got {0}".format(P.shape))
    return P.mean(axis=2)


def predict(scores):
    """ Row argmax; numpy returns the first maximum, so ties go to the lowest class. """
    scores = np.asarray(scores)
    if scores.size == 0:
        return []
    return [ClassLabel(int(i)) if scores.shape[1] == N_CLASSES else int(i)
            for i in scores.argmax(axis=1)]


def predict_probabilities(model, manifest, side=None, batch_size=32):
    side = side or model.spec.input_side
    if side != model.spec.input_side:
        raise ModelSpecError("Model expects side {0}, asked for {1}".format(model.spec.input_side, side))
    return predict_outputs(model, manifest, side, batch_size).astype(np.float64)


def write_predictions(scores, image_ids, out_dir):
    """ Writes `predictions.csv` (one probability column per class) and
    `labels.csv` (argmax class code).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores = np.asarray(scores, dtype=np.float64).reshape(len(image_ids), N_CLASSES)
    frame = pd.DataFrame(scores, columns=CLASS_CODES)
    frame.insert(0, 'image', list(image_ids))
    frame.to_csv(out_dir / PREDICTIONS_FILE, index=False)
    labels = pd.DataFrame({'image': list(image_ids),
                           'label': [label.code for label in predict(scores)]})
    labels.to_csv(out_dir / LABELS_FILE, index=False)
    return out_dir / PREDICTIONS_FILE, out_dir / LABELS_FILE


def load_members(checkpoints, spec=None):
    models = []
    for path in checkpoints:
        model, _ = load_checkpoint(path, kind=KIND_CLS, spec=spec)
        models.append(model)
    if not models:
        raise ValueError("The ensemble needs at least one checkpoint")
    sides = {m.spec.input_side for m in models}
    if len(sides) != 1:
        raise ModelSpecError("Ensemble members disagree on input side: {0}".format(sorted(sides)))
    return models


def dev_evaluation(models, dev, batch_size=32):
    """ Each member's development probabilities and confusion matrix.
    Returns (P of shape (I, J, K), confusions, member ClassMetrics).
    """
    probabilities, confusions, members = [], [], []
    for k, model in enumerate(models):
        p, _, cm = evaluate_cls(model, dev, batch_size)
        probabilities.append(p)
        confusions.append(cm)
        members.append(class_metrics(cm) if cm.total else None)
        logger.info("Member %d dev balanced accuracy %s", k + 1,
                    'n/a' if members[-1] is None else '%.4f' % members[-1].balanced_accuracy)
    P = np.stack(probabilities, axis=2) if len(dev) else np.zeros((0, N_CLASSES, len(models)))
    return P, confusions, members


def write_weights(weights, out_dir):
    frame = pd.DataFrame(np.asarray(weights), columns=CLASS_CODES)
    frame.insert(0, 'member', list(range(1, len(frame) + 1)))
    path = Path(out_dir) / WEIGHTS_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def read_weights(path):
    return pd.read_csv(path)[CLASS_CODES].values.astype(np.float64)


def run_ensemble(checkpoints, dev, target, out_dir, spec=None, batch_size=32, weights=None):
    """ Weights from each member's development confusion (unless given),
    scores on `target`, predictions persisted under `out_dir`. Returns a dict
    with the weight matrix, weighted and unweighted scores and file paths.
    """
    if not dev.fully_labeled:
        raise ValueError("The development manifest must be fully labeled")
    models = load_members(checkpoints, spec=spec)

    result = {}
    if weights is None:
        dev_tensor, confusions, members = dev_evaluation(models, dev, batch_size)
        weights = compute_weights(confusions)
        result['member_metrics'] = members
        if len(dev):
            result['dev_scores'] = weighted_scores(dev_tensor, weights, image_ids=dev.ids)
            result['dev_mean_scores'] = mean_scores(dev_tensor)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != len(models):
        raise ModelSpecError("{0} weight rows for {1} ensemble members".format(weights.shape[0], len(models)))

    if len(target):
        target_tensor = np.stack(
            [predict_probabilities(m, target, batch_size=batch_size) for m in models], axis=2)
    else:
        target_tensor = np.zeros((0, N_CLASSES, len(models)))
    scores = weighted_scores(target_tensor, weights, image_ids=target.ids)

    out_dir = Path(out_dir)
    predictions_path, labels_path = write_predictions(scores, target.ids, out_dir)
    logger.info("Ensemble of %d members scored %d images", len(models), len(target))
    result.update({'weights': weights,
                   'scores': scores,
                   'mean_scores': mean_scores(target_tensor),
                   'predictions_path': predictions_path,
                   'labels_path': labels_path,
                   'weights_path': write_weights(weights, out_dir)})
    return result
