import dataclasses
import inspect
import logging

import numpy as np

from . import ensemble
from .augment import expand_manifest
from .config import TARGET_EXTERNAL
from .dataset import (ingest_classification, ingest_segmentation, ingest_unlabeled,
                      load_manifest, save_manifest)
from .exceptions import ManifestError
from .metrics import class_metrics, confusion
from .nets import KIND_CLS, KIND_HAIR, KIND_SEG, build_hair, build_seg, load_checkpoint, \
    save_checkpoint, transplant_encoder
from .preprocess import preprocess_manifest
from .sampler import SplitPlan, balance, split
from .synth import SynthSpec, generate_segmentation, generate_synthetic
from .trainer import evaluate_hair, train_cls, train_hair, train_seg
from .utils import fn_name_to_command, fn_name_to_pretty_label, read_json, write_json

logger = logging.getLogger(__name__)

CLASSIFICATION_MANIFEST = 'data/classification/manifest.json'
SEGMENTATION_MANIFEST = 'data/segmentation/manifest.json'
TARGET_MANIFEST = 'data/target/manifest.json'
PREPROCESSED = 'preprocessed/{0}/manifest.json'
TRAIN_MANIFEST = 'split/train.json'
DEV_MANIFEST = 'split/dev.json'
SPLIT_PLAN = 'split/plan.json'
BALANCED_SET = 'sets/set_{0}.json'
AUGMENTED_SET = 'augmented/set_{0}.json'
HAIR_CHECKPOINT = 'models/hair.pt'
SEG_CHECKPOINT = 'models/seg.pt'
INIT_CHECKPOINT = 'models/cls_{0}_init.pt'
CLS_CHECKPOINT = 'models/cls_{0}.pt'
DEV_PROBABILITIES = 'ensemble/dev_probabilities.npy'
MEMBERS_FILE = 'ensemble/members.json'
ENSEMBLE_DIR = 'ensemble'
EVALUATION_FILE = 'evaluation/metrics.json'


class BaseStages(object):
    """ Classes that hold the stages of a pipeline run by the engine should
    inherit from this.
    """
    @classmethod
    def get_all_stages(cls):
        methods = inspect.getmembers(cls)
        stages = [{'name': m[0],
                   'command': fn_name_to_command(m[0]),
                   'label': m[1].label,
                   'order': m[1].order
                   } for m in methods if getattr(m[1], 'is_pipeline_stage', False)]
        stages.sort(key=lambda s: s['order'])
        orders = [s['order'] for s in stages]
        if len(set(orders)) != len(orders):
            raise AssertionError("Stages of class {0} share an order: {1}"
                                 .format(cls.__name__, orders))
        return stages

    @classmethod
    def stage_names(cls):
        return [s['name'] for s in cls.get_all_stages()]


def pipeline_stage(order, label=None):
    """ Decorator to make a method into a pipeline stage. Stages run by
    ascending `order` and return a dict with `artifacts` (name -> path
    relative to the output root) and optionally `metrics` and `complete`.
    """
    def wrapper(func):
        if not isinstance(order, int):
            raise AssertionError("Stage {0} needs an integer order, got {1!r}"
                                 .format(func.__name__, order))
        func.is_pipeline_stage = True
        func.order = order
        func.label = label or fn_name_to_pretty_label(func.__name__)
        return func
    return wrapper


class PipelineStages(BaseStages):
    """ ingest -> train hair -> preprocess -> split -> sample -> augment ->
    train seg -> transplant -> train cls -> weights -> ensemble -> evaluate.
    Every stage reads its inputs from disk under the output root, so any
    stage can run on its own once its predecessors have.
    """

    def __init__(self, config):
        self.config = config
        self.root = config.output_root

    def path(self, relative):
        return self.root / relative

    def _load(self, relative):
        return load_manifest(self.path(relative))

    @property
    def set_indices(self):
        return list(range(1, self.config.sampler.n_sets + 1))

    @property
    def has_target(self):
        return self.config.ensemble.target == TARGET_EXTERNAL

    @pipeline_stage(order=10)
    def ingest(self):
        config = self.config
        paths, data = config.paths, config.data
        if paths.synthetic:
            classification = generate_synthetic(SynthSpec(
                n_per_class=data.synthetic_per_class, image_size=data.synthetic_image_size,
                hair_fraction=data.synthetic_hair_fraction, seed=config.seed))
            segmentation = generate_segmentation(SynthSpec(
                n_per_class=data.synthetic_segmentation_per_class,
                image_size=data.synthetic_image_size, seed=config.seed + 1))
        else:
            workers = config.runtime.workers
            classification = ingest_classification(paths.data_root, paths.ground_truth,
                                                   seed=config.seed, workers=workers)
            segmentation = ingest_segmentation(paths.segmentation_root or paths.data_root,
                                               mask_dir=paths.mask_root, mask_suffix=data.mask_suffix,
                                               seed=config.seed, workers=workers)
        save_manifest(classification, self.path(CLASSIFICATION_MANIFEST))
        save_manifest(segmentation, self.path(SEGMENTATION_MANIFEST))
        artifacts = {'classification': CLASSIFICATION_MANIFEST, 'segmentation': SEGMENTATION_MANIFEST}
        if self.has_target:
            save_manifest(ingest_unlabeled(paths.target_root, seed=config.seed), self.path(TARGET_MANIFEST))
            artifacts['target'] = TARGET_MANIFEST
        return {'artifacts': artifacts,
                'metrics': {'classification_counts': {l.code: n for l, n in classification.class_counts.items()},
                            'segmentation_pairs': len(segmentation)}}

    @pipeline_stage(order=20)
    def train_hair(self):
        hair = self.config.hair
        if not hair.enabled:
            logger.info("Hair classifier disabled")
            return {'artifacts': {}}
        manifest = self._load(CLASSIFICATION_MANIFEST)
        if any(r.hairy is None for r in manifest.records):
            logger.warning("Classification records carry no hair flags; the hair classifier is not trained")
            return {'artifacts': {}}
        model = build_hair(input_side=hair.input_side, seed=hair.train.seed)
        record = train_hair(model, manifest, hair.train, checkpoint_path=self.path(HAIR_CHECKPOINT),
                            threshold=hair.threshold)
        return {'artifacts': {'checkpoint': HAIR_CHECKPOINT},
                'metrics': {'final_loss': record.losses[-1] if record.epochs else None,
                            'train_accuracy': evaluate_hair(model, manifest, threshold=hair.threshold)}}

    @pipeline_stage(order=30)
    def preprocess(self):
        hair = self.config.hair
        hair_model = None
        if hair.enabled and self.path(HAIR_CHECKPOINT).exists():
            hair_model, _ = load_checkpoint(self.path(HAIR_CHECKPOINT), kind=KIND_HAIR)
        sources = [('classification', CLASSIFICATION_MANIFEST), ('segmentation', SEGMENTATION_MANIFEST)]
        if self.has_target:
            sources.append(('target', TARGET_MANIFEST))
        artifacts, removed = {}, {}
        for name, relative in sources:
            out = PREPROCESSED.format(name)
            manifest, verdicts = preprocess_manifest(
                self._load(relative), self.path(out).parent, self.config.side,
                hair_model=hair_model, force_hair_removal=hair.force_removal,
                threshold=hair.threshold, radius=hair.radius, workers=self.config.runtime.workers)
            artifacts[name] = out
            removed[name] = sum(1 for v in verdicts if v.hairy)
        return {'artifacts': artifacts, 'metrics': {'hairy': removed}}

    @pipeline_stage(order=40)
    def split(self):
        manifest = self._load(PREPROCESSED.format('classification'))
        train, dev = split(manifest, self.config.seed, self.config.data.dev_fraction)
        save_manifest(train, self.path(TRAIN_MANIFEST))
        save_manifest(dev, self.path(DEV_MANIFEST))
        plan = SplitPlan.from_manifests(train, dev, self.config.seed)
        write_json(self.path(SPLIT_PLAN), plan.to_dict())
        return {'artifacts': {'train': TRAIN_MANIFEST, 'dev': DEV_MANIFEST, 'plan': SPLIT_PLAN},
                'metrics': plan.to_dict()}

    @pipeline_stage(order=50)
    def sample(self):
        sampler = self.config.sampler
        sets = balance(self._load(TRAIN_MANIFEST), sampler.anchor, sampler.n_sets, self.config.seed)
        artifacts = {}
        for balanced in sets:
            relative = BALANCED_SET.format(balanced.index)
            save_manifest(balanced.records, self.path(relative))
            artifacts['set_{0}'.format(balanced.index)] = relative
        return {'artifacts': artifacts,
                'metrics': {'cap': sets[0].cap,
                            'counts': {l.code: n for l, n in sets[0].class_counts.items()}}}

    @pipeline_stage(order=60)
    def augment(self):
        artifacts, sizes = {}, {}
        for index in self.set_indices:
            relative = AUGMENTED_SET.format(index)
            expanded = expand_manifest(self._load(BALANCED_SET.format(index)))
            save_manifest(expanded, self.path(relative))
            artifacts['set_{0}'.format(index)] = relative
            sizes['set_{0}'.format(index)] = len(expanded)
        return {'artifacts': artifacts, 'metrics': {'sizes': sizes}}

    @pipeline_stage(order=70)
    def train_seg(self):
        config = self.config
        model = build_seg(config.encoder, seed=config.seg.seed)
        record = train_seg(model, self._load(PREPROCESSED.format('segmentation')), config.seg,
                           checkpoint_path=self.path(SEG_CHECKPOINT))
        return {'artifacts': {'checkpoint': SEG_CHECKPOINT},
                'metrics': {'final_loss': record.losses[-1] if record.epochs else None}}

    @pipeline_stage(order=80)
    def transplant(self):
        seg, _ = load_checkpoint(self.path(SEG_CHECKPOINT), kind=KIND_SEG, spec=self.config.encoder)
        artifacts = {}
        for index in self.set_indices:
            model = transplant_encoder(seg, self.config.encoder, seed=self.config.cls.seed + index)
            relative = INIT_CHECKPOINT.format(index)
            save_checkpoint(model, self.path(relative), metadata={'set_index': index})
            artifacts['init_{0}'.format(index)] = relative
        return {'artifacts': artifacts}

    @pipeline_stage(order=90)
    def train_cls(self, set_index=None):
        """ Fine-tunes every member, or only `set_index`. The stage is complete
        once every member has a checkpoint.
        """
        indices = self.set_indices if set_index is None else [set_index]
        if any(i not in self.set_indices for i in indices):
            raise ValueError("set_index must lie in 1..{0}, got {1}".format(self.config.sampler.n_sets, set_index))
        dev = self._load(DEV_MANIFEST)
        metrics = {}
        for index in indices:
            model, _ = load_checkpoint(self.path(INIT_CHECKPOINT.format(index)), kind=KIND_CLS,
                                       spec=self.config.encoder)
            train = self._load(AUGMENTED_SET.format(index))
            config = dataclasses.replace(self.config.cls, seed=self.config.cls.seed + index)
            record = train_cls(model, train, dev, config,
                               checkpoint_path=self.path(CLS_CHECKPOINT.format(index)))
            last = record.epochs[-1] if record.epochs else None
            metrics['member_{0}'.format(index)] = last.dev_metric if last else None
        artifacts = {'member_{0}'.format(i): CLS_CHECKPOINT.format(i) for i in self.set_indices
                     if self.path(CLS_CHECKPOINT.format(i)).exists()}
        return {'artifacts': artifacts,
                'metrics': metrics,
                'complete': len(artifacts) == len(self.set_indices)}

    def member_checkpoints(self):
        return [self.path(CLS_CHECKPOINT.format(i)) for i in self.set_indices]

    @pipeline_stage(order=100)
    def weights(self):
        models = ensemble.load_members(self.member_checkpoints(), spec=self.config.encoder)
        dev = self._load(DEV_MANIFEST)
        probabilities, confusions, members = ensemble.dev_evaluation(
            models, dev, self.config.ensemble.batch_size)
        weights = ensemble.compute_weights(confusions)
        self.path(DEV_PROBABILITIES).parent.mkdir(parents=True, exist_ok=True)
        np.save(self.path(DEV_PROBABILITIES), probabilities)
        weights_path = ensemble.write_weights(weights, self.path(ENSEMBLE_DIR))
        write_json(self.path(MEMBERS_FILE), {
            'confusions': [cm.counts.tolist() for cm in confusions],
            'metrics': [m.to_dict() if m is not None else None for m in members]})
        return {'artifacts': {'weights': str(weights_path.relative_to(self.root)),
                              'dev_probabilities': DEV_PROBABILITIES,
                              'members': MEMBERS_FILE},
                'metrics': {'member_balanced_accuracy':
                            [m.balanced_accuracy if m is not None else None for m in members]}}

    @pipeline_stage(order=110)
    def ensemble(self):
        dev = self._load(DEV_MANIFEST)
        target = self._load(PREPROCESSED.format('target')) if self.has_target else dev
        weights = ensemble.read_weights(self.path(ENSEMBLE_DIR) / ensemble.WEIGHTS_FILE)
        result = ensemble.run_ensemble(self.member_checkpoints(), dev, target, self.path(ENSEMBLE_DIR),
                                       spec=self.config.encoder, weights=weights,
                                       batch_size=self.config.ensemble.batch_size)
        return {'artifacts': {'predictions': str(result['predictions_path'].relative_to(self.root)),
                              'labels': str(result['labels_path'].relative_to(self.root))},
                'metrics': {'scored': len(target)}}

    @pipeline_stage(order=120)
    def evaluate(self):
        """ Development-set metrics of every member and of the weighted and
        unweighted combinations.
        """
        dev = self._load(DEV_MANIFEST)
        probabilities = np.load(self.path(DEV_PROBABILITIES))
        weights = ensemble.read_weights(self.path(ENSEMBLE_DIR) / ensemble.WEIGHTS_FILE)
        members = read_json(self.path(MEMBERS_FILE))
        truth = [int(r.label) for r in dev.records]

        if not len(dev):
            raise ManifestError("The development set is empty; nothing to evaluate")

        def summarize(scores):
            cm = confusion(truth, [int(p) for p in ensemble.predict(scores)])
            return {'confusion': cm.counts.tolist(), 'metrics': class_metrics(cm).to_dict()}

        evaluation = {'members': [{'confusion': c, 'metrics': m}
                                  for c, m in zip(members['confusions'], members['metrics'])],
                      'weighted': summarize(ensemble.weighted_scores(probabilities, weights, image_ids=dev.ids)),
                      'unweighted': summarize(ensemble.mean_scores(probabilities))}
        write_json(self.path(EVALUATION_FILE), evaluation)
        weighted = evaluation['weighted']['metrics']
        logger.info("Ensemble dev balanced accuracy %.4f (unweighted %.4f)",
                    weighted['balanced_accuracy'], evaluation['unweighted']['metrics']['balanced_accuracy'])
        return {'artifacts': {'evaluation': EVALUATION_FILE},
                'metrics': {'ensemble_balanced_accuracy': weighted['balanced_accuracy'],
                            'ensemble_accuracy': weighted['accuracy'],
                            'unweighted_balanced_accuracy':
                                evaluation['unweighted']['metrics']['balanced_accuracy']}}

    @pipeline_stage(order=130)
    def report(self):
        from .engine import write_report
        paths = write_report(self.root)
        return {'artifacts': {name: str(p.relative_to(self.root)) for name, p in paths.items()}}
