import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd

from .config import save_config
from .exceptions import IncompleteRunError, StageFailedError
from .fields import CLASS_CODES
from .metrics import ConfusionMatrix, render_heatmap
from .stages import EVALUATION_FILE, PipelineStages
from .utils import read_json, seed_everything, write_json

logger = logging.getLogger(__name__)

RUN_MANIFEST = 'run_manifest.json'
RUN_MANIFEST_FORMAT_VERSION = 1
REPORT_DIR = 'report'

# full-scale published result: dev balanced accuracy, validation and test accuracy
REFERENCE_ROW = {'dev_balanced_accuracy_mean': 0.836,
                 'dev_balanced_accuracy_std': 0.015,
                 'validation_accuracy': 0.899,
                 'test_accuracy': 0.785}


@dataclass
class StageStatus:
    done: bool = False
    failed: bool = False
    error: Optional[str] = None
    artifacts: Dict[str, str] = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0


@dataclass
class RunManifest:
    config_hash: str
    root: Path
    stages: Dict[str, StageStatus] = field(default_factory=dict)

    @property
    def path(self):
        return Path(self.root) / RUN_MANIFEST

    def status(self, name):
        return self.stages.setdefault(name, StageStatus())

    def missing_artifacts(self, name):
        status = self.stages.get(name)
        if status is None:
            return []
        return [p for p in status.artifacts.values() if not (Path(self.root) / p).exists()]

    def needs_run(self, name):
        """ A stage runs again when it never finished or one of its
        artifacts is gone.
        """
        status = self.stages.get(name)
        return status is None or not status.done or bool(self.missing_artifacts(name))

    @property
    def failed_stage(self):
        for name, status in self.stages.items():
            if status.failed:
                return name
        return None

    @property
    def complete(self):
        return all(self.stages.get(name, StageStatus()).done for name in PipelineStages.stage_names())

    @property
    def metrics(self):
        return {name: status.metrics for name, status in self.stages.items() if status.metrics}

    def to_dict(self):
        return {'format_version': RUN_MANIFEST_FORMAT_VERSION,
                'config_hash': self.config_hash,
                'stages': {name: asdict(status) for name, status in self.stages.items()}}

    def save(self):
        write_json(self.path, self.to_dict())
        return self.path

    @classmethod
    def load(cls, root):
        root = Path(root)
        data = read_json(root / RUN_MANIFEST)
        if data.get('format_version') != RUN_MANIFEST_FORMAT_VERSION:
            raise IncompleteRunError("Unsupported run manifest format {0} in {1}"
                                     .format(data.get('format_version'), root))
        return cls(config_hash=data['config_hash'], root=root,
                   stages={name: StageStatus(**status) for name, status in data['stages'].items()})


def open_run(config):
    """ Loads the run manifest under the output root, or starts a new one.
    A manifest written under a different config hash is discarded.
    """
    root = config.output_root
    config_hash = config.config_hash()
    manifest = None
    if (root / RUN_MANIFEST).exists():
        manifest = RunManifest.load(root)
        if manifest.config_hash != config_hash:
            logger.warning("Config changed since the last run in %s; every stage runs again", root)
            manifest = None
    if manifest is None:
        manifest = RunManifest(config_hash=config_hash, root=root)
    save_config(config, root / 'config.yaml')
    return manifest


def run_all(config, force=False, stages_class=PipelineStages):
    seed_everything(config.seed, deterministic=config.runtime.deterministic)
    pipeline = stages_class(config)
    manifest = open_run(config)
    for stage in pipeline.get_all_stages():
        run(stage, pipeline, manifest, force=force)
    logger.info("Run in %s complete", config.output_root)
    return manifest


def run_stage(config, name, force=False, stages_class=PipelineStages, **options):
    """ Runs the single stage `name` (function or command spelling). """
    pipeline = stages_class(config)
    stages = {s['name']: s for s in pipeline.get_all_stages()}
    stage = stages.get(name.replace('-', '_'))
    if stage is None:
        raise AssertionError("Stage {0} is not defined in class {1}"
                             .format(name, stages_class.__name__))
    manifest = open_run(config)
    run(stage, pipeline, manifest, force=True if options else force, options=options)
    return manifest


def run(stage, pipeline, manifest, force=False, options=None):
    """ Runs one stage unless the manifest says it is done. Failures are
    recorded in the manifest before StageFailedError is raised.
    """
    name = stage['name']
    if not force and not manifest.needs_run(name):
        logger.info("Skipping %s: already done", stage['label'])
        return False

    config = pipeline.config
    seed_everything(config.seed + stage['order'], deterministic=config.runtime.deterministic)
    method = getattr(pipeline, name)
    logger.info("Running %s", stage['label'])
    started = time.perf_counter()
    try:
        result = method(**(options or {})) or {}
        status = StageStatus(done=result.get('complete', True),
                             artifacts=dict(result.get('artifacts', {})),
                             metrics=dict(result.get('metrics', {})),
                             seconds=time.perf_counter() - started)
        manifest.stages[name] = status
        missing = manifest.missing_artifacts(name)
        if missing:
            raise IncompleteRunError("Stage {0} did not write {1}".format(name, ', '.join(missing)))
    except Exception as e:
        manifest.stages[name] = StageStatus(failed=True, error='{0}: {1}'.format(type(e).__name__, e),
                                            seconds=time.perf_counter() - started)
        manifest.save()
        logger.error("%s failed: %s", stage['label'], e)
        raise StageFailedError(name, e) from e

    manifest.save()
    logger.info("%s finished in %.1fs", stage['label'], status.seconds)
    return True


def summarize_scores(values):
    """ (mean, sample standard deviation); the deviation of one value is 0. """
    values = [float(v) for v in values]
    if not values:
        raise ValueError("No scores to summarize")
    if len(values) == 1:
        return values[0], 0.0
    return float(np.mean(values)), float(np.std(values, ddof=1))


def report(manifest):
    status = manifest.stages.get('evaluate')
    if status is None or not status.done:
        raise IncompleteRunError("The evaluate stage of {0} has not completed".format(manifest.root))
    return write_report(manifest.root)


def write_report(root):
    """ Writes the text report, its CSV tables and normalized confusion
    heatmaps under `<root>/report`. Returns name -> path.
    """
    root = Path(root)
    evaluation = read_json(root / EVALUATION_FILE)
    out = root / REPORT_DIR
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    rows, tpr_rows = [], []
    for k, member in enumerate(evaluation['members'], 1):
        metrics = member['metrics']
        rows.append({'model': 'member_{0}'.format(k),
                     'balanced_accuracy': metrics['balanced_accuracy'] if metrics else np.nan,
                     'accuracy': metrics['accuracy'] if metrics else np.nan})
        if metrics:
            tpr_rows.append(dict(model='member_{0}'.format(k), **metrics['tpr']))
        paths['heatmap_member_{0}'.format(k)] = render_heatmap(
            ConfusionMatrix(np.array(member['confusion'])), out / 'heatmap_member_{0}.png'.format(k),
            title='Member {0}'.format(k))
    for name in ('weighted', 'unweighted'):
        metrics = evaluation[name]['metrics']
        rows.append({'model': 'ensemble_{0}'.format(name),
                     'balanced_accuracy': metrics['balanced_accuracy'],
                     'accuracy': metrics['accuracy']})
        tpr_rows.append(dict(model='ensemble_{0}'.format(name), **metrics['tpr']))
        paths['heatmap_{0}'.format(name)] = render_heatmap(
            ConfusionMatrix(np.array(evaluation[name]['confusion'])), out / 'heatmap_{0}.png'.format(name),
            title='Ensemble ({0})'.format(name))

    models = pd.DataFrame(rows, columns=['model', 'balanced_accuracy', 'accuracy'])
    tpr = pd.DataFrame(tpr_rows, columns=['model'] + CLASS_CODES)
    member_scores = models[models['model'].str.startswith('member_')]['balanced_accuracy'].dropna()
    mean, std = summarize_scores(member_scores.tolist())

    paths['models'] = out / 'models.csv'
    models.to_csv(paths['models'], index=False)
    paths['tpr'] = out / 'tpr.csv'
    tpr.to_csv(paths['tpr'], index=False)
    summary = {'member_balanced_accuracy_mean': mean,
               'member_balanced_accuracy_std': std,
               'n_members': int(len(member_scores)),
               'ensemble_weighted': evaluation['weighted']['metrics']['balanced_accuracy'],
               'ensemble_unweighted': evaluation['unweighted']['metrics']['balanced_accuracy'],
               'reference': REFERENCE_ROW}
    paths['summary'] = out / 'summary.json'
    write_json(paths['summary'], summary)

    lines = ['Development set',
             '',
             models.to_string(index=False, float_format='{0:.4f}'.format),
             '',
             'Members: balanced accuracy {0:.3f} +/- {1:.3f} over {2} models'.format(mean, std, len(member_scores)),
             '',
             'True positive rate per class',
             '',
             tpr.to_string(index=False, float_format='{0:.3f}'.format),
             '',
             'Reference (full-scale training): dev {0:.3f} +/- {1:.3f}, validation {2:.3f}, test {3:.3f}'.format(
                 REFERENCE_ROW['dev_balanced_accuracy_mean'], REFERENCE_ROW['dev_balanced_accuracy_std'],
                 REFERENCE_ROW['validation_accuracy'], REFERENCE_ROW['test_accuracy']),
             '']
    paths['report'] = out / 'report.txt'
    paths['report'].write_text('\n'.join(lines))
    logger.info("Report written to %s", paths['report'])
    return paths
