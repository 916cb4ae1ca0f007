""" Command line entry point: `lesion-ensemble <command> [options]`.

Every pipeline stage is a subcommand operating on the run directory of the
configuration; `run-all` executes them in order and resumes where the run
manifest says it stopped.
"""
import argparse
import dataclasses
import logging
import sys

from . import __version__, engine
from .augment import expand_manifest
from .config import PipelineConfig, load_config
from .dataset import load_manifest, save_manifest
from .exceptions import LesionEnsembleError
from .fields import STAGE_HAIR_REMOVED
from .metrics import evaluate_predictions
from .nets import KIND_HAIR, layer_table, load_checkpoint, parameter_count
from .preprocess import preprocess_manifest
from .sampler import SplitPlan, balance, split
from .stages import PipelineStages
from .synth import SynthSpec, generate_segmentation, generate_synthetic
from .utils import write_json

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

# stages that also work on a single manifest given with --manifest
MANIFEST_COMMANDS = ('preprocess', 'sample', 'augment', 'evaluate')


def configure_logging(level):
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger('lesion_ensemble')
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))


def _common(parser):
    parser.add_argument('--config', help='YAML pipeline configuration')
    parser.add_argument('--seed', type=int, help='override the configured seed')
    parser.add_argument('--out', help='run directory (overrides paths.output_root)')
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR')
    parser.add_argument('--force', action='store_true', help='run even if the stage is done')


def build_parser():
    parser = argparse.ArgumentParser(prog='lesion-ensemble',
                                     description='Skin lesion segmentation-pretrained ensemble pipeline')
    parser.add_argument('--version', action='version', version=__version__)
    commands = parser.add_subparsers(dest='command', required=True)

    synth = commands.add_parser('synth', help='generate a synthetic corpus')
    synth.add_argument('--per-class', type=int, default=70)
    synth.add_argument('--image-size', type=int, default=96)
    synth.add_argument('--hair-fraction', type=float, default=0.5)
    synth.add_argument('--segmentation', action='store_true', help='emit an unlabeled mask corpus')
    synth.add_argument('--seed', type=int, default=0)
    synth.add_argument('--out', required=True)
    synth.add_argument('--log-level', default=None)

    for stage in PipelineStages.get_all_stages():
        sub = commands.add_parser(stage['command'], help=stage['label'].lower())
        _common(sub)
        if stage['name'] == 'train_cls':
            sub.add_argument('--set-index', type=int, help='train only this balanced set (1-based)')
        if stage['name'] in MANIFEST_COMMANDS:
            sub.add_argument('--manifest', help='manifest to work on directly instead of the run directory')
        if stage['name'] == 'preprocess':
            sub.add_argument('--side', type=int, help='output side (default: encoder input side)')
            sub.add_argument('--hair-model', help='hair classifier checkpoint for --manifest')
            sub.add_argument('--force-hair-removal', action='store_true',
                             help='remove hair from every image')
        if stage['name'] == 'sample':
            sub.add_argument('--anchor', help='class code whose size caps the others')
            sub.add_argument('--sets', type=int, help='number of balanced sets')
        if stage['name'] == 'evaluate':
            sub.add_argument('--predictions', help='score a predictions CSV instead of the run')

    run_all = commands.add_parser('run-all', help='run every stage in order')
    _common(run_all)

    inspect = commands.add_parser('inspect-model', help='print the layers of a checkpoint')
    inspect.add_argument('checkpoint')
    inspect.add_argument('--log-level', default=None)
    return parser


def resolve_config(args):
    config = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, 'force_hair_removal', False):
        config = dataclasses.replace(config, hair=dataclasses.replace(config.hair, force_removal=True))
    return config.with_overrides(seed=args.seed, output_root=args.out, log_level=args.log_level)


def cmd_synth(args):
    spec = SynthSpec(n_per_class=args.per_class, image_size=args.image_size,
                     hair_fraction=0.0 if args.segmentation else args.hair_fraction, seed=args.seed)
    manifest = generate_segmentation(spec) if args.segmentation else generate_synthetic(spec)
    path = save_manifest(manifest, '{0}/manifest.json'.format(args.out.rstrip('/')))
    print('{0} records written to {1}'.format(len(manifest), args.out))
    return path


def cmd_inspect_model(args):
    model, metadata = load_checkpoint(args.checkpoint)
    table = layer_table(model)
    print(table.to_string(index=False))
    print('kind: {0}  parameters: {1:,}'.format(model.kind, parameter_count(model)))
    if metadata:
        print('metadata: {0}'.format(metadata))


def cmd_evaluate(args, config):
    if args.predictions:
        if not args.manifest:
            raise LesionEnsembleError("--predictions needs --manifest")
        cm, metrics = evaluate_predictions(args.predictions, load_manifest(args.manifest))
        print(cm.to_frame().to_string())
        print('balanced accuracy {0:.4f}  accuracy {1:.4f}'.format(metrics.balanced_accuracy, metrics.accuracy))
        return
    manifest = engine.run_stage(config, 'evaluate', force=args.force)
    summary = manifest.stages['evaluate'].metrics
    print('ensemble dev balanced accuracy {0:.4f}'.format(summary['ensemble_balanced_accuracy']))


def cmd_preprocess(args, config):
    hair_model = None
    if args.hair_model:
        hair_model, _ = load_checkpoint(args.hair_model, kind=KIND_HAIR)
    hair = config.hair
    processed, _ = preprocess_manifest(
        load_manifest(args.manifest), config.output_root, args.side or config.side, hair_model=hair_model,
        force_hair_removal=hair.force_removal, threshold=hair.threshold,
        radius=hair.radius, workers=config.runtime.workers)
    removed = sum(1 for r in processed.records if r.stage == STAGE_HAIR_REMOVED)
    print('{0} images written to {1}, {2} with hair removed'.format(len(processed), config.output_root, removed))


def cmd_sample(args, config):
    out = config.output_root
    train, dev = split(load_manifest(args.manifest), config.seed, config.data.dev_fraction)
    save_manifest(train, out / 'train.json')
    save_manifest(dev, out / 'dev.json')
    write_json(out / 'plan.json', SplitPlan.from_manifests(train, dev, config.seed).to_dict())
    sets = balance(train, args.anchor or config.sampler.anchor, args.sets or config.sampler.n_sets, config.seed)
    for balanced in sets:
        save_manifest(balanced.records, out / 'set_{0}.json'.format(balanced.index))
    print('{0} balanced sets of {1} images, {2} dev images, written to {3}'.format(
        len(sets), len(sets[0].records), len(dev), out))


def cmd_augment(args, config):
    expanded = expand_manifest(load_manifest(args.manifest))
    path = save_manifest(expanded, config.output_root / 'manifest.json')
    print('{0} records written to {1}'.format(len(expanded), path))


def cmd_report(args, config):
    paths = engine.report(engine.RunManifest.load(config.output_root))
    print(paths['report'].read_text())


STANDALONE = {'preprocess': cmd_preprocess, 'sample': cmd_sample, 'augment': cmd_augment}


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(getattr(args, 'log_level', None) or 'INFO')
    try:
        if args.command == 'synth':
            cmd_synth(args)
        elif args.command == 'inspect-model':
            cmd_inspect_model(args)
        else:
            config = resolve_config(args)
            configure_logging(config.runtime.log_level)
            if args.command == 'run-all':
                manifest = engine.run_all(config, force=args.force)
                print('run complete: {0}'.format(manifest.path))
            elif args.command == 'evaluate':
                cmd_evaluate(args, config)
            elif args.command == 'report':
                cmd_report(args, config)
            elif getattr(args, 'manifest', None) and args.command in STANDALONE:
                STANDALONE[args.command](args, config)
            else:
                options = {}
                if getattr(args, 'set_index', None) is not None:
                    options['set_index'] = args.set_index
                engine.run_stage(config, args.command, force=args.force, **options)
    except LesionEnsembleError as e:
        logger.error("%s", e)
        return 1
    except (OSError, ValueError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
