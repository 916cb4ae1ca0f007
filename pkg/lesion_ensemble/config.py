""" Pipeline configuration: a tree of frozen dataclasses loaded from YAML.

Every section accepts a subset of its keys; the rest take defaults that
reproduce the published schedule. Unknown keys are rejected.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .exceptions import ConfigError, ModelSpecError
from .fields import DEFAULT_MASK_SUFFIX, ClassLabel
from .nets import EncoderSpec
from .trainer import TrainConfig
from .utils import stable_hash

logger = logging.getLogger(__name__)

TARGET_DEV = 'dev'
TARGET_EXTERNAL = 'external'

# excluded from the config hash: they change where and how fast, never what
UNHASHED_FIELDS = (('paths', 'output_root'), ('runtime',))


@dataclass(frozen=True)
class PathsConfig:
    output_root: str = 'runs/default'
    data_root: Optional[str] = None
    ground_truth: Optional[str] = None
    segmentation_root: Optional[str] = None
    mask_root: Optional[str] = None
    target_root: Optional[str] = None

    @property
    def synthetic(self):
        return self.data_root is None


@dataclass(frozen=True)
class DataConfig:
    dev_fraction: str = '0.1'
    mask_suffix: str = DEFAULT_MASK_SUFFIX
    synthetic_per_class: int = 70
    synthetic_image_size: int = 96
    synthetic_hair_fraction: float = 0.5
    synthetic_segmentation_per_class: int = 5


@dataclass(frozen=True)
class HairConfig:
    enabled: bool = True
    input_side: int = 64
    threshold: float = 0.5
    radius: Optional[int] = None
    force_removal: bool = False
    train: TrainConfig = field(default_factory=TrainConfig.hair)


@dataclass(frozen=True)
class SamplerConfig:
    anchor: str = 'BCC'
    n_sets: int = 4


@dataclass(frozen=True)
class EnsembleConfig:
    target: str = TARGET_DEV
    batch_size: int = 32


@dataclass(frozen=True)
class RuntimeConfig:
    log_level: str = 'INFO'
    workers: int = 1
    deterministic: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    hair: HairConfig = field(default_factory=HairConfig)
    encoder: EncoderSpec = field(default_factory=EncoderSpec.full_scale)
    seg: TrainConfig = field(default_factory=TrainConfig.segmentation)
    cls: TrainConfig = field(default_factory=TrainConfig.classification)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)

    def __post_init__(self):
        try:
            ClassLabel.from_code(self.sampler.anchor)
        except ValueError as e:
            raise ConfigError(str(e))
        if self.sampler.n_sets < 1:
            raise ConfigError("sampler.n_sets must be at least 1, got {0}".format(self.sampler.n_sets))
        if self.ensemble.target not in (TARGET_DEV, TARGET_EXTERNAL):
            raise ConfigError("ensemble.target must be '{0}' or '{1}', got {2}"
                              .format(TARGET_DEV, TARGET_EXTERNAL, self.ensemble.target))
        if self.ensemble.target == TARGET_EXTERNAL and self.paths.target_root is None:
            raise ConfigError("ensemble.target 'external' needs paths.target_root")
        if not self.paths.synthetic and self.paths.ground_truth is None:
            raise ConfigError("paths.data_root is set but paths.ground_truth is missing")

    @property
    def side(self):
        return self.encoder.input_side

    @property
    def output_root(self):
        return Path(self.paths.output_root)

    def to_dict(self):
        data = dataclasses.asdict(self)
        data['encoder'] = self.encoder.to_dict()
        return data

    @classmethod
    def from_dict(cls, data):
        return _build(cls, data or {}, '')

    def config_hash(self):
        data = self.to_dict()
        for path in UNHASHED_FIELDS:
            section = data
            for key in path[:-1]:
                section = section[key]
            section.pop(path[-1], None)
        return stable_hash(data)

    def with_overrides(self, seed=None, output_root=None, log_level=None, workers=None):
        config = self
        if seed is not None:
            config = dataclasses.replace(
                config, seed=seed,
                seg=dataclasses.replace(config.seg, seed=seed),
                cls=dataclasses.replace(config.cls, seed=seed),
                hair=dataclasses.replace(config.hair, train=dataclasses.replace(config.hair.train, seed=seed)))
        if output_root is not None:
            config = dataclasses.replace(config, paths=dataclasses.replace(config.paths, output_root=str(output_root)))
        runtime = {k: v for k, v in (('log_level', log_level), ('workers', workers)) if v is not None}
        if runtime:
            config = dataclasses.replace(config, runtime=dataclasses.replace(config.runtime, **runtime))
        return config


def desk_config(output_root='runs/desk', seed=0, **sections):
    """ Small CPU-sized settings on the synthetic corpus. """
    defaults = {
        'paths': {'output_root': str(output_root)},
        'seed': seed,
        'encoder': EncoderSpec.desk(input_side=64).to_dict(),
        'seg': {'epochs': 20, 'lr0': 0.05, 'momentum': 0.9, 'batch_size': 8, 'loss': 'bce_dice', 'seed': seed},
        'cls': {'epochs': 10, 'lr0': 0.05, 'momentum': 0.9, 'batch_size': 16, 'seed': seed},
        'hair': {'input_side': 64, 'train': {'epochs': 15, 'lr0': 0.05, 'momentum': 0.9,
                                             'batch_size': 16, 'loss': 'bce', 'seed': seed}},
    }
    defaults.update(sections)
    return PipelineConfig.from_dict(defaults)


def load_config(path):
    path = Path(path)
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError("Config file {0} does not exist".format(path))
    except yaml.YAMLError as e:
        raise ConfigError("Config file {0} is not valid YAML: {1}".format(path, e))
    if data is not None and not isinstance(data, dict):
        raise ConfigError("Config file {0} must hold a mapping at the top level".format(path))
    config = PipelineConfig.from_dict(data)
    logger.debug("Loaded config %s (hash %s)", path, config.config_hash()[:12])
    return config


def save_config(config, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=True, default_flow_style=False)
    return path


def _build(cls, data, prefix, base=None):
    """ Builds `cls` from a mapping. Nested sections start from the parent's
    default for that field, so a partial `seg:` section keeps the
    segmentation preset for every key it leaves out.
    """
    if not isinstance(data, dict):
        raise ConfigError("Section {0} must be a mapping, got {1!r}".format(prefix or '<root>', data))
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError("Unknown config key {0}{1}".format(prefix, unknown[0]))
    kwargs = {name: getattr(base, name) for name in known} if base is not None else {}
    for name, value in data.items():
        default = _field_default(known[name])
        if dataclasses.is_dataclass(default) and value is not None:
            value = _build(type(default), value, prefix + name + '.', base=default)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ModelSpecError, ValueError, TypeError) as e:
        raise ConfigError("Invalid {0}: {1}".format(prefix.rstrip('.') or 'config', e))


def _field_default(f):
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    if f.default is not dataclasses.MISSING:
        return f.default
    return None
