""" DenseNet encoder shared by a U-net style segmentation model and a
classification model, plus the small hair classifier.

Layout of the encoder for blocks [l1, ..., lL]:

    stem conv (full resolution)            -> skip 0
    max-pool, dense block 1 (side / 2)      -> skip 1
    transition, dense block 2 (side / 4)    -> skip 2
    ...
    transition, dense block L (side / 2^L)  -> skip L, bottom of the decoder

The decoder upsamples L times, concatenating skip L-1, ..., 1, 0 on the way
up, so it consumes exactly L + 1 skip sources.
"""
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ModelSpecError
from .fields import N_CLASSES

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
KIND_SEG = 'seg'
KIND_CLS = 'cls'
KIND_HAIR = 'hair'


@dataclass(frozen=True)
class EncoderSpec:
    growth_rate: int = 8
    block_layers: Tuple[int, ...] = (2, 2, 2)
    initial_channels: int = 16
    input_side: int = 64
    compression: float = 0.5
    bn_size: int = 4
    head_channels: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'block_layers', tuple(int(n) for n in self.block_layers))
        if len(self.block_layers) < 2:
            raise ModelSpecError("An encoder needs at least 2 dense blocks, got {0}"
                                 .format(list(self.block_layers)))
        if any(n < 1 for n in self.block_layers):
            raise ModelSpecError("Every dense block needs at least one layer")
        if self.growth_rate < 1 or self.initial_channels < 1 or self.bn_size < 1:
            raise ModelSpecError("growth_rate, initial_channels and bn_size must be positive")
        if not 0.0 < self.compression <= 1.0:
            raise ModelSpecError("compression must lie in (0, 1], got {0}".format(self.compression))
        factor = 2 ** len(self.block_layers)
        if self.input_side < factor or self.input_side % factor:
            raise ModelSpecError("input_side {0} is not divisible by 2^{1} = {2}"
                                 .format(self.input_side, len(self.block_layers), factor))

    @classmethod
    def desk(cls, input_side=64):
        return cls(growth_rate=8, block_layers=(2, 2, 2), initial_channels=16, input_side=input_side)

    @classmethod
    def full_scale(cls):
        return cls(growth_rate=32, block_layers=(6, 12, 24, 16), initial_channels=64,
                   input_side=448, compression=0.5, bn_size=4)

    def block_channels(self):
        """ (channels in, channels out) of every dense block. """
        channels = []
        current = self.initial_channels
        for index, layers in enumerate(self.block_layers):
            out = current + self.growth_rate * layers
            channels.append((current, out))
            if index < len(self.block_layers) - 1:
                current = int(out * self.compression)
        return channels

    @property
    def out_channels(self):
        return self.block_channels()[-1][1]

    def to_dict(self):
        data = asdict(self)
        data['block_layers'] = list(self.block_layers)
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


class DenseLayer(nn.Module):
    def __init__(self, in_channels, growth_rate, bn_size):
        super().__init__()
        self.norm1 = nn.BatchNorm2d(in_channels)
        self.conv1 = nn.Conv2d(in_channels, bn_size * growth_rate, 1, bias=False)
        self.norm2 = nn.BatchNorm2d(bn_size * growth_rate)
        self.conv2 = nn.Conv2d(bn_size * growth_rate, growth_rate, 3, padding=1, bias=False)

    def forward(self, x):
        new = self.conv1(F.relu(self.norm1(x)))
        new = self.conv2(F.relu(self.norm2(new)))
        return torch.cat([x, new], dim=1)


class DenseBlock(nn.Sequential):
    def __init__(self, in_channels, n_layers, growth_rate, bn_size):
        super().__init__(*[DenseLayer(in_channels + i * growth_rate, growth_rate, bn_size)
                           for i in range(n_layers)])
        self.out_channels = in_channels + n_layers * growth_rate


class Transition(nn.Sequential):
    def __init__(self, in_channels, out_channels):
        super().__init__(nn.BatchNorm2d(in_channels),
                         nn.ReLU(inplace=True),
                         nn.Conv2d(in_channels, out_channels, 1, bias=False),
                         nn.AvgPool2d(2))


class DenseEncoder(nn.Module):
    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        self.stem = nn.Sequential(nn.Conv2d(3, spec.initial_channels, 3, padding=1, bias=False),
                                  nn.BatchNorm2d(spec.initial_channels),
                                  nn.ReLU(inplace=True))
        self.pool = nn.MaxPool2d(2)
        self.blocks = nn.ModuleList()
        self.transitions = nn.ModuleList()
        channels = spec.block_channels()
        for index, (n_layers, (c_in, c_out)) in enumerate(zip(spec.block_layers, channels)):
            self.blocks.append(DenseBlock(c_in, n_layers, spec.growth_rate, spec.bn_size))
            if index < len(channels) - 1:
                self.transitions.append(Transition(c_out, channels[index + 1][0]))
        self.norm_final = nn.BatchNorm2d(spec.out_channels)

    @property
    def skip_channels(self):
        return [self.spec.initial_channels] + [block.out_channels for block in self.blocks]

    def forward(self, x):
        """ Returns the skip sources: the stem output and the final
        concatenated feature map of every dense block.
        """
        x = self.stem(x)
        skips = [x]
        x = self.pool(x)
        for index, block in enumerate(self.blocks):
            x = block(x)
            skips.append(x)
            if index < len(self.transitions):
                x = self.transitions[index](x)
        return skips

    def bottom(self, skips):
        return F.relu(self.norm_final(skips[-1]))


def _conv_bn_relu(in_channels, out_channels):
    return [nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True)]


class DecoderLevel(nn.Module):
    def __init__(self, in_channels, skip_channels):
        super().__init__()
        self.up = nn.ConvTranspose2d(in_channels, skip_channels, 2, stride=2)
        self.convs = nn.Sequential(*(_conv_bn_relu(2 * skip_channels, skip_channels)
                                     + _conv_bn_relu(skip_channels, skip_channels)))

    def forward(self, x, skip):
        return self.convs(torch.cat([self.up(x), skip], dim=1))


class SegModel(nn.Module):
    kind = KIND_SEG

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        self.encoder = DenseEncoder(spec)
        skip_channels = self.encoder.skip_channels
        levels = []
        in_channels = spec.out_channels
        for channels in reversed(skip_channels[:-1]):
            levels.append(DecoderLevel(in_channels, channels))
            in_channels = channels
        self.decoder = nn.ModuleList(levels)
        self.out = nn.Conv2d(in_channels, 1, 1)

    @property
    def n_skips(self):
        return len(self.encoder.skip_channels)

    def logits(self, x):
        skips = self.encoder(x)
        x = self.encoder.bottom(skips)
        for level, skip in zip(self.decoder, reversed(skips[:-1])):
            x = level(x, skip)
        return self.out(x)

    def forward(self, x):
        return torch.sigmoid(self.logits(x))


class ClsModel(nn.Module):
    kind = KIND_CLS

    def __init__(self, spec, n_classes=N_CLASSES):
        super().__init__()
        self.spec = spec
        self.n_classes = n_classes
        head_channels = spec.head_channels or spec.out_channels
        self.encoder = DenseEncoder(spec)
        self.head = nn.Sequential(*_conv_bn_relu(spec.out_channels, head_channels))
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.classifier = nn.Linear(head_channels, n_classes)

    def logits(self, x):
        if x.shape[0] == 0:
            return x.new_zeros((0, self.n_classes))
        features = self.encoder.bottom(self.encoder(x))
        pooled = self.pool(self.head(features)).flatten(1)
        return self.classifier(pooled)

    def forward(self, x):
        return F.softmax(self.logits(x), dim=1)


class HairNet(nn.Module):
    """ Small conv/pool stack -> global max pooling -> one sigmoid unit. """
    kind = KIND_HAIR

    def __init__(self, input_side=64, channels=(8, 16, 32)):
        super().__init__()
        if len(channels) < 2:
            raise ModelSpecError("HairNet needs at least 2 conv/pool stages")
        self.input_side = input_side
        self.channels = tuple(channels)
        layers = []
        in_channels = 3
        for out_channels in channels:
            layers += _conv_bn_relu(in_channels, out_channels) + [nn.MaxPool2d(2)]
            in_channels = out_channels
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveMaxPool2d(1)
        self.fc = nn.Linear(in_channels, 1)
        self.register_buffer('trained', torch.zeros((), dtype=torch.bool))

    @property
    def is_trained(self):
        return bool(self.trained)

    def mark_trained(self):
        self.trained.fill_(True)

    def config(self):
        return {'input_side': self.input_side, 'channels': list(self.channels)}

    def logits(self, x):
        return self.fc(self.pool(self.features(x)).flatten(1))

    def forward(self, x):
        return torch.sigmoid(self.logits(x))


def _seeded(seed):
    if seed is not None:
        torch.manual_seed(seed)


def build_seg(spec, seed=None):
    _seeded(seed)
    model = SegModel(spec)
    logger.debug("Built segmentation model with %d parameters", parameter_count(model))
    return model


def build_cls(spec, n_classes=N_CLASSES, seed=None):
    _seeded(seed)
    model = ClsModel(spec, n_classes=n_classes)
    logger.debug("Built classification model with %d parameters", parameter_count(model))
    return model


def build_hair(input_side=64, channels=(8, 16, 32), seed=None):
    _seeded(seed)
    return HairNet(input_side=input_side, channels=channels)


def transplant_encoder(seg, spec, n_classes=N_CLASSES, seed=None):
    """ A fresh classification model whose encoder (parameters and batch-norm
    statistics) is copied from `seg`. The head is newly initialized.
    """
    if seg.spec != spec:
        raise ModelSpecError("Segmentation model was built with {0}, transplant requested {1}"
                             .format(seg.spec, spec))
    model = build_cls(spec, n_classes=n_classes, seed=seed)
    model.encoder.load_state_dict(seg.encoder.state_dict())
    return model


def parameter_count(model):
    return sum(p.numel() for p in model.parameters())


def layer_table(model):
    rows = []
    for name, module in model.named_modules():
        if list(module.children()):
            continue
        rows.append({'layer': name,
                     'type': module.__class__.__name__,
                     'parameters': sum(p.numel() for p in module.parameters(recurse=False))})
    return pd.DataFrame(rows, columns=['layer', 'type', 'parameters'])


def to_batch(images):
    """ N x H x W x 3 uint8 rasters -> N x 3 x H x W float tensor in [0, 1]. """
    if len(images) == 0:
        return torch.zeros((0, 3, 0, 0))
    array = np.stack([np.asarray(image, dtype=np.uint8) for image in images])
    return torch.from_numpy(array).permute(0, 3, 1, 2).float().div_(255.0)


def model_config(model):
    if model.kind == KIND_HAIR:
        return model.config()
    data = model.spec.to_dict()
    if model.kind == KIND_CLS:
        data['n_classes'] = model.n_classes
    return data


def save_checkpoint(model, path, metadata=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({'format_version': CHECKPOINT_FORMAT_VERSION,
                'kind': model.kind,
                'config': model_config(model),
                'state_dict': model.state_dict(),
                'metadata': dict(metadata or {})}, path)
    return path


def load_checkpoint(path, kind=None, spec=None):
    payload = torch.load(path, map_location='cpu', weights_only=True)
    version = payload.get('format_version')
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ModelSpecError("Unsupported checkpoint format {0} in {1}".format(version, path))
    if kind is not None and payload['kind'] != kind:
        raise ModelSpecError("Checkpoint {0} holds a {1} model, expected {2}"
                             .format(path, payload['kind'], kind))
    config = dict(payload['config'])
    if payload['kind'] == KIND_HAIR:
        model = HairNet(input_side=config['input_side'], channels=tuple(config['channels']))
    else:
        n_classes = config.pop('n_classes', N_CLASSES)
        stored = EncoderSpec.from_dict(config)
        if spec is not None and stored != spec:
            raise ModelSpecError("Checkpoint {0} was trained with {1}, expected {2}"
                                 .format(path, stored, spec))
        model = SegModel(stored) if payload['kind'] == KIND_SEG else ClsModel(stored, n_classes)
    model.load_state_dict(payload['state_dict'])
    model.eval()
    return model, payload.get('metadata', {})
