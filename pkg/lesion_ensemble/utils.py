import hashlib
import json
import logging
import random
from decimal import Decimal, ROUND_HALF_EVEN
from pathlib import Path

import numpy as np
import torch
from PIL import Image

logger = logging.getLogger(__name__)


def fn_name_to_pretty_label(name):
    return ' '.join([w.title() for w in name.split('_')])


def fn_name_to_command(name):
    return name.replace('_', '-')


def round_half_even(count, fraction):
    """ Returns round-half-to-even(count * fraction) computed exactly.
    `fraction` may be a string, int or Decimal; floats are converted through
    their repr so that 0.1 means one tenth.
    """
    if isinstance(fraction, float):
        fraction = repr(fraction)
    product = Decimal(count) * Decimal(fraction)
    return int(product.quantize(Decimal(1), rounding=ROUND_HALF_EVEN))


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(',', ':'), default=str)


def stable_hash(data):
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


def seed_everything(seed, deterministic=True):
    """ Seeds python, numpy and torch. In deterministic mode torch is also
    restricted to one thread and deterministic kernels.
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True, warn_only=True)


def derive_rng(*seeds):
    return np.random.default_rng([int(s) % (2 ** 63) for s in seeds])


def read_image(path):
    with Image.open(path) as img:
        return np.asarray(img.convert('RGB'), dtype=np.uint8).copy()


def read_mask(path):
    """ Reads a mask image and binarizes it at half of the channel maximum. """
    with Image.open(path) as img:
        gray = np.asarray(img.convert('L'), dtype=np.uint8)
    return gray >= 128


def write_image(path, pixels):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(path)


def write_mask(path, mask):
    write_image(path, np.where(mask, 255, 0).astype(np.uint8))


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True, default=str)
        f.write('\n')


def read_json(path):
    with open(path) as f:
        return json.load(f)
