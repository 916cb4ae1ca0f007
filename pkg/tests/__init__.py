import shutil
import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np

assert TestCase


class TempDirMixin(object):
    """ Gives each test a fresh directory in `self.tmp`. """

    def setUp(self):
        super(TempDirMixin, self).setUp()
        self.tmp = Path(tempfile.mkdtemp(prefix='lesion_ensemble_'))
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)


def random_image(rng, side, height=None):
    return rng.integers(0, 256, size=(height or side, side, 3), dtype=np.uint8)
