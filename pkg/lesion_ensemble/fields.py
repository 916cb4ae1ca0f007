from enum import IntEnum


STAGE_RAW = 'raw'
STAGE_PADDED = 'padded'
STAGE_RESIZED = 'resized'
STAGE_HAIR_REMOVED = 'hair-removed'

KIND_CLASSIFICATION = 'classification'
KIND_SEGMENTATION = 'segmentation'
KIND_SYNTHETIC = 'synthetic'
KIND_UNLABELED = 'unlabeled'

LOSS_BCE_DICE = 'bce_dice'
LOSS_CROSS_ENTROPY = 'cross_entropy'
LOSS_BCE = 'bce'

DEFAULT_MASK_SUFFIX = '_segmentation'


class ClassLabel(IntEnum):
    """ The seven diagnosis classes. The integer value is the axis index used
    by every probability, weight and confusion tensor.
    """
    MEL = 0
    NV = 1
    BCC = 2
    AKIEC = 3
    BKL = 4
    DF = 5
    VASC = 6

    @property
    def code(self):
        return self.name

    @classmethod
    def from_code(cls, code):
        try:
            return cls[str(code).upper()]
        except KeyError:
            raise ValueError("Unknown class code {0}".format(code))


CLASS_CODES = [label.code for label in ClassLabel]
N_CLASSES = len(CLASS_CODES)

# classes that receive horizontal flips on top of the standard augmentation set
EXTENDED_AUGMENT_CLASSES = frozenset([ClassLabel.DF, ClassLabel.VASC])
