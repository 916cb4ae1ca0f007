class LesionEnsembleError(Exception):
    """ Base class for every error raised by lesion_ensemble. """


class ConfigError(LesionEnsembleError, ValueError):
    pass


class ManifestError(LesionEnsembleError, ValueError):
    pass


class MissingImageError(ManifestError, FileNotFoundError):
    pass


class PreprocessError(LesionEnsembleError, ValueError):
    pass


class AugmentError(LesionEnsembleError, ValueError):
    pass


class SamplerError(LesionEnsembleError, ValueError):
    pass


class ModelSpecError(LesionEnsembleError, ValueError):
    pass


class UntrainedModelError(LesionEnsembleError, RuntimeError):
    pass


class TrainingDivergedError(LesionEnsembleError, RuntimeError):
    def __init__(self, epoch, step, loss):
        self.epoch = epoch
        self.step = step
        self.loss = loss
        super().__init__("Loss became non-finite ({0}) at epoch {1}, step {2}"
                         .format(loss, epoch, step))


class MetricsUndefinedError(LesionEnsembleError, ValueError):
    pass


class DegenerateScoreError(LesionEnsembleError, ValueError):
    def __init__(self, image):
        self.image = image
        super().__init__("Weighted score denominator is zero for image {0}"
                         .format(image))


class StageFailedError(LesionEnsembleError, RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__("Pipeline stage {0} failed: {1}".format(stage, cause))


class IncompleteRunError(LesionEnsembleError, RuntimeError):
    pass
