"""Exception hierarchy shared by every stage of the pipeline."""


class LboError(Exception):
    """Base class for all errors raised by :mod:`lbo_detect`."""


class ConstantSeries(LboError, ValueError):
    """Min-max scaling is undefined because max == min."""


class SeriesTooShort(LboError, ValueError):
    pass


class EmptySplit(LboError, ValueError):
    pass


class LengthMismatch(LboError, ValueError):
    pass


class EmptyInput(LboError, ValueError):
    pass


class ShapeMismatch(LboError, ValueError):
    pass


class ConfigInvalid(LboError, ValueError):
    pass


class DegenerateFit(LboError, RuntimeError):
    """An HMM state lost (almost) all responsibility mass during EM."""


class TrainingDiverged(LboError, RuntimeError):
    """Loss became NaN or infinite."""


class RatioNotFound(LboError, KeyError):
    pass


class LabelMissing(LboError, ValueError):
    pass


class NoDelayFound(LboError, ValueError):
    pass


class ZeroMeanDisplacement(LboError, ArithmeticError):
    pass
