class LeapsError(Exception):
    pass


class DimensionError(LeapsError, ValueError):
    pass


class NonFiniteError(LeapsError, ValueError):
    pass


class RangeError(LeapsError, ValueError):
    pass


class ShapeError(LeapsError, ValueError):
    pass


class UnknownLayerError(LeapsError, KeyError):
    pass


class NotBatchNormError(LeapsError, ValueError):
    pass


class LayerMismatchError(LeapsError, ValueError):
    pass


class LengthMismatchError(LeapsError, ValueError):
    pass


class ZeroNormError(LeapsError, ValueError):
    pass


class TooFewFramesError(LeapsError, ValueError):
    pass


class EmptyStimuliError(LeapsError, ValueError):
    pass


class EmptySetError(LeapsError, ValueError):
    pass


class SplitError(LeapsError, ValueError):
    pass


class DegenerateRankError(LeapsError, ValueError):
    pass


class FormatError(LeapsError, ValueError):
    pass


class VersionError(LeapsError, ValueError):
    pass


class DivergenceError(LeapsError, RuntimeError):
    pass


class DegenerateInputWarning(UserWarning):
    pass


class ConfigError(LeapsError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
