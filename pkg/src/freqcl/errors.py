"""Exception hierarchy shared by all freqcl modules."""


class FreqclError(Exception):
    """Base class for every error raised by freqcl."""


class WavFormatError(FreqclError, ValueError):
    """Malformed RIFF/WAVE container."""

    def __init__(self, chunk, message):
        self.chunk = chunk
        super().__init__(f"malformed WAV ({chunk!r} chunk): {message}")


class UnsupportedCodecError(FreqclError, ValueError):
    pass


class EmptyDatasetError(FreqclError, ValueError):
    pass


class EmptyInputError(FreqclError, ValueError):
    pass


class ConfigError(FreqclError, ValueError):
    pass


class ShapeError(FreqclError, ValueError):
    pass


class CheckpointFormatError(FreqclError, ValueError):
    pass


class NumericError(FreqclError, ArithmeticError):
    """Non-finite value encountered during optimization."""


class MissingGalleryError(FreqclError, KeyError):
    pass


class UndefinedMetricError(FreqclError, ValueError):
    pass
