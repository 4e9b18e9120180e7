"""Exception hierarchy shared by all stages.

The CLI maps :class:`ReverbForgeError` (and ``ValueError``) to exit status 1
and ``OSError`` to exit status 2.
"""


class ReverbForgeError(Exception):
    """Base class for validation-type failures."""


class WaveFormatError(ReverbForgeError):
    """The file is not a supported RIFF/WAVE stream."""


class AnalysisError(ReverbForgeError):
    """An RIR could not be analyzed."""


class SilentSignalError(AnalysisError):
    pass


class InsufficientDecayError(AnalysisError):
    """The energy decay curve never reaches the lower fit bound."""


class SampleRateMismatchError(ReverbForgeError):
    pass


class RoomSpecError(ReverbForgeError):
    pass


class ManifestError(ReverbForgeError):
    pass


class ScoreError(ReverbForgeError):
    pass
