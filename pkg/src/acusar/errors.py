"""Exception types shared across the package."""


class AcusarError(Exception):
    """Base class for all package-specific errors."""


# -- array geometry ----------------------------------------------------------

class InsufficientMics(AcusarError):
    """Fewer microphones than the planar bearing solver needs."""


class NonPositiveRadius(AcusarError):
    """Ring radius must be strictly positive."""


# -- acoustic scene ----------------------------------------------------------

class SilentInput(AcusarError):
    """Waveform has zero RMS and cannot be level-calibrated."""


class UnknownKind(AcusarError):
    """Unrecognized synthetic signal kind."""


class SourceTooClose(AcusarError):
    """Source position nearly coincides with a microphone."""


class InjectionOutOfRange(AcusarError):
    """Injection offset puts the anomaly outside the background clip."""


# -- ring buffer -------------------------------------------------------------

class ChannelMismatch(AcusarError):
    """Pushed frame does not match buffer channel count or sample rate."""


class WindowTooLong(AcusarError):
    """Requested extraction window exceeds buffer capacity."""


class WindowNotBuffered(AcusarError):
    """Requested span was already evicted or lies in the future."""


# -- features ----------------------------------------------------------------

class LengthMismatch(AcusarError):
    """Clip length differs from what the spectrogram config expects."""


class IndivisibleDims(AcusarError):
    """Patch size does not divide the spectrogram dimensions."""


class RatioOutOfRange(AcusarError):
    """Masking ratio outside the supported range."""


# -- masked autoencoder ------------------------------------------------------

class ShapeMismatch(AcusarError):
    """Tensor shapes inconsistent with the model configuration."""


class EmptyTrainingSet(AcusarError):
    """Training requested with no clips."""


class DivergedLoss(AcusarError):
    """Training loss became non-finite."""


class CheckpointError(AcusarError):
    """Checkpoint file is malformed or has the wrong magic."""


# -- localization ------------------------------------------------------------

class DegenerateInput(AcusarError):
    """Cross-correlation input is all zero."""


class RankDeficient(AcusarError):
    """Ring offsets do not span the horizontal plane."""


# -- fusion ------------------------------------------------------------------

class TooFewObservations(AcusarError):
    """Ray intersection needs at least two observations."""


class DegenerateGeometry(AcusarError):
    """Observation rays are near-parallel; the normal matrix is singular."""
