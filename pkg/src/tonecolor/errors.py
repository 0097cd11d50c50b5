"""Exception types shared across the package.

ValidationError covers bad inputs and file-format problems (CLI exit code 2);
NumericError covers non-finite values escaping a computation (exit code 3).
"""


class ToneColorError(Exception):
    pass


class ValidationError(ToneColorError):
    pass


class NumericError(ToneColorError):
    pass


# --- WAV I/O, one distinct type per rejected condition ---

class WavHeaderError(ValidationError):
    """File is not a well-formed RIFF/WAVE container."""


class UnsupportedChannelCount(ValidationError):
    """Multi-channel audio; only mono is accepted."""


class UnsupportedSampleFormat(ValidationError):
    """Sample encoding other than PCM16 / IEEE-float32."""


# --- weight files ---

class WeightFileError(ValidationError):
    """Bad magic, version mismatch, or truncated tensor data."""


# --- autodiff ---

class TapeError(ToneColorError):
    """Backward called on a consumed tape or a non-scalar loss."""
