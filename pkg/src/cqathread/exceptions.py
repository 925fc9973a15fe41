"""Exception hierarchy shared by all modules."""


class CQAThreadError(Exception):
    """Base class for every error raised by this package."""


class CorpusError(CQAThreadError, ValueError):
    """Malformed or inconsistent dataset input."""


class FeatureError(CQAThreadError, ValueError):
    pass


class TrainingError(CQAThreadError, ValueError):
    """Degenerate training data or configuration."""


class ModelFormatError(CQAThreadError, ValueError):
    pass


class InferenceError(CQAThreadError, RuntimeError):
    """Decoder could not produce an exact answer (e.g. node budget exceeded)."""
