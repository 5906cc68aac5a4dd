"""Exception hierarchy shared by the library and the command line tool."""


class LimecellError(Exception):
    """Base class for all errors raised by this package."""


class DataError(LimecellError):
    """A problem with input data: files, manifests, labels, shapes."""


class DecodeError(DataError):
    """A byte stream could not be decoded as an image."""


class ModelError(LimecellError):
    """A problem with a model: missing file, bad format, unsupported op."""
