"""Blood-cell image classification with local surrogate explanations."""

__version__ = "0.1.0"

from .errors import DataError, DecodeError, LimecellError, ModelError  # noqa: E402
from .rng import RandomStream  # noqa: E402

__all__ = [
    "DataError",
    "DecodeError",
    "LimecellError",
    "ModelError",
    "RandomStream",
    "__version__",
]
