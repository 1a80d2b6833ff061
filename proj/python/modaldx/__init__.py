"""Python bindings of the modaldx C++ library."""

from ._modaldx import *  # noqa: F401,F403
from ._modaldx import CLASS_NAMES, ConfigError, DataError, Error

__version__ = "0.1.0"
