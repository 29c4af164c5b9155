"""Python bindings for the clasp audio-visual event localization library."""

from ._clasp import *  # noqa: F401,F403
from ._clasp import __version__  # noqa: F401
