"""Jointly learned colour filter arrays and demosaicking networks."""

from ._cfalearn import *  # noqa: F401,F403
from ._cfalearn import __doc__  # noqa: F401

CHANNELS = ("R", "G", "B", "W")
