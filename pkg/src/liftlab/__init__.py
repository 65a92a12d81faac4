"""Samplers and diagnostics for the self-repellent walk viewed as a lifted heat equation."""
from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"
