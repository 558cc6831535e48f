"""
csvm

Support vector machines with performance constraints on an anchor set,
solved exactly by branch-and-bound, plus the cross-validation harness that
compares them with the standard baselines.
"""

from importlib.metadata import PackageNotFoundError, version

# Package version (falls back gracefully when running from source)
try:
    __version__ = version("constrained-svm")
except PackageNotFoundError:  # e.g. when not installed via pip yet
    __version__ = "0.0.0"

__all__ = ["__version__"]
