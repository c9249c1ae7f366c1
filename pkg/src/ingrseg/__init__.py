"""Ingredient-level food image segmentation benchmark toolkit.

Dataset manifest tooling (validation, refinement, splits, statistics),
pixel-wise segmentation metrics, recipe-aligned vision-encoder pretraining,
and toy-scale encoder-decoder segmenters, wired into a reproducible CLI.
"""

__version__ = "0.1.0"

IGNORE_INDEX = 255


class IngrsegError(Exception):
    """Base class for toolkit errors."""


class UsageError(IngrsegError):
    """Bad arguments or configuration (CLI exit code 1)."""


class DataError(IngrsegError):
    """Invalid or inconsistent data (CLI exit code 2)."""
