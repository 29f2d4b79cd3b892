"""
Boolean checks that log why they failed. Callers decide whether a failed check
is an assertion, a data error or just a warning.
"""

from pathlib import Path
from typing import Callable
import os
import logging

import numpy as np


logger = logging.getLogger(__name__)


def _path_allows(path: Path, is_kind: Callable[[Path], bool], mode: int, what: str) -> bool:
    # TOCTOU: the answer may be stale by the time the caller opens PATH.
    ok = path.exists() and is_kind(path) and os.access(path, mode)
    if not ok:
        logger.error(f"{path=!s} is not a {what}!")
    return ok


def path_is_readable_dir(dir: Path) -> bool:
    """
    Return True if DIR exists, is a directory, and readable.
    """
    return _path_allows(dir, Path.is_dir, os.R_OK, "readable directory")


def path_is_writable_dir(dir: Path) -> bool:
    """
    Return True if DIR exists, is a directory, and writable. Writable does not
    imply listable.
    """
    return _path_allows(dir, Path.is_dir, os.W_OK, "writable directory")


def path_is_readable_file(f: Path) -> bool:
    """
    Return True if F exists, is a regular file, and readable. Recording and
    manifest files are checked with this before they are parsed.
    """
    return _path_allows(f, Path.is_file, os.R_OK, "readable file")


def array_is_finite(values: np.ndarray) -> bool:
    """
    Return True if every entry of VALUES is finite (no NaN, no +/-Inf).
    """
    finite = bool(np.all(np.isfinite(values)))
    if not finite:
        logger.error(f"Array of shape {values.shape} holds non-finite entries!")
    return finite


def is_sorted(values: np.ndarray, strict: bool = False) -> bool:
    """
    Return True if the 1-D VALUES never decrease (never stay equal if STRICT).
    """
    if len(values) < 2:
        return True
    steps = np.diff(values)
    return bool(np.all(steps > 0)) if strict else bool(np.all(steps >= 0))
