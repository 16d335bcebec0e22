import os
from logging import getLogger
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np

_logger = getLogger(__name__)

DEFAULT_CHUNK_SIZE = 16384


def resolve_workers(workers: Optional[int] = None) -> int:
    """Resolves a requested worker count.

    Args:
      workers: Requested number of workers, None means the available hardware
      parallelism.

    Returns:
      workers: a positive number of workers

    """
    if workers is None:
        return max(1, os.cpu_count() or 1)
    if workers < 1:
        raise ValueError(f"Number of workers must be positive, got {workers}")
    return int(workers)


def chunk_slices(
    length: int, workers: int, chunk_size: int = DEFAULT_CHUNK_SIZE
) -> List[slice]:
    """Splits ``range(length)`` into contiguous slices.

    The slices never depend on anything but ``length`` and ``chunk_size`` so the
    work split is identical for every worker count; ``workers`` only caps the
    chunk size so that small inputs still spread over all workers.

    Args:
      length: Number of items to split
      workers: Number of workers that will consume the slices
      chunk_size: Upper bound for the size of a single slice

    Returns:
      slices: ordered, disjoint slices covering ``range(length)``

    """
    if length <= 0:
        return []
    size = max(1, min(chunk_size, -(-length // max(1, workers))))
    return [slice(start, min(start + size, length)) for start in range(0, length, size)]


def expand_ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenates ``arange(s, s + c)`` for every pair of start and count.

    Args:
      starts: int array of range starts
      counts: int array of range lengths, same shape as ``starts``

    Returns:
      indices: int64 array of length ``counts.sum()``

    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    ends = np.cumsum(counts)
    shift = np.repeat(np.asarray(starts, dtype=np.int64) - (ends - counts), counts)
    return shift + np.arange(total, dtype=np.int64)


def find_files_with_extension(extension: str, files_path: Union[str, Path]):
    """
    Finds files recursively from the current path with the given extension.

    Args:
      extension: string of desired file extension ('json', 'ply', etc)
      files_path: directory to search

    Returns:
      files: a sorted list of file paths with the extension

    """
    return sorted(Path(files_path).glob("**/*." + extension))


def collect_paths(paths: Sequence[Union[str, Path]], extension: str) -> Iterator[Path]:
    """Yields files, expanding directories into their files with ``extension``."""
    for path in map(Path, paths):
        if path.is_dir():
            found = find_files_with_extension(extension, path)
            _logger.debug(f"found {len(found)} .{extension} files under {path}")
            yield from found
        else:
            yield path
