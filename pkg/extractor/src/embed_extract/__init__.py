"""Batch extraction of image/text embedding caches for the simvec metric.

Reads a caption dataset (JSON Lines), encodes images and texts with a
pluggable encoder backend, and writes the binary SVEC cache format the
metric consumes, plus a JSON sidecar naming the models and any skipped
samples.
"""

from .backends import HFBackend, OfflineBackend, get_backend
from .cache import CacheRecord, read_svec, write_svec
from .extract import (ExtractConfig, ExtractReport, extract, load_samples,
                      sanity_win_rate)
from .scenes import Scene, build_sanity_set, parse_caption, render

__version__ = "0.1.0"
