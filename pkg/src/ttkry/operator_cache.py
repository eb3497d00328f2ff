"""Operator cache: bounded in-memory entries backed by brotli-compressed TT files."""

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional

import brotli  # type: ignore[import-untyped]

from ttkry.tensor import TTMatrix
from ttkry.utils.tt_format import bytes_to_tt, tt_to_bytes

logger = logging.getLogger(__name__)

MAX_CACHE_ENTRIES = 16
FILE_SUFFIX = ".ttkr.br"


@dataclass
class CacheEntry:
    """An assembled operator held in memory."""

    operator: TTMatrix
    stored_at: float


def cache_key(kind: str, params: Mapping[str, Any]) -> str:
    """SHA-256 of the operator kind and its assembly parameters."""
    payload = json.dumps({"kind": kind, **params}, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class OperatorCache:
    """
    Memoizes operator assembly.

    Lookups try memory, then ``directory`` (``TTKRY_CACHE_DIR`` when not given;
    no disk cache if neither is set), then call the builder. When memory is full
    the oldest entry is evicted.
    """

    def __init__(
        self, directory: Optional[Path] = None, max_entries: int = MAX_CACHE_ENTRIES
    ) -> None:
        env_dir = os.environ.get("TTKRY_CACHE_DIR")
        self.directory = directory or (Path(env_dir) if env_dir else None)
        self.max_entries = max_entries
        self._entries: Dict[str, CacheEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def _path(self, key: str) -> Optional[Path]:
        return None if self.directory is None else self.directory / f"{key}{FILE_SUFFIX}"

    def _remember(self, key: str, operator: TTMatrix) -> None:
        if key not in self._entries and len(self._entries) >= self.max_entries:
            oldest = min(self._entries, key=lambda k: self._entries[k].stored_at)
            del self._entries[oldest]
        self._entries[key] = CacheEntry(operator=operator, stored_at=time.monotonic())

    def _load(self, key: str) -> Optional[TTMatrix]:
        path = self._path(key)
        if path is None or not path.exists():
            return None
        try:
            train = bytes_to_tt(brotli.decompress(path.read_bytes()))
        except (OSError, ValueError, brotli.error):
            logger.warning("Ignoring unreadable cache file %s", path, exc_info=True)
            return None
        if not isinstance(train, TTMatrix):
            logger.warning("Cache file %s does not hold an operator", path)
            return None
        return train

    def _store(self, key: str, operator: TTMatrix) -> None:
        path = self._path(key)
        if path is None:
            return
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(brotli.compress(tt_to_bytes(operator)))
        except OSError:
            logger.warning("Could not write cache file %s", path, exc_info=True)

    def get_or_build(
        self, kind: str, params: Mapping[str, Any], build: Callable[[], TTMatrix]
    ) -> TTMatrix:
        key = cache_key(kind, params)
        entry = self._entries.get(key)
        if entry is not None:
            logger.debug("operator cache hit (memory) for %s %s", kind, dict(params))
            return entry.operator
        operator = self._load(key)
        if operator is None:
            logger.debug("assembling %s %s", kind, dict(params))
            operator = build()
            self._store(key, operator)
        else:
            logger.debug("operator cache hit (disk) for %s %s", kind, dict(params))
        self._remember(key, operator)
        return operator
