import threading
from collections.abc import Callable, Hashable
from dataclasses import dataclass
from typing import Any

from cachetools import LRUCache


@dataclass
class CacheStats:
    hits: int
    misses: int
    size: int
    maxsize: int


class MatrixCache:
    """
    Memo for transfer matrices keyed by (kind, symbol, weight, grid, hole).

    Thread-safe LRU cache shared by every cocycle built from one experiment, so a
    matrix for a given fiber symbol is assembled once and then read by all sweeps.
    """

    def __init__(self, maxsize: int = 256):
        self.maxsize = maxsize
        self._cache: LRUCache = LRUCache(maxsize=maxsize)
        self._lock = threading.Lock()
        self._hits = 0
        self._misses = 0

    def get(self, key: Hashable) -> Any | None:
        """
        Retrieve a cached matrix.

        Args:
            key: Cache key tuple.

        Returns:
            The cached value, or None if absent.
        """
        with self._lock:
            value = self._cache.get(key)
            if value is None:
                self._misses += 1
            else:
                self._hits += 1
            return value

    def put(self, key: Hashable, value: Any) -> None:
        """
        Store a matrix, evicting the least recently used entry when full.

        Args:
            key: Cache key tuple.
            value: The matrix to cache.
        """
        with self._lock:
            self._cache[key] = value

    def get_or_build(self, key: Hashable, factory: Callable[[], Any]) -> Any:
        """
        Return the cached value for key, building it with factory() on a miss.

        The factory runs outside the lock so distinct keys build concurrently. If two
        threads race on the same key the first stored value wins.
        """
        cached = self.get(key)
        if cached is not None:
            return cached
        built = factory()
        with self._lock:
            existing = self._cache.get(key)
            if existing is not None:
                return existing
            self._cache[key] = built
            return built

    def invalidate(self, key: Hashable) -> None:
        with self._lock:
            self._cache.pop(key, None)

    def clear(self) -> None:
        with self._lock:
            self._cache.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._cache)

    def __contains__(self, key: Hashable) -> bool:
        with self._lock:
            return key in self._cache

    def stats(self) -> CacheStats:
        with self._lock:
            return CacheStats(self._hits, self._misses, len(self._cache), self.maxsize)
