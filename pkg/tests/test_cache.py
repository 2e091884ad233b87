"""
Unit tests for quenched_lab.cache module.

Tests cover:
- MatrixCache.get returns None for missing entry
- MatrixCache.put stores data and overwrites
- LRU eviction once maxsize is reached
- get_or_build builds once and counts hits and misses
- invalidate and clear
- Thread safety with concurrent access
- Cocycle matrices are memoised through the cache
"""

import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from fractions import Fraction

from quenched_lab.cache import CacheStats, MatrixCache
from quenched_lab.maps import IntervalSet, doubling
from quenched_lab.transfer import Cocycle, Grid, WeightSpec


class TestMatrixCacheGet:
    """Tests for MatrixCache.get method."""

    def test_get_returns_none_for_missing_entry(self):
        """Test that get returns None for a key not in cache."""
        cache = MatrixCache(maxsize=4)
        assert cache.get(("closed", 0, 1, 8)) is None

    def test_get_counts_miss(self):
        """Test that a failed lookup is counted as a miss."""
        cache = MatrixCache(maxsize=4)
        cache.get("absent")
        stats = cache.stats()
        assert stats.misses == 1
        assert stats.hits == 0


class TestMatrixCachePut:
    """Tests for MatrixCache.put method."""

    def test_put_stores_data(self):
        """Test that put stores data and get retrieves it."""
        cache = MatrixCache(maxsize=4)
        cache.put("k", [1, 2, 3])
        assert cache.get("k") == [1, 2, 3]

    def test_put_overwrites_existing_entry(self):
        """Test that put overwrites existing cache entry."""
        cache = MatrixCache(maxsize=4)
        cache.put("k", "old")
        cache.put("k", "new")
        assert cache.get("k") == "new"

    def test_put_stores_different_keys_independently(self):
        """Test that different keys are stored independently."""
        cache = MatrixCache(maxsize=4)
        cache.put(("closed", 0), "a")
        cache.put(("closed", 1), "b")
        assert cache.get(("closed", 0)) == "a"
        assert cache.get(("closed", 1)) == "b"


class TestMatrixCacheEviction:
    """Tests for LRU eviction."""

    def test_least_recently_used_entry_evicted(self):
        """Test that the least recently used entry goes first when full."""
        cache = MatrixCache(maxsize=2)
        cache.put("a", 1)
        cache.put("b", 2)
        cache.get("a")
        cache.put("c", 3)

        assert "a" in cache
        assert "b" not in cache
        assert "c" in cache
        assert len(cache) == 2


class TestMatrixCacheGetOrBuild:
    """Tests for MatrixCache.get_or_build method."""

    def test_factory_called_once(self):
        """Test that the factory runs only on the first request."""
        cache = MatrixCache(maxsize=4)
        calls = []

        def factory():
            calls.append(1)
            return "built"

        assert cache.get_or_build("k", factory) == "built"
        assert cache.get_or_build("k", factory) == "built"
        assert len(calls) == 1

    def test_stats_after_build(self):
        """Test hit and miss counts after a build and a reuse."""
        cache = MatrixCache(maxsize=4)
        cache.get_or_build("k", lambda: 1)
        cache.get_or_build("k", lambda: 1)

        stats = cache.stats()
        assert isinstance(stats, CacheStats)
        assert stats.hits == 1
        assert stats.misses == 1
        assert stats.size == 1
        assert stats.maxsize == 4


class TestMatrixCacheInvalidate:
    """Tests for invalidate and clear."""

    def test_invalidate_removes_entry(self):
        """Test that invalidate removes one entry."""
        cache = MatrixCache(maxsize=4)
        cache.put("a", 1)
        cache.put("b", 2)
        cache.invalidate("a")
        assert cache.get("a") is None
        assert cache.get("b") == 2

    def test_invalidate_missing_key_is_noop(self):
        """Test that invalidating an absent key does not raise."""
        cache = MatrixCache(maxsize=4)
        cache.invalidate("nothing")
        assert len(cache) == 0

    def test_clear_removes_everything(self):
        """Test that clear empties the cache."""
        cache = MatrixCache(maxsize=4)
        cache.put("a", 1)
        cache.put("b", 2)
        cache.clear()
        assert len(cache) == 0


class TestMatrixCacheThreadSafety:
    """Tests for concurrent access."""

    def test_concurrent_get_or_build_returns_single_value(self):
        """Test that racing builders all observe the first stored value."""
        cache = MatrixCache(maxsize=16)
        barrier = threading.Barrier(8)

        def worker(i):
            barrier.wait()
            return cache.get_or_build("shared", lambda: object())

        with ThreadPoolExecutor(max_workers=8) as executor:
            futures = [executor.submit(worker, i) for i in range(8)]
            results = [f.result() for f in as_completed(futures)]

        assert all(r is results[0] for r in results)
        assert len(cache) == 1

    def test_concurrent_puts_distinct_keys(self):
        """Test that concurrent writers to distinct keys all land."""
        cache = MatrixCache(maxsize=128)

        def worker(i):
            cache.put(("closed", i), i)

        with ThreadPoolExecutor(max_workers=8) as executor:
            list(executor.map(worker, range(64)))

        assert len(cache) == 64
        assert all(cache.get(("closed", i)) == i for i in range(64))


class TestCocycleUsesCache:
    """Tests for matrix memoisation inside a cocycle."""

    def test_closed_matrix_built_once(self):
        """Test that the same closed matrix object is returned twice."""
        cache = MatrixCache()
        cocycle = Cocycle({0: doubling()}, WeightSpec(), Grid(4), cache)
        first = cocycle.closed(0)
        assert cocycle.closed(0) is first
        assert cache.stats().hits >= 1

    def test_open_matrix_keyed_by_hole(self):
        """Test that different holes give different cache entries."""
        cache = MatrixCache()
        cocycle = Cocycle({0: doubling()}, WeightSpec(), Grid(4), cache)
        left = IntervalSet.single(Fraction(0), Fraction(1, 4))
        right = IntervalSet.single(Fraction(3, 4), Fraction(1))
        assert cocycle.matrix(0, left) is not cocycle.matrix(0, right)
        assert ("open", 0, Fraction(1), 4, left) in cache

    def test_grid_change_shares_cache(self):
        """Test that with_grid keeps the shared cache but builds a new matrix."""
        cache = MatrixCache()
        cocycle = Cocycle({0: doubling()}, WeightSpec(), Grid(4), cache)
        fine = cocycle.with_grid(Grid(8))
        assert fine.cache is cache
        assert fine.closed(0).cells == 8
        assert cocycle.closed(0).cells == 4
