import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_store
from snapvote import metrics
from snapvote.errors import EnsembleError, ShapeError
from snapvote.metrics import ErrorStats
from snapvote.trainer import inclusive_window, strict_window


class TestAccuracy:
    def test_identical(self):
        assert metrics.accuracy([0, 1, 2], [0, 1, 2]) == 1.0

    def test_fraction(self):
        assert metrics.accuracy([0, 1, 1, 1], [0, 1, 0, 0]) == 0.5

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.accuracy([0, 1], [0])


class TestErrorStats:
    def test_two_values_by_hand(self):
        s = ErrorStats.from_errors([0.31, 0.44])
        assert (s.min, s.max) == (0.31, 0.44)
        assert s.mean == pytest.approx(0.375, abs=1e-15)
        assert s.std == pytest.approx(0.065, abs=1e-15)

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=50))
    def test_ordering_and_population_std(self, errs):
        s = ErrorStats.from_errors(errs)
        assert s.min <= s.mean + 1e-12 and s.mean <= s.max + 1e-12
        assert s.std == pytest.approx(float(np.std(errs)), abs=1e-12)

    def test_from_store_uses_window(self, rng):
        store = random_store(rng, range(1, 11), 4, 4, 2)
        s = metrics.error_stats(store, inclusive_window(3, 5))
        expected = [store.get(e).valid_error for e in (3, 4, 5)]
        assert s.mean == pytest.approx(sum(expected) / 3, rel=1e-15)
        assert s.count == 3 and s.window == "[3, 5]"

    def test_empty_window(self, rng):
        store = random_store(rng, [1, 2], 4, 4, 2)
        with pytest.raises(EnsembleError):
            metrics.error_stats(store, strict_window(5, 8))
        with pytest.raises(EnsembleError):
            ErrorStats.from_errors([])


class TestFormat:
    def test_four_column_row(self):
        s = ErrorStats(0.309999, 0.439999, 0.375427, 0.024364)
        lines = metrics.format_stats_table(s).splitlines()
        assert lines == ["Min Max Mean Standard Error", "0.309999 0.439999 0.375427 0.024364"]
