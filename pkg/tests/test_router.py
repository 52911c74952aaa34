import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from moesim.router import expert_histogram, route_topk


class TestRouteTopk:
    def test_one_hot(self):
        assert route_topk(np.array([[0.0, 1.0, 0.0]]), 1) == [(1,)]

    def test_tie_breaks_to_lower_id(self):
        assert route_topk(np.array([[0.5, 0.5, 0.1]]), 1) == [(0,)]

    def test_top2(self):
        assert route_topk(np.array([[0.1, 0.7, 0.2]]), 2) == [(1, 2)]

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            route_topk(np.array([[0.1, 0.2]]), 3)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            route_topk(np.array([[np.nan, 0.2]]), 1)

    def test_order_preserved(self):
        scores = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        assert route_topk(scores, 1) == [(0,), (1,), (0,)]

    @given(arrays(np.float64, (7, 5),
                  elements=st.floats(-1e6, 1e6)),
           st.floats(0.1, 100.0))
    def test_scale_invariance(self, scores, factor):
        assert route_topk(scores, 2) == route_topk(scores * factor, 2)


class TestExpertHistogram:
    def test_single_expert(self):
        counts = expert_histogram([(0,), (0,)], 3)
        assert counts.tolist() == [2, 0, 0]

    def test_top2_tally(self):
        counts = expert_histogram([(0, 1), (1, 2)], 3)
        assert counts.tolist() == [1, 2, 1]

    def test_empty(self):
        assert expert_histogram([], 4).tolist() == [0, 0, 0, 0]

    @given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)),
                    max_size=50))
    def test_conservation(self, assignments):
        counts = expert_histogram(assignments, 10)
        assert counts.sum() == 2 * len(assignments)
