import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rar.metrics import UndefinedMetric, auc, gauc, safe


def pairs_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def test_hand_examples():
    assert auc([0.9, 0.1], [1, 0]) == 1.0
    assert auc([0.2, 0.8], [1, 0]) == 0.0
    assert auc([0.5, 0.5, 0.7], [1, 0, 0]) == 0.25


def test_single_class_undefined():
    with pytest.raises(UndefinedMetric):
        auc([0.1, 0.2], [1, 1])
    assert math.isnan(safe(auc, [0.1, 0.2], [0, 0]))


def test_shape_checked():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=60))
def test_matches_all_pairs_with_ties(rows):
    scores = [s / 5 for s, _ in rows]
    labels = [y for _, y in rows]
    if len(set(labels)) < 2:
        return
    assert auc(scores, labels) == pairs_auc(scores, labels)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-500, 500), min_size=4, max_size=40, unique=True), st.data())
def test_monotone_transform_and_flip(ints, data):
    labels = data.draw(st.lists(st.integers(0, 1), min_size=len(ints), max_size=len(ints)))
    if len(set(labels)) < 2:
        return
    s = np.array(ints) / 100.0
    y = np.array(labels)
    assert auc(np.exp(s) * 3 + 1, y) == pytest.approx(auc(s, y), abs=1e-15)
    assert auc(s, 1 - y) == pytest.approx(1 - auc(s, y), abs=1e-12)


class TestGauc:
    def test_single_user_equals_auc(self):
        s = [0.3, 0.7, 0.1, 0.9]
        y = [0, 1, 1, 0]
        assert gauc([4, 4, 4, 4], s, y) == auc(s, y)

    def test_weighted_five_sixths(self):
        users = [0, 0, 0, 0, 1, 1]
        scores = [0.9, 0.8, 0.2, 0.1, 0.5, 0.5]
        labels = [1, 1, 0, 0, 1, 0]
        assert gauc(users, scores, labels) == 5 / 6

    def test_single_class_users_excluded(self):
        users = [0, 0, 1, 1, 1]
        scores = [0.9, 0.1, 0.3, 0.2, 0.8]
        labels = [1, 0, 1, 1, 1]
        assert gauc(users, scores, labels) == 1.0

    def test_all_single_class_undefined(self):
        with pytest.raises(UndefinedMetric):
            gauc([0, 1], [0.2, 0.3], [1, 0])

    def test_interleaved_users(self, rng):
        users = rng.integers(0, 5, size=80)
        scores = rng.random(80)
        labels = rng.integers(0, 2, size=80)
        num = den = 0.0
        for u in np.unique(users):
            m = users == u
            if len(set(labels[m])) == 2:
                num += m.sum() * pairs_auc(scores[m].tolist(), labels[m].tolist())
                den += m.sum()
        assert gauc(users, scores, labels) == pytest.approx(num / den, abs=1e-12)
