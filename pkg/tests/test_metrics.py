import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from respiro.errors import ArgumentError, DegenerateInputError, ShapeError
from respiro.metrics import MetricsReport, aggregate_seeds, confusion, confusion_csv, icbhi_metrics


def hand_matrix():
    # normal 8/10, crackle 3/5, wheeze 1/3, both 1/2 correct
    return np.array([[8, 1, 1, 0], [2, 3, 0, 0], [1, 1, 1, 0], [0, 1, 0, 1]])


matrices = arrays(np.int64, (4, 4), elements=st.integers(0, 50)).filter(
    lambda m: m[0].sum() > 0 and m[1:].sum() > 0
)


class TestConfusion:
    def test_perfect_is_diagonal(self):
        labels = [0, 1, 2, 3, 3, 1]
        np.testing.assert_array_equal(confusion(labels, labels), np.diag([1, 2, 1, 2]))

    def test_single_cell(self):
        cm = confusion([0], [3])
        assert cm[3, 0] == 1 and cm.sum() == 1

    def test_errors(self):
        with pytest.raises(ShapeError):
            confusion([0, 1], [0])
        with pytest.raises(ArgumentError):
            confusion([4], [0])

    @settings(max_examples=40)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40), st.randoms())
    def test_order_invariance(self, pairs, rnd):
        shuffled = list(pairs)
        rnd.shuffle(shuffled)
        p, l = zip(*pairs)
        ps, ls = zip(*shuffled)
        np.testing.assert_array_equal(confusion(p, l), confusion(ps, ls))


class TestIcbhiMetrics:
    def test_hand_counted(self):
        r = icbhi_metrics(hand_matrix())
        assert (r.sp, r.se, r.score) == (80.0, 50.0, 65.0)
        assert r.per_class_acc == [80.0, 60.0, pytest.approx(100 / 3), 50.0]

    def test_perfect(self):
        r = icbhi_metrics(np.diag([5, 4, 3, 2]))
        assert (r.sp, r.se, r.score) == (100.0, 100.0, 100.0)

    def test_all_normal_predictor(self):
        cm = np.zeros((4, 4), int)
        cm[:, 0] = [10, 5, 3, 2]
        r = icbhi_metrics(cm)
        assert (r.sp, r.se, r.score) == (100.0, 0.0, 50.0)

    def test_abnormal_confusion_is_not_credited(self):
        cm = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1], [0, 1, 0, 0]])
        assert icbhi_metrics(cm).se == 0.0

    def test_degenerate(self):
        with pytest.raises(DegenerateInputError):
            icbhi_metrics(np.diag([3, 0, 0, 0]))
        with pytest.raises(DegenerateInputError):
            icbhi_metrics(np.diag([0, 1, 1, 1]))

    @settings(max_examples=60)
    @given(matrices)
    def test_score_identity_and_range(self, cm):
        r = icbhi_metrics(cm)
        assert r.score == (r.sp + r.se) / 2
        assert 0 <= r.sp <= 100 and 0 <= r.se <= 100

    @settings(max_examples=60)
    @given(matrices)
    def test_se_is_weighted_per_class_accuracy(self, cm):
        r = icbhi_metrics(cm)
        rows = cm.sum(axis=1)
        weighted = sum(rows[i] * r.per_class_acc[i] for i in range(1, 4) if rows[i])
        assert r.se == pytest.approx(weighted / rows[1:].sum(), abs=1e-9)

    def test_report_json(self):
        body = icbhi_metrics(hand_matrix()).to_json()
        assert set(body) == {"sp", "se", "score", "per_class", "seeds", "std"}
        assert list(body["per_class"]) == ["normal", "crackle", "wheeze", "both"]


class TestAggregate:
    def test_identical_reports(self):
        r = icbhi_metrics(hand_matrix())
        agg = aggregate_seeds([r, r, r])
        assert agg.score == 65.0 and agg.std["score"] == 0.0 and agg.n_seeds == 3

    def test_sample_std(self):
        a = MetricsReport(60.0, 60.0, 60.0, [60.0] * 4)
        b = MetricsReport(62.0, 62.0, 62.0, [62.0] * 4)
        agg = aggregate_seeds([a, b])
        assert agg.score == 61.0
        assert agg.std["score"] == pytest.approx(2**0.5)

    def test_single_report(self):
        r = icbhi_metrics(hand_matrix())
        agg = aggregate_seeds([r])
        assert (agg.sp, agg.se, agg.score) == (r.sp, r.se, r.score)
        assert agg.std["sp"] == 0.0 and agg.n_seeds == 1

    def test_empty(self):
        with pytest.raises(ArgumentError):
            aggregate_seeds([])


def test_confusion_csv():
    text = confusion_csv(hand_matrix())
    lines = text.splitlines()
    assert lines[0] == "true\\pred,normal,crackle,wheeze,both"
    assert lines[4] == "both,0,1,0,1"
