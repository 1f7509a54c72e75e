import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import brute_force_scores
from recdiffseg.errors import ValidationError
from recdiffseg.metrics import ConfusionMatrix, evaluate, f1, format_report, iou, miou, report_dict, write_report


def cm_from(tp, fp, fn):
    """Two-class matrix realising the requested counts for class 0."""
    return ConfusionMatrix(2, [[tp, fn], [fp, 0]])


maps = st.integers(1, 5).flatmap(lambda C: st.tuples(
    st.just(C), st.integers(0, 2 ** 32 - 1), st.integers(1, 8), st.integers(1, 8)))


def random_pair(C, seed, h, w):
    rng = np.random.default_rng(seed)
    return rng.integers(0, C, (h, w)), rng.integers(0, C, (h, w))


class TestAccumulate:
    def test_perfect_only_diagonal(self):
        m = np.array([[0, 1], [2, 2]])
        cm = ConfusionMatrix(3).accumulate(m, m)
        assert np.array_equal(cm.counts, np.diag([1, 1, 2]))

    def test_empty(self):
        cm = ConfusionMatrix(3).accumulate(np.zeros((0, 0), int), np.zeros((0, 0), int))
        assert not cm.counts.any()

    def test_hand_2x2(self):
        cm = ConfusionMatrix(2).accumulate(np.array([[0, 1], [1, 1]]), np.array([[0, 0], [1, 1]]))
        assert cm.counts.tolist() == [[1, 1], [0, 2]]

    @pytest.mark.parametrize("pred,truth", [(np.zeros((2, 2), int), np.zeros((2, 3), int)),
                                            (np.full((2, 2), 3), np.zeros((2, 2), int)),
                                            (np.zeros((2, 2), int), np.full((2, 2), -1))])
    def test_invalid(self, pred, truth):
        with pytest.raises(ValidationError):
            ConfusionMatrix(3).accumulate(pred, truth)

    @given(maps, st.integers(0, 10 ** 6))
    def test_additive(self, case, seed2):
        C, seed, h, w = case
        p1, t1 = random_pair(C, seed, h, w)
        p2, t2 = random_pair(C, seed2, h, w)
        both = ConfusionMatrix(C).accumulate(p1, t1).accumulate(p2, t2)
        summed = ConfusionMatrix(C).accumulate(p1, t1) + ConfusionMatrix(C).accumulate(p2, t2)
        assert np.array_equal(both.counts, summed.counts)
        assert both.total == 2 * h * w


class TestScores:
    def test_iou_examples(self):
        m = np.array([[0, 1], [1, 0]])
        assert iou(ConfusionMatrix(2).accumulate(m, m), 0) == 1.0
        assert iou(ConfusionMatrix(2).accumulate(1 - m, m), 0) == 0.0
        assert iou(cm_from(3, 1, 0), 0) == 0.75

    def test_miou_examples(self):
        # IoUs 1.0, 0.5 and 0.0 (class 2 only appears as a false positive)
        cm = ConfusionMatrix(3, [[2, 0, 0], [0, 1, 1], [0, 0, 0]])
        assert [cm.iou(i) for i in range(3)] == [1.0, 0.5, 0.0]
        assert cm.miou() == 0.5
        # IoUs 1.0 and 0.5 with the third class absent everywhere
        cm = ConfusionMatrix(4, [[3, 0, 0, 0], [0, 2, 1, 0], [0, 1, 2, 0], [0, 0, 0, 0]])
        assert cm.iou(0) == 1.0 and cm.iou(1) == 0.5 and cm.iou(3) is None
        assert miou(ConfusionMatrix(2, [[2, 0], [0, 1]])) == 1.0

    def test_f1_examples(self):
        assert f1(cm_from(3, 1, 1), 0) == 0.75
        m = np.array([[0, 1]])
        assert f1(ConfusionMatrix(2).accumulate(m, m), 1) == 1.0
        assert f1(ConfusionMatrix(2).accumulate(1 - m, m), 1) == 0.0

    def test_absent_class_excluded(self):
        cm = ConfusionMatrix(3).accumulate(np.zeros((2, 2), int), np.zeros((2, 2), int))
        assert cm.iou(1) is None and cm.iou(2) is None and cm.f1(2) is None
        assert cm.miou() == 1.0
        assert report_dict(cm)["excluded_classes"] == ["class_1", "class_2"]

    def test_empty_matrix(self):
        assert ConfusionMatrix(2).miou() is None

    @given(maps)
    def test_brute_force_oracle(self, case):
        C, seed, h, w = case
        pred, truth = random_pair(C, seed, h, w)
        cm = ConfusionMatrix(C).accumulate(pred, truth)
        o_iou, o_f1, o_miou = brute_force_scores(pred.tolist(), truth.tolist(), C)
        assert [cm.iou(c, exact=True) for c in range(C)] == [o_iou[c] for c in range(C)]
        assert [cm.f1(c, exact=True) for c in range(C)] == [o_f1[c] for c in range(C)]
        assert cm.miou(exact=True) == o_miou

    @given(maps)
    def test_f1_iou_relation(self, case):
        C, seed, h, w = case
        cm = ConfusionMatrix(C).accumulate(*random_pair(C, seed, h, w))
        for c in range(C):
            j, f = cm.iou(c, exact=True), cm.f1(c, exact=True)
            if j is None:
                continue
            assert f == 2 * j / (1 + j)
            assert f >= j
            assert (f == j) == (j in (0, 1))

    @given(maps, st.integers(0, 10 ** 6))
    def test_permutation(self, case, pseed):
        C, seed, h, w = case
        pred, truth = random_pair(C, seed, h, w)
        perm = np.random.default_rng(pseed).permutation(C)
        a = ConfusionMatrix(C).accumulate(pred, truth)
        b = ConfusionMatrix(C).accumulate(perm[pred], perm[truth])
        assert all(b.iou(perm[c], exact=True) == a.iou(c, exact=True) for c in range(C))
        assert a.miou(exact=True) == b.miou(exact=True)


class TestReports:
    def test_binary_foreground_f1(self):
        cm = cm_from(3, 1, 1)
        assert report_dict(cm)["foreground_f1"] == cm.f1(1)

    def test_text_and_json(self, tmp_path):
        cm = evaluate([np.array([[0, 1], [1, 1]])], [np.array([[0, 0], [1, 1]])], 3)
        write_report(cm, tmp_path / "r.txt", tmp_path / "r.json", ["bg", "a", "b"])
        text = (tmp_path / "r.txt").read_text()
        assert "absent" in text and "excluded from mean (absent): b" in text
        data = json.loads((tmp_path / "r.json").read_text())
        assert data["iou"]["bg"] == 0.5 and data["iou"]["a"] == pytest.approx(2 / 3)
        assert data["miou"] == pytest.approx((0.5 + 2 / 3) / 2)
        assert data["iou"]["b"] is None

    def test_format_alignment(self):
        lines = format_report(ConfusionMatrix(2, [[1, 0], [0, 1]]), ["x", "longer name"]).splitlines()
        assert len({line.index("1.0000") for line in lines[1:3]}) == 1
