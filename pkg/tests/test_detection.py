import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aligndet.detection import (
    BBox,
    Detection,
    LinearDetector,
    TrainConfig,
    greedy_nms,
    hinge_objective,
    iou,
    score_proposals,
    train_detector,
)
from aligndet.errors import DataError
from oracles import exhaustive_nms, random_detections

finite_coord = st.floats(-500, 500, allow_nan=False)


@st.composite
def boxes(draw):
    x0, y0 = draw(finite_coord), draw(finite_coord)
    w = draw(st.floats(0, 100))
    h = draw(st.floats(0, 100))
    return BBox(x0, y0, x0 + w, y0 + h)


def make_blobs(seed, n=200, center=2.0, spread=0.3):
    rng = np.random.default_rng(seed)
    pos = rng.normal(size=(n, 2)) * spread + [center, 0.0]
    neg = rng.normal(size=(n, 2)) * spread + [-center, 0.0]
    return pos, neg


class TestBBox:
    def test_rejects_inverted(self):
        with pytest.raises(DataError):
            BBox(5, 0, 4, 10)

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            BBox(0, 0, np.inf, 1)

    def test_area(self):
        assert BBox(0, 0, 4, 5).area == 20.0


class TestIou:
    def test_identical(self):
        b = BBox(0, 0, 10, 10)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0

    def test_half_overlap_rectangles(self):
        # intersection 50, union 150
        assert iou(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)) == pytest.approx(1 / 3)

    def test_degenerate_union_is_zero(self):
        p = BBox(3, 3, 3, 3)
        assert iou(p, p) == 0.0

    @given(a=boxes(), b=boxes())
    @settings(max_examples=200, deadline=None)
    def test_symmetry_and_range(self, a, b):
        ab = iou(a, b)
        assert ab == iou(b, a)
        assert 0.0 <= ab <= 1.0

    @given(a=boxes())
    @settings(max_examples=100, deadline=None)
    def test_self_iou(self, a):
        if a.area > 0:
            assert iou(a, a) == 1.0


class TestTrainConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(DataError):
            TrainConfig(reg_lambda=0.0)
        with pytest.raises(DataError):
            TrainConfig(iterations=0)
        with pytest.raises(DataError):
            TrainConfig(max_hard_rounds=0)


class TestTrainDetector:
    def test_separable_blobs_high_heldout_accuracy(self):
        pos, neg = make_blobs(0)
        det = train_detector(pos, neg, TrainConfig(), class_id="a")
        tpos, tneg = make_blobs(1)
        sp = score_proposals(det, tpos, frame="raw")
        sn = score_proposals(det, tneg, frame="raw")
        acc = (np.sum(sp > 0) + np.sum(sn < 0)) / (len(sp) + len(sn))
        assert acc >= 0.99

    def test_degenerate_identical_point(self):
        point = np.array([[1.0, 2.0]])
        det = train_detector(point, point, TrainConfig())
        s = score_proposals(det, point, frame="raw")
        assert s[0] - s[0] == 0.0
        assert np.all(np.isfinite(det.weights))

    def test_scale_covariance_after_rescaled_regularization(self):
        pos, neg = make_blobs(2)
        base = train_detector(pos, neg, TrainConfig(reg_lambda=0.01))
        scaled = train_detector(
            pos * 10.0, neg * 10.0, TrainConfig(reg_lambda=0.01 * 100.0)
        )
        tpos, tneg = make_blobs(3)
        test = np.vstack([tpos, tneg])
        labels_base = score_proposals(base, test, frame="raw") > 0
        labels_scaled = score_proposals(scaled, test * 10.0, frame="raw") > 0
        npt.assert_array_equal(labels_base, labels_scaled)

    def test_bitwise_determinism(self):
        pos, neg = make_blobs(4)
        cfg = TrainConfig(seed=7)
        a = train_detector(pos, neg, cfg)
        b = train_detector(pos, neg, cfg)
        npt.assert_array_equal(a.weights, b.weights)
        assert a.bias == b.bias

    def test_hard_negative_rounds_reduce_objective(self):
        # Pool larger than the initial cache, with the hard negatives
        # hidden beyond it so mining has to find them.
        rng = np.random.default_rng(5)
        pos = rng.normal(size=(100, 3)) + [3.0, 0, 0]
        easy = rng.normal(size=(1024, 3)) + [-6.0, 0, 0]
        hard = rng.normal(size=(300, 3)) * 0.5 + [1.0, 0, 0]
        neg = np.vstack([easy, hard])
        record = []
        cfg = TrainConfig()
        det = train_detector(pos, neg, cfg, record=record)
        assert len(record) > 1, "mining never ran a second round"
        final_cache = record[-1]["cache"]
        y = np.concatenate([np.ones(len(pos)), -np.ones(len(final_cache))])
        X = np.vstack([pos, neg[final_cache]])
        first = hinge_objective(
            record[0]["weights"], record[0]["bias"], X, y, cfg.reg_lambda
        )
        last = hinge_objective(det.weights, det.bias, X, y, cfg.reg_lambda)
        assert last <= first

    def test_empty_class_rejected(self):
        with pytest.raises(DataError):
            train_detector(np.zeros((0, 2)), np.ones((3, 2)), TrainConfig())

    def test_dim_mismatch(self):
        with pytest.raises(DataError):
            train_detector(np.ones((2, 3)), np.ones((2, 4)), TrainConfig())


class TestScoreProposals:
    def test_unit_weight_reads_first_column(self):
        det = LinearDetector("a", np.array([1.0, 0.0, 0.0]), 0.0, "raw")
        s = score_proposals(det, [[3.0, 9.0, 9.0]], frame="raw")
        assert s[0] == 3.0

    def test_bias_only(self):
        det = LinearDetector("a", np.zeros(2), 0.7, "raw")
        npt.assert_array_equal(
            score_proposals(det, np.ones((4, 2)), frame="raw"), np.full(4, 0.7)
        )

    def test_double_loop_oracle(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=5)
        b = float(rng.normal())
        X = rng.normal(size=(9, 5))
        det = LinearDetector("a", w, b, "raw")
        got = score_proposals(det, X, frame="raw")
        want = np.array(
            [sum(w[j] * X[i, j] for j in range(5)) + b for i in range(9)]
        )
        npt.assert_allclose(got, want, atol=1e-12)

    def test_frame_mismatch_is_hard_error(self):
        det = LinearDetector("a", np.ones(2), 0.0, "aligned:a")
        with pytest.raises(DataError, match="frame"):
            score_proposals(det, np.ones((1, 2)), frame="raw")

    def test_dim_mismatch(self):
        det = LinearDetector("a", np.ones(3), 0.0, "raw")
        with pytest.raises(DataError):
            score_proposals(det, np.ones((1, 2)), frame="raw")


def det_at(x, score, image_id="img0", class_id="obj"):
    return Detection(image_id, BBox(x, 0, x + 10, 10), class_id, score)


class TestGreedyNms:
    def test_identical_boxes_keep_best(self):
        a, b = det_at(0, 0.9), det_at(0, 0.8)
        assert greedy_nms([b, a], 0.5) == [a]

    def test_disjoint_boxes_both_kept(self):
        a, b = det_at(0, 0.9), det_at(100, 0.8)
        assert greedy_nms([a, b], 0.5) == [a, b]

    def test_matches_exhaustive_reference(self):
        for seed in range(50):
            dets = random_detections(np.random.default_rng(seed), 10)
            assert greedy_nms(dets, 0.3) == exhaustive_nms(dets, 0.3)

    def test_idempotent(self):
        for seed in range(10):
            dets = random_detections(np.random.default_rng(seed), 12)
            once = greedy_nms(dets, 0.4)
            assert greedy_nms(once, 0.4) == once

    def test_output_structure(self):
        for seed in range(10):
            dets = random_detections(np.random.default_rng(100 + seed), 15)
            kept = greedy_nms(dets, 0.3)
            scores = [d.score for d in kept]
            assert scores == sorted(scores, reverse=True)
            for i, a in enumerate(kept):
                for b in kept[i + 1 :]:
                    assert iou(a.box, b.box) <= 0.3
            for d in dets:
                if d not in kept:
                    assert any(iou(d.box, k.box) > 0.3 for k in kept)

    def test_mixed_classes_rejected(self):
        with pytest.raises(DataError, match="mixes classes"):
            greedy_nms([det_at(0, 1.0, class_id="a"), det_at(0, 0.5, class_id="b")], 0.5)

    def test_threshold_validated(self):
        with pytest.raises(DataError):
            greedy_nms([det_at(0, 1.0)], 1.5)

    def test_tie_broken_by_image_then_box(self):
        a = det_at(100, 0.5, image_id="img1")
        b = det_at(0, 0.5, image_id="img0")
        c = Detection("img0", BBox(0, 5, 10, 15), "obj", 0.5)
        assert greedy_nms([a, c, b], 0.9) == [b, c, a]
