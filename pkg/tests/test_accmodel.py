"""Additive accuracy model: prediction, NNLS calibration, serialization."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetsim.accmodel import (AccuracyMetrics, AccuracyModel, CalibrationError,
                             CoverageError, calibrate_accuracy,
                             model_from_document, model_to_document,
                             predict_accuracy, predict_from_shares)


def metrics(loce, orie):
    return AccuracyMetrics(loce, orie)


@pytest.fixture
def hand_model():
    return build_hand_model()


def build_hand_model():
    return AccuracyModel(
        baseline=metrics(1.0, 10.0),
        model_offset=metrics(0.05, 0.5),
        deltas={("good", "BACKBONE"): metrics(0.0, 0.0),
                ("good", "HEAD"): metrics(0.0, 0.0),
                ("fast", "BACKBONE"): metrics(0.2, 1.0),
                ("fast", "HEAD"): metrics(0.1, 3.0)})


def test_metrics_arithmetic():
    a, b = metrics(1.0, 2.0), metrics(0.25, 0.5)
    assert (a + b).as_tuple() == (1.25, 2.5)
    assert (a - b).as_tuple() == (0.75, 1.5)


def test_delta_pre_group_is_free(hand_model):
    assert hand_model.delta("anything", "PRE").as_tuple() == (0.0, 0.0)


def test_delta_missing_pair_raises(hand_model):
    with pytest.raises(CoverageError):
        hand_model.delta("fast", "TAIL")
    with pytest.raises(CoverageError):
        hand_model.delta("unknown", "HEAD")


def test_predict_sums_baseline_offset_and_deltas(hand_model):
    pred = predict_accuracy({"PRE": "fast", "BACKBONE": "fast", "HEAD": "good"},
                            hand_model)
    assert pred.as_tuple() == pytest.approx((1.0 + 0.05 + 0.2, 10.0 + 0.5 + 1.0))


def test_predict_requires_both_partition_groups(hand_model):
    with pytest.raises(CoverageError, match="HEAD"):
        predict_accuracy({"BACKBONE": "good"}, hand_model)


def test_predict_from_shares_scales_group_deltas(hand_model):
    pred = predict_from_shares(
        [("fast", "BACKBONE", 0.5), ("good", "BACKBONE", 0.5),
         ("fast", "HEAD", 1.0), ("unknown", "PRE", 1.0),
         ("unknown", "HEAD", 0.0)],
        hand_model)
    assert pred.as_tuple() == pytest.approx((1.05 + 0.1 + 0.1, 10.5 + 0.5 + 3.0))


@given(share=st.floats(0.0, 1.0), grow=st.floats(0.0, 1.0))
@settings(max_examples=100)
def test_shifting_work_to_worse_device_never_helps(share, grow):
    hand_model = build_hand_model()
    worse_share = min(share + grow, 1.0)

    def pred(s):
        return predict_from_shares(
            [("fast", "BACKBONE", s), ("good", "BACKBONE", 1.0 - s),
             ("good", "HEAD", 1.0)], hand_model)

    lo, hi = pred(share), pred(worse_share)
    assert hi.loce_m >= lo.loce_m - 1e-12
    assert hi.orie_deg >= lo.orie_deg - 1e-12


class TestCalibration:
    BASE = metrics(1.0, 10.0)

    def rows_exact(self):
        # totals split 30/70 between BACKBONE and HEAD, matching the
        # default attribution, so the fit is fully determined
        d1_b, d1_h = metrics(0.03, 0.3), metrics(0.07, 0.7)
        d2_b, d2_h = metrics(0.06, 0.6), metrics(0.14, 1.4)
        return [
            ({"BACKBONE": "d0", "HEAD": "d0"}, self.BASE),
            ({"BACKBONE": "d1", "HEAD": "d1"}, self.BASE + d1_b + d1_h),
            ({"BACKBONE": "d2", "HEAD": "d2"}, self.BASE + d2_b + d2_h),
            ({"BACKBONE": "d1", "HEAD": "d2"}, self.BASE + d1_b + d2_h),
            ({"BACKBONE": "d2", "HEAD": "d1"}, self.BASE + d2_b + d1_h),
        ]

    def test_recovers_exactly_decomposable_table(self):
        model, residuals = calibrate_accuracy(self.rows_exact(), self.BASE)
        assert model.model_offset.as_tuple() == (0.0, 0.0)
        for res in residuals:
            assert abs(res.loce_m) < 1e-6 and abs(res.orie_deg) < 1e-6
        assert model.delta("d1", "BACKBONE").as_tuple() == pytest.approx(
            (0.03, 0.3), abs=1e-4)
        assert model.delta("d2", "HEAD").as_tuple() == pytest.approx(
            (0.14, 1.4), abs=1e-4)
        assert model.delta("d0", "HEAD").as_tuple() == pytest.approx(
            (0.0, 0.0), abs=1e-6)

    def test_offset_absorbs_floor_above_baseline(self):
        rows = [({"BACKBONE": "d", "HEAD": "d"}, metrics(1.2, 10.4)),
                ({"BACKBONE": "e", "HEAD": "e"}, metrics(1.5, 10.9))]
        model, residuals = calibrate_accuracy(rows, self.BASE)
        assert model.model_offset.as_tuple() == pytest.approx((0.2, 0.4))
        for res in residuals:
            assert abs(res.loce_m) < 1e-6 and abs(res.orie_deg) < 1e-6

    def test_offset_never_negative(self):
        rows = [({"BACKBONE": "d", "HEAD": "d"}, metrics(0.8, 9.0))]
        model, _ = calibrate_accuracy(rows, self.BASE)
        assert model.model_offset.as_tuple() == (0.0, 0.0)

    def test_mixed_only_device_is_rejected(self):
        rows = [({"BACKBONE": "d1", "HEAD": "d1"}, metrics(1.1, 11.0)),
                ({"BACKBONE": "d1", "HEAD": "ghost"}, metrics(1.2, 12.0))]
        with pytest.raises(CalibrationError, match="ghost"):
            calibrate_accuracy(rows, self.BASE)

    def test_row_must_cover_both_groups(self):
        with pytest.raises(CalibrationError, match="HEAD"):
            calibrate_accuracy([({"BACKBONE": "d"}, metrics(1.0, 10.0))],
                               self.BASE)

    def test_attribution_validation(self):
        rows = self.rows_exact()
        with pytest.raises(CalibrationError, match="attribution"):
            calibrate_accuracy(rows, self.BASE, attribution={"BACKBONE": 1.0})
        with pytest.raises(CalibrationError, match="sum to 1"):
            calibrate_accuracy(rows, self.BASE,
                               attribution={"BACKBONE": 0.7, "HEAD": 0.7})

    def test_empty_rows_rejected(self):
        with pytest.raises(CalibrationError, match="no measurement"):
            calibrate_accuracy([], self.BASE)

    def test_deltas_are_nonnegative(self):
        model, _ = calibrate_accuracy(self.rows_exact(), self.BASE)
        for delta in model.deltas.values():
            assert delta.loce_m >= 0.0 and delta.orie_deg >= 0.0


class TestBundledTableFit:
    """Checks against the shipped measurement table.

    The expected deltas below were derived by hand from the table: the
    offset is the componentwise best row minus the baseline, the mixed
    row pins one delta sum per metric, and the attribution prior picks
    the point of each feasible segment closest to the 30/70 split.
    """

    def test_row_residuals_tiny(self, accuracy_fit):
        model, residuals = accuracy_fit
        for res in residuals:
            assert abs(res.loce_m) <= 1e-4
            assert abs(res.orie_deg) <= 1e-4

    def test_offset_matches_best_measured_rows(self, accuracy_fit):
        model, _ = accuracy_fit
        assert model.model_offset.as_tuple() == pytest.approx((0.03, 0.08))

    def test_hand_derived_deltas(self, accuracy_fit):
        model, _ = accuracy_fit
        expect = {
            ("dpu", "BACKBONE"): (0.02, 0.00),
            ("dpu", "HEAD"): (0.28, 2.01),
            ("vpu", "BACKBONE"): (0.03, 1.39),
            ("vpu", "HEAD"): (0.00, 0.04),
        }
        for key, vals in expect.items():
            assert model.deltas[key].as_tuple() == pytest.approx(vals, abs=5e-3)

    def test_mixed_row_prediction_is_exact(self, accuracy_fit):
        model, _ = accuracy_fit
        pred = predict_accuracy({"BACKBONE": "dpu", "HEAD": "vpu"}, model)
        assert pred.as_tuple() == pytest.approx((0.68, 7.32), abs=1e-4)

    def test_all_predictions_at_least_floor(self, accuracy_fit):
        model, _ = accuracy_fit
        floor = model.baseline + model.model_offset
        devices = sorted({dev for dev, _ in model.deltas})
        for db in devices:
            for dh in devices:
                pred = predict_accuracy({"BACKBONE": db, "HEAD": dh}, model)
                assert pred.loce_m >= floor.loce_m - 1e-12
                assert pred.orie_deg >= floor.orie_deg - 1e-12


def test_document_round_trip(hand_model):
    doc = model_to_document(hand_model)
    again = model_from_document(doc)
    assert model_to_document(again) == doc
    assert again.baseline == hand_model.baseline
    assert again.deltas == hand_model.deltas
