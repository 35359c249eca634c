"""Profile calibration: parsing, the measurement-table fit, throughput-target fit."""

import copy
import json

import pytest

from hetsim.accmodel import CalibrationError
from hetsim.calibrate import (fig2_targets_from_document, fit_fig2_profiles,
                              fit_profiles, load_fig2_targets,
                              load_measurements, load_skeleton,
                              measurements_from_document,
                              skeleton_from_document)
from hetsim.data import data_path
from hetsim.devmodel import platform_to_document
from hetsim.netgraph import load_graph
from hetsim.simulator import simulate


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class TestMeasurementsParsing:
    def base_doc(self):
        return {
            "baseline_accuracy": {"loce_m": 0.63, "orie_deg": 7.2},
            "rows": [{"label": "r", "assignment": {"PRE": "d", "BACKBONE": "d",
                                                   "HEAD": "d"},
                      "inference_ms": 100.0, "total_ms": 120.0}],
        }

    def test_minimal_document(self):
        baseline, rows = measurements_from_document(self.base_doc())
        assert baseline.as_tuple() == (0.63, 7.2)
        assert rows[0].inference_s == pytest.approx(0.1)
        assert rows[0].total_s == pytest.approx(0.12)
        assert rows[0].accuracy is None

    def test_unknown_top_field(self):
        doc = self.base_doc()
        doc["comment"] = "hello"
        with pytest.raises(CalibrationError, match="unknown fields"):
            measurements_from_document(doc)

    def test_row_requires_core_fields(self):
        doc = self.base_doc()
        del doc["rows"][0]["total_ms"]
        with pytest.raises(CalibrationError, match="total_ms"):
            measurements_from_document(doc)

    def test_assignment_keys_must_be_groups(self):
        doc = self.base_doc()
        doc["rows"][0]["assignment"] = {"TRUNK": "d"}
        with pytest.raises(CalibrationError, match="groups"):
            measurements_from_document(doc)

    def test_no_rows(self):
        doc = self.base_doc()
        doc["rows"] = []
        with pytest.raises(CalibrationError, match="no rows"):
            measurements_from_document(doc)

    def test_bundled_table_has_six_rows_and_accuracy(self, table1):
        baseline, rows = table1
        assert baseline.as_tuple() == (0.63, 7.2)
        assert len(rows) == 6
        assert all(row.accuracy is not None for row in rows)


class TestSkeletonParsing:
    def test_bundled_skeleton(self, skeleton):
        assert skeleton.host in skeleton.devices
        assert len(skeleton.devices) == 5

    def test_unknown_field_rejected(self):
        doc = load_json(data_path("platform_skeleton.json"))
        doc["extra"] = 1
        with pytest.raises(CalibrationError, match="unknown fields"):
            skeleton_from_document(doc)

    def test_bounds_need_min_and_max(self):
        doc = load_json(data_path("platform_skeleton.json"))
        doc["devices"][0]["rates"]["conv"] = {"min": 1e8}
        with pytest.raises(CalibrationError, match="min and max"):
            skeleton_from_document(doc)

    def test_bounds_ordering(self):
        doc = load_json(data_path("platform_skeleton.json"))
        doc["devices"][0]["rates"]["conv"] = {"min": 1e12, "max": 1e8}
        with pytest.raises(CalibrationError, match="min > max"):
            skeleton_from_document(doc)

    def test_init_inside_bounds(self):
        doc = load_json(data_path("platform_skeleton.json"))
        doc["devices"][0]["overhead_s"] = {"init": 0.5, "min": 0.0, "max": 0.2}
        with pytest.raises(CalibrationError, match="init outside"):
            skeleton_from_document(doc)


class TestTableFit:
    """The bundled table of measured single- and mixed-device runs."""

    def test_every_row_reproduced_within_two_percent(self, fitted):
        for label, errs in fitted.residuals.items():
            assert abs(errs["inference_rel_err"]) <= 0.02, label
            assert abs(errs["total_rel_err"]) <= 0.02, label

    def test_no_warnings_on_bundled_inputs(self, fitted):
        assert fitted.warnings == []

    def test_deterministic(self, fitted, pose_graph, table1, skeleton):
        _, rows = table1
        again = fit_profiles(rows, pose_graph, skeleton)
        assert (platform_to_document(again.platform)
                == platform_to_document(fitted.platform))

    def test_simulated_rows_match_reported_residuals(self, fitted, pose_graph,
                                                     table1):
        _, rows = table1
        for row in rows:
            report = simulate(pose_graph, row.assignment, fitted.platform)
            expect = fitted.residuals[row.label]["total_rel_err"]
            assert (report.total_s - row.total_s) / row.total_s == pytest.approx(
                expect, abs=1e-12)

    def test_unexercised_free_param_is_an_error(self, pose_graph, table1):
        doc = load_json(data_path("platform_skeleton.json"))
        doc["devices"].append(copy.deepcopy(doc["devices"][0]))
        doc["devices"][-1]["name"] = "ghost"
        doc["devices"][-1]["overhead_s"] = {"min": 0.0, "max": 0.2}
        doc["links"].extend([
            {"src": "cpu_fp16", "dst": "ghost", "bandwidth_Bps": 1e9,
             "latency_s": 1e-4},
            {"src": "ghost", "dst": "cpu_fp16", "bandwidth_Bps": 1e9,
             "latency_s": 1e-4}])
        skeleton = skeleton_from_document(doc)
        _, rows = table1
        with pytest.raises(CalibrationError, match="unidentifiable"):
            fit_profiles(rows, pose_graph, skeleton)

    def test_unexercised_param_with_init_warns(self, pose_graph, table1):
        doc = load_json(data_path("platform_skeleton.json"))
        doc["devices"].append(copy.deepcopy(doc["devices"][0]))
        doc["devices"][-1]["name"] = "ghost"
        doc["links"].extend([
            {"src": "cpu_fp16", "dst": "ghost", "bandwidth_Bps": 1e9,
             "latency_s": 1e-4},
            {"src": "ghost", "dst": "cpu_fp16", "bandwidth_Bps": 1e9,
             "latency_s": 1e-4}])
        # pin every free ghost parameter at an init so the fit can proceed
        dev = doc["devices"][-1]
        dev["rates"]["conv"] = {"init": 1e10, "min": 1e8, "max": 1e13}
        dev["overhead_s"] = {"init": 0.04, "min": 0.01, "max": 0.2}
        dev["preproc_s"] = {"init": 0.01, "min": 0.0, "max": 0.3}
        skeleton = skeleton_from_document(doc)
        _, rows = table1
        result = fit_profiles(rows, pose_graph, skeleton)
        assert any("ghost" in w and "not exercised" in w for w in result.warnings)
        assert result.platform.devices["ghost"].invocation_overhead == 0.04

    def test_duplicate_labels_rejected(self, pose_graph, table1, skeleton):
        _, rows = table1
        with pytest.raises(CalibrationError, match="duplicate row labels"):
            fit_profiles([rows[0], rows[0]], pose_graph, skeleton)

    def test_report_document_shape(self, fitted):
        doc = fitted.to_document()
        assert set(doc) == {"residuals", "warnings", "notes"}
        assert set(doc["residuals"]) == {"cpu_fp32", "cpu_fp16", "vpu", "tpu",
                                         "dpu", "dpu_vpu"}


class TestThroughputTargets:
    def test_bundled_targets_parse(self):
        targets = load_fig2_targets(data_path("fig2_targets.json"))
        assert len(targets.ratios) == 2
        assert len(targets.absolute) == 2
        assert {t.graph for t in targets.absolute} == {"inception_v4"}

    def test_malformed_ratio(self):
        with pytest.raises(CalibrationError, match="ratio"):
            fig2_targets_from_document(
                {"ratios": [{"graph": "g", "numerator": "a", "value": 2.0}],
                 "absolute": []})

    def test_ratio_needs_distinct_devices(self):
        with pytest.raises(CalibrationError, match="distinct"):
            fig2_targets_from_document(
                {"ratios": [{"graph": "g", "numerator": "a",
                             "denominator": "a", "value": 2.0}],
                 "absolute": []})

    def test_absolute_needs_ordered_window(self):
        with pytest.raises(CalibrationError, match="fps_min"):
            fig2_targets_from_document(
                {"ratios": [],
                 "absolute": [{"graph": "g", "device": "a",
                               "fps_min": 10.0, "fps_max": 5.0}]})

    def test_empty_targets_refused(self):
        targets = fig2_targets_from_document({"ratios": [], "absolute": []})
        skeleton = load_skeleton(data_path("fig2_platform_skeleton.json"))
        graphs = {name: load_graph(data_path(f"{name}.json"))
                  for name in ("mobilenet_v2", "resnet50", "inception_v4")}
        with pytest.raises(CalibrationError):
            fit_fig2_profiles(targets, graphs, skeleton)

    def test_targets_must_reference_known_graphs(self):
        targets = fig2_targets_from_document(
            {"ratios": [{"graph": "ghost_net", "numerator": "tpu",
                         "denominator": "vpu", "value": 8.0}],
             "absolute": []})
        skeleton = load_skeleton(data_path("fig2_platform_skeleton.json"))
        with pytest.raises(CalibrationError):
            fit_fig2_profiles(targets, {}, skeleton)
