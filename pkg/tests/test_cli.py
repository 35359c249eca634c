"""End-to-end runs of every subcommand against the bundled inputs."""

import csv
import json
import subprocess
import sys

import pytest

from hetsim.cli import main
from hetsim.data import data_path

GRAPH = str(data_path("ursonet_proxy.json"))
MEASUREMENTS = str(data_path("table1.json"))
SKELETON = str(data_path("platform_skeleton.json"))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def calibrated_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("calibrated")
    rc = main(["calibrate", "--graph", GRAPH, "--measurements", MEASUREMENTS,
               "--platform", SKELETON, "--seed", "7", "--out-dir", str(out)])
    assert rc == 0
    return out


class TestCalibrate:
    def test_writes_platform_model_and_report(self, calibrated_dir):
        assert (calibrated_dir / "fitted_platform.json").exists()
        assert (calibrated_dir / "accuracy_model.json").exists()
        report = read_json(calibrated_dir / "fit_report.json")
        assert report["seed"] == 7
        assert set(report["residuals"]) == {"cpu_fp32", "cpu_fp16", "vpu",
                                            "tpu", "dpu", "dpu_vpu"}
        assert "accuracy_residuals" in report

    def test_fitted_platform_loads(self, calibrated_dir):
        doc = read_json(calibrated_dir / "fitted_platform.json")
        assert {d["name"] for d in doc["devices"]} == {
            "cpu_fp16", "cpu_fp32", "vpu", "tpu", "dpu"}


class TestPartition:
    def test_constrained_search(self, calibrated_dir, tmp_path, capsys):
        rc = main(["partition", "--graph", GRAPH,
                   "--platform", str(calibrated_dir / "fitted_platform.json"),
                   "--accuracy-model", str(calibrated_dir / "accuracy_model.json"),
                   "--max-orie", "7.5", "--out-dir", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "LOCE" in out and "wrote" in out
        assignment = read_json(tmp_path / "assignment.json")
        assert assignment["groups"]["BACKBONE"] == "dpu"
        assert assignment["groups"]["HEAD"] == "vpu"
        report = read_json(tmp_path / "schedule_report.json")
        assert report["accuracy"]["orie_deg"] <= 7.5

    def test_written_assignment_feeds_simulate(self, calibrated_dir, tmp_path,
                                               capsys):
        rc = main(["partition", "--graph", GRAPH,
                   "--platform", str(calibrated_dir / "fitted_platform.json"),
                   "--accuracy-model", str(calibrated_dir / "accuracy_model.json"),
                   "--max-orie", "7.5", "--out-dir", str(tmp_path)])
        assert rc == 0
        partition_report = read_json(tmp_path / "schedule_report.json")
        out = tmp_path / "replay"
        rc = main(["simulate", "--graph", GRAPH,
                   "--platform", str(calibrated_dir / "fitted_platform.json"),
                   "--assignment", str(tmp_path / "assignment.json"),
                   "--out-dir", str(out)])
        assert rc == 0
        capsys.readouterr()
        replay = read_json(out / "schedule_report.json")
        assert replay["total_s"] == partition_report["total_s"]
        assert replay["assignment"] == partition_report["assignment"]

    def test_infeasible_writes_diagnostic_and_fails(self, calibrated_dir,
                                                    tmp_path, capsys):
        rc = main(["partition", "--graph", GRAPH,
                   "--platform", str(calibrated_dir / "fitted_platform.json"),
                   "--accuracy-model", str(calibrated_dir / "accuracy_model.json"),
                   "--max-loce", "0.01", "--out-dir", str(tmp_path)])
        assert rc == 1
        assert "error:" in capsys.readouterr().err
        doc = read_json(tmp_path / "infeasibility_report.json")
        assert doc["binding_constraint"] == "max_loce_m"
        assert doc["violations"]["max_loce_m"] > 0
        assert doc["best_assignment"]
        assert not (tmp_path / "assignment.json").exists()


class TestSimulateAndThroughput:
    @pytest.fixture
    def assignment_file(self, tmp_path):
        path = tmp_path / "assignment_in.json"
        path.write_text(json.dumps({"PRE": "dpu", "BACKBONE": "dpu",
                                    "HEAD": "vpu"}))
        return path

    def test_simulate_outputs(self, calibrated_dir, tmp_path, assignment_file,
                              capsys):
        out = tmp_path / "sim"
        rc = main(["simulate", "--graph", GRAPH,
                   "--platform", str(calibrated_dir / "fitted_platform.json"),
                   "--assignment", str(assignment_file),
                   "--accuracy-model", str(calibrated_dir / "accuracy_model.json"),
                   "--out-dir", str(out)])
        assert rc == 0
        assert "Configuration" in capsys.readouterr().out
        report = read_json(out / "schedule_report.json")
        assert report["graph"] == "ursonet_proxy"
        assert report["total_s"] > report["inference_s"] > 0
        with open(out / "traces.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["device", "kind", "start_s", "end_s", "layers"]
        assert len(rows) > 2

    def test_throughput_pipelined_flag(self, calibrated_dir, tmp_path,
                                       assignment_file, capsys):
        out = tmp_path / "tp"
        rc = main(["throughput", "--graph", GRAPH,
                   "--platform", str(calibrated_dir / "fitted_platform.json"),
                   "--assignment", str(assignment_file),
                   "--pipelined", "--out-dir", str(out)])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "pipelined FPS:" in stdout
        assert "sequential" not in stdout
        doc = read_json(out / "throughput.json")
        assert doc["fps_pipelined"] >= doc["fps_sequential"] > 0


def test_pareto_csv(calibrated_dir, tmp_path, capsys):
    rc = main(["pareto", "--graph", GRAPH,
               "--platform", str(calibrated_dir / "fitted_platform.json"),
               "--accuracy-model", str(calibrated_dir / "accuracy_model.json"),
               "--out-dir", str(tmp_path)])
    assert rc == 0
    assert "non-dominated" in capsys.readouterr().out
    with open(tmp_path / "pareto.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["pre_device", "backbone_device", "head_device",
                       "total_ms", "loce_m", "orie_deg", "energy_j"]
    assert len(rows) >= 2
    objs = [(float(r[3]), float(r[5]), float(r[6])) for r in rows[1:]]
    for a in objs:
        for b in objs:
            if a != b:
                assert not all(x <= y for x, y in zip(a, b))


class TestValidate:
    def test_all_inputs(self, calibrated_dir, tmp_path, capsys):
        assignment = tmp_path / "a.json"
        assignment.write_text(json.dumps({"PRE": "dpu", "BACKBONE": "dpu",
                                          "HEAD": "dpu"}))
        rc = main(["validate", "--graph", GRAPH,
                   "--platform", str(calibrated_dir / "fitted_platform.json"),
                   "--measurements", MEASUREMENTS,
                   "--assignment", str(assignment)])
        assert rc == 0
        out = capsys.readouterr().out
        for token in ("graph OK", "platform OK", "measurements OK",
                      "assignment OK"):
            assert token in out

    def test_assignment_needs_graph(self, tmp_path, capsys):
        assignment = tmp_path / "a.json"
        assignment.write_text(json.dumps({"PRE": "dpu"}))
        rc = main(["validate", "--assignment", str(assignment)])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_nothing_to_validate(self, capsys):
        assert main(["validate"]) == 1
        assert "nothing to validate" in capsys.readouterr().err


class TestBadInput:
    def test_invalid_json_graph(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        rc = main(["validate", "--graph", str(bad)])
        assert rc == 1
        assert "not valid JSON" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        rc = main(["validate", "--graph", str(tmp_path / "ghost.json")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_subcommand_is_usage_error(self, capsys):
        with pytest.raises(SystemExit):
            main([])


def test_out_dir_is_created(calibrated_dir, tmp_path):
    nested = tmp_path / "deep" / "nested"
    assignment = tmp_path / "a.json"
    assignment.write_text(json.dumps({"PRE": "dpu", "BACKBONE": "dpu",
                                      "HEAD": "dpu"}))
    rc = main(["throughput", "--graph", GRAPH,
               "--platform", str(calibrated_dir / "fitted_platform.json"),
               "--assignment", str(assignment), "--out-dir", str(nested)])
    assert rc == 0
    assert (nested / "throughput.json").exists()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hetsim", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("calibrate", "partition", "simulate", "throughput", "pareto",
                "validate"):
        assert sub in proc.stdout
