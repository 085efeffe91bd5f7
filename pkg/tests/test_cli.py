import hashlib
import json
import subprocess
import sys

import pytest

from camflux.cli import main
from camflux.core import BBox, Detection, GroundTruthObject, serialize_detections, serialize_ground_truth


def _write_run(tmp_path, name, keep):
    """Two objects over 30 frames; ``keep(frame, obj)`` decides if a detection is emitted."""
    dets, gts = [], []
    for f in range(30):
        for j in range(2):
            box = BBox(50.0 * j, 10.0, 30.0, 30.0)
            gts.append(GroundTruthObject(f, j, box, "car"))
            if keep(f, j):
                dets.append(Detection(f, box, "car", 0.8))
    det_path = tmp_path / f"{name}.csv"
    det_path.write_text(serialize_detections(dets))
    gt_path = tmp_path / "gt.csv"
    gt_path.write_text(serialize_ground_truth(gts))
    return str(det_path), str(gt_path)


@pytest.fixture
def runs(tmp_path):
    det_a, gt = _write_run(tmp_path, "a", lambda f, j: (f + j) % 3 != 0)
    det_b, _ = _write_run(tmp_path, "b", lambda f, j: True)
    return det_a, det_b, gt


def _read_json(path):
    return json.loads(path.read_text())


def _digest_dir(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.iterdir())}


def test_analyze_writes_artifacts(runs, tmp_path, capsys):
    det_a, _, gt = runs
    out = tmp_path / "out"
    assert main(["analyze", "--det", det_a, "--gt", gt, "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["flux_F10.csv", "flux_F2.csv", "flux_summary.json", "tp_series.csv"]
    summary = _read_json(out / "flux_summary.json")
    assert summary["n_frames"] == 30
    assert set(summary["summaries"]) == {"F2", "F10"}
    manifest = summary["manifest"]
    assert manifest["command"] == "analyze"
    assert set(manifest["input_digests"]) == {det_a, gt}
    assert manifest["config_snapshot"]["iou_threshold"] == 0.5
    assert "F2:" in capsys.readouterr().out


def test_explicit_windows_equal_defaults(runs, tmp_path):
    det_a, _, gt = runs
    d1, d2 = tmp_path / "d1", tmp_path / "d2"
    assert main(["analyze", "--det", det_a, "--gt", gt, "--out", str(d1)]) == 0
    assert main(["analyze", "--det", det_a, "--gt", gt, "--out", str(d2), "--window", "2", "--window", "10"]) == 0
    assert _digest_dir(d1) == _digest_dir(d2)


def test_missing_file_names_path(tmp_path, capsys):
    missing = str(tmp_path / "nope.csv")
    assert main(["analyze", "--det", missing, "--gt", missing, "--out", str(tmp_path)]) == 2
    assert missing in capsys.readouterr().err


def test_parse_error_exit_code(tmp_path, runs, capsys):
    _, _, gt = runs
    bad = tmp_path / "bad.csv"
    bad.write_text("0,car,1.5,0,0,1,1\n")
    assert main(["analyze", "--det", str(bad), "--gt", gt, "--out", str(tmp_path / "o")]) == 2
    assert "line 1" in capsys.readouterr().err


def test_window_longer_than_series(runs, tmp_path):
    det_a, _, gt = runs
    assert main(["analyze", "--det", det_a, "--gt", gt, "--window", "31", "--out", str(tmp_path / "o")]) == 3


def test_json_format(runs, tmp_path):
    det_a, _, gt = runs
    out = tmp_path / "j"
    assert main(["analyze", "--det", det_a, "--gt", gt, "--format", "json", "--out", str(out)]) == 0
    series = _read_json(out / "tp_series.json")
    assert len(series["tp"]) == 30
    assert _read_json(out / "flux_F2.json")["window"] == 2


def test_config_file_and_flag_precedence(runs, tmp_path):
    det_a, _, gt = runs
    conf = tmp_path / "run.conf"
    conf.write_text("# matching\niou_threshold = 0.7\nstrategy = optimal\n")
    out = tmp_path / "c"
    assert main(["analyze", "--det", det_a, "--gt", gt, "--config", str(conf), "--iou", "0.6", "--out", str(out)]) == 0
    snap = _read_json(out / "flux_summary.json")["manifest"]["config_snapshot"]
    assert snap["iou_threshold"] == 0.6 and snap["strategy"] == "optimal"
    conf.write_text("bogus_key = 1\n")
    assert main(["analyze", "--det", det_a, "--gt", gt, "--config", str(conf), "--out", str(out)]) == 2


def test_compare_identical_runs(runs, tmp_path):
    det_a, _, gt = runs
    out = tmp_path / "cmp"
    assert main(["compare", "--det-a", det_a, "--det-b", det_a, "--gt", gt, "--out", str(out)]) == 0
    report = _read_json(out / "compare_report.json")["paired_test"]
    assert report["p_value"] == 1.0 and report["reject_null"] is False


def test_compare_detects_improvement(runs, tmp_path):
    det_a, det_b, gt = runs
    out = tmp_path / "cmp"
    assert main(["compare", "--det-a", det_a, "--det-b", det_b, "--gt", gt, "--out", str(out)]) == 0
    body = _read_json(out / "compare_report.json")
    assert body["paired_test"]["mean_diff"] > 0 and body["paired_test"]["reject_null"]
    assert body["flux_b"]["F2"]["max"] == 0.0


@pytest.mark.parametrize("alpha", ["0", "1", "1.5", "-0.1"])
def test_compare_alpha_out_of_range(runs, tmp_path, alpha):
    det_a, det_b, gt = runs
    assert main(["compare", "--det-a", det_a, "--det-b", det_b, "--gt", gt, "--alpha", alpha, "--out", str(tmp_path)]) == 2


def test_compare_length_mismatch(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("frame_id,tp,gt\n0,1,2\n1,2,2\n2,1,2\n")
    b.write_text("frame_id,tp,gt\n0,1,2\n1,2,2\n")
    assert main(["compare", "--series-a", str(a), "--series-b", str(b), "--window", "2", "--out", str(tmp_path / "o")]) == 3


def test_track_single_box(tmp_path):
    det = tmp_path / "d.csv"
    det.write_text(serialize_detections([Detection(f, BBox(5, 5, 20, 20), "car", 0.9) for f in range(20)]))
    out = tmp_path / "t"
    assert main(["track", "--det", str(det), "--out", str(out)]) == 0
    churn = _read_json(out / "churn_report.json")["churn"]
    assert churn["total_track_ids"] == 1 and churn["confirmed_track_ids"] == 1
    assert (out / "tracks.csv").read_text().count("\n") == 21


def test_track_dropout_gives_more_ids(runs, tmp_path):
    det_a, det_b, gt = runs
    ids = []
    for k, det in enumerate((det_b, det_a)):
        out = tmp_path / f"track{k}"
        assert main(["track", "--det", det, "--gt", gt, "--max-age", "0", "--out", str(out)]) == 0
        ids.append(_read_json(out / "churn_report.json")["churn"]["total_track_ids"])
    assert ids[0] == 2 and ids[1] > ids[0]


def test_unwritable_output_dir(runs, tmp_path, capsys):
    det_a, _, gt = runs
    assert main(["analyze", "--det", det_a, "--gt", gt, "--out", det_a]) == 2
    assert "cannot write" in capsys.readouterr().err


def test_simulate_frames_zero(tmp_path):
    assert main(["simulate", "--frames", "0", "--out", str(tmp_path)]) == 2


def test_simulate_bad_config(tmp_path):
    assert main(["simulate", "--flicker", "2", "--frames", "5", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--ab", "alpha=1,2", "--frames", "5", "--out", str(tmp_path)]) == 2


def test_simulate_rerun_is_byte_identical(tmp_path):
    d1, d2 = tmp_path / "s1", tmp_path / "s2"
    args = ["simulate", "--frames", "200", "--flicker", "0.3", "--seed", "5"]
    assert main(args + ["--out", str(d1)]) == 0
    assert main(args + ["--out", str(d2)]) == 0
    assert _digest_dir(d1) == _digest_dir(d2)
    assert sorted(p.name for p in d1.iterdir()) == ["frames.csv", "simulation_summary.json", "tp_series.csv"]


def test_simulated_series_feed_analyze(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--frames", "100", "--out", str(sim)]) == 0
    out = tmp_path / "an"
    assert main(["analyze", "--series", str(sim / "tp_series.csv"), "--out", str(out)]) == 0
    assert (out / "tp_series.csv").read_bytes() == (sim / "tp_series.csv").read_bytes()


def test_exposure_ab_rejects(tmp_path):
    out = tmp_path / "ab"
    assert main(["simulate", "--ab", "e_max=0.25,0.008333", "--out", str(out)]) == 0
    body = _read_json(out / "compare_report.json")
    assert body["paired_test"]["reject_null"] is True
    assert body["flux_a"]["F2"]["max"] > body["flux_b"]["F2"]["max"]
    assert body["manifest"]["config_snapshot"]["ab"] == {"key": "e_max", "a": 0.25, "b": 0.008333}


def test_flicker_ab_rejects(tmp_path):
    out = tmp_path / "ab"
    assert main(["simulate", "--ab", "flicker_depth=0,0.3", "--out", str(out)]) == 0
    assert _read_json(out / "compare_report.json")["paired_test"]["reject_null"] is True


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "camflux", "simulate", "--frames", "20", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "simulated 20 frames" in proc.stdout
