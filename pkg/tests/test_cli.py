import json

import pytest

from sastsieve.backends import CassetteRecorder, ScriptedBackend
from sastsieve.cli import main
from sastsieve.pipeline import plan_mission, run_mission
from sastsieve.scoring import serialize_detections
from tests.test_pipeline import benchmark_results, saved_scan


@pytest.fixture
def scored_inputs(tmp_path, distribution_csv, pipeline_detections, baseline_detections):
    """On-disk fixtures: ground truth CSV plus both detections files."""
    gt = tmp_path / "expectedresults.csv"
    gt.write_bytes(distribution_csv)
    candidate = tmp_path / "pipeline-detections.txt"
    candidate.write_bytes(serialize_detections(pipeline_detections))
    baseline = tmp_path / "baseline-detections.txt"
    baseline.write_bytes(serialize_detections(baseline_detections))
    return gt, candidate, baseline


def record_cassette(tmp_path, scan_path, cassette_path, default="true_positive"):
    """Record a cassette by running the mission once with a scripted backend."""
    plan = plan_mission({"scan_json": scan_path})
    recorder = CassetteRecorder(ScriptedBackend({}, default=default), cassette_path)
    run_mission(plan, recorder)
    recorder.save()


def test_run_happy_path_with_replay(tmp_path, capsys):
    scan = saved_scan(tmp_path, benchmark_results(10))
    gt_lines = "".join(
        f"BenchmarkTest{n:05d},sqli,{'true' if n % 2 else 'false'},89\n" for n in range(1, 11)
    )
    gt = tmp_path / "expected.csv"
    gt.write_text(gt_lines)
    cassette = tmp_path / "c.json"
    record_cassette(tmp_path, scan, cassette)

    out_json = tmp_path / "report.json"
    out_text = tmp_path / "report.txt"
    code = main(
        [
            "run",
            "--scan-json", scan,
            "--ground-truth", str(gt),
            "--backend", "replay",
            "--cassette", str(cassette),
            "--out-json", str(out_json),
            "--out-text", str(out_text),
        ]
    )
    assert code == 0
    assert out_json.exists() and out_text.exists()
    doc = json.loads(out_json.read_bytes())
    assert doc["schema_version"] == "1"
    assert len(doc["retained"]) == 10
    assert "retained 10" in capsys.readouterr().out


def test_run_without_target_is_config_error(tmp_path, capsys):
    code = main(["run", "--out-json", str(tmp_path / "r.json"), "--out-text", str(tmp_path / "r.txt")])
    assert code == 1
    err = capsys.readouterr().err
    assert "usage:" in err
    assert "target" in err


def test_run_live_without_api_key_names_the_variable(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("QSC_API_KEY", raising=False)
    monkeypatch.delenv("QSC_API_BASE", raising=False)
    scan = saved_scan(tmp_path, benchmark_results(1))
    code = main(["run", "--scan-json", scan, "--backend", "live"])
    assert code == 1
    assert "QSC_API_KEY" in capsys.readouterr().err


def test_run_missing_scan_file_is_scanner_failure(tmp_path, capsys):
    code = main(
        [
            "run",
            "--scan-json", str(tmp_path / "absent.json"),
            "--out-json", str(tmp_path / "r.json"),
            "--out-text", str(tmp_path / "r.txt"),
        ]
    )
    assert code == 2
    assert "scanner" in capsys.readouterr().err


def test_run_replay_requires_cassette(tmp_path, capsys):
    scan = saved_scan(tmp_path, benchmark_results(1))
    code = main(["run", "--scan-json", scan, "--backend", "replay"])
    assert code == 1
    assert "--cassette" in capsys.readouterr().err


def test_score_prints_published_youden_values(scored_inputs, capsys):
    gt, candidate, baseline = scored_inputs
    code = main(["score", "--detections", str(candidate), "--ground-truth", str(gt)])
    assert code == 0
    out = capsys.readouterr().out
    assert "0.823" in out  # overall Youden's J
    assert "2740 test cases" in out

    code = main(["score", "--detections", str(baseline), "--ground-truth", str(gt)])
    assert code == 0
    assert "0.477" in capsys.readouterr().out


def test_score_with_baseline_prints_published_relative_delta(scored_inputs, capsys):
    gt, candidate, baseline = scored_inputs
    code = main(
        [
            "score",
            "--detections", str(candidate),
            "--ground-truth", str(gt),
            "--baseline", str(baseline),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "+16.0%" in out
    assert "CWE-643" in out


def test_score_parse_error_exits_one(tmp_path, scored_inputs, capsys):
    gt, _, _ = scored_inputs
    bad = tmp_path / "bad-detections.txt"
    bad.write_text("not a detection line\n")
    code = main(["score", "--detections", str(bad), "--ground-truth", str(gt)])
    assert code == 1


def test_filter_writes_detections_file(tmp_path):
    scan = saved_scan(tmp_path, benchmark_results(5))
    detections_out = tmp_path / "detections.txt"
    code = main(
        [
            "filter",
            "--scan-json", scan,
            "--out-json", str(tmp_path / "f.json"),
            "--out-text", str(tmp_path / "f.txt"),
            "--detections-out", str(detections_out),
        ]
    )
    assert code == 0
    lines = detections_out.read_text().strip().splitlines()
    assert len(lines) == 5
    assert all(line.endswith(",89") for line in lines)


def test_scan_command_with_fake_scanner(tmp_path, capsys):
    from tests.test_pipeline import fake_scanner

    cmd = fake_scanner(tmp_path, results=benchmark_results(2))
    out = tmp_path / "scan-out.json"
    code = main(["scan", "--target", str(tmp_path), "--scanner-cmd", cmd, "--out", str(out)])
    assert code == 0
    assert len(json.loads(out.read_text())["results"]) == 2


def test_scan_command_scanner_failure_exits_two(tmp_path, capsys):
    code = main(["scan", "--target", str(tmp_path), "--scanner-cmd", "/no/such/bin"])
    assert code == 2


def test_report_command_rerenders(tmp_path, capsys):
    scan = saved_scan(tmp_path, benchmark_results(4))
    out_json = tmp_path / "r.json"
    main(["run", "--scan-json", scan, "--out-json", str(out_json), "--out-text", str(tmp_path / "r.txt")])
    capsys.readouterr()

    code = main(["report", "--in", str(out_json)])
    assert code == 0
    assert "retained findings" in capsys.readouterr().out

    rewritten = tmp_path / "r2.json"
    code = main(["report", "--in", str(out_json), "--out-json", str(rewritten)])
    assert code == 0
    assert rewritten.read_bytes() == out_json.read_bytes()

    code = main(["report", "--in", str(out_json), "--max-retained", "2"])
    assert code == 0
    assert "(+2 more)" in capsys.readouterr().out  # 4 retained, 2 shown


def test_replay_command_runs_from_cassette(tmp_path):
    scan = saved_scan(tmp_path, benchmark_results(6))
    cassette = tmp_path / "c.json"
    record_cassette(tmp_path, scan, cassette, default="false_positive")
    code = main(
        [
            "replay",
            "--scan-json", scan,
            "--cassette", str(cassette),
            "--out-json", str(tmp_path / "r.json"),
            "--out-text", str(tmp_path / "r.txt"),
        ]
    )
    assert code == 0
    doc = json.loads((tmp_path / "r.json").read_bytes())
    assert len(doc["suppressed"]) == 6


def test_config_file_applies_and_flags_override(tmp_path):
    scan = saved_scan(tmp_path, benchmark_results(7))
    config = tmp_path / "mission.cfg"
    config.write_text(
        f"# mission settings\nscan_json = {scan}\nbatch_size = 2\nparallelism = 1\n"
    )
    out_json = tmp_path / "r.json"
    code = main(
        [
            "run",
            "--config", str(config),
            "--batch-size", "3",  # flag overrides the file's 2
            "--out-json", str(out_json),
            "--out-text", str(tmp_path / "r.txt"),
        ]
    )
    assert code == 0
    doc = json.loads(out_json.read_bytes())
    assert doc["plan"]["batch_size"] == 3
    assert doc["stats"]["batch_count"] == 3  # ceil(7 / 3)


def test_every_command_help_exits_zero(capsys):
    for command in ("run", "scan", "filter", "score", "report", "replay"):
        with pytest.raises(SystemExit) as exc_info:
            main([command, "--help"])
        assert exc_info.value.code == 0
        assert "--help" in capsys.readouterr().out


def test_unknown_flag_rejected_with_usage(capsys):
    with pytest.raises(SystemExit) as exc_info:
        main(["run", "--frobnicate"])
    assert exc_info.value.code == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "unrecognized arguments" in err


def test_failed_run_does_not_clobber_existing_cassette(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("QSC_API_KEY", "k")
    monkeypatch.setenv("QSC_API_BASE", "http://127.0.0.1:9")
    monkeypatch.setenv("QSC_MODEL", "m")
    cassette = tmp_path / "precious.json"
    cassette.write_text('[{"request_digest": "d", "response_text": "t"}]')
    code = main(
        [
            "run",
            "--scan-json", str(tmp_path / "absent.json"),
            "--backend", "live",
            "--cassette", str(cassette),
            "--out-json", str(tmp_path / "r.json"),
            "--out-text", str(tmp_path / "r.txt"),
        ]
    )
    assert code == 2  # scan failed before any LLM call
    assert json.loads(cassette.read_text())[0]["request_digest"] == "d"


def test_run_no_fail_open_aborts_on_filter_failure(tmp_path, capsys):
    scan = saved_scan(tmp_path, benchmark_results(4))
    cassette = tmp_path / "empty-cassette.json"
    cassette.write_text("[]")  # every lookup misses -> batch failure
    code = main(
        [
            "run",
            "--scan-json", scan,
            "--backend", "replay",
            "--cassette", str(cassette),
            "--no-fail-open",
            "--out-json", str(tmp_path / "r.json"),
            "--out-text", str(tmp_path / "r.txt"),
        ]
    )
    assert code == 1
    assert "filter error" in capsys.readouterr().err


def test_cwe_alias_table_applies_end_to_end(tmp_path):
    results = benchmark_results(3, cwe="CWE-200")
    scan = saved_scan(tmp_path, results)
    cwe_map = tmp_path / "aliases.txt"
    cwe_map.write_text("200 -> 22\n")
    out_json = tmp_path / "r.json"
    code = main(
        [
            "run",
            "--scan-json", scan,
            "--cwe-map", str(cwe_map),
            "--out-json", str(out_json),
            "--out-text", str(tmp_path / "r.txt"),
        ]
    )
    assert code == 0
    doc = json.loads(out_json.read_bytes())
    assert {f["finding"]["cwe_code"] for f in doc["retained"]} == {22}


def test_replay_is_idempotent(tmp_path):
    scan = saved_scan(tmp_path, benchmark_results(8))
    cassette = tmp_path / "c.json"
    record_cassette(tmp_path, scan, cassette)
    outputs = []
    for n in (1, 2):
        out_json = tmp_path / f"r{n}.json"
        code = main(
            [
                "replay",
                "--scan-json", scan,
                "--cassette", str(cassette),
                "--out-json", str(out_json),
                "--out-text", str(tmp_path / f"r{n}.txt"),
            ]
        )
        assert code == 0
        doc = json.loads(out_json.read_bytes())
        doc.pop("timing")
        outputs.append(json.dumps(doc, sort_keys=True))
    assert outputs[0] == outputs[1]
