import json

from sastsieve.backends import ScriptedBackend
from sastsieve.benchmark import load_ground_truth
from sastsieve.model import (
    Classification,
    FailOpenCause,
    FilteredFinding,
    Verdict,
)
from sastsieve.pipeline import plan_mission, run_mission
from sastsieve.report import (
    Report,
    build_report,
    detections_of,
    fmt_metric,
    load_report,
    render_json,
    render_text,
)
from sastsieve.filter_agent import FilterStats
from sastsieve.scoring import ConfusionMatrix, CweScorecard, compute_metrics
from tests.conftest import make_finding
from tests.test_filter_agent import FailingBackend
from tests.test_pipeline import benchmark_results, saved_scan


def empty_report(**overrides) -> Report:
    fields = dict(
        run_id="deadbeef0000",
        plan_summary={"batch_size": 15, "target_root": None},
        retained=(),
        suppressed=(),
        fail_open_events=(),
        stats=FilterStats(batch_count=0, llm_calls=0, fail_open_events=(), total_latency=0.0),
        scorecard=None,
        baseline_deltas=None,
        started_at="2026-01-01T00:00:00+00:00",
        finished_at="2026-01-01T00:00:10+00:00",
    )
    fields.update(overrides)
    return Report(**fields)


def mission_report(tmp_path, gt=None, baseline=None, results=None, backend=None):
    plan_config = {"scan_json": saved_scan(tmp_path, results or benchmark_results(10))}
    if gt is not None:
        gt_path = tmp_path / "expected.csv"
        gt_path.write_bytes(gt)
        plan_config["ground_truth"] = str(gt_path)
    plan = plan_mission(plan_config)
    mission = run_mission(plan, backend or ScriptedBackend({}, default="true_positive"))
    loaded_gt = load_ground_truth(gt) if gt is not None else None
    return build_report(mission, loaded_gt, baseline)


def test_empty_run_renders_with_schema_version():
    payload = render_json(empty_report())
    doc = json.loads(payload)
    assert doc["schema_version"] == "1"
    assert doc["retained"] == [] and doc["suppressed"] == []
    assert doc["scorecard"] is None


def test_render_load_render_is_byte_identical(tmp_path):
    gt = b"".join(
        f"BenchmarkTest{n:05d},sqli,{'true' if n % 2 else 'false'},89\n".encode()
        for n in range(1, 11)
    )
    baseline = {(make_finding(0, test_num=n).test_id, 89) for n in range(1, 4)}
    report = mission_report(tmp_path, gt=gt, baseline=baseline)
    assert report.scorecard is not None and report.baseline_deltas is not None
    first = render_json(report)
    reloaded = load_report(first)
    assert reloaded == report
    assert render_json(reloaded) == first


def test_absent_metrics_encode_as_null():
    cm = ConfusionMatrix(0, 0, 10, 0)
    card = CweScorecard(per_cwe={89: (cm, compute_metrics(cm))}, overall=(cm, compute_metrics(cm)))
    payload = render_json(empty_report(scorecard=card))
    doc = json.loads(payload)
    metrics = doc["scorecard"]["per_cwe"]["89"]["metrics"]
    assert metrics["precision"] is None
    assert metrics["fpr"] == 0.0


def test_text_report_shows_published_f1(tmp_path, distribution_csv, pipeline_detections):
    # A report whose scorecard carries the published overall matrix.
    from sastsieve.scoring import score_per_cwe

    gt = load_ground_truth(distribution_csv)
    card = score_per_cwe(pipeline_detections, gt)
    text = render_text(empty_report(scorecard=card))
    assert "f1" in text
    assert "0.909" in text
    assert "0.823" in text  # Youden's J
    assert "2740 test cases" in text


def test_text_report_zero_suppressed_reads_none():
    text = render_text(empty_report())
    assert "suppressed:" in text
    assert "(none)" in text


def test_text_report_lists_fail_open_causes():
    events = ((0, "timeout"), (2, "malformed_response"), (3, "timeout"))
    stats = FilterStats(batch_count=4, llm_calls=4, fail_open_events=events, total_latency=1.0)
    finding = make_finding(1)
    retained = tuple(
        FilteredFinding(finding, Verdict.fail_open(FailOpenCause.TIMEOUT), 0) for _ in range(1)
    )
    text = render_text(empty_report(stats=stats, fail_open_events=events, retained=retained))
    assert "timeout x2" in text
    assert "malformed_response x1" in text


def test_text_report_caps_lists_with_more_marker():
    retained = tuple(
        FilteredFinding(make_finding(i), Verdict.llm(Classification.TRUE_POSITIVE, "r"), 0)
        for i in range(30)
    )
    text = render_text(empty_report(retained=retained), max_retained=20)
    assert "(+10 more)" in text


def test_text_report_orders_retained_by_severity():
    from sastsieve.model import Severity

    low = FilteredFinding(
        make_finding(1, severity=Severity.INFO), Verdict.llm("true_positive", "r"), 0
    )
    high = FilteredFinding(
        make_finding(2, severity=Severity.ERROR), Verdict.llm("true_positive", "r"), 0
    )
    text = render_text(empty_report(retained=(low, high)))
    assert text.index("[error]") < text.index("[info]")


def test_suppressed_findings_keep_their_rationales(tmp_path):
    findings = benchmark_results(3)
    backend = ScriptedBackend({}, default="false_positive")
    report = mission_report(tmp_path, results=findings, backend=backend)
    doc = json.loads(render_json(report))
    assert len(doc["suppressed"]) == 3
    assert all(e["verdict"]["rationale"] for e in doc["suppressed"])
    text = render_text(report)
    assert "scripted default" in text


def test_fail_open_events_survive_round_trip(tmp_path):
    report = mission_report(tmp_path, backend=FailingBackend())
    doc = json.loads(render_json(report))
    assert doc["fail_open_events"] == [{"batch_index": 0, "cause": "transport_error"}]
    assert load_report(render_json(report)).fail_open_events == ((0, "transport_error"),)


def test_detections_of_uses_kept_findings_with_test_ids():
    with_id = FilteredFinding(make_finding(1, cwe=89, test_num=7), Verdict.evidence("e:1"))
    without_id = FilteredFinding(make_finding(2), Verdict.evidence("e:2"))
    pairs = detections_of([with_id, without_id])
    assert len(pairs) == 1
    (tid, code), = pairs
    assert tid.value == "BenchmarkTest00007" and code == 89


def test_fmt_metric():
    assert fmt_metric(None) == "n/a"
    assert fmt_metric(0.9092920353982301) == "0.909"
    assert fmt_metric(1.0) == "1.000"


def test_load_report_rejects_bad_documents():
    import pytest

    from sastsieve.report import ReportFormatError

    with pytest.raises(ReportFormatError):
        load_report(b"not json")
    with pytest.raises(ReportFormatError):
        load_report(b'{"schema_version": "99"}')
    with pytest.raises(ReportFormatError):
        load_report(b'{"schema_version": "1"}')  # missing sections


def test_baseline_deltas_in_report(tmp_path, distribution_csv, baseline_detections):
    gt_doc = distribution_csv
    results = [
        {
            "check_id": "sqli.rule",
            "path": f"src/BenchmarkTest{n:05d}.java",
            "start": {"line": 40},
            "end": {"line": 44},
            "extra": {
                "severity": "ERROR",
                "message": "m",
                "metadata": {"cwe": "CWE-22: Path Traversal"},
            },
        }
        for n in range(1, 30)
    ]
    report = mission_report(tmp_path, gt=gt_doc, baseline=baseline_detections, results=results)
    assert report.baseline_deltas is not None
    doc = json.loads(render_json(report))
    assert set(doc["baseline_deltas"]["per_cwe"].keys()) == {
        str(code) for code in report.scorecard.per_cwe
    }
    text = render_text(report)
    assert "f1 deltas vs baseline" in text
