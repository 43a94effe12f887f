"""Smoke tests for figure rendering: each chart writes a real PNG."""

from chaffc.figures import (
    fig_bug_counts,
    fig_coverage,
    fig_failure_reasons,
    fig_survey_curve,
)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

PER_TYPE = {
    "oc-stack": {"requested": 2, "attempted": 3, "validated": 2},
    "oc-heap": {"requested": 1, "attempted": 1, "validated": 1},
    "unused-stack": {"requested": 1, "attempted": 2, "validated": 1},
}

COVERAGE = {
    "total_functions": 5,
    "covered_functions": 4,
    "files": [
        {"file": "a.c", "coverage": 0.8, "adjusted_coverage": 1.0},
        {"file": "b.c", "coverage": 0.5, "adjusted_coverage": 0.5},
    ],
}


def _check(path):
    data = path.read_bytes()
    assert data.startswith(PNG_MAGIC)
    assert len(data) > 1000


def test_bug_counts_png(tmp_path):
    out = tmp_path / "counts.png"
    assert fig_bug_counts(PER_TYPE, str(out)) == str(out)
    _check(out)


def test_failure_reasons_png(tmp_path):
    out = tmp_path / "reasons.png"
    fig_failure_reasons({"no-fault": 2, "claim-conflict": 1}, str(out))
    _check(out)


def test_failure_reasons_png_with_no_rejections(tmp_path):
    out = tmp_path / "reasons.png"
    fig_failure_reasons({}, str(out))
    _check(out)


def test_survey_curve_png(tmp_path):
    out = tmp_path / "curve.png"
    fig_survey_curve((0.25, 0.5, 0.5, 0.75, 0.75), str(out))
    _check(out)


def test_coverage_png(tmp_path):
    out = tmp_path / "coverage.png"
    fig_coverage(COVERAGE, str(out))
    _check(out)
