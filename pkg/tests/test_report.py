"""Report serialization tests.

The record round-trip is the load-bearing property: the validate
subcommand rebuilds BugRecords from a report on disk and re-runs every
check, so any field lost or reshaped in serialization would silently
weaken revalidation.  The rest pins the schema and render determinism.
"""

import copy
import hashlib
import json

import jsonschema
import pytest

import test_synth as ts
from chaffc import __version__
from chaffc.driver import RunConfig, inject
from chaffc.frontend.parser import parse
from chaffc.frontend.printer import print_program
from chaffc.frontend.resolve import resolve
from chaffc.mining import BUG_TYPES
from chaffc.report import (
    SCHEMA_VERSION,
    assemble_report,
    bugs_csv,
    counts_csv,
    record_from_dict,
    record_to_dict,
    render_report,
    trigger_filename,
    validate_report,
)

QUOTA3 = {"oc-stack": 1, "oc-heap": 1, "unused-stack": 1}
INPUTS = {"seed-0": ts.SEED}
STAMP = "2026-01-01T00:00:00+00:00"


@pytest.fixture(scope="module")
def program():
    return resolve(parse(ts.SYNTH_SRC, "fixture.c"))


@pytest.fixture(scope="module")
def result(program):
    cfg = RunConfig(seed=7, quotas=dict(QUOTA3))
    return inject(program, sorted(INPUTS.items()), cfg)


@pytest.fixture(scope="module")
def report(result):
    return assemble_report(result, INPUTS, generated=STAMP)


# -- record round-trip ------------------------------------------------------


def test_record_round_trip_through_json(result):
    assert result.records
    for rec in result.records:
        wire = json.loads(json.dumps(record_to_dict(rec)))
        assert record_from_dict(wire) == rec


def test_record_dict_is_json_safe(result):
    for rec in result.records:
        d = record_to_dict(rec)
        json.dumps(d)
        assert d["trigger_input"] == rec.trigger_input.hex()
        assert isinstance(d["region"], list)
        assert isinstance(d["names"]["c_globals"], list)


def test_heap_region_spans_restored_as_tuples(result):
    heap = [r for r in result.records if r.bug_type == "oc-heap"]
    assert heap
    rec = heap[0]
    back = record_from_dict(json.loads(json.dumps(record_to_dict(rec))))
    assert back.region == rec.region
    assert isinstance(back.region[2], tuple)
    assert isinstance(back.region[2][0], tuple)


# -- assembly ---------------------------------------------------------------


def test_report_validates_against_schema(report):
    validate_report(report)
    assert report["schema_version"] == SCHEMA_VERSION


def test_tool_stamp(report):
    assert report["tool"] == {"name": "chaffc", "version": __version__}


def test_program_hashes(report, result):
    want = hashlib.sha256(print_program(result.original).encode()).hexdigest()
    assert report["program"]["original_sha256"] == want
    assert report["program"]["transformed_sha256"] != want


def test_input_entries(report):
    entry = report["inputs"][0]
    assert entry["id"] == "seed-0"
    assert entry["file"] == "inputs/seed-0.bin"
    assert entry["size"] == len(ts.SEED)
    assert entry["sha256"] == hashlib.sha256(ts.SEED).hexdigest()


def test_counts_section_arithmetic(report, result):
    counts = report["counts"]
    assert counts["attempted"] == len(result.attempts)
    assert counts["validated"] == len(result.records) == len(report["bugs"])
    assert counts["validation_rate"] == counts["validated"] / counts["attempted"]
    rejected = sum(counts["failure_reasons"].values())
    assert rejected == counts["attempted"] - counts["validated"]


def test_trigger_file_paths(report):
    for bug in report["bugs"]:
        assert bug["trigger_file"] == f"inputs/{trigger_filename(bug['bug_id'])}"


# -- determinism ------------------------------------------------------------


def test_render_identical_across_fresh_runs(program, result):
    cfg = RunConfig(seed=7, quotas=dict(QUOTA3))
    again = inject(program, sorted(INPUTS.items()), cfg)
    a = assemble_report(result, INPUTS, generated=STAMP)
    b = assemble_report(again, INPUTS, generated=STAMP)
    a["timestamps"]["elapsed_seconds"] = 0.0
    b["timestamps"]["elapsed_seconds"] = 0.0
    assert render_report(a) == render_report(b)


def test_time_variation_confined_to_timestamps(result):
    a = assemble_report(result, INPUTS, generated="2026-01-01T00:00:00+00:00")
    b = assemble_report(result, INPUTS, generated="2026-06-30T23:59:59+00:00")
    assert a != b
    a.pop("timestamps")
    b.pop("timestamps")
    assert render_report(a) == render_report(b)


# -- schema rejections ------------------------------------------------------


def test_schema_rejects_missing_section(report):
    broken = copy.deepcopy(report)
    del broken["bugs"]
    with pytest.raises(jsonschema.ValidationError):
        validate_report(broken)


def test_schema_rejects_wrong_version(report):
    broken = copy.deepcopy(report)
    broken["schema_version"] = 99
    with pytest.raises(jsonschema.ValidationError):
        validate_report(broken)


def test_schema_rejects_stray_top_level_key(report):
    broken = copy.deepcopy(report)
    broken["debug"] = True
    with pytest.raises(jsonschema.ValidationError):
        validate_report(broken)


def test_schema_rejects_mangled_trigger_hex(report):
    broken = copy.deepcopy(report)
    broken["bugs"][0]["trigger_input"] = "zz"
    with pytest.raises(jsonschema.ValidationError):
        validate_report(broken)


# -- flat renderings --------------------------------------------------------


def test_counts_csv_shape(result):
    lines = counts_csv(result.counts()).splitlines()
    assert lines[0] == "type,requested,attempted,validated"
    assert len(lines) == 1 + len(BUG_TYPES)
    counts = result.counts()
    for line, t in zip(lines[1:], BUG_TYPES):
        c = counts[t]
        assert line == f"{t},{c['requested']},{c['attempted']},{c['validated']}"


def test_bugs_csv_shape(result):
    lines = bugs_csv(result.records).splitlines()
    assert lines[0] == ("bug_id,bug_type,stack_target,func,atp_nid,"
                        "magic,input_id,trigger_file")
    assert len(lines) == 1 + len(result.records)
    first = result.records[0]
    assert lines[1].startswith(f"{first.bug_id},{first.bug_type},")
    assert lines[1].endswith(f"inputs/bug_{first.bug_id}.bin")
