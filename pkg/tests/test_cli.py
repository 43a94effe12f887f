"""End-to-end CLI tests: artifact layout, exit codes, revalidation.

Everything drives main() in-process.  The inject fixture runs once per
module; tamper tests copy the output tree before breaking it.
"""

import json
import shutil

import pytest

import test_synth as ts
from chaffc.cli import main
from chaffc.report import validate_report

NOHEAP_SRC = """
int main(void) {
    char buf[8];
    int v;
    read_input(buf, 8);
    memcpy(&v, buf, 4);
    print_int(v + 1);
    return 0;
}
"""

BUGS3 = "oc-stack=1,oc-heap=1,unused-stack=1"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    (base / "inputs").mkdir()
    (base / "prog.c").write_text(ts.SYNTH_SRC)
    (base / "inputs" / "seed-0.bin").write_bytes(ts.SEED)
    return base


def _inject(workdir, out, *extra):
    return main(["inject", str(workdir / "prog.c"),
                 "--inputs", str(workdir / "inputs"),
                 "--bugs", BUGS3, "--seed", "7", "--out", str(out), *extra])


@pytest.fixture(scope="module")
def outdir(workdir):
    out = workdir / "out"
    assert _inject(workdir, out) == 0
    return out


# -- inject -----------------------------------------------------------------


def test_inject_emits_expected_artifacts(outdir):
    for name in ("report.json", "original.c", "transformed.c",
                 "counts.csv", "bugs.csv",
                 "inputs/seed-0.bin",
                 "figures/bug_counts.png", "figures/failure_reasons.png"):
        assert (outdir / name).is_file(), name
    report = json.loads((outdir / "report.json").read_text())
    validate_report(report)
    for bug in report["bugs"]:
        trigger = outdir / bug["trigger_file"]
        assert trigger.is_file()
        assert trigger.read_bytes().hex() == bug["trigger_input"]


def test_inject_prints_summary(workdir, capsys):
    assert _inject(workdir, workdir / "out-verbose") == 0
    text = capsys.readouterr().out
    assert "validated 3/3 requested bugs" in text
    assert "oc-heap" in text
    assert "report:" in text


def test_inject_deterministic_across_out_dirs(workdir, outdir):
    out2 = workdir / "out-again"
    assert _inject(workdir, out2) == 0
    a = json.loads((outdir / "report.json").read_text())
    b = json.loads((out2 / "report.json").read_text())
    assert a != b
    a.pop("timestamps")
    b.pop("timestamps")
    assert a == b
    assert ((outdir / "transformed.c").read_bytes()
            == (out2 / "transformed.c").read_bytes())


def test_inject_crash_marker_flag(workdir):
    out = workdir / "out-marker"
    code = main(["inject", str(workdir / "prog.c"),
                 "--inputs", str(workdir / "inputs"),
                 "--bugs", "unused-stack=1", "--seed", "7",
                 "--crash-marker", "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["crash_marker"] is True
    assert report["bugs"][0]["marker_nid"] >= 0


def test_inject_exclude_fn_flag(workdir):
    out = workdir / "out-excluded"
    code = main(["inject", str(workdir / "prog.c"),
                 "--inputs", str(workdir / "inputs"),
                 "--bugs", "oc-stack=1", "--seed", "7",
                 "--exclude-fn", "process", "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["hot_exclude"] == ["process"]
    assert all(b["func"] != "process" for b in report["bugs"])


def test_config_file_with_flag_override(workdir):
    cfg = workdir / "run.json"
    cfg.write_text(json.dumps({"seed": 5, "stages": 3}))
    out = workdir / "out-config"
    assert _inject(workdir, out, "--config", str(cfg)) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["seed"] == 7
    assert report["config"]["stages"] == 3


def test_config_file_rejects_unknown_keys(workdir, capsys):
    cfg = workdir / "bad.json"
    cfg.write_text(json.dumps({"seeed": 5}))
    code = _inject(workdir, workdir / "out-bad", "--config", str(cfg))
    assert code == 3
    err = json.loads(capsys.readouterr().err)
    assert "seeed" in err["error"]["detail"]


# -- exit codes -------------------------------------------------------------


def test_infeasible_quota_exits_2(tmp_path, capsys):
    (tmp_path / "inputs").mkdir()
    (tmp_path / "prog.c").write_text(NOHEAP_SRC)
    (tmp_path / "inputs" / "a.bin").write_bytes(bytes([5, 0, 0, 0, 1, 2, 3, 4]))
    code = main(["inject", str(tmp_path / "prog.c"),
                 "--inputs", str(tmp_path / "inputs"),
                 "--bugs", "oc-heap=1", "--seed", "3",
                 "--out", str(tmp_path / "out")])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["kind"] == "quota-infeasible"
    assert "oc-heap" in err["error"]["detail"]


def test_missing_program_exits_3(workdir, capsys):
    code = main(["inject", str(workdir / "absent.c"),
                 "--inputs", str(workdir / "inputs"),
                 "--bugs", BUGS3, "--out", str(workdir / "out-x")])
    assert code == 3
    assert json.loads(capsys.readouterr().err)["error"]["kind"]


def test_malformed_quota_exits_3(workdir, capsys):
    code = main(["inject", str(workdir / "prog.c"),
                 "--inputs", str(workdir / "inputs"),
                 "--bugs", "oc-stack", "--out", str(workdir / "out-x")])
    assert code == 3
    assert "expected type=count" in json.loads(
        capsys.readouterr().err)["error"]["detail"]


def test_unknown_bug_type_exits_3(workdir, capsys):
    code = main(["inject", str(workdir / "prog.c"),
                 "--inputs", str(workdir / "inputs"),
                 "--bugs", "rop=1", "--out", str(workdir / "out-x")])
    assert code == 3
    assert "rop" in json.loads(capsys.readouterr().err)["error"]["detail"]


# -- validate ---------------------------------------------------------------


def test_validate_passes_on_fresh_output(outdir, capsys):
    assert main(["validate", str(outdir)]) == 0
    text = capsys.readouterr().out
    assert "FAIL" not in text
    assert "checks passed" in text


def test_validate_catches_tampered_source(outdir, tmp_path, capsys):
    copy = tmp_path / "tampered"
    shutil.copytree(outdir, copy)
    with open(copy / "transformed.c", "a") as f:
        f.write("\n")
    assert main(["validate", str(copy)]) == 1
    assert "FAIL transformed source hash" in capsys.readouterr().out


def test_validate_catches_tampered_trigger(outdir, tmp_path, capsys):
    copy = tmp_path / "tampered-trigger"
    shutil.copytree(outdir, copy)
    target = next(copy.glob("inputs/bug_*.bin"))
    data = bytearray(target.read_bytes())
    data[0] ^= 0xFF
    target.write_bytes(bytes(data))
    assert main(["validate", str(copy)]) == 1
    assert "FAIL trigger files match records" in capsys.readouterr().out


def test_validate_catches_edited_report(outdir, tmp_path, capsys):
    copy = tmp_path / "tampered-report"
    shutil.copytree(outdir, copy)
    report = json.loads((copy / "report.json").read_text())
    report["bugs"][0]["magic"] = 1
    (copy / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    assert main(["validate", str(copy)]) == 1
    out = capsys.readouterr().out
    assert "FAIL report reproduced byte-identically" in out
    assert "FAIL stored bug records reproduced" in out


# -- survey / heap-check / coverage -----------------------------------------


def test_survey_cmd(workdir, capsys):
    out = workdir / "sv"
    code = main(["survey", str(workdir / "prog.c"),
                 "--inputs", str(workdir / "inputs"),
                 "--atps", "4", "--retries", "5", "--seed", "7",
                 "--out", str(out)])
    assert code == 0
    assert "sampled 4 attack points" in capsys.readouterr().out
    data = json.loads((out / "survey.json").read_text())
    assert len(data["curve"]) == 5
    assert (out / "figures" / "survey_curve.png").is_file()


def test_heap_check_cmd(workdir, capsys):
    out = workdir / "hc"
    assert main(["heap-check", "--depth", "2", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "differential aborts with clean metadata: 0" in text
    data = json.loads((out / "heap_check.json").read_text())
    assert data["ok"] is True
    assert len(data["rows"]) == 195
    assert data["escapes"] == 0


def test_coverage_cmd(workdir, capsys):
    out = workdir / "cov"
    code = main(["coverage", str(workdir / "prog.c"),
                 "--inputs", str(workdir / "inputs"),
                 "--out", str(out)])
    assert code == 0
    assert "functions covered: 5/5" in capsys.readouterr().out
    data = json.loads((out / "coverage.json").read_text())
    assert data["coverage"] == 1.0
    assert (out / "figures" / "coverage.png").is_file()
