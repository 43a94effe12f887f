"""Command line interface.

Subcommands:

* ``inject``      run the pipeline over a seed corpus and emit artifacts
* ``survey``      sample attack points and report yield against retries
* ``heap-check``  enumerate allocator corruption cases
* ``coverage``    function coverage of the seed corpus
* ``validate``    reproduce a finished run from its report and confirm
                  every emitted artifact matches

Exit codes: 0 success, 1 a validation verdict failed, 2 the corpus
cannot supply the requested bugs, 3 operational errors.  Errors print a
one-line JSON record to stderr so callers can parse them.  The
``CHAFFC_LOG`` environment variable sets the log level.

``validate`` deliberately re-runs the whole pipeline from the emitted
``original.c`` with the report's own config instead of trusting the
stored records: the pipeline is deterministic, so every byte of the
report, the transformed source, and the trigger files must reproduce
exactly, and the rerun repeats every trigger replay and proof check
along the way.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema

from . import __version__
from .driver import PipelineError, RunConfig, coverage, inject, survey
from .figures import (
    fig_bug_counts,
    fig_coverage,
    fig_failure_reasons,
    fig_survey_curve,
)
from .frontend.diagnostics import Diagnostic, EditError
from .frontend.nodes import Program
from .frontend.parser import parse
from .frontend.printer import print_program
from .frontend.resolve import resolve
from .heap import SUCCESSOR_CLASSES, check_corruption_cases
from .interp.machine import ExecError
from .mining import BUG_TYPES, QuotaInfeasible
from .report import (
    assemble_report,
    bugs_csv,
    counts_csv,
    record_from_dict,
    render_report,
    trigger_filename,
    validate_report,
)

log = logging.getLogger(__name__)


class CliError(Exception):
    """A problem with how the tool was invoked, not with the pipeline."""


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _setup_logging() -> None:
    name = os.environ.get("CHAFFC_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _emit_error(kind: str, detail: str) -> None:
    print(json.dumps({"error": {"kind": kind, "detail": detail}}),
          file=sys.stderr)


def _load_program(path: str) -> Program:
    src = Path(path).read_text()
    return resolve(parse(src, os.path.basename(path)))


def _load_inputs(path: str) -> list[tuple[str, bytes]]:
    d = Path(path)
    if not d.is_dir():
        raise CliError(f"--inputs {path} is not a directory")
    pairs: list[tuple[str, bytes]] = []
    seen: set[str] = set()
    for f in sorted(d.iterdir()):
        if not f.is_file():
            continue
        if f.stem in seen:
            raise CliError(f"duplicate input id {f.stem!r} in {path}")
        seen.add(f.stem)
        pairs.append((f.stem, f.read_bytes()))
    if not pairs:
        raise CliError(f"no seed inputs in {path}")
    return pairs


def _parse_quotas(text: str) -> dict[str, int]:
    quotas: dict[str, int] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, num = part.partition("=")
        if not sep or not num.strip().isdigit():
            raise CliError(f"bad quota {part!r}, expected type=count")
        quotas[name.strip()] = int(num.strip())
    if not quotas:
        raise CliError("empty --bugs quota list")
    return quotas


_FLAG_FIELDS = ("seed", "stages", "flow_depth", "crash_marker", "tcn_max",
                "liveness_max", "retry_cap", "attempt_budget", "max_steps")


def _config_from(args: argparse.Namespace) -> RunConfig:
    """Config file first, then flags on top.  Every flag defaults to
    None so only the ones actually given override the file."""
    kwargs: dict = {}
    if getattr(args, "config", None):
        loaded = json.loads(Path(args.config).read_text())
        if not isinstance(loaded, dict):
            raise CliError("config file must hold a JSON object")
        allowed = {f.name for f in dataclasses.fields(RunConfig)}
        stray = sorted(set(loaded) - allowed)
        if stray:
            raise CliError(f"unknown config keys: {', '.join(stray)}")
        kwargs.update(loaded)
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            kwargs[name] = value
    if getattr(args, "bugs", ""):
        kwargs["quotas"] = _parse_quotas(args.bugs)
    if getattr(args, "exclude_fn", None):
        kwargs["hot_exclude"] = tuple(args.exclude_fn)
    if "quotas" in kwargs:
        kwargs["quotas"] = {str(k): int(v)
                            for k, v in dict(kwargs["quotas"]).items()}
    if "hot_exclude" in kwargs:
        kwargs["hot_exclude"] = tuple(kwargs["hot_exclude"])
    return RunConfig(**kwargs)


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# inject
# ---------------------------------------------------------------------------


def _cmd_inject(args: argparse.Namespace) -> int:
    program = _load_program(args.program)
    inputs = _load_inputs(args.inputs)
    config = _config_from(args)
    result = inject(program, inputs, config)

    trigger_names = {trigger_filename(r.bug_id) for r in result.records}
    for iid, _ in inputs:
        if f"{iid}.bin" in trigger_names:
            raise CliError(
                f"seed input {iid!r} collides with a trigger file name")

    out = Path(args.out)
    (out / "inputs").mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(exist_ok=True)
    (out / "original.c").write_text(print_program(result.original))
    (out / "transformed.c").write_text(print_program(result.transformed))
    for iid, data in inputs:
        (out / "inputs" / f"{iid}.bin").write_bytes(data)
    for rec in result.records:
        (out / "inputs" / trigger_filename(rec.bug_id)).write_bytes(
            rec.trigger_input)

    report = assemble_report(result, dict(inputs))
    validate_report(report)
    (out / "report.json").write_text(render_report(report))
    counts = result.counts()
    (out / "counts.csv").write_text(counts_csv(counts))
    (out / "bugs.csv").write_text(bugs_csv(result.records))
    fig_bug_counts(counts, str(out / "figures" / "bug_counts.png"))
    fig_failure_reasons(result.failure_reasons(),
                        str(out / "figures" / "failure_reasons.png"))

    requested = sum(c["requested"] for c in counts.values())
    attempted = sum(c["attempted"] for c in counts.values())
    validated = sum(c["validated"] for c in counts.values())
    rate = f", yield {100 * validated / attempted:.1f}%" if attempted else ""
    print(f"validated {validated}/{requested} requested bugs "
          f"({attempted} attempts{rate})")
    for t in BUG_TYPES:
        c = counts[t]
        print(f"  {t:<13} requested {c['requested']:>3}  "
              f"attempted {c['attempted']:>3}  validated {c['validated']:>3}")
    reasons = result.failure_reasons()
    if reasons:
        print("rejections: "
              + ", ".join(f"{k}={v}" for k, v in reasons.items()))
    print(f"report: {out / 'report.json'}")
    return 0 if result.ok else 1


# ---------------------------------------------------------------------------
# survey
# ---------------------------------------------------------------------------


def _cmd_survey(args: argparse.Namespace) -> int:
    program = _load_program(args.program)
    inputs = _load_inputs(args.inputs)
    config = _config_from(args)
    res = survey(program, inputs, config, args.atps)
    print(f"sampled {res.sampled} attack points, retry cap {res.retry_cap}")
    for k, frac in enumerate(res.curve, 1):
        print(f"  after try {k}: {frac:.3f}")
    if args.out:
        out = Path(args.out)
        (out / "figures").mkdir(parents=True, exist_ok=True)
        _write_json(out / "survey.json", res.as_dict())
        fig_survey_curve(res.curve, str(out / "figures" / "survey_curve.png"))
        print(f"survey: {out / 'survey.json'}")
    return 0


# ---------------------------------------------------------------------------
# heap-check
# ---------------------------------------------------------------------------


def _cmd_heap_check(args: argparse.Namespace) -> int:
    res = check_corruption_cases(args.depth)
    consulted_ok = all(r.outcome == "abort"
                       for r in res.rows if r.consulted_corrupted)
    ok = consulted_ok and res.escapes == 0 and res.differential_aborts == 0

    per = {cls: {"cases": 0, "aborts": 0, "silents": 0, "escapes": 0}
           for cls in SUCCESSOR_CLASSES}
    for r in res.rows:
        row = per[r.scenario]
        row["cases"] += 1
        key = {"abort": "aborts", "silent": "silents"}.get(r.outcome,
                                                           "escapes")
        row[key] += 1

    print(f"depth {res.depth}: {len(res.rows)} cases, {res.aborts} abort, "
          f"{res.silents} silent, {res.escapes} escape "
          f"({res.elapsed:.2f}s)")
    for cls in SUCCESSOR_CLASSES:
        c = per[cls]
        print(f"  {cls:<11} cases {c['cases']:>5}  aborts {c['aborts']:>5}  "
              f"silent {c['silents']:>5}  escapes {c['escapes']:>3}")
    print(f"differential aborts with clean metadata: "
          f"{res.differential_aborts}")
    print("corrupted-metadata consultation always aborts: "
          + ("yes" if consulted_ok else "NO"))

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "heap_check.json", {
            "depth": res.depth,
            "ok": ok,
            "aborts": res.aborts,
            "silents": res.silents,
            "escapes": res.escapes,
            "differential_aborts": res.differential_aborts,
            "consulted_always_aborts": consulted_ok,
            "per_class": per,
            "rows": [
                {
                    "scenario": r.scenario,
                    "sequence": list(r.sequence),
                    "outcome": r.outcome,
                    "message": r.message,
                    "step": r.step,
                    "consulted_corrupted": r.consulted_corrupted,
                }
                for r in res.rows
            ],
        })
        print(f"table: {out / 'heap_check.json'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# coverage
# ---------------------------------------------------------------------------


def _cmd_coverage(args: argparse.Namespace) -> int:
    program = _load_program(args.program)
    inputs = _load_inputs(args.inputs)
    config = _config_from(args)
    summary = coverage(program, inputs, config)
    print(f"functions covered: {summary.covered_functions}"
          f"/{summary.total_functions} ({100 * summary.coverage:.1f}%)")
    print(f"adjusted for pre-input execution: "
          f"{100 * summary.adjusted_coverage:.1f}% "
          f"({summary.pre_input_only} functions run only before input)")
    print(f"functions holding attack points: {summary.atp_functions}")
    for f in summary.files:
        print(f"  {f.file:<24} {f.covered}/{f.functions} covered, "
              f"{f.atp_functions} with attack points")
    if args.out:
        out = Path(args.out)
        (out / "figures").mkdir(parents=True, exist_ok=True)
        _write_json(out / "coverage.json", summary.as_dict())
        fig_coverage(summary.as_dict(),
                     str(out / "figures" / "coverage.png"))
        print(f"coverage: {out / 'coverage.json'}")
    return 0


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def _cmd_validate(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    failures = 0
    total = 0

    def check(name: str, ok: bool, detail: str = "") -> None:
        nonlocal failures, total
        total += 1
        if not ok:
            failures += 1
        line = f"{'ok' if ok else 'FAIL':<4} {name}"
        if detail and not ok:
            line += f": {detail}"
        print(line)

    raw = (out / "report.json").read_text()
    stored = json.loads(raw)
    try:
        validate_report(stored)
        check("report schema", True)
    except jsonschema.ValidationError as e:
        check("report schema", False, e.message)
        print(f"{total - failures}/{total} checks passed")
        return 1
    check("report canonical form", render_report(stored) == raw)

    inputs: list[tuple[str, bytes]] = []
    bad_input = ""
    for entry in stored["inputs"]:
        data = (out / entry["file"]).read_bytes()
        if (hashlib.sha256(data).hexdigest() != entry["sha256"]
                or len(data) != entry["size"]):
            bad_input = entry["file"]
        inputs.append((entry["id"], data))
    check("seed inputs match recorded hashes", not bad_input,
          f"{bad_input} differs from the report")

    original_src = (out / "original.c").read_text()
    transformed_src = (out / "transformed.c").read_text()
    check("original source hash",
          hashlib.sha256(original_src.encode()).hexdigest()
          == stored["program"]["original_sha256"])
    check("transformed source hash",
          hashlib.sha256(transformed_src.encode()).hexdigest()
          == stored["program"]["transformed_sha256"])

    cfg_d = dict(stored["config"])
    cfg_d["quotas"] = dict(cfg_d["quotas"])
    cfg_d["hot_exclude"] = tuple(cfg_d["hot_exclude"])
    config = RunConfig(**cfg_d)
    program = resolve(parse(original_src, "original.c"))
    result = inject(program, inputs, config)

    check("original pretty-print reproduced",
          print_program(result.original) == original_src)
    check("transformed source reproduced",
          print_program(result.transformed) == transformed_src)

    regen = assemble_report(result, dict(inputs))
    regen["timestamps"] = stored["timestamps"]
    check("report reproduced byte-identically",
          render_report(regen) == raw)

    stored_records = [record_from_dict(b) for b in stored["bugs"]]
    check("stored bug records reproduced", stored_records == result.records)

    bad_trigger = ""
    for rec in result.records:
        f = out / "inputs" / trigger_filename(rec.bug_id)
        if not f.is_file() or f.read_bytes() != rec.trigger_input:
            bad_trigger = f.name
    check("trigger files match records", not bad_trigger,
          f"{bad_trigger} differs from its record")

    check("counts.csv reproduced",
          (out / "counts.csv").read_text() == counts_csv(result.counts()))
    check("bugs.csv reproduced",
          (out / "bugs.csv").read_text() == bugs_csv(result.records))
    check("all replays and proofs pass", result.ok)

    print(f"{total - failures}/{total} checks passed")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="deterministic run seed")
    p.add_argument("--tcn-max", type=int, default=None,
                   help="max taint compute number for usable bytes")
    p.add_argument("--liveness-max", type=int, default=None,
                   help="max branch liveness for usable bytes")
    p.add_argument("--max-steps", type=int, default=None,
                   help="interpreter step budget per run")
    p.add_argument("--config", default=None,
                   help="JSON file of config values; flags override it")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="chaffc",
        description="inject provably non-exploitable overflow bugs "
                    "into mini-C programs")
    p.add_argument("--version", action="version",
                   version=f"chaffc {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    pi = sub.add_parser("inject", help="inject bugs and emit artifacts")
    pi.add_argument("program", help="mini-C source file")
    pi.add_argument("--inputs", required=True,
                    help="directory of seed input files")
    pi.add_argument("--bugs", default="",
                    help="quotas, e.g. oc-stack=2,oc-heap=1,unused-stack=1")
    pi.add_argument("--out", required=True, help="output directory")
    pi.add_argument("--stages", type=int, default=None,
                    help="trigger reassembly stage count")
    pi.add_argument("--flow-depth", type=int, default=None,
                    help="dataflow duplication depth")
    pi.add_argument("--crash-marker", action="store_true", default=None,
                    help="give dormant bugs a crashing marker")
    pi.add_argument("--retry-cap", type=int, default=None,
                    help="candidate retries per attack point")
    pi.add_argument("--attempt-budget", type=int, default=None,
                    help="max synthesis attempts, 0 = unlimited")
    pi.add_argument("--exclude-fn", action="append", default=None,
                    metavar="NAME",
                    help="keep this function bug-free; repeatable")
    _add_config_flags(pi)
    pi.set_defaults(fn=_cmd_inject)

    ps = sub.add_parser("survey",
                        help="sample attack points, measure retry yield")
    ps.add_argument("program")
    ps.add_argument("--inputs", required=True)
    ps.add_argument("--atps", type=int, required=True,
                    help="number of attack points to sample")
    ps.add_argument("--retries", dest="retry_cap", type=int, default=None,
                    help="candidate tries per attack point")
    ps.add_argument("--out", default="",
                    help="directory for survey.json and the curve figure")
    _add_config_flags(ps)
    ps.set_defaults(fn=_cmd_survey)

    ph = sub.add_parser("heap-check",
                        help="enumerate allocator corruption cases")
    ph.add_argument("--depth", type=int, default=3,
                    help="op sequence depth to enumerate")
    ph.add_argument("--out", default="",
                    help="directory for heap_check.json")
    ph.set_defaults(fn=_cmd_heap_check)

    pc = sub.add_parser("coverage",
                        help="function coverage of the seed corpus")
    pc.add_argument("program")
    pc.add_argument("--inputs", required=True)
    pc.add_argument("--out", default="",
                    help="directory for coverage.json and figure")
    _add_config_flags(pc)
    pc.set_defaults(fn=_cmd_coverage)

    pv = sub.add_parser("validate",
                        help="reproduce a run from its report and verify "
                             "every artifact")
    pv.add_argument("out_dir", help="directory a previous inject wrote")
    pv.set_defaults(fn=_cmd_validate)

    return p


def main(argv=None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except QuotaInfeasible as e:
        _emit_error("quota-infeasible", str(e))
        return 2
    except (CliError, PipelineError, Diagnostic, EditError, ExecError,
            OSError, ValueError) as e:
        _emit_error(type(e).__name__, str(e))
        return 3


if __name__ == "__main__":
    sys.exit(main())
