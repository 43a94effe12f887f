"""Report assembly, schema checking, and flat-file rendering.

The report is the pipeline's durable output: a single JSON document
carrying the configuration, the accepted bug records, the full attempt
log, and the validation verdicts.  Two runs with the same program,
corpus, and config must render byte-identically, so everything that
varies between runs (wall-clock time, elapsed seconds) lives under the
single ``timestamps`` key and nowhere else.

Bug records round-trip: ``record_from_dict(record_to_dict(r)) == r``.
The validate subcommand relies on this to rebuild records from a report
on disk and re-run every check against the emitted sources.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
from datetime import datetime, timezone
from typing import Mapping, Sequence

import jsonschema

from . import __version__
from .driver import Attempt, InjectResult
from .frontend.printer import print_program
from .mining import BUG_TYPES
from .synth import BugNames, BugRecord

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Bug record serialization
# ---------------------------------------------------------------------------

# region descriptors mix strings, ints, and nested spans; JSON turns the
# tuples into lists, so restoring needs the full recursive inverse
def _listify(v):
    if isinstance(v, tuple):
        return [_listify(x) for x in v]
    return v


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def trigger_filename(bug_id: int) -> str:
    return f"bug_{bug_id}.bin"


def record_to_dict(rec: BugRecord) -> dict:
    d = dataclasses.asdict(rec)
    d["trigger_input"] = rec.trigger_input.hex()
    d["names"] = {k: _listify(v)
                  for k, v in dataclasses.asdict(rec.names).items()}
    for key in ("trigger_positions", "chain_masks", "stage_anchor_nids",
                "dataflow_modified", "claims", "store_nids",
                "region", "consume_region"):
        d[key] = _listify(d[key])
    return d


def record_from_dict(d: Mapping) -> BugRecord:
    names = BugNames(**{**d["names"],
                        "c_globals": tuple(d["names"]["c_globals"])})
    return BugRecord(
        bug_id=d["bug_id"],
        bug_type=d["bug_type"],
        stack_target=d["stack_target"],
        func=d["func"],
        atp_nid=d["atp_nid"],
        atp_kind=d["atp_kind"],
        magic=d["magic"],
        trigger_path=d["trigger_path"],
        trigger_func=d["trigger_func"],
        trigger_nid=d["trigger_nid"],
        trigger_positions=tuple(d["trigger_positions"]),
        attack_path=d["attack_path"],
        attack_func=d["attack_func"],
        attack_nid=d["attack_nid"],
        chain_masks=tuple(d["chain_masks"]),
        stage_anchor_nids=tuple(d["stage_anchor_nids"]),
        dataflow_modified=tuple(d["dataflow_modified"]),
        claims=tuple(d["claims"]),
        input_id=d["input_id"],
        trigger_input=bytes.fromhex(d["trigger_input"]),
        names=names,
        guard_nid=d["guard_nid"],
        store_nids=tuple(d["store_nids"]),
        consume_nid=d["consume_nid"],
        region=_tuplify(d["region"]),
        consume_region=_tuplify(d["consume_region"]),
        marker_nid=d["marker_nid"],
    )


def attempt_to_dict(a: Attempt) -> dict:
    return dataclasses.asdict(a)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def _sha256(data) -> str:
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha256(data).hexdigest()


def assemble_report(result: InjectResult, inputs: Mapping[str, bytes],
                    generated: str = "") -> dict:
    """Build the report dict for an inject run.

    `inputs` is the seed corpus the run consumed.  `generated` overrides
    the wall-clock stamp; tests pass a fixed value so rendered output
    can be compared whole.
    """
    counts = result.counts()
    attempted = sum(c["attempted"] for c in counts.values())
    validated = sum(c["validated"] for c in counts.values())
    if not generated:
        generated = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "chaffc", "version": __version__},
        "timestamps": {
            "generated": generated,
            "elapsed_seconds": result.elapsed,
        },
        "config": result.config.as_dict(),
        "program": {
            "functions": len(result.original.functions()),
            "original_sha256": _sha256(print_program(result.original)),
            "transformed_sha256": _sha256(print_program(result.transformed)),
        },
        "inputs": [
            {
                "id": iid,
                "file": f"inputs/{iid}.bin",
                "sha256": _sha256(inputs[iid]),
                "size": len(inputs[iid]),
            }
            for iid in sorted(inputs)
        ],
        "counts": {
            "per_type": counts,
            "attempted": attempted,
            "validated": validated,
            "validation_rate": validated / attempted if attempted else 0.0,
            "failure_reasons": result.failure_reasons(),
        },
        "bugs": [
            {**record_to_dict(r),
             "trigger_file": f"inputs/{trigger_filename(r.bug_id)}"}
            for r in result.records
        ],
        "attempts": [attempt_to_dict(a) for a in result.attempts],
        "validation": result.validation.as_dict(),
    }


def render_report(report: Mapping) -> str:
    """Canonical textual form: sorted keys, two-space indent, one
    trailing newline.  Byte-stable for identical dicts."""
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

_SHA = {"type": "string", "pattern": "^[0-9a-f]{64}$"}
_HEX = {"type": "string", "pattern": "^([0-9a-f]{2})*$"}
_INTS = {"type": "array", "items": {"type": "integer"}}
_STRS = {"type": "array", "items": {"type": "string"}}
_BUG_TYPE = {"enum": list(BUG_TYPES)}
_STACK_TARGET = {"enum": ["saved-fp", "return-address", ""]}

_NAMES_SCHEMA = {
    "type": "object",
    "required": ["trig", "idx", "c_globals", "buf", "ptr", "pay",
                 "dum0", "dum1", "out", "flow", "sink"],
    "additionalProperties": False,
    "properties": {
        "trig": {"type": "string"},
        "idx": {"type": "string"},
        "c_globals": _STRS,
        "buf": {"type": "string"},
        "ptr": {"type": "string"},
        "pay": {"type": "string"},
        "dum0": {"type": "string"},
        "dum1": {"type": "string"},
        "out": {"type": "string"},
        "flow": {"type": "string"},
        "sink": {"type": "string"},
    },
}

_BUG_SCHEMA = {
    "type": "object",
    "required": [
        "bug_id", "bug_type", "stack_target", "func", "atp_nid", "atp_kind",
        "magic", "trigger_path", "trigger_func", "trigger_nid",
        "trigger_positions", "attack_path", "attack_func", "attack_nid",
        "chain_masks", "stage_anchor_nids", "dataflow_modified", "claims",
        "input_id", "trigger_input", "names", "guard_nid", "store_nids",
        "consume_nid", "region", "consume_region", "marker_nid",
        "trigger_file",
    ],
    "additionalProperties": False,
    "properties": {
        "bug_id": {"type": "integer", "minimum": 1},
        "bug_type": _BUG_TYPE,
        "stack_target": _STACK_TARGET,
        "func": {"type": "string"},
        "atp_nid": {"type": "integer"},
        "atp_kind": {"enum": ["stack-frame", "heap-adjacent"]},
        "magic": {"type": "integer"},
        "trigger_path": {"type": "string"},
        "trigger_func": {"type": "string"},
        "trigger_nid": {"type": "integer"},
        "trigger_positions": _INTS,
        "attack_path": {"type": "string"},
        "attack_func": {"type": "string"},
        "attack_nid": {"type": "integer"},
        "chain_masks": _INTS,
        "stage_anchor_nids": _INTS,
        "dataflow_modified": _STRS,
        "claims": _STRS,
        "input_id": {"type": "string"},
        "trigger_input": _HEX,
        "names": _NAMES_SCHEMA,
        "guard_nid": {"type": "integer"},
        "store_nids": _INTS,
        "consume_nid": {"type": "integer"},
        "region": {"type": "array"},
        "consume_region": {"type": "array"},
        "marker_nid": {"type": "integer"},
        "trigger_file": {"type": "string"},
    },
}

_ATTEMPT_SCHEMA = {
    "type": "object",
    "required": ["index", "input_id", "bug_type", "stack_target",
                 "atp_nid", "atp_func", "trigger_nid", "attack_nid",
                 "outcome", "bug_id"],
    "additionalProperties": False,
    "properties": {
        "index": {"type": "integer", "minimum": 0},
        "input_id": {"type": "string"},
        "bug_type": _BUG_TYPE,
        "stack_target": _STACK_TARGET,
        "atp_nid": {"type": "integer"},
        "atp_func": {"type": "string"},
        "trigger_nid": {"type": "integer"},
        "attack_nid": {"type": "integer"},
        "outcome": {"type": "string"},
        "bug_id": {"type": "integer"},
    },
}

_PER_TYPE = {
    "type": "object",
    "required": ["requested", "attempted", "validated"],
    "properties": {k: {"type": "integer", "minimum": 0}
                   for k in ("requested", "attempted", "validated")},
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "tool", "timestamps", "config",
                 "program", "inputs", "counts", "bugs", "attempts",
                 "validation"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "tool": {
            "type": "object",
            "required": ["name", "version"],
            "properties": {
                "name": {"const": "chaffc"},
                "version": {"type": "string"},
            },
        },
        "timestamps": {
            "type": "object",
            "required": ["generated", "elapsed_seconds"],
            "properties": {
                "generated": {"type": "string"},
                "elapsed_seconds": {"type": "number"},
            },
        },
        "config": {
            "type": "object",
            "required": ["seed", "quotas", "tcn_max", "liveness_max",
                         "stages", "flow_depth", "crash_marker",
                         "retry_cap", "attempt_budget", "max_steps",
                         "hot_exclude"],
            "properties": {
                "seed": {"type": "integer"},
                "quotas": {
                    "type": "object",
                    "required": list(BUG_TYPES),
                    "additionalProperties": False,
                    "properties": {t: {"type": "integer", "minimum": 0}
                                   for t in BUG_TYPES},
                },
                "tcn_max": {"type": "integer"},
                "liveness_max": {"type": "integer"},
                "stages": {"type": "integer", "minimum": 1},
                "flow_depth": {"type": "integer", "minimum": 0},
                "crash_marker": {"type": "boolean"},
                "retry_cap": {"type": "integer", "minimum": 1},
                "attempt_budget": {"type": "integer", "minimum": 0},
                "max_steps": {"type": "integer", "minimum": 1},
                "hot_exclude": _STRS,
            },
        },
        "program": {
            "type": "object",
            "required": ["functions", "original_sha256",
                         "transformed_sha256"],
            "properties": {
                "functions": {"type": "integer", "minimum": 1},
                "original_sha256": _SHA,
                "transformed_sha256": _SHA,
            },
        },
        "inputs": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "file", "sha256", "size"],
                "properties": {
                    "id": {"type": "string"},
                    "file": {"type": "string"},
                    "sha256": _SHA,
                    "size": {"type": "integer", "minimum": 0},
                },
            },
        },
        "counts": {
            "type": "object",
            "required": ["per_type", "attempted", "validated",
                         "validation_rate", "failure_reasons"],
            "properties": {
                "per_type": {
                    "type": "object",
                    "required": list(BUG_TYPES),
                    "additionalProperties": False,
                    "properties": {t: _PER_TYPE for t in BUG_TYPES},
                },
                "attempted": {"type": "integer", "minimum": 0},
                "validated": {"type": "integer", "minimum": 0},
                "validation_rate": {"type": "number",
                                    "minimum": 0, "maximum": 1},
                "failure_reasons": {
                    "type": "object",
                    "additionalProperties": {"type": "integer",
                                             "minimum": 1},
                },
            },
        },
        "bugs": {"type": "array", "items": _BUG_SCHEMA},
        "attempts": {"type": "array", "items": _ATTEMPT_SCHEMA},
        "validation": {
            "type": "object",
            "required": ["ok", "clean", "bugs"],
            "properties": {
                "ok": {"type": "boolean"},
                "clean": {"type": "array"},
                "bugs": {"type": "array"},
            },
        },
    },
}


def validate_report(report: Mapping) -> None:
    """Raise jsonschema.ValidationError when the report is malformed."""
    jsonschema.validate(instance=report, schema=REPORT_SCHEMA)


# ---------------------------------------------------------------------------
# Flat renderings
# ---------------------------------------------------------------------------


def counts_csv(counts: Mapping[str, Mapping[str, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["type", "requested", "attempted", "validated"])
    for t in BUG_TYPES:
        c = counts[t]
        w.writerow([t, c["requested"], c["attempted"], c["validated"]])
    return buf.getvalue()


def bugs_csv(records: Sequence[BugRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bug_id", "bug_type", "stack_target", "func", "atp_nid",
                "magic", "input_id", "trigger_file"])
    for r in records:
        w.writerow([r.bug_id, r.bug_type, r.stack_target, r.func,
                    r.atp_nid, r.magic, r.input_id,
                    f"inputs/{trigger_filename(r.bug_id)}"])
    return buf.getvalue()
