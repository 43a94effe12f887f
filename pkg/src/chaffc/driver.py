"""Pipeline orchestration: mine, synthesize, validate, accept or roll back.

The injection loop walks inputs and bug types round robin, asking the
miner for one candidate at a time.  Each candidate is synthesized onto a
trial copy of the accumulated program and must pass the full clean gate
plus its own trigger and proof gates before the trial becomes the new
accumulated program.  Rejected candidates leave no trace beyond their
attempt record, so a failed try can never perturb a later one.

Claims are the one cross-bug constraint: a bug that reshapes a
function's frame (any oc-stack bug, and every function an unused-stack
bug threads its out-parameter through) claims that function, and a
candidate whose claims intersect the accumulated set is rejected before
validation.  Two frame bugs in one function would silently invalidate
each other's measured fold constants otherwise.

Everything downstream of the seed is deterministic: inputs are visited
in sorted id order, types in declaration order, and all shuffles are
keyed off the run seed.
"""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .frontend.nodes import Program
from .interp.machine import DEFAULT_MAX_STEPS, ExecResult, run_program
from .interp.trace import CallEnter, InputRead, StmtEnter
from .mining import (
    BUG_TYPES,
    DEFAULT_LIVENESS_MAX,
    DEFAULT_TCN_MAX,
    STACK_TARGETS,
    AttackPoint,
    BugCandidate,
    DuaRecord,
    QuotaInfeasible,
    find_attack_points,
    find_duas,
    pair_candidates,
)
from .obfuscate import NotEnoughAnchors
from .synth import (
    DEFAULT_FLOW_DEPTH,
    DEFAULT_STAGES,
    BugRecord,
    BytesNotIndependent,
    MagicExhausted,
    audit_config_for,
    synthesize_bug,
)
from .validate import (
    BugValidation,
    CleanCheck,
    ValidationReport,
    build_report,
    clean_check,
    validate_bug,
)

log = logging.getLogger("chaffc.driver")

MAX_STAGES = 5


class PipelineError(Exception):
    """An invariant the pipeline relies on failed; not a user error."""


@dataclass
class RunConfig:
    """Everything that shapes a run.  Serialized into the report, so two
    runs with equal configs are comparable field by field."""

    seed: int = 1
    quotas: dict[str, int] = field(default_factory=dict)
    tcn_max: int = DEFAULT_TCN_MAX
    liveness_max: int = DEFAULT_LIVENESS_MAX
    stages: int = DEFAULT_STAGES
    flow_depth: int = DEFAULT_FLOW_DEPTH
    crash_marker: bool = False
    retry_cap: int = 10
    attempt_budget: int = 0          # 0 = bounded only by candidate supply
    max_steps: int = DEFAULT_MAX_STEPS
    hot_exclude: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")
        if not 1 <= self.stages <= MAX_STAGES:
            raise ValueError(f"stage count must be 1..{MAX_STAGES}")
        if self.retry_cap < 1:
            raise ValueError("retry cap must be at least 1")
        for t, n in self.quotas.items():
            if t not in BUG_TYPES:
                raise ValueError(f"unknown bug type {t!r}")
            if n < 0:
                raise ValueError(f"negative quota for {t}")
        self.hot_exclude = tuple(self.hot_exclude)

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "quotas": {t: self.quotas.get(t, 0) for t in BUG_TYPES},
            "tcn_max": self.tcn_max,
            "liveness_max": self.liveness_max,
            "stages": self.stages,
            "flow_depth": self.flow_depth,
            "crash_marker": self.crash_marker,
            "retry_cap": self.retry_cap,
            "attempt_budget": self.attempt_budget,
            "max_steps": self.max_steps,
            "hot_exclude": list(self.hot_exclude),
        }


@dataclass(frozen=True)
class Attempt:
    """One synthesize-and-validate try, kept for the yield accounting."""

    index: int
    input_id: str
    bug_type: str
    stack_target: str
    atp_nid: int
    atp_func: str
    trigger_nid: int
    attack_nid: int
    outcome: str                 # "accepted" or a failure reason
    bug_id: int = -1


@dataclass
class MinedInput:
    input_id: str
    data: bytes
    run: ExecResult
    duas: list[DuaRecord]
    atps: list[AttackPoint]


@dataclass
class InjectResult:
    config: RunConfig
    original: Program
    transformed: Program
    records: list[BugRecord]
    attempts: list[Attempt]
    validation: ValidationReport
    elapsed: float

    @property
    def ok(self) -> bool:
        return self.validation.ok

    def counts(self) -> dict[str, dict[str, int]]:
        """Attempted and validated totals per bug type."""
        out = {t: {"requested": self.config.quotas.get(t, 0),
                   "attempted": 0, "validated": 0}
               for t in BUG_TYPES}
        for a in self.attempts:
            out[a.bug_type]["attempted"] += 1
        for r in self.records:
            out[r.bug_type]["validated"] += 1
        return out

    def failure_reasons(self) -> dict[str, int]:
        reasons: dict[str, int] = {}
        for a in self.attempts:
            if a.outcome != "accepted":
                reasons[a.outcome] = reasons.get(a.outcome, 0) + 1
        return dict(sorted(reasons.items()))


# ---------------------------------------------------------------------------
# Mining
# ---------------------------------------------------------------------------


def mine_inputs(program: Program, inputs: Sequence[tuple[str, bytes]],
                config: RunConfig) -> list[MinedInput]:
    """Trace every input on the original program and mine it.  Inputs
    that fail to run cleanly are a usage error, not a candidate filter."""
    mined = []
    for input_id, data in sorted(inputs):
        run = run_program(program, data, max_steps=config.max_steps)
        if run.status != "ok":
            what = run.error or (run.fault.kind if run.fault else "fault")
            raise PipelineError(
                f"input {input_id} does not run cleanly: {what}")
        duas = find_duas(run.events, program, tcn_max=config.tcn_max,
                         liveness_max=config.liveness_max)
        atps = [a for a in find_attack_points(run.events, program)
                if a.func not in config.hot_exclude]
        mined.append(MinedInput(input_id, data, run, duas, atps))
    return mined


# ---------------------------------------------------------------------------
# Injection
# ---------------------------------------------------------------------------


def _failure_reason(clean: Sequence[CleanCheck],
                    validation: Optional[BugValidation]) -> str:
    for c in clean:
        if not c.ok:
            if "uninitialized" in c.detail:
                return "uninitialized-dua"
            if "corruption stores executed" in c.detail:
                return "clean-corruption-writes"
            return "clean-divergence"
    assert validation is not None
    t = validation.trigger
    if not t.ok:
        if t.reason:
            return t.reason
        if "diverges from baseline" in t.detail:
            return "dormant-diverged"
        if t.detail == "dormant bug crashed":
            return "dormant-crashed"
        if "outside" in t.detail:
            return "stray-write"
        if "crash marker" in t.detail:
            return "marker-missed"
        return "wrong-fault"
    for c in validation.proof.checks:
        if not c.ok:
            return f"proof-{c.name}"
    return "unknown"


def _attempt(index: int, cand: BugCandidate, outcome: str,
             bug_id: int = -1) -> Attempt:
    return Attempt(
        index=index,
        input_id=cand.input_id,
        bug_type=cand.bug_type,
        stack_target=cand.stack_target,
        atp_nid=cand.atp.nid,
        atp_func=cand.atp.func,
        trigger_nid=cand.trigger.nid,
        attack_nid=cand.attack.nid if cand.attack else -1,
        outcome=outcome,
        bug_id=bug_id,
    )


class _Injector:
    """State for one inject run; `run` is the only entry point."""

    def __init__(self, program: Program, mined: list[MinedInput],
                 config: RunConfig):
        self.config = config
        self.original = program
        self.current = program
        self.mined = {m.input_id: m for m in mined}
        self.order = sorted(self.mined)
        self.corpus = [m.data for m in mined]
        self.records: list[BugRecord] = []
        self.attempts: list[Attempt] = []
        self.taken_magics: list[int] = []
        self.claimed: set[str] = set()
        self.excluded: dict[str, set] = {i: set() for i in self.order}
        self.dead: set[tuple[str, str]] = set()
        self.remaining = {t: config.quotas.get(t, 0) for t in BUG_TYPES}
        self.next_bug_id = 1
        self.baselines: dict[bytes, bytes] = {}

    # -- candidate supply --------------------------------------------------

    def _next_candidate(self, input_id: str, bug_type: str
                        ) -> Optional[BugCandidate]:
        m = self.mined[input_id]
        try:
            batch = pair_candidates(
                m.duas, m.atps, {bug_type: 1}, self.config.seed,
                claimed=self.claimed, exclude=self.excluded[input_id],
                input_id=input_id)
        except QuotaInfeasible:
            self.dead.add((input_id, bug_type))
            return None
        if not batch:
            self.dead.add((input_id, bug_type))
            return None
        return batch[0]

    # -- one attempt ---------------------------------------------------------

    def _try_candidate(self, cand: BugCandidate) -> bool:
        index = len(self.attempts)
        m = self.mined[cand.input_id]
        bug_id = self.next_bug_id
        try:
            trial, rec = synthesize_bug(
                self.current, m.run.events, cand, bug_id, self.config.seed,
                self.corpus, m.data,
                stage_count=self.config.stages,
                flow_depth=self.config.flow_depth,
                crash_marker=self.config.crash_marker,
                taken_magics=self.taken_magics)
        except BytesNotIndependent:
            self.attempts.append(_attempt(index, cand, "bytes-not-independent"))
            return False
        except MagicExhausted:
            self.attempts.append(_attempt(index, cand, "magic-exhausted"))
            return False
        except NotEnoughAnchors:
            self.attempts.append(_attempt(index, cand, "not-enough-anchors"))
            return False
        except AssertionError:
            self.attempts.append(_attempt(index, cand, "frame-layout"))
            return False

        if set(rec.claims) & self.claimed:
            self.attempts.append(_attempt(index, cand, "claim-conflict"))
            return False

        audit = audit_config_for(self.records + [rec])
        clean = []
        for input_id in self.order:
            mi = self.mined[input_id]
            t = run_program(trial, mi.data, trace=False, audit=audit,
                            max_steps=self.config.max_steps)
            clean.append(clean_check(input_id, mi.run, t))
        validation = None
        if all(c.ok for c in clean):
            validation = validate_bug(
                trial, rec, audit=audit, seed=self.config.seed,
                baseline_output=self._baseline(rec))
        if validation is None or not validation.ok:
            reason = _failure_reason(clean, validation)
            self.attempts.append(_attempt(index, cand, reason))
            log.info("rejected %s at %s: %s", cand.bug_type, cand.atp.func,
                     reason)
            return False

        self.current = trial
        self.records.append(rec)
        self.taken_magics.append(rec.magic)
        self.claimed |= set(rec.claims)
        self.remaining[rec.bug_type] -= 1
        self.next_bug_id += 1
        self.attempts.append(_attempt(index, cand, "accepted", rec.bug_id))
        log.info("accepted bug %d (%s) at %s", rec.bug_id, rec.bug_type,
                 rec.func)
        return True

    def _baseline(self, rec: BugRecord) -> Optional[bytes]:
        """Original-program output on the trigger input, for dormant
        bugs only; keyed by input because rejected candidates recycle
        bug ids, and cached because final validation asks again."""
        if rec.bug_type != "unused-stack" or rec.marker_nid >= 0:
            return None
        key = rec.trigger_input
        if key not in self.baselines:
            r = run_program(self.original, key, trace=False,
                            max_steps=self.config.max_steps)
            self.baselines[key] = r.output
        return self.baselines[key]

    # -- main loop -----------------------------------------------------------

    def _filled(self, bug_type: str) -> int:
        return self.config.quotas.get(bug_type, 0) - self.remaining[bug_type]

    def run(self) -> tuple[list[BugRecord], list[Attempt]]:
        budget = self.config.attempt_budget
        while any(n > 0 for n in self.remaining.values()):
            progressed = False
            for bug_type in BUG_TYPES:
                if self.remaining[bug_type] <= 0:
                    continue
                for input_id in self.order:
                    if (input_id, bug_type) in self.dead:
                        continue
                    if budget and len(self.attempts) >= budget:
                        raise QuotaInfeasible(bug_type, self._filled(bug_type))
                    cand = self._next_candidate(input_id, bug_type)
                    if cand is None:
                        continue
                    self.excluded[input_id].add(cand.key())
                    progressed = True
                    if self._try_candidate(cand):
                        break
            if not progressed:
                short = next(t for t in BUG_TYPES if self.remaining[t] > 0)
                raise QuotaInfeasible(short, self._filled(short))
        return self.records, self.attempts


def inject(program: Program, inputs: Sequence[tuple[str, bytes]],
           config: RunConfig) -> InjectResult:
    """Run the full pipeline and return the transformed program with its
    validation report.  Raises QuotaInfeasible when the corpus cannot
    supply the requested bugs and PipelineError when a bug that passed
    per-candidate validation fails the final replay."""
    t0 = time.monotonic()
    mined = mine_inputs(program, inputs, config)
    inj = _Injector(program, mined, config)
    records, attempts = inj.run()

    audit = audit_config_for(records)
    clean = []
    for input_id in inj.order:
        m = inj.mined[input_id]
        t = run_program(inj.current, m.data, trace=False, audit=audit,
                        max_steps=config.max_steps)
        clean.append(clean_check(input_id, m.run, t))
    bug_validations = [
        validate_bug(inj.current, rec, audit=audit, seed=config.seed,
                     baseline_output=inj._baseline(rec))
        for rec in records
    ]
    report = build_report(clean, bug_validations)
    if not report.ok:
        bad = [b.bug_id for b in report.bugs if not b.ok]
        bad += [c.input_id for c in report.clean if not c.ok]
        raise PipelineError(
            f"final validation regressed on accepted state: {bad}")
    return InjectResult(config, program, inj.current, records, attempts,
                        report, time.monotonic() - t0)


# ---------------------------------------------------------------------------
# ATP survey
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurveyPoint:
    atp_func: str
    atp_nid: int
    atp_kind: str
    input_id: str
    success_try: int            # 1-based; 0 = never validated


@dataclass
class SurveyResult:
    sampled: int
    retry_cap: int
    points: list[SurveyPoint]
    curve: tuple[float, ...]    # cumulative success fraction at try k

    def as_dict(self) -> dict:
        return {
            "sampled": self.sampled,
            "retry_cap": self.retry_cap,
            "points": [
                {
                    "func": p.atp_func,
                    "nid": p.atp_nid,
                    "kind": p.atp_kind,
                    "input_id": p.input_id,
                    "success_try": p.success_try,
                }
                for p in self.points
            ],
            "curve": list(self.curve),
        }


def _atp_candidates(m: MinedInput, atp: AttackPoint, seed: int
                    ) -> list[BugCandidate]:
    """Deterministic candidate queue for one attack point: every usable
    trigger/attack pairing, shuffled by a per-point stream."""
    triggers = sorted((d for d in m.duas
                       if d.controllable and d.trace_index < atp.trace_index),
                      key=DuaRecord.key)
    attacks = sorted((d for d in m.duas if d.trace_index < atp.trace_index),
                     key=DuaRecord.key)
    cands = []
    if atp.kind == "heap-adjacent":
        if atp.exec_count != 1:
            return []
        for trig in triggers:
            for atk in attacks:
                if atk.key() != trig.key():
                    cands.append(BugCandidate("oc-heap", "", trig, atk, atp,
                                              m.input_id))
    else:
        for trig in triggers:
            for atk in attacks:
                if atk.key() == trig.key():
                    continue
                for target in STACK_TARGETS:
                    if target == "saved-fp" and atp.func == "main":
                        continue
                    if target == "return-address" and not atp.frame_returns:
                        continue
                    cands.append(BugCandidate("oc-stack", target, trig, atk,
                                              atp, m.input_id))
    rng = random.Random(f"{seed}:survey:{atp.func}:{atp.nid}:{atp.kind}")
    rng.shuffle(cands)
    return cands


def survey(program: Program, inputs: Sequence[tuple[str, bytes]],
           config: RunConfig, sample: int) -> SurveyResult:
    """Try to validate one bug at each of `sample` random attack points,
    allowing `config.retry_cap` candidate pairings per point, and report
    the cumulative success curve over tries."""
    mined = mine_inputs(program, inputs, config)
    pool: dict[tuple, tuple[MinedInput, AttackPoint]] = {}
    for m in mined:
        for atp in m.atps:
            pool.setdefault((atp.func, atp.nid, atp.kind), (m, atp))
    if sample > len(pool):
        raise ValueError(
            f"asked for {sample} attack points, corpus yields {len(pool)}")
    keys = sorted(pool)
    rng = random.Random(f"{config.seed}:survey")
    rng.shuffle(keys)
    chosen = keys[:sample]

    corpus = [m.data for m in mined]
    points = []
    for key in chosen:
        m, atp = pool[key]
        success = 0
        for k, cand in enumerate(_atp_candidates(m, atp, config.seed)[
                :config.retry_cap], start=1):
            if _survey_try(program, mined, m, cand, corpus, config, k):
                success = k
                break
        points.append(SurveyPoint(atp.func, atp.nid, atp.kind, m.input_id,
                                  success))
    curve = tuple(
        sum(1 for p in points if 0 < p.success_try <= k) / len(points)
        for k in range(1, config.retry_cap + 1))
    return SurveyResult(len(points), config.retry_cap, points, curve)


def _survey_try(program: Program, mined: list[MinedInput], m: MinedInput,
                cand: BugCandidate, corpus: list[bytes], config: RunConfig,
                bug_id: int) -> bool:
    try:
        trial, rec = synthesize_bug(
            program, m.run.events, cand, bug_id, config.seed, corpus, m.data,
            stage_count=config.stages, flow_depth=config.flow_depth,
            crash_marker=config.crash_marker)
    except (BytesNotIndependent, MagicExhausted, NotEnoughAnchors,
            AssertionError):
        return False
    audit = audit_config_for([rec])
    for mi in mined:
        t = run_program(trial, mi.data, trace=False, audit=audit,
                        max_steps=config.max_steps)
        if not clean_check(mi.input_id, mi.run, t).ok:
            return False
    baseline = None
    if rec.bug_type == "unused-stack" and rec.marker_nid < 0:
        baseline = run_program(program, rec.trigger_input, trace=False,
                               max_steps=config.max_steps).output
    v = validate_bug(trial, rec, audit=audit, seed=config.seed,
                     baseline_output=baseline)
    return v.ok


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FileCoverage:
    file: str
    functions: int
    covered: int
    atp_functions: int
    coverage: float
    adjusted_coverage: float


@dataclass
class CoverageSummary:
    total_functions: int
    covered_functions: int
    atp_functions: int
    pre_input_only: int
    coverage: float
    adjusted_coverage: float
    files: list[FileCoverage]

    def as_dict(self) -> dict:
        return {
            "total_functions": self.total_functions,
            "covered_functions": self.covered_functions,
            "atp_functions": self.atp_functions,
            "pre_input_only": self.pre_input_only,
            "coverage": self.coverage,
            "adjusted_coverage": self.adjusted_coverage,
            "files": [
                {
                    "file": f.file,
                    "functions": f.functions,
                    "covered": f.covered,
                    "atp_functions": f.atp_functions,
                    "coverage": f.coverage,
                    "adjusted_coverage": f.adjusted_coverage,
                }
                for f in self.files
            ],
        }


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def coverage(program: Program, inputs: Sequence[tuple[str, bytes]],
             config: RunConfig) -> CoverageSummary:
    """Function coverage of the seed inputs, with the adjusted figure
    that drops functions whose every execution precedes the first input
    read: they ran, but no attacker byte existed yet, so they can never
    host a bug and counting them understates the usable surface."""
    mined = mine_inputs(program, inputs, config)
    covered: set[str] = set()
    post_input: set[str] = set()
    atp_funcs: set[str] = set()
    for m in mined:
        seen_read = False
        covered.add("main")
        for e in m.run.events:
            if isinstance(e, InputRead):
                seen_read = True
            elif isinstance(e, CallEnter):
                covered.add(e.func)
                if seen_read:
                    post_input.add(e.func)
            elif isinstance(e, StmtEnter) and seen_read:
                post_input.add(e.func)
        atp_funcs.update(a.func for a in m.atps)

    pre_only = covered - post_input
    all_funcs = {f.name: f for f in program.functions()}
    total = len(all_funcs)
    cov = _ratio(len(covered), total)
    adj = _ratio(len(covered - pre_only), total - len(pre_only))

    by_file: dict[str, list[str]] = {}
    for name, f in all_funcs.items():
        by_file.setdefault(f.span.file, []).append(name)
    files = []
    for path in sorted(by_file):
        names = set(by_file[path])
        fc = names & covered
        fp = names & pre_only
        files.append(FileCoverage(
            file=path,
            functions=len(names),
            covered=len(fc),
            atp_functions=len(names & atp_funcs),
            coverage=_ratio(len(fc), len(names)),
            adjusted_coverage=_ratio(len(fc - fp), len(names) - len(fp)),
        ))
    return CoverageSummary(total, len(covered), len(atp_funcs),
                           len(pre_only), cov, adj, files)
