"""Execution trace events and their on-disk encodings.

A trace is the sequence of observations one run produces: statement
entries, branch evaluations with the taint of the decided value, call
and return boundaries, allocator traffic, lvalue observations carrying
per-byte taint, and input reads.  Traces exist in memory as lists of
the event objects below; ``write_trace`` serializes them to a versioned
length-prefixed binary stream and ``write_trace_text`` to a line-based
dump.  Labels inside taint sets are either ints (input stream offsets)
or short strings (audit markers).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, TextIO, Union

MAGIC = b"CHFT"
VERSION = 1

Label = Union[int, str]
TaintSet = frozenset


@dataclass(slots=True)
class StmtEnter:
    nid: int
    func: str


@dataclass(slots=True)
class BranchEval:
    nid: int
    func: str
    value: int
    taint: TaintSet


@dataclass(slots=True)
class CallEnter:
    func: str
    base: int
    serial: int
    indirect: bool
    call_nid: int


@dataclass(slots=True)
class Return:
    func: str
    serial: int


@dataclass(slots=True)
class HeapAlloc:
    nid: int
    size: int
    addr: int


@dataclass(slots=True)
class HeapFree:
    nid: int
    addr: int


@dataclass(slots=True)
class LvalueObserved:
    nid: int
    func: str
    serial: int
    path: str
    addr: int
    width: int
    kind: str                     # read | write | addrof
    evidence: bool
    taint: tuple = ()             # per-byte TaintSet, empty for addrof
    tcn: tuple = ()               # per-byte ints, empty for addrof
    string_rel: bool = False
    base_path: str = ""
    base_offset: int = 0


@dataclass(slots=True)
class InputRead:
    stream_offset: int
    count: int
    addr: int


Event = Union[StmtEnter, BranchEval, CallEnter, Return, HeapAlloc,
              HeapFree, LvalueObserved, InputRead]

_TYPE_IDS = {
    StmtEnter: 1, BranchEval: 2, CallEnter: 3, Return: 4,
    HeapAlloc: 5, HeapFree: 6, LvalueObserved: 7, InputRead: 8,
}
_TYPES_BY_ID = {v: k for k, v in _TYPE_IDS.items()}
_KIND_IDS = {"read": 0, "write": 1, "addrof": 2}
_KINDS_BY_ID = {v: k for k, v in _KIND_IDS.items()}


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _pack_taint(ts: TaintSet) -> bytes:
    # Sorted for byte-stable output: ints first, then strings.
    ints = sorted(l for l in ts if isinstance(l, int))
    strs = sorted(l for l in ts if isinstance(l, str))
    out = [struct.pack("<H", len(ints) + len(strs))]
    for l in ints:
        out.append(b"\x00" + struct.pack("<I", l))
    for l in strs:
        out.append(b"\x01" + _pack_str(l))
    return b"".join(out)


def _pack_event(ev: Event) -> bytes:
    if isinstance(ev, StmtEnter):
        return struct.pack("<I", ev.nid) + _pack_str(ev.func)
    if isinstance(ev, BranchEval):
        return (struct.pack("<I", ev.nid) + _pack_str(ev.func)
                + struct.pack("<I", ev.value & 0xFFFFFFFF) + _pack_taint(ev.taint))
    if isinstance(ev, CallEnter):
        return (_pack_str(ev.func)
                + struct.pack("<IIBI", ev.base, ev.serial, int(ev.indirect), ev.call_nid))
    if isinstance(ev, Return):
        return _pack_str(ev.func) + struct.pack("<I", ev.serial)
    if isinstance(ev, HeapAlloc):
        return struct.pack("<III", ev.nid, ev.size, ev.addr)
    if isinstance(ev, HeapFree):
        return struct.pack("<II", ev.nid, ev.addr)
    if isinstance(ev, LvalueObserved):
        head = (struct.pack("<I", ev.nid) + _pack_str(ev.func)
                + struct.pack("<I", ev.serial) + _pack_str(ev.path)
                + struct.pack("<IBBBB", ev.addr, ev.width, _KIND_IDS[ev.kind],
                              int(ev.evidence), int(ev.string_rel))
                + _pack_str(ev.base_path) + struct.pack("<I", ev.base_offset))
        body = [struct.pack("<H", len(ev.taint))]
        for ts, tc in zip(ev.taint, ev.tcn):
            body.append(_pack_taint(ts) + struct.pack("<H", tc))
        return head + b"".join(body)
    if isinstance(ev, InputRead):
        return struct.pack("<III", ev.stream_offset, ev.count, ev.addr)
    raise TypeError(f"unknown event {ev!r}")


def write_trace(events: Iterable[Event], fh: BinaryIO) -> None:
    fh.write(MAGIC + struct.pack("<H", VERSION))
    for ev in events:
        payload = _pack_event(ev)
        fh.write(struct.pack("<IB", len(payload), _TYPE_IDS[type(ev)]))
        fh.write(payload)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated trace")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def s(self) -> str:
        return self._take(self.u16()).decode("utf-8")

    def taint(self) -> TaintSet:
        n = self.u16()
        labels = []
        for _ in range(n):
            kind = self.u8()
            labels.append(self.u32() if kind == 0 else self.s())
        return frozenset(labels)

    def done(self) -> bool:
        return self.pos >= len(self.data)


def read_trace(fh: BinaryIO) -> list[Event]:
    head = fh.read(6)
    if head[:4] != MAGIC:
        raise ValueError("not a trace file")
    version = struct.unpack("<H", head[4:6])[0]
    if version != VERSION:
        raise ValueError(f"unsupported trace version {version}")
    events: list[Event] = []
    while True:
        rec = fh.read(5)
        if not rec:
            break
        length, tid = struct.unpack("<IB", rec)
        r = _Reader(fh.read(length))
        cls = _TYPES_BY_ID.get(tid)
        if cls is StmtEnter:
            events.append(StmtEnter(r.u32(), r.s()))
        elif cls is BranchEval:
            events.append(BranchEval(r.u32(), r.s(), r.u32(), r.taint()))
        elif cls is CallEnter:
            events.append(CallEnter(r.s(), r.u32(), r.u32(), bool(r.u8()), r.u32()))
        elif cls is Return:
            events.append(Return(r.s(), r.u32()))
        elif cls is HeapAlloc:
            events.append(HeapAlloc(r.u32(), r.u32(), r.u32()))
        elif cls is HeapFree:
            events.append(HeapFree(r.u32(), r.u32()))
        elif cls is LvalueObserved:
            nid, func, serial, path = r.u32(), r.s(), r.u32(), r.s()
            addr, width, kind, evidence, string_rel = struct.unpack(
                "<IBBBB", r._take(8))
            base_path, base_offset = r.s(), r.u32()
            n = r.u16()
            taints, tcns = [], []
            for _ in range(n):
                taints.append(r.taint())
                tcns.append(r.u16())
            events.append(LvalueObserved(
                nid, func, serial, path, addr, width, _KINDS_BY_ID[kind],
                bool(evidence), tuple(taints), tuple(tcns), bool(string_rel),
                base_path, base_offset))
        elif cls is InputRead:
            events.append(InputRead(r.u32(), r.u32(), r.u32()))
        else:
            raise ValueError(f"unknown record type {tid}")
        if not r.done():
            raise ValueError("record length mismatch")
    return events


def _fmt_taint(ts: TaintSet) -> str:
    if not ts:
        return "{}"
    parts = [str(l) for l in sorted(l for l in ts if isinstance(l, int))]
    parts += [repr(l) for l in sorted(l for l in ts if isinstance(l, str))]
    return "{" + ",".join(parts) + "}"


def write_trace_text(events: Iterable[Event], fh: TextIO) -> None:
    for i, ev in enumerate(events):
        if isinstance(ev, StmtEnter):
            line = f"stmt nid={ev.nid} func={ev.func}"
        elif isinstance(ev, BranchEval):
            line = (f"branch nid={ev.nid} func={ev.func} value={ev.value}"
                    f" taint={_fmt_taint(ev.taint)}")
        elif isinstance(ev, CallEnter):
            line = (f"call func={ev.func} base=0x{ev.base:08x} serial={ev.serial}"
                    f" indirect={int(ev.indirect)} call_nid={ev.call_nid}")
        elif isinstance(ev, Return):
            line = f"return func={ev.func} serial={ev.serial}"
        elif isinstance(ev, HeapAlloc):
            line = f"heap-alloc nid={ev.nid} size={ev.size} addr=0x{ev.addr:08x}"
        elif isinstance(ev, HeapFree):
            line = f"heap-free nid={ev.nid} addr=0x{ev.addr:08x}"
        elif isinstance(ev, LvalueObserved):
            bytes_txt = ";".join(
                f"{_fmt_taint(ts)}/{tc}" for ts, tc in zip(ev.taint, ev.tcn))
            extra = ""
            if ev.string_rel:
                extra = f" base={ev.base_path} off={ev.base_offset}"
            line = (f"lvalue nid={ev.nid} func={ev.func} serial={ev.serial}"
                    f" path={ev.path} addr=0x{ev.addr:08x} width={ev.width}"
                    f" kind={ev.kind} evidence={int(ev.evidence)}"
                    f" bytes=[{bytes_txt}]{extra}")
        elif isinstance(ev, InputRead):
            line = f"input-read off={ev.stream_offset} count={ev.count} addr=0x{ev.addr:08x}"
        else:
            line = f"unknown {ev!r}"
        fh.write(f"{i:6d} {line}\n")
