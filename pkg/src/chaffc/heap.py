"""Heap model with in-memory chunk headers and out-of-band bin state.

Chunks follow the classic layout: an 8-byte header (prev_size, then
size with a PREV_INUSE flag in bit 0), 8-byte alignment, and a minimum
chunk of 16 bytes, so a request for n bytes occupies max(16, align8(n +
8)) and the user pointer sits 8 past the chunk base.  The top chunk's
size lives in memory like everything else; free list membership lives
in shadow structures instead of fd/bk pointers, which keeps user data
free of link words while leaving every header byte corruptible.

Bin thresholds are scaled so the fixed probe sizes {8, 24, 40, 200}
exercise every class: chunks at or under FASTBIN_MAX (32) go to
fastbins, chunks at or over LARGE_THRESHOLD (208) are large, and a
request that large first consolidates all fastbin chunks the way a
real allocator batches deferred frees.

Metadata consultations are recorded per operation so an analysis can
show which corrupted bytes an abort actually read.  Three outcomes are
possible when headers have been overwritten: AllocatorAbort (a check
caught the damage), silence (the damage was never consulted), and
HeapEscape (the allocator was about to act on unowned memory; the
corruption analysis must prove this never fires).

``check_corruption_cases`` enumerates successor-chunk classes times all
operation sequences up to a depth and tabulates the outcome of each,
alongside an uncorrupted differential run that must never abort.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .interp.memory import HEAP_BASE, HEAP_LIMIT, MASK32, Memory

MIN_CHUNK = 16
FASTBIN_MAX = 32
LARGE_THRESHOLD = 208

# The planted header triple, as (user offset, little-endian u32 value).
# Offset 16 is the fake chunk's size inside the victim's own tail,
# offsets 24 and 28 are the successor's prev_size and size fields.
CORRUPTION_TRIPLE = ((16, 16), (24, 12), (28, 0))
CORRUPTED_SPANS = ((16, 4), (24, 8))


class AllocatorAbort(Exception):
    def __init__(self, message: str, consulted: list[tuple[int, int]]) -> None:
        super().__init__(message)
        self.message = message
        self.consulted = list(consulted)


class HeapEscape(Exception):
    pass


def chunk_size_for(request: int) -> int:
    if request < 0:
        request = 0
    return max(MIN_CHUNK, (request + 8 + 7) & ~7)


class HeapModel:
    def __init__(self, mem: Memory, base: int = HEAP_BASE, limit: int = HEAP_LIMIT) -> None:
        self.mem = mem
        self.base = base
        self.limit = limit
        self.top = base
        mem.raw_store_u32(base, 0)
        mem.raw_store_u32(base + 4, (limit - base) | 1)
        self.live: dict[int, int] = {}
        self.fastbins: dict[int, list[int]] = {}
        self.smallbins: dict[int, list[int]] = {}
        self.largebin: list[int] = []
        self.free_set: dict[int, int] = {}
        self.consulted: list[tuple[int, int]] = []
        self.alloc_count = 0
        self.free_count = 0

    # -- metadata access, recorded --------------------------------------------

    def _load(self, addr: int) -> int:
        if not (self.base <= addr <= self.limit - 4):
            raise AllocatorAbort("invalid chunk navigation", self.consulted)
        self.consulted.append((addr, 4))
        return self.mem.raw_u32(addr)

    def _store(self, addr: int, value: int) -> None:
        if not (self.base <= addr <= self.limit - 4):
            raise HeapEscape(f"metadata write outside arena at 0x{addr:08x}")
        self.mem.raw_store_u32(addr, value)

    def _size_raw(self, chunk: int) -> int:
        return self._load(chunk + 4)

    def _prev_size(self, chunk: int) -> int:
        return self._load(chunk)

    def _abort(self, message: str) -> None:
        raise AllocatorAbort(message, self.consulted)

    # -- shadow bin bookkeeping -------------------------------------------------

    def _bin_push(self, chunk: int, size: int) -> None:
        self.free_set[chunk] = size
        if size < LARGE_THRESHOLD:
            self.smallbins.setdefault(size, []).append(chunk)
        else:
            self.largebin.append(chunk)
            self.largebin.sort(key=lambda c: (self.free_set[c], c))

    def _bin_remove(self, chunk: int) -> None:
        size = self.free_set.pop(chunk)
        if size <= FASTBIN_MAX and chunk in self.fastbins.get(size, ()):
            self.fastbins[size].remove(chunk)
        elif size < LARGE_THRESHOLD and chunk in self.smallbins.get(size, ()):
            self.smallbins[size].remove(chunk)
        elif chunk in self.largebin:
            self.largebin.remove(chunk)

    # -- unlink with the hardened size/prev_size cross-check ---------------------

    def _unlink(self, chunk: int) -> int:
        raw = self._size_raw(chunk)
        size = raw & ~7
        nxt = chunk + size
        if size < MIN_CHUNK or nxt > self.limit - 8:
            self._abort("corrupted size vs. prev_size")
        if self._prev_size(nxt) != size:
            self._abort("corrupted size vs. prev_size")
        if chunk not in self.free_set:
            raise HeapEscape(f"unlink of chunk unknown to the allocator at 0x{chunk:08x}")
        self._bin_remove(chunk)
        return size

    # -- allocation ----------------------------------------------------------------

    def malloc(self, request: int) -> int:
        self.consulted = []
        self.alloc_count += 1
        csz = chunk_size_for(request)
        if csz >= LARGE_THRESHOLD:
            self._consolidate()
        chunk = self._take_fast(csz)
        if chunk is None and csz < LARGE_THRESHOLD:
            chunk = self._take_small(csz)
        if chunk is None:
            # small misses fall through to the large bin and split there
            chunk = self._take_large(csz)
        if chunk is None:
            chunk = self._carve_top(csz)
        if chunk == 0:
            return 0
        self.live[chunk] = csz
        self._overlap_check(chunk, csz)
        return chunk + 8

    def _take_fast(self, csz: int) -> int | None:
        if csz > FASTBIN_MAX:
            return None
        stack = self.fastbins.get(csz)
        if not stack:
            return None
        chunk = stack.pop()
        del self.free_set[chunk]
        raw = self._size_raw(chunk)
        if raw & ~7 != csz:
            self._abort("malloc(): memory corruption (fast)")
        return chunk

    def _take_small(self, csz: int) -> int | None:
        queue = self.smallbins.get(csz)
        if not queue:
            return None
        chunk = queue.pop(0)
        del self.free_set[chunk]
        raw = self._size_raw(chunk)
        if raw & ~7 != csz:
            self._abort("malloc(): memory corruption")
        nraw = self._size_raw(chunk + csz)
        self._store(chunk + csz + 4, nraw | 1)
        return chunk

    def _take_large(self, csz: int) -> int | None:
        for chunk in self.largebin:
            size = self.free_set[chunk]
            if size >= csz:
                break
        else:
            return None
        self._bin_remove(chunk)
        raw = self._size_raw(chunk)
        if raw & ~7 != size:
            self._abort("malloc(): memory corruption")
        rem = size - csz
        if rem >= MIN_CHUNK:
            self._store(chunk + 4, csz | (raw & 1))
            rchunk = chunk + csz
            self._store(rchunk + 4, rem | 1)
            self._store(rchunk + rem, rem)
            self._bin_push(rchunk, rem)
        else:
            nraw = self._size_raw(chunk + size)
            self._store(chunk + size + 4, nraw | 1)
        return chunk

    def _carve_top(self, csz: int) -> int:
        traw = self._size_raw(self.top)
        tsize = traw & ~7
        if tsize < MIN_CHUNK or tsize % 8 or self.top + tsize > self.limit:
            self._abort("malloc(): corrupted top size")
        if tsize < csz + MIN_CHUNK:
            return 0
        chunk = self.top
        self._store(chunk + 4, csz | (traw & 1))
        newtop = chunk + csz
        self._store(newtop, 0)
        self._store(newtop + 4, (tsize - csz) | 1)
        self.top = newtop
        return chunk

    def _overlap_check(self, chunk: int, csz: int) -> None:
        lo, hi = chunk, chunk + csz
        for other, osz in self.live.items():
            if other == chunk:
                continue
            if lo < other + osz and other < hi:
                raise HeapEscape(
                    f"allocation 0x{chunk:08x} overlaps live chunk 0x{other:08x}")
        for other, osz in self.free_set.items():
            if lo < other + osz and other < hi:
                raise HeapEscape(
                    f"allocation 0x{chunk:08x} overlaps free chunk 0x{other:08x}")
        if lo < self.base or hi > self.limit:
            raise HeapEscape(f"allocation 0x{chunk:08x} outside arena")

    # -- release -------------------------------------------------------------------

    def free(self, uaddr: int) -> None:
        self.consulted = []
        if uaddr == 0:
            return
        self.free_count += 1
        chunk = (uaddr - 8) & MASK32
        if chunk not in self.live:
            self._abort("free(): invalid pointer")
        raw = self._size_raw(chunk)
        size = raw & ~7
        if size < MIN_CHUNK or size % 8 or chunk + size > self.limit - 8:
            self._abort("free(): invalid size")
        nxt = chunk + size
        nraw = self._size_raw(nxt)
        nsize = nraw & ~7
        if size <= FASTBIN_MAX:
            if nsize < MIN_CHUNK or nxt + nsize > self.limit:
                self._abort("free(): invalid next size (fast)")
            del self.live[chunk]
            self.fastbins.setdefault(size, []).append(chunk)
            self.free_set[chunk] = size
            return
        if nxt != self.top and (nsize < MIN_CHUNK or nxt + nsize > self.limit):
            self._abort("free(): invalid next size (normal)")
        del self.live[chunk]
        self._free_normal(chunk, raw)

    def _free_normal(self, chunk: int, raw: int) -> None:
        size = raw & ~7
        prev_bit = raw & 1
        if not prev_bit:
            prevsz = self._prev_size(chunk)
            prev = (chunk - prevsz) & MASK32
            if not (self.base <= prev < chunk):
                self._abort("corrupted size vs. prev_size")
            praw_bit = self._size_raw(prev) & 1
            merged = self._unlink(prev)
            chunk = prev
            size += merged
            prev_bit = praw_bit
        nxt = chunk + size
        if nxt == self.top:
            told = self._size_raw(self.top) & ~7
            self.top = chunk
            self._store(chunk + 4, (size + told) | prev_bit)
            return
        nraw = self._size_raw(nxt)
        nsize = nraw & ~7
        if nsize < MIN_CHUNK or nxt + nsize > self.limit - 8:
            self._abort("free(): invalid next size (normal)")
        after_raw = self._size_raw(nxt + nsize)
        if not (after_raw & 1):
            self._unlink(nxt)
            size += nsize
            final_next_raw = after_raw
        else:
            final_next_raw = nraw
        self._store(chunk + 4, size | prev_bit)
        self._store(chunk + size, size)
        self._store(chunk + size + 4, final_next_raw & ~1)
        self._bin_push(chunk, size)

    def _consolidate(self) -> None:
        for fsize in sorted(self.fastbins):
            stack = self.fastbins[fsize]
            while stack:
                chunk = stack.pop()
                del self.free_set[chunk]
                raw = self._size_raw(chunk)
                size = raw & ~7
                if chunk + size > self.limit - 8:
                    self._abort("malloc_consolidate(): invalid chunk size")
                self._free_normal(chunk, raw)


# ------------------------------------------------------------------------------
# Corruption case analysis.
# ------------------------------------------------------------------------------

PROBE_SIZES = (8, 24, 40, 200)

SUCCESSOR_CLASSES = (
    "top", "in-use-16", "in-use-48", "free-fast", "free-small", "free-large",
)


@dataclass
class _Scenario:
    model: HeapModel
    victim: int                      # user pointer of the chunk ahead of the successor
    handles: list[int] = field(default_factory=list)   # user pointers ops may free


def _build_scenario(cls: str) -> _Scenario:
    mem = Memory()
    model = HeapModel(mem)
    victim = model.malloc(24)
    handles: list[int] = []
    if cls == "top":
        pass
    elif cls == "in-use-16":
        handles.append(model.malloc(8))
    elif cls == "in-use-48":
        handles.append(model.malloc(40))
    elif cls in ("free-fast", "free-small", "free-large"):
        request = {"free-fast": 24, "free-small": 40, "free-large": 200}[cls]
        succ = model.malloc(request)
        handles.append(model.malloc(8))      # guard: successor must not melt into top
        model.free(succ)
    else:
        raise ValueError(cls)
    return _Scenario(model, victim, handles)


def _apply_corruption(sc: _Scenario) -> None:
    for off, value in CORRUPTION_TRIPLE:
        sc.model.mem.raw_store_u32(sc.victim + off, value)


def corrupted_addresses(victim_user: int) -> set[int]:
    out = set()
    for off, length in CORRUPTED_SPANS:
        out.update(range(victim_user + off, victim_user + off + length))
    return out


@dataclass
class CaseRow:
    scenario: str
    sequence: tuple[str, ...]
    outcome: str                  # abort | silent | escape
    message: str
    step: int                     # 1-based op index for aborts, 0 otherwise
    consulted_corrupted: bool


@dataclass
class HeapCheckResult:
    depth: int
    rows: list[CaseRow]
    differential_aborts: int
    elapsed: float

    @property
    def escapes(self) -> int:
        return sum(1 for r in self.rows if r.outcome == "escape")

    @property
    def aborts(self) -> int:
        return sum(1 for r in self.rows if r.outcome == "abort")

    @property
    def silents(self) -> int:
        return sum(1 for r in self.rows if r.outcome == "silent")


def _op_choices(n_handles: int) -> list[str]:
    ops = [f"m{k}" for k in PROBE_SIZES]
    ops += [f"f{i}" for i in range(n_handles)]
    return ops


def _sequences(depth: int, base_handles: int) -> list[tuple[str, ...]]:
    """All op sequences up to the depth.  A free may target any handle
    that exists and has not been freed yet at that point; mallocs grow
    the handle list."""
    out: list[tuple[str, ...]] = [()]
    frontier: list[tuple[tuple[str, ...], int, frozenset]] = [((), base_handles, frozenset())]
    for _ in range(depth):
        nxt = []
        for seq, n, freed in frontier:
            for op in _op_choices(n):
                if op.startswith("f"):
                    idx = int(op[1:])
                    if idx in freed:
                        continue
                    item = (seq + (op,), n, freed | {idx})
                else:
                    item = (seq + (op,), n + 1, freed)
                nxt.append(item)
                out.append(item[0])
        frontier = nxt
    return out


def _run_sequence(cls: str, seq: tuple[str, ...], corrupt: bool) -> CaseRow:
    sc = _build_scenario(cls)
    if corrupt:
        _apply_corruption(sc)
    bad = corrupted_addresses(sc.victim)
    handles = list(sc.handles)
    consulted_bad = False
    for step, op in enumerate(seq, start=1):
        try:
            if op.startswith("m"):
                ptr = sc.model.malloc(int(op[1:]))
                handles.append(ptr)
            else:
                handles_idx = int(op[1:])
                sc.model.free(handles[handles_idx])
        except AllocatorAbort as a:
            for addr, width in a.consulted:
                if any((addr + i) in bad for i in range(width)):
                    consulted_bad = True
            return CaseRow(cls, seq, "abort", a.message, step, consulted_bad)
        except HeapEscape as e:
            return CaseRow(cls, seq, "escape", str(e), step, consulted_bad)
        for addr, width in sc.model.consulted:
            if any((addr + i) in bad for i in range(width)):
                consulted_bad = True
    return CaseRow(cls, seq, "silent", "", 0, consulted_bad)


def check_corruption_cases(depth: int = 3) -> HeapCheckResult:
    start = time.monotonic()
    rows: list[CaseRow] = []
    differential_aborts = 0
    for cls in SUCCESSOR_CLASSES:
        base_handles = len(_build_scenario(cls).handles)
        for seq in _sequences(depth, base_handles):
            rows.append(_run_sequence(cls, seq, corrupt=True))
            clean = _run_sequence(cls, seq, corrupt=False)
            if clean.outcome != "silent":
                differential_aborts += 1
    return HeapCheckResult(depth, rows, differential_aborts, time.monotonic() - start)
