"""Paged 32-bit guest memory with per-byte taint, compute depth, and
initialization state.

The address space is flat and little-endian.  Pages are 4 KiB and come
into existence on first touch, but only inside regions the machine has
allowed (read-only data, globals, the heap arena, the stack).  Page
zero and everything at or above GUARD_BASE are never allowed, so a
frame pointer dragged to zero faults on the next local access in either
direction.  Every byte tracks three side values: a taint set (labels of
the input bytes it derives from), a taint compute number (how many
arithmetic steps lie between it and raw input), and an initialized bit.
Allocator metadata bypasses the initialized check through the raw
accessors; program loads do not.
"""

from __future__ import annotations

from dataclasses import dataclass

PAGE = 4096
MASK32 = 0xFFFFFFFF

RODATA_BASE = 0x00100000
GLOBALS_BASE = 0x00200000
HEAP_BASE = 0x00400000
HEAP_LIMIT = HEAP_BASE + (4 << 20)
CODE_BASE = 0x08048000
STACK_TOP = 0xBFFF0000
STACK_LIMIT = STACK_TOP - (1 << 20)
GUARD_BASE = 0xC0000000

MEMORY_BUDGET_PAGES = (64 << 20) // PAGE

EMPTY = frozenset()


class MemoryFault(Exception):
    """Access outside allowed regions: kind is read-unmapped or write-unmapped."""

    def __init__(self, kind: str, addr: int) -> None:
        super().__init__(f"{kind} at 0x{addr:08x}")
        self.kind = kind
        self.addr = addr


class UninitializedRead(Exception):
    def __init__(self, addr: int) -> None:
        super().__init__(f"read of uninitialized byte at 0x{addr:08x}")
        self.addr = addr


class BudgetExceeded(Exception):
    pass


class _Page:
    __slots__ = ("data", "taint", "tcn", "init")

    def __init__(self) -> None:
        self.data = bytearray(PAGE)
        self.taint: list = [None] * PAGE   # None means untainted
        self.tcn = [0] * PAGE
        self.init = bytearray(PAGE)


@dataclass(frozen=True)
class ByteView:
    data: bytes
    taint: tuple
    tcn: tuple


class Memory:
    def __init__(self) -> None:
        self.pages: dict[int, _Page] = {}
        self.allowed: list[tuple[int, int]] = [
            (RODATA_BASE, GLOBALS_BASE),
            (GLOBALS_BASE, HEAP_BASE),
            (HEAP_BASE, HEAP_LIMIT),
            (STACK_LIMIT, STACK_TOP),
        ]

    def _allowed(self, addr: int) -> bool:
        for lo, hi in self.allowed:
            if lo <= addr < hi:
                return True
        return False

    def _page_for(self, addr: int, write: bool) -> tuple[_Page, int]:
        addr &= MASK32
        idx, off = divmod(addr, PAGE)
        page = self.pages.get(idx)
        if page is None:
            if not self._allowed(addr):
                raise MemoryFault("write-unmapped" if write else "read-unmapped", addr)
            if len(self.pages) >= MEMORY_BUDGET_PAGES:
                raise BudgetExceeded("memory budget exhausted")
            page = _Page()
            self.pages[idx] = page
        return page, off

    # -- program-level access -------------------------------------------------

    def read(self, addr: int, n: int, require_init: bool = True) -> ByteView:
        data = bytearray()
        taints = []
        tcns = []
        for i in range(n):
            a = (addr + i) & MASK32
            page, off = self._page_for(a, write=False)
            if require_init and not page.init[off]:
                raise UninitializedRead(a)
            data.append(page.data[off])
            t = page.taint[off]
            taints.append(EMPTY if t is None else t)
            tcns.append(page.tcn[off])
        return ByteView(bytes(data), tuple(taints), tuple(tcns))

    def write(self, addr: int, data: bytes, taints=None, tcns=None) -> None:
        for i, b in enumerate(data):
            a = (addr + i) & MASK32
            page, off = self._page_for(a, write=True)
            page.data[off] = b
            t = None if taints is None else taints[i]
            page.taint[off] = t if t else None
            page.tcn[off] = 0 if tcns is None else tcns[i]
            page.init[off] = 1

    def load_u32(self, addr: int, require_init: bool = True) -> ByteView:
        return self.read(addr, 4, require_init)

    # -- allocator metadata access (no init checks, untainted writes) ---------

    def raw_u32(self, addr: int) -> int:
        v = 0
        for i in range(4):
            page, off = self._page_for((addr + i) & MASK32, write=False)
            v |= page.data[off] << (8 * i)
        return v

    def raw_store_u32(self, addr: int, value: int) -> None:
        for i in range(4):
            page, off = self._page_for((addr + i) & MASK32, write=True)
            page.data[off] = (value >> (8 * i)) & 0xFF
            page.taint[off] = None
            page.tcn[off] = 0
            page.init[off] = 1

    # -- bulk helpers ----------------------------------------------------------

    def mark_init(self, addr: int, n: int) -> None:
        for i in range(n):
            page, off = self._page_for((addr + i) & MASK32, write=True)
            page.init[off] = 1

    def pages_in_use(self) -> int:
        return len(self.pages)


def u32_bytes(value: int) -> bytes:
    value &= MASK32
    return bytes((value >> (8 * i)) & 0xFF for i in range(4))


def bytes_u32(data: bytes) -> int:
    v = 0
    for i, b in enumerate(data[:4]):
        v |= b << (8 * i)
    return v
