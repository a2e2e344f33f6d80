"""Brute-force reference models for differential testing.

Nothing here imports the walker, the TLB or the trap engine. The nested
translation is written as plain recursion over the architectural
definitions, and the delegation table is enumerated from the arrows of the
two-level delegation graph. Only the cause numbering and mode names are
shared with the implementation, since those are the vocabulary both sides
have to speak.
"""

from dataclasses import dataclass, field
from typing import Any, Mapping

from .causes import Cause
from .machine_state import Mode

# Architectural constants, restated locally on purpose.
_V, _R, _W, _X, _U, _G, _A, _D = (1 << i for i in range(8))
_PTE_TOP_RESERVED = 0x3FF << 54
_FETCH, _LOAD, _STORE = "fetch", "load", "store"

_FAULT = {_FETCH: Cause.InstructionPageFault, _LOAD: Cause.LoadPageFault,
          _STORE: Cause.StoreAmoPageFault}
_GUEST_FAULT = {_FETCH: Cause.GuestInstructionPageFault, _LOAD: Cause.GuestLoadPageFault,
                _STORE: Cause.GuestStoreAmoPageFault}


@dataclass(frozen=True)
class OracleResult:
    """Either ``ok`` with a physical address or ``fault`` with a cause."""
    kind: str
    pa: int | None = None
    page_size: int | None = None
    cause: int | None = None
    tval: int | None = None
    gpa: int | None = None
    reads: tuple[tuple[int, int], ...] = ()

    def key(self) -> tuple:
        if self.kind == "ok":
            return ("ok", self.pa, self.page_size)
        return ("fault", self.cause, self.tval, self.gpa)


@dataclass
class OracleReport:
    verdict: str
    expected: Any
    actual: Any
    coordinates: dict[str, Any] = field(default_factory=dict)
    expected_trace: tuple = ()
    actual_trace: tuple = ()

    @property
    def agree(self) -> bool:
        return self.verdict == "agree"


class _Fault(Exception):
    def __init__(self, cause: Cause, gpa: int | None = None) -> None:
        self.cause = cause
        self.gpa = gpa


class _Memory:
    """Read-only view over whatever memory image the caller has."""

    def __init__(self, image: Any) -> None:
        if isinstance(image, Mapping):
            self._words = image
            self._read = None
        else:
            self._read = image.read64

    def read(self, pa: int) -> int | None:
        if self._read is None:
            return self._words.get(pa)
        try:
            return self._read(pa)
        except Exception:
            return None


def _field(value: int, lo: int, width: int) -> int:
    return (value >> lo) & ((1 << width) - 1)


def _flags(pte: int) -> set[str]:
    return {name for name, bit in zip("vrwxugad", (_V, _R, _W, _X, _U, _G, _A, _D))
            if pte & bit}


def _leaf_ok(flags: set[str], acc: str, *, user: bool | None, sum_: bool, mxr: bool,
             implicit: bool = False) -> bool:
    if implicit:
        can = "r" in flags
    elif acc == _FETCH:
        can = "x" in flags
    elif acc == _LOAD:
        can = "r" in flags or ("x" in flags and mxr)
    else:
        can = "w" in flags
    if not can:
        return False
    if user is None:                      # G-stage: every leaf is a user page
        return "u" in flags
    if user:
        return "u" in flags
    return "u" not in flags or (acc != _FETCH and sum_)


def _radix(mem: _Memory, root: int, addr: int, widths: tuple[int, int, int],
           on_read, leaf_ok) -> tuple[int, int]:
    """Recursive radix-tree descent. Returns (pa, page size)."""

    def level(table: int, depth: int) -> tuple[int, int]:
        shift = 12 + 9 * depth
        index = _field(addr, shift, widths[depth])
        pte_addr = on_read(table + 8 * index)
        pte = mem.read(pte_addr)
        if pte is None:
            raise LookupError
        on_read.log.append((pte_addr, pte))
        flags = _flags(pte)
        if "v" not in flags or pte & _PTE_TOP_RESERVED or ("w" in flags and "r" not in flags):
            raise ValueError
        ppn = _field(pte, 10, 44)
        if not flags & {"r", "x"}:
            if depth == 0:
                raise ValueError
            return level(ppn * 4096, depth - 1)
        page = 1 << shift
        if ppn % (page // 4096):
            raise ValueError
        if not leaf_ok(flags):
            raise ValueError
        return ppn * 4096 + addr % page, page

    return level(root, 2)


def _gstage(mem, hgatp: int, gpa: int, acc: str, mxr: bool, implicit: bool, log) -> tuple[int, int]:
    if _field(hgatp, 60, 4) == 0:
        if gpa >= 1 << 56:
            raise _Fault(_FAULT[acc])
        return gpa, 1 << 30
    if gpa >= 1 << 41:
        raise _Fault(_GUEST_FAULT[acc], gpa)
    root = (_field(hgatp, 0, 44) >> 2 << 2) * 4096

    def on_read(pa: int) -> int:
        return pa
    on_read.log = log

    def ok(flags: set[str]) -> bool:
        if not _leaf_ok(flags, acc, user=None, sum_=False, mxr=mxr, implicit=implicit):
            return False
        return "a" in flags and (implicit or acc != _STORE or "d" in flags)

    try:
        return _radix(mem, root, gpa, (9, 9, 11), on_read, ok)
    except (ValueError, LookupError):
        raise _Fault(_GUEST_FAULT[acc], gpa) from None


def oracle_translate(memory: Any, csrs: Mapping[str, int], va: int, acc: str,
                     mode: Mode | str) -> OracleResult:
    """Translate ``va`` from scratch. ``memory`` is a dict ``{pa: word}`` or any
    object with ``read64``; ``csrs`` maps register names to values."""
    mode = Mode(mode)
    acc = acc.lower() if isinstance(acc, str) else acc.name.lower()
    mem = _Memory(memory)
    log: list[tuple[int, int]] = []
    mstatus = csrs.get("mstatus", 0)
    mxr_h, sum_h = bool(mstatus >> 19 & 1), bool(mstatus >> 18 & 1)

    def result(pa: int, size: int) -> OracleResult:
        return OracleResult("ok", pa=pa, page_size=size, reads=tuple(log))

    def fault(cause: Cause, gpa: int | None = None) -> OracleResult:
        return OracleResult("fault", cause=int(cause), tval=va, gpa=gpa, reads=tuple(log))

    def canonical(addr: int) -> bool:
        upper = addr >> 38
        return upper in (0, (1 << 26) - 1)

    if mode == Mode.M:
        return result(va, 1 << 30) if va < 1 << 56 else fault(_FAULT[acc])

    user = mode in (Mode.U, Mode.VU)
    if not mode.virtual:
        satp = csrs.get("satp", 0)
        if _field(satp, 60, 4) != 8:
            return result(va, 1 << 30) if va < 1 << 56 else fault(_FAULT[acc])
        if not canonical(va):
            return fault(_FAULT[acc])

        def on_read(pa: int) -> int:
            return pa
        on_read.log = log

        def ok(flags: set[str]) -> bool:
            return (_leaf_ok(flags, acc, user=user, sum_=sum_h, mxr=mxr_h)
                    and "a" in flags and (acc != _STORE or "d" in flags))
        try:
            pa, size = _radix(mem, _field(satp, 0, 44) * 4096, va, (9, 9, 9), on_read, ok)
        except (ValueError, LookupError):
            return fault(_FAULT[acc])
        return result(pa, size)

    vsatp = csrs.get("vsatp", 0)
    hgatp = csrs.get("hgatp", 0)
    vsstatus = csrs.get("vsstatus", 0)
    try:
        if _field(vsatp, 60, 4) != 8:
            pa, size = _gstage(mem, hgatp, va, acc, mxr_h, False, log)
            return result(pa, size)
        if not canonical(va):
            return fault(_FAULT[acc])

        def guest_pte(gpa: int) -> int:
            return _gstage(mem, hgatp, gpa, acc, mxr_h, True, log)[0]
        guest_pte.log = log
        mxr_vs = bool(vsstatus >> 19 & 1) or mxr_h

        def ok(flags: set[str]) -> bool:
            return (_leaf_ok(flags, acc, user=user, sum_=bool(vsstatus >> 18 & 1), mxr=mxr_vs)
                    and "a" in flags and (acc != _STORE or "d" in flags))
        try:
            gpa, vs_size = _radix(mem, _field(vsatp, 0, 44) * 4096, va, (9, 9, 9),
                                  guest_pte, ok)
        except (ValueError, LookupError):
            return fault(_FAULT[acc])
        pa, g_size = _gstage(mem, hgatp, gpa, acc, mxr_h, False, log)
        return result(pa, min(vs_size, g_size))
    except _Fault as exc:
        return fault(exc.cause, exc.gpa)


# Delegation, enumerated from the graph. A trap may only go to M, to HS via
# medeleg, or, when raised with V=1, on to VS via hedeleg.
ORIGINS = (Mode.M, Mode.HS, Mode.U, Mode.VS, Mode.VU)
CAUSE_RANGE = range(24)
_M_DELEGABLE = frozenset({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 13, 15, 20, 21, 22, 23})
_H_DELEGABLE = frozenset({0, 1, 2, 3, 4, 5, 6, 7, 8, 12, 13, 15})
_ARROWS = {
    Mode.M: (Mode.M,),
    Mode.HS: (Mode.M, Mode.HS),
    Mode.U: (Mode.M, Mode.HS),
    Mode.VS: (Mode.M, Mode.HS, Mode.VS),
    Mode.VU: (Mode.M, Mode.HS, Mode.VS),
}


def _route(origin: Mode, cause: int, m_bit: int, h_bit: int) -> Mode:
    allowed = _ARROWS[origin]
    # Walk the arrows from the most privileged handler down while the
    # delegation bit for this hop is set.
    target = allowed[0]
    if len(allowed) > 1 and m_bit and cause in _M_DELEGABLE:
        target = allowed[1]
        if len(allowed) > 2 and h_bit and cause in _H_DELEGABLE:
            target = allowed[2]
    return target


def oracle_delegation_table() -> dict[tuple[Mode, int, int, int], Mode]:
    """Map (origin, cause, medeleg bit, hedeleg bit) to the handling mode."""
    return {(origin, cause, m, h): _route(origin, cause, m, h)
            for origin in ORIGINS for cause in CAUSE_RANGE for m in (0, 1) for h in (0, 1)}


def as_oracle_result(outcome: Any) -> OracleResult:
    """Express a walker translation or translation fault as an oracle result."""
    if hasattr(outcome, "cause"):
        return OracleResult("fault", cause=int(outcome.cause), tval=outcome.tval,
                            gpa=outcome.gpa, reads=tuple(outcome.accesses))
    return OracleResult("ok", pa=outcome.pa, page_size=outcome.page_size,
                        reads=tuple(outcome.accesses))


def count_accesses(walk: Any) -> int:
    """Number of physical page-table reads a walk (or translation) made."""
    for attr in ("reads", "accesses"):
        if hasattr(walk, attr):
            return len(getattr(walk, attr))
    return len(walk)


def compare(expected: OracleResult, actual: OracleResult, *, compare_reads: bool = True,
            **coordinates: Any) -> OracleReport:
    agree = expected.key() == actual.key()
    if agree and compare_reads:
        agree = expected.reads == actual.reads
    return OracleReport("agree" if agree else "disagree", expected.key(), actual.key(),
                        coordinates, expected.reads, actual.reads)


# Fence semantics, restated as predicates over plain entry attributes. An
# entry is anything with kind ("stage1"/"gstage"/"combined"), tag, page_size,
# asid, vmid, virt and global_ attributes.
def _in_scope(fence: str, kind: str, entry: Any, vmid: int) -> bool:
    if fence == "sfence.vma":
        return kind == "stage1" and not entry.virt
    if fence == "hfence.vvma":
        return (kind == "stage1" and entry.virt) or (kind == "combined" and entry.vmid == vmid)
    return kind in ("gstage", "combined")


def _pages(entry: Any) -> range:
    return range(entry.tag, entry.tag + entry.page_size // 4096)


def oracle_fence(entries: list, fence: str, addr: int | None = None,
                 ident: int | None = None, current_vmid: int = 0) -> list:
    """Entries a fence must invalidate, in their original order."""
    fence = getattr(fence, "value", fence)
    out = []
    for e in entries:
        kind = getattr(e.kind, "value", e.kind)
        if not _in_scope(fence, kind, e, current_vmid):
            continue
        if fence == "hfence.gvma":
            if ident is not None and e.vmid != ident:
                continue
            # Combined entries cannot be narrowed down by guest-physical address.
            if addr is not None and kind == "gstage" and addr // 4096 not in _pages(e):
                continue
        else:
            if ident is not None and (e.global_ or e.asid != ident):
                continue
            if addr is not None and (addr // 4096) % (1 << 27) not in _pages(e):
                continue
        out.append(e)
    return out
