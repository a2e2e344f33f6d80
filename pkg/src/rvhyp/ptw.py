"""Sv39 / Sv39x4 page-table walker and the nested two-stage translation.

Single-stage walks (:func:`walk_stage1`) read up to three 8-byte PTEs. When
V=1 every guest page-table pointer is a guest-physical address, so each
VS-stage PTE read is preceded by a G-stage walk (:func:`walk_gstage`), and the
final guest-physical address is G-translated once more. With three levels
in both stages that is 3 * (3 + 1) + 3 = 15 memory reads.

Hardware A/D updating is not modelled: a leaf with A=0, or D=0 on a store,
faults.
"""

from dataclasses import dataclass, field
from enum import IntEnum, IntFlag
from typing import Callable

from .causes import Cause, GUEST_PAGE_FAULTS
from .machine_state import (ATP_MODE_SV39, ATP_PPN, STATUS_MXR, STATUS_SUM, Base, CsrFile,
                            PrivilegeState, get_field, ATP_MODE)
from .phys_mem import PhysMemError, PA_BITS
from .trap_engine import Trap

PTE_V = 1 << 0
PTE_R = 1 << 1
PTE_W = 1 << 2
PTE_X = 1 << 3
PTE_U = 1 << 4
PTE_G = 1 << 5
PTE_A = 1 << 6
PTE_D = 1 << 7
PTE_PPN_SHIFT = 10
PTE_PPN_MASK = (1 << 44) - 1
PTE_RESERVED = ((1 << 10) - 1) << 54  # N, PBMT and reserved bits: no Svnapot/Svpbmt

VA_BITS = 39
GPA_BITS = 41
LEVELS = 3

PAGE_4K = 1 << 12
PAGE_2M = 1 << 21
PAGE_1G = 1 << 30
PAGE_SIZES = (PAGE_4K, PAGE_2M, PAGE_1G)


class Access(IntEnum):
    FETCH = 0
    LOAD = 1
    STORE = 2


class Perm(IntFlag):
    """Effective permissions; W is only granted when the leaf is also dirty."""
    NONE = 0
    R = PTE_R
    W = PTE_W
    X = PTE_X
    U = PTE_U

    def __str__(self) -> str:
        return "".join(c if self & f else "-" for c, f in
                       (("r", Perm.R), ("w", Perm.W), ("x", Perm.X), ("u", Perm.U)))


PAGE_FAULT = {Access.FETCH: Cause.InstructionPageFault, Access.LOAD: Cause.LoadPageFault,
              Access.STORE: Cause.StoreAmoPageFault}
GUEST_PAGE_FAULT = {Access.FETCH: Cause.GuestInstructionPageFault,
                    Access.LOAD: Cause.GuestLoadPageFault,
                    Access.STORE: Cause.GuestStoreAmoPageFault}


class TranslationFault(Exception):
    def __init__(self, cause: Cause, tval: int, gpa: int | None = None, reason: str = "",
                 accesses: list[tuple[int, int]] | None = None) -> None:
        super().__init__(f"{cause.name} tval=0x{tval:x}" + (f" ({reason})" if reason else ""))
        self.cause = cause
        self.tval = tval
        self.gpa = gpa
        self.reason = reason
        self.accesses = accesses if accesses is not None else []

    def to_trap(self, epc: int = 0) -> Trap:
        return Trap(cause=int(self.cause), tval=self.tval, gpa=self.gpa, epc=epc)


class PageFault(TranslationFault):
    pass


class GuestPageFault(TranslationFault):
    def __init__(self, cause: Cause, tval: int, gpa: int, reason: str = "",
                 accesses: list[tuple[int, int]] | None = None) -> None:
        assert cause in GUEST_PAGE_FAULTS
        super().__init__(cause, tval, gpa, reason, accesses)


@dataclass(frozen=True)
class WalkContext:
    user: bool = False
    sum: bool = False
    mxr: bool = False


@dataclass
class WalkResult:
    pa: int
    page_size: int
    perms: Perm
    accesses: list[tuple[int, int]] = field(default_factory=list)
    global_: bool = False


@dataclass
class Translation:
    """Outcome of a full translation, with what the TLB needs to cache it."""
    pa: int
    page_size: int
    perms: Perm
    accesses: list[tuple[int, int]]
    two_stage: bool = False
    global_: bool = False
    gpa: int | None = None            # final guest-physical address when V=1
    stage1_size: int | None = None    # None when that stage is Bare
    gstage_size: int | None = None
    stage1_perms: Perm | None = None
    gstage_perms: Perm | None = None


def sign_extended(va: int) -> bool:
    top = va >> (VA_BITS - 1)
    return top == 0 or top == (1 << (64 - VA_BITS + 1)) - 1


def vpn(va: int, level: int) -> int:
    return (va >> (12 + 9 * level)) & 0x1FF


def pte_ppn(pte: int) -> int:
    return (pte >> PTE_PPN_SHIFT) & PTE_PPN_MASK


def leaf_perms(pte: int) -> Perm:
    perms = pte & (PTE_R | PTE_X | PTE_U)
    if pte & PTE_W and pte & PTE_D:
        perms |= PTE_W
    return Perm(perms)


def permits(perms: int, acc: Access, ctx: WalkContext, check_user: bool = True) -> bool:
    """Would a leaf with effective ``perms`` allow ``acc`` under ``ctx``?"""
    if acc == Access.FETCH:
        ok = perms & PTE_X
    elif acc == Access.LOAD:
        ok = perms & PTE_R or (ctx.mxr and perms & PTE_X)
    else:
        ok = perms & PTE_W
    if not ok:
        return False
    if check_user:
        if ctx.user:
            return bool(perms & PTE_U)
        if perms & PTE_U:
            return acc != Access.FETCH and ctx.sum
    return True


def _check_leaf(pte: int, level: int, acc: Access, ctx: WalkContext, *, gstage: bool,
                implicit: bool) -> str | None:
    """Return why a leaf PTE faults, or None if it grants the access."""
    if pte & (((1 << (9 * level)) - 1) << PTE_PPN_SHIFT):
        return "misaligned superpage"
    if gstage:
        if not pte & PTE_U:
            return "G-stage leaf without U"
        ok = pte & PTE_R if implicit else permits(pte, acc, ctx, check_user=False)
    else:
        ok = permits(pte, acc, ctx)
    if not ok:
        return "permission"
    if not pte & PTE_A:
        return "A clear"
    if acc == Access.STORE and not implicit and not pte & PTE_D:
        return "D clear"
    return None


def _walk(root: int, addr: int, top_bits: int, acc: Access, ctx: WalkContext,
          read_pte: Callable[[int], int], fail: Callable[[str], Exception], *,
          gstage: bool, implicit: bool) -> tuple[int, int, int, bool]:
    """Shared radix walk. Returns (pa, page size, leaf pte, global)."""
    table = root
    global_ = False
    for level in (2, 1, 0):
        bits = top_bits if level == 2 else 9
        index = (addr >> (12 + 9 * level)) & ((1 << bits) - 1)
        pte = read_pte(table + index * 8)
        if not pte & PTE_V:
            raise fail("invalid PTE")
        if pte & PTE_RESERVED:
            raise fail("reserved PTE bits")
        if pte & PTE_W and not pte & PTE_R:
            raise fail("W without R")
        global_ = global_ or bool(pte & PTE_G)
        if pte & (PTE_R | PTE_X):
            reason = _check_leaf(pte, level, acc, ctx, gstage=gstage, implicit=implicit)
            if reason:
                raise fail(reason)
            size = 1 << (12 + 9 * level)
            return (pte_ppn(pte) << 12) | (addr & (size - 1)), size, pte, global_
        table = pte_ppn(pte) << 12
    raise fail("no leaf at level 0")


def _reader(read64: Callable[[int], int], accesses: list[tuple[int, int]],
            fail: Callable[[str], Exception]) -> Callable[[int], int]:
    def read_pte(pa: int) -> int:
        try:
            value = read64(pa)
        except PhysMemError:
            raise fail(f"PTE read from unbacked 0x{pa:x}") from None
        accesses.append((pa, value))
        return value
    return read_pte


def walk_stage1(atp: int, va: int, acc: Access, ctx: WalkContext,
                read64: Callable[[int], int]) -> WalkResult:
    """Walk an Sv39 table rooted at ``atp`` (satp or vsatp, MODE=Sv39)."""
    acc = Access(acc)
    accesses: list[tuple[int, int]] = []

    def fail(reason: str) -> PageFault:
        return PageFault(PAGE_FAULT[acc], va, reason=reason, accesses=accesses)

    if not sign_extended(va):
        raise fail("non-canonical address")
    pa, size, pte, global_ = _walk((atp & ATP_PPN) << 12, va, 9, acc, ctx,
                                   _reader(read64, accesses, fail), fail,
                                   gstage=False, implicit=False)
    return WalkResult(pa, size, leaf_perms(pte), accesses, global_)


def walk_gstage(hgatp: int, gpa: int, acc: Access, implicit: bool,
                read64: Callable[[int], int], *, mxr: bool = False, gva: int = 0,
                accesses: list[tuple[int, int]] | None = None) -> WalkResult:
    """Translate a guest-physical address through the Sv39x4 table of ``hgatp``.

    ``gva`` is only used as the reported trap value. Reads are appended to
    ``accesses`` when given so nested walks keep one ordered trace.
    """
    acc = Access(acc)
    trace = accesses if accesses is not None else []
    start = len(trace)

    def fail(reason: str) -> GuestPageFault:
        return GuestPageFault(GUEST_PAGE_FAULT[acc], gva, gpa, reason=reason, accesses=trace)

    if get_field(hgatp, ATP_MODE) != ATP_MODE_SV39:
        return WalkResult(gpa, PAGE_1G, Perm.R | Perm.W | Perm.X | Perm.U, [], False)
    if gpa >> GPA_BITS:
        raise fail("guest-physical address wider than 41 bits")
    root = ((hgatp & ATP_PPN) & ~0b11) << 12
    pa, size, pte, _ = _walk(root, gpa, 11, acc, WalkContext(mxr=mxr),
                             _reader(read64, trace, fail), fail,
                             gstage=True, implicit=implicit)
    return WalkResult(pa, size, leaf_perms(pte), trace[start:], False)


GStageFn = Callable[[int, Access, bool, list], WalkResult]


def translate(csrs: CsrFile, read64: Callable[[int], int], va: int, acc: Access,
              state: PrivilegeState, gstage: GStageFn | None = None) -> Translation:
    """Translate ``va`` for an access made in ``state``.

    ``gstage`` replaces the G-stage walk (the machine passes a TLB-backed
    version); it is called as ``gstage(gpa, acc, implicit, accesses)``.
    Raises :class:`PageFault` or :class:`GuestPageFault`.
    """
    acc = Access(acc)
    mstatus = csrs.peek("mstatus")
    accesses: list[tuple[int, int]] = []

    def identity(addr: int) -> Translation:
        if addr >> PA_BITS:
            raise PageFault(PAGE_FAULT[acc], va, reason="physical address too wide")
        full = Perm.R | Perm.W | Perm.X | Perm.U
        return Translation(addr, PAGE_1G, full, accesses)

    if state.base == Base.M:
        return identity(va)

    user = state.base == Base.U
    if not state.virt:
        satp = csrs.peek("satp")
        if get_field(satp, ATP_MODE) != ATP_MODE_SV39:
            return identity(va)
        ctx = WalkContext(user, bool(mstatus & STATUS_SUM), bool(mstatus & STATUS_MXR))
        res = walk_stage1(satp, va, acc, ctx, read64)
        return Translation(res.pa, res.page_size, res.perms, res.accesses,
                           global_=res.global_, stage1_size=res.page_size,
                           stage1_perms=res.perms)

    vsatp = csrs.peek("vsatp")
    vsstatus = csrs.peek("vsstatus")
    hgatp = csrs.peek("hgatp")
    gmxr = bool(mstatus & STATUS_MXR)
    g_bare = get_field(hgatp, ATP_MODE) != ATP_MODE_SV39
    if gstage is None:
        def gstage(gpa: int, a: Access, implicit: bool, trace: list) -> WalkResult:
            return walk_gstage(hgatp, gpa, a, implicit, read64, mxr=gmxr, gva=va,
                               accesses=trace)

    def g_translate(gpa: int, implicit: bool) -> WalkResult:
        if g_bare and gpa >> PA_BITS:
            raise PageFault(PAGE_FAULT[acc], va, reason="physical address too wide",
                            accesses=accesses)
        try:
            return gstage(gpa, acc, implicit, accesses)
        except GuestPageFault as exc:
            exc.tval = va
            exc.accesses = accesses
            raise

    if get_field(vsatp, ATP_MODE) != ATP_MODE_SV39:
        g = g_translate(va, implicit=False)
        return Translation(g.pa, g.page_size, g.perms, accesses, two_stage=True, gpa=va,
                           gstage_size=None if g_bare else g.page_size,
                           gstage_perms=g.perms)

    ctx = WalkContext(user, bool(vsstatus & STATUS_SUM),
                      bool(vsstatus & STATUS_MXR) or gmxr)

    def fail(reason: str) -> PageFault:
        return PageFault(PAGE_FAULT[acc], va, reason=reason, accesses=accesses)

    def read_guest_pte(gpa: int) -> int:
        hpa = g_translate(gpa, implicit=True).pa
        try:
            value = read64(hpa)
        except PhysMemError:
            raise fail(f"PTE read from unbacked 0x{hpa:x}") from None
        accesses.append((hpa, value))
        return value

    if not sign_extended(va):
        raise fail("non-canonical address")
    gpa, vs_size, pte, global_ = _walk((vsatp & ATP_PPN) << 12, va, 9, acc, ctx,
                                       read_guest_pte, fail, gstage=False, implicit=False)
    vs_perms = leaf_perms(pte)
    g = g_translate(gpa, implicit=False)
    size = min(vs_size, g.page_size)
    return Translation(g.pa, size, vs_perms & g.perms, accesses, two_stage=True,
                       global_=global_, gpa=gpa, stage1_size=vs_size,
                       gstage_size=None if g_bare else g.page_size,
                       stage1_perms=vs_perms, gstage_perms=g.perms)
