"""Fully associative, FIFO-replaced TLB with virtualization-aware tags.

Three entry kinds are cached:

* ``STAGE1``   host translations (V=0), tagged by VPN and ASID;
* ``GSTAGE``   guest-physical to host-physical, tagged by GPPN and VMID;
* ``COMBINED`` guest-virtual straight to host-physical, tagged by VPN, ASID
  and VMID, with the permissions of both stages and-ed together.

A lookup whose permissions do not allow the access is reported as a miss so
the caller re-walks and gets the authoritative fault from the walker.
"""

from collections import deque
from dataclasses import dataclass
from enum import Enum

from .machine_state import ASID_BITS, VMID_BITS
from .ptw import PTE_R, Access, Perm, WalkContext, permits

VPN_MASK = (1 << 27) - 1


class Kind(str, Enum):
    STAGE1 = "stage1"
    GSTAGE = "gstage"
    COMBINED = "combined"


class FenceKind(str, Enum):
    SFENCE_VMA = "sfence.vma"
    HFENCE_VVMA = "hfence.vvma"
    HFENCE_GVMA = "hfence.gvma"


class InvalidFence(ValueError):
    pass


@dataclass(frozen=True)
class TlbEntry:
    kind: Kind
    tag: int              # page number (VPN or GPPN) of the first 4 KiB page covered
    page_size: int
    ppn: int              # target page number of the first 4 KiB page covered
    perms: Perm
    asid: int = 0
    vmid: int = 0
    virt: bool = False
    global_: bool = False

    def __post_init__(self) -> None:
        pages = self.page_size >> 12
        if self.tag & (pages - 1) or self.ppn & (pages - 1):
            raise ValueError("TLB entry tag/ppn not aligned to its page size")
        if self.kind == Kind.GSTAGE and (self.asid or self.global_):
            raise ValueError("G-stage entries carry a VMID only")
        if self.kind == Kind.STAGE1 and self.vmid:
            raise ValueError("stage-1 entries carry no VMID")

    @property
    def key(self) -> tuple:
        return (self.kind, self.tag, self.page_size, self.asid, self.vmid, self.virt)

    def covers(self, page: int) -> bool:
        return (page & ~((self.page_size >> 12) - 1)) == self.tag

    def translate(self, addr: int) -> int:
        return (self.ppn << 12) | (addr & (self.page_size - 1))


def page_number(kind: Kind, addr: int) -> int:
    if kind == Kind.GSTAGE:
        return addr >> 12
    return (addr >> 12) & VPN_MASK


def make_entry(kind: Kind, addr: int, pa: int, page_size: int, perms: Perm, *,
               asid: int = 0, vmid: int = 0, virt: bool = False,
               global_: bool = False) -> TlbEntry:
    pages = (page_size >> 12) - 1
    return TlbEntry(kind, page_number(kind, addr) & ~pages, page_size, (pa >> 12) & ~pages,
                    perms, asid, vmid, virt, global_)


class Tlb:
    def __init__(self, capacity: int = 16) -> None:
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.entries: deque[TlbEntry] = deque()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, kind: Kind, addr: int, acc: Access, *, asid: int = 0, vmid: int = 0,
               virt: bool = False, ctx: WalkContext = WalkContext(), gmxr: bool = False,
               implicit: bool = False) -> TlbEntry | None:
        """Return the matching entry, or None on a miss.

        ``ctx`` is the stage-1 privilege context; ``gmxr`` the G-stage MXR
        setting; ``implicit`` marks a G-stage lookup done for a page-table
        read, which only needs read permission.
        """
        page = page_number(kind, addr)
        for entry in self.entries:
            if entry.kind != kind or not entry.covers(page):
                continue
            if kind != Kind.GSTAGE and entry.asid != asid and not entry.global_:
                continue
            if kind != Kind.STAGE1 and entry.vmid != vmid:
                continue
            if kind == Kind.STAGE1 and entry.virt != virt:
                continue
            if self._allowed(entry, acc, ctx, gmxr, implicit):
                self.hits += 1
                return entry
            break
        self.misses += 1
        return None

    @staticmethod
    def _allowed(entry: TlbEntry, acc: Access, ctx: WalkContext, gmxr: bool,
                 implicit: bool) -> bool:
        if entry.kind == Kind.GSTAGE:
            if implicit:
                return bool(entry.perms & PTE_R)
            return permits(entry.perms, acc, WalkContext(mxr=gmxr), check_user=False)
        if not permits(entry.perms, acc, ctx):
            return False
        if entry.kind == Kind.COMBINED:
            return permits(entry.perms, acc, WalkContext(mxr=gmxr), check_user=False)
        return True

    def insert(self, entry: TlbEntry) -> TlbEntry | None:
        """Insert ``entry``; returns the evicted entry, if any."""
        if self.capacity == 0:
            return None
        key = entry.key
        for old in self.entries:
            if old.key == key:
                self.entries.remove(old)
                break
        self.entries.append(entry)
        if len(self.entries) > self.capacity:
            return self.entries.popleft()
        return None

    def fence(self, kind: FenceKind | str, addr: int | None = None, ident: int | None = None,
              current_vmid: int = 0) -> int:
        """Invalidate entries per fence semantics; returns how many were dropped."""
        victims = fence_victims(list(self.entries), kind, addr, ident, current_vmid)
        if victims:
            drop = {id(e) for e in victims}
            self.entries = deque(e for e in self.entries if id(e) not in drop)
        return len(victims)

    def flush(self) -> None:
        self.entries.clear()


def fence_victims(entries: list[TlbEntry], kind: FenceKind | str, addr: int | None,
                  ident: int | None, current_vmid: int = 0) -> list[TlbEntry]:
    """Entries a fence would invalidate.

    * ``sfence.vma`` drops host stage-1 entries; an ASID operand spares
      global mappings.
    * ``hfence.vvma`` drops entries holding VS-stage translations (guest
      stage-1 and combined) of the current VMID; ASID handled as above.
    * ``hfence.gvma`` drops G-stage entries matching the GPA and VMID and every
      combined entry of the VMID. Combined entries embed the G-stage
      translations of guest page-table pages as well as of the leaf, so an
      address operand cannot narrow them down.
    """
    try:
        kind = FenceKind(kind)
    except ValueError:
        raise InvalidFence(f"unknown fence {kind!r}") from None
    width = VMID_BITS if kind == FenceKind.HFENCE_GVMA else ASID_BITS
    if ident is not None and not 0 <= ident < (1 << width):
        raise InvalidFence(f"{kind.value} ident {ident} does not fit {width} bits")
    if addr is not None and addr < 0:
        raise InvalidFence("negative address operand")

    def addr_match(entry: TlbEntry) -> bool:
        return addr is None or entry.covers(page_number(entry.kind, addr))

    def asid_match(entry: TlbEntry) -> bool:
        return ident is None or (entry.asid == ident and not entry.global_)

    out = []
    for entry in entries:
        if kind == FenceKind.SFENCE_VMA:
            hit = (entry.kind == Kind.STAGE1 and not entry.virt
                   and addr_match(entry) and asid_match(entry))
        elif kind == FenceKind.HFENCE_VVMA:
            guest = ((entry.kind == Kind.STAGE1 and entry.virt)
                     or (entry.kind == Kind.COMBINED and entry.vmid == current_vmid))
            hit = guest and addr_match(entry) and asid_match(entry)
        else:
            vmid_ok = ident is None or entry.vmid == ident
            if entry.kind == Kind.GSTAGE:
                hit = vmid_ok and addr_match(entry)
            else:
                hit = entry.kind == Kind.COMBINED and vmid_ok
        if hit:
            out.append(entry)
    return out
