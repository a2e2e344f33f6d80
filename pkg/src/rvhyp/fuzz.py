"""Randomized differential testing of translation against the oracle.

Each case builds a fresh memory image holding a host stage-1 table, a
G-stage table and a guest VS-stage table with mixed page sizes, corrupts a
fraction of the PTEs, then translates a batch of addresses three ways: the
oracle, the walker without a TLB, and a TLB-equipped machine.
"""

import random
from dataclasses import dataclass, field

from .machine import Machine
from .machine_state import (ATP_MODE_SV39, MSTATUS_MASK, STATUS_MXR, STATUS_SUM, CsrFile,
                            Mode, PrivilegeState)
from .oracle import OracleReport, as_oracle_result, compare, oracle_translate
from .pagetable import BumpAllocator, PageTableBuilder
from .phys_mem import SparseMemory
from .ptw import (PAGE_1G, PAGE_2M, PAGE_4K, PTE_A, PTE_D, PTE_G, PTE_R, PTE_U, PTE_V, PTE_W,
                  PTE_X, Access, TranslationFault, translate)
from .trace import NullTracer

HOST_BASE = 0x8000_0000          # 1 GiB aligned so a 1 GiB G-stage leaf can map it
HOST_TABLES = 0x20_0000          # host table pool: [HOST_BASE, HOST_BASE + 2 MiB)
GUEST_RAM = 0x40_0000            # guest RAM: GPA [0, 4 MiB) -> HPA HOST_BASE + GPA
GUEST_TABLE_BASE = 0x20_0000     # guest tables live in the upper half of guest RAM

_SIZES = (PAGE_4K, PAGE_4K, PAGE_2M, PAGE_1G)
_PERMS = (PTE_R, PTE_R | PTE_W, PTE_R | PTE_X, PTE_R | PTE_W | PTE_X, PTE_X)


@dataclass
class FuzzImage:
    mem: SparseMemory
    csrs: dict[str, int]
    host_vas: list[tuple[int, int]] = field(default_factory=list)   # (va, size)
    guest_vas: list[tuple[int, int]] = field(default_factory=list)
    pte_slots: list[int] = field(default_factory=list)              # host addresses
    corrupted: int = 0


def _canonical(rng: random.Random, size: int) -> int:
    va = rng.getrandbits(39) & ~(size - 1)
    if va >> 38:
        va |= ((1 << 25) - 1) << 39
    return va


def _leaf_flags(rng: random.Random, gstage: bool) -> int:
    flags = PTE_V | rng.choice(_PERMS) | PTE_A
    if rng.random() < 0.85:
        flags |= PTE_D
    if gstage or rng.random() < 0.5:
        flags |= PTE_U
    if not gstage and rng.random() < 0.1:
        flags |= PTE_G
    return flags


def _corrupt(rng: random.Random, pte: int) -> int:
    kind = rng.randrange(8)
    if kind == 0:
        return pte & ~PTE_V
    if kind == 1:
        return pte | (1 << rng.randrange(54, 64))
    if kind == 2:
        return (pte & ~(PTE_R | PTE_X)) | PTE_W
    if kind == 3:
        return pte & ~PTE_A
    if kind == 4:
        return pte & ~(PTE_D | PTE_U)
    if kind == 5:
        return pte ^ (1 << rng.randrange(1, 8))
    if kind == 6:
        return pte ^ (1 << rng.randrange(10, 28))   # misaligns superpages, moves pointers
    return pte & ~(PTE_R | PTE_W | PTE_X)           # leaf becomes a pointer


def random_image(rng: random.Random, fault_rate: float = 0.2, mappings: int = 8) -> FuzzImage:
    mem = SparseMemory()
    mem.back_range(HOST_BASE, GUEST_RAM)
    host_alloc = BumpAllocator(HOST_BASE, HOST_BASE + HOST_TABLES)
    slots: list[int] = []

    def host_write(pa: int, value: int) -> None:
        slots.append(pa)
        mem.write64(pa, value)

    # G-stage: guest RAM first, so guest tables are reachable, then extra regions.
    g_bare = rng.random() < 0.15
    vmid = rng.getrandbits(7)
    hgatp = 0
    gtab = None
    ram_style = rng.choice(("1G", "2M", "4K", "mixed"))
    if not g_bare:
        gtab = PageTableBuilder(host_write, host_alloc, gstage=True)
        hgatp = (ATP_MODE_SV39 << 60) | (vmid << 44) | (gtab.root >> 12)
        ram_flags = PTE_V | PTE_R | PTE_W | PTE_U | PTE_A | PTE_D
        if ram_style == "1G":
            gtab.map(0, HOST_BASE, PAGE_1G, ram_flags | PTE_X)
        elif ram_style == "2M":
            for gpa in range(0, GUEST_RAM, PAGE_2M):
                gtab.map(gpa, HOST_BASE + gpa, PAGE_2M, ram_flags | (PTE_X * (gpa == 0)))
        else:
            gtab.map(0, HOST_BASE, PAGE_2M, ram_flags)
    guest_mapped_4k: set[int] = set()

    def guest_to_host(gpa: int) -> int:
        if gtab is not None and ram_style in ("4K", "mixed") and gpa >= PAGE_2M:
            page = gpa & ~(PAGE_4K - 1)
            if page not in guest_mapped_4k:
                guest_mapped_4k.add(page)
                gtab.map(page, HOST_BASE + page, PAGE_4K, PTE_V | PTE_R | PTE_W | PTE_U | PTE_A
                         | PTE_D)
        return HOST_BASE + gpa

    extra_g: list[tuple[int, int]] = []
    if gtab is not None:
        for _ in range(rng.randrange(1, 4)):
            size = rng.choice(_SIZES)
            gpa = rng.randrange(1, 1 << 11) * PAGE_1G + rng.randrange(512) * PAGE_2M
            gpa &= ~(size - 1)
            hpa = rng.getrandbits(44) << 12 & ~(size - 1)
            try:
                gtab.map(gpa, hpa, size, _leaf_flags(rng, gstage=True))
                extra_g.append((gpa, size))
            except ValueError:
                pass

    # VS-stage tables in guest RAM.
    guest_alloc = BumpAllocator(GUEST_TABLE_BASE, GUEST_RAM)
    vsatp = 0
    guest_vas: list[tuple[int, int]] = []
    if rng.random() < 0.85:
        vtab = PageTableBuilder(lambda gpa, v: host_write(guest_to_host(gpa), v), guest_alloc)
        vsatp = (ATP_MODE_SV39 << 60) | (rng.getrandbits(9) << 44) | (vtab.root >> 12)
        for _ in range(mappings):
            size = rng.choice(_SIZES)
            va = _canonical(rng, size)
            pick = rng.random()
            if pick < 0.5 and extra_g:
                base, gsize = rng.choice(extra_g)
                gpa = base + (rng.randrange(gsize) & ~(size - 1) if gsize > size else 0)
            elif pick < 0.8:
                gpa = rng.randrange(0, GUEST_RAM) & ~(size - 1)
            else:
                gpa = rng.getrandbits(rng.choice((30, 41, 44))) & ~(size - 1)
            try:
                vtab.map(va, gpa, size, _leaf_flags(rng, gstage=False))
                guest_vas.append((va, size))
            except ValueError:
                pass
    else:
        guest_vas = [(gpa, size) for gpa, size in extra_g]
        guest_vas.append((rng.randrange(GUEST_RAM) & ~(PAGE_4K - 1), PAGE_4K))

    # Host stage-1 tables.
    satp = 0
    host_vas: list[tuple[int, int]] = []
    if rng.random() < 0.9:
        htab = PageTableBuilder(host_write, host_alloc)
        satp = (ATP_MODE_SV39 << 60) | (rng.getrandbits(9) << 44) | (htab.root >> 12)
        for _ in range(mappings):
            size = rng.choice(_SIZES)
            va = _canonical(rng, size)
            pa = rng.getrandbits(44) << 12 & ~(size - 1)
            try:
                htab.map(va, pa, size, _leaf_flags(rng, gstage=False))
                host_vas.append((va, size))
            except ValueError:
                pass

    corrupted = 0
    for slot in dict.fromkeys(slots):
        if rng.random() < fault_rate:
            mem.write64(slot, _corrupt(rng, mem.read64(slot)))
            corrupted += 1

    mstatus = rng.getrandbits(64) & (STATUS_SUM | STATUS_MXR)
    vsstatus = rng.getrandbits(64) & (STATUS_SUM | STATUS_MXR)
    csrs = {"mstatus": mstatus & MSTATUS_MASK, "vsstatus": vsstatus, "satp": satp,
            "vsatp": vsatp, "hgatp": hgatp}
    return FuzzImage(mem, csrs, host_vas, guest_vas, list(dict.fromkeys(slots)), corrupted)


def random_address(rng: random.Random, pool: list[tuple[int, int]]) -> int:
    pick = rng.random()
    if pool and pick < 0.75:
        va, size = rng.choice(pool)
        return va + rng.randrange(size)
    if pick < 0.9:
        return _canonical(rng, 1) | rng.getrandbits(12)
    return rng.getrandbits(64)


def load_csrs(image: FuzzImage) -> CsrFile:
    csrs = CsrFile()
    for name, value in image.csrs.items():
        csrs.poke(name, value)
    return csrs


@dataclass
class FuzzStats:
    cases: int = 0
    checks: int = 0
    disagreements: list[OracleReport] = field(default_factory=list)
    max_single: int = 0
    max_nested: int = 0
    ok: int = 0
    faults: dict[int, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.disagreements


_MODES = (Mode.HS, Mode.U, Mode.VS, Mode.VU, Mode.HS, Mode.VS, Mode.VU, Mode.M)


def run_case(rng: random.Random, stats: FuzzStats, addresses: int = 64,
             tlb_size: int = 16) -> None:
    image = random_image(rng)
    csrs = load_csrs(image)
    read64 = image.mem.read64
    machine = Machine(tlb_size=tlb_size, tracer=NullTracer())
    machine.mem = image.mem
    machine.csrs = load_csrs(image)
    for i in range(addresses):
        mode = rng.choice(_MODES)
        acc = rng.choice(tuple(Access))
        va = random_address(rng, image.guest_vas if mode.virtual else image.host_vas)
        state = PrivilegeState.from_mode(mode)
        expected = oracle_translate(image.mem, image.csrs, va, acc.name, mode)
        try:
            plain = as_oracle_result(translate(csrs, read64, va, acc, state))
        except TranslationFault as exc:
            plain = as_oracle_result(exc)
        machine.state = state
        try:
            cached = as_oracle_result(machine.translate(va, acc)[0])
        except TranslationFault as exc:
            cached = as_oracle_result(exc)
        coords = {"case": stats.cases, "index": i, "mode": mode.value, "acc": acc.name,
                  "va": f"0x{va:x}"}
        for label, actual, reads in (("tlb-off", plain, True), ("tlb-on", cached, False)):
            report = compare(expected, actual, compare_reads=reads, path=label, **coords)
            stats.checks += 1
            if not report.agree:
                stats.disagreements.append(report)
        n = len(plain.reads)
        if mode.virtual:
            stats.max_nested = max(stats.max_nested, n)
        else:
            stats.max_single = max(stats.max_single, n)
        if expected.kind == "ok":
            stats.ok += 1
        else:
            stats.faults[expected.cause] = stats.faults.get(expected.cause, 0) + 1
    stats.cases += 1


def fuzz(cases: int, seed: int, addresses: int = 64, tlb_size: int = 16) -> FuzzStats:
    rng = random.Random(seed)
    stats = FuzzStats()
    for _ in range(cases):
        run_case(rng, stats, addresses, tlb_size)
    return stats
