from pathlib import Path

import pytest

from rvhyp.machine_state import CsrFile
from rvhyp.pagetable import BumpAllocator, PageTableBuilder
from rvhyp.phys_mem import SparseMemory

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"

SV39 = 8 << 60
RWU_AD = 0xD7   # V R W U A D


class Env:
    """Host memory with a host stage-1, a G-stage and a guest VS-stage builder.

    Guest RAM is GPA [0, 2 MiB) at HPA 0x8000_0000, so guest tables at GPA
    0x10_0000 sit at HPA 0x8010_0000. With ``gstage_4k`` each guest table
    page gets its own 4 KiB G-stage leaf instead of one 2 MiB leaf, which
    makes every implicit G-stage walk three reads long.
    """

    GUEST_TABLES = 0x10_0000
    GUEST_TABLES_HPA = 0x8010_0000

    def __init__(self, vmid: int = 1, asid: int = 0, gstage_4k: bool = False) -> None:
        self.mem = SparseMemory()
        self.mem.back_range(0x8000_0000, 0x40_0000)
        self.csrs = CsrFile()
        host = BumpAllocator(0x8000_0000, 0x8010_0000)
        self.host = PageTableBuilder(self.mem.write64, host)
        self.gstage = PageTableBuilder(self.mem.write64, host, gstage=True)
        mapped = set()

        def guest_write(gpa: int, value: int) -> None:
            page = gpa & ~0xFFF
            if gstage_4k and page not in mapped:
                mapped.add(page)
                self.gstage.map(page, 0x8000_0000 + page, 4096, RWU_AD)
            self.mem.write64(0x8000_0000 + gpa, value)

        if not gstage_4k:
            self.gstage.map(0, 0x8000_0000, 1 << 21, RWU_AD)
        guest = BumpAllocator(self.GUEST_TABLES, 0x20_0000)
        self.guest = PageTableBuilder(guest_write, guest)
        self.csrs.poke("satp", SV39 | (asid << 44) | (self.host.root >> 12))
        self.csrs.poke("hgatp", SV39 | (vmid << 44) | (self.gstage.root >> 12))
        self.csrs.poke("vsatp", SV39 | (asid << 44) | (self.guest.root >> 12))

    @property
    def read64(self):
        return self.mem.read64


@pytest.fixture
def env() -> Env:
    return Env()


# Acceptance criteria record a verdict here; the summary hook prints one line each.
CRITERIA: dict[int, tuple[bool, str]] = {}


def record(number: int, ok: bool, detail: str) -> None:
    CRITERIA[number] = (ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
