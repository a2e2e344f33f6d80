"""Frozen reference values for the oracles, computed by hand."""

from types import SimpleNamespace

from rvhyp.causes import Cause
from rvhyp.machine_state import Mode
from rvhyp.oracle import (ORIGINS, OracleResult, compare, count_accesses, oracle_delegation_table,
                          oracle_fence, oracle_translate)

# satp root PPN 1. VA 0x40201234 has VPN[2]=1, VPN[1]=1, VPN[0]=1.
IMAGE = {
    0x1008: 0x801,            # -> table 0x2000
    0x2008: 0xC01,            # -> table 0x3000
    0x3008: 0x200000C7,       # leaf: PA 0x8000_0000, V R W A D
}
SATP = (8 << 60) | 1
READS = ((0x1008, 0x801), (0x2008, 0xC01), (0x3008, 0x200000C7))


def test_single_stage_frozen():
    got = oracle_translate(IMAGE, {"satp": SATP}, 0x40201234, "load", Mode.HS)
    assert got == OracleResult("ok", pa=0x80000234, page_size=4096, reads=READS)
    assert count_accesses(got) == 3


def test_single_stage_user_page_denied_to_supervisor_without_sum():
    image = dict(IMAGE)
    image[0x3008] |= 0x10
    got = oracle_translate(image, {"satp": SATP}, 0x40201234, "load", Mode.HS)
    assert got.key() == ("fault", int(Cause.LoadPageFault), 0x40201234, None)
    ok = oracle_translate(image, {"satp": SATP, "mstatus": 1 << 18}, 0x40201234, "load",
                          Mode.HS)
    assert ok.kind == "ok"


def test_store_needs_dirty():
    image = dict(IMAGE)
    image[0x3008] &= ~0x80
    got = oracle_translate(image, {"satp": SATP}, 0x40201234, "store", Mode.HS)
    assert got.cause == Cause.StoreAmoPageFault


def test_vs_stage_over_bare_gstage_frozen():
    got = oracle_translate(IMAGE, {"vsatp": SATP}, 0x40201234, "fetch", Mode.VS)
    assert got.kind == "fault" and got.cause == Cause.InstructionPageFault
    got = oracle_translate(IMAGE, {"vsatp": SATP}, 0x40201234, "load", Mode.VS)
    assert got == OracleResult("ok", pa=0x80000234, page_size=4096, reads=READS)


def test_gstage_only_frozen():
    # hgatp root at 0x4000 (16 KiB aligned), GPA 0x1234 -> 4 KiB leaf via two pointers.
    image = {0x4000: 0x1801, 0x6000: 0x1C01, 0x7008: 0x200000D7}
    csrs = {"hgatp": (8 << 60) | 4}
    got = oracle_translate(image, csrs, 0x1234, "store", Mode.VU)
    assert got.key() == ("ok", 0x80000234, 4096)
    assert got.reads == ((0x4000, 0x1801), (0x6000, 0x1C01), (0x7008, 0x200000D7))
    # VPN[0]=0 hits an empty slot.
    got = oracle_translate(image, csrs, 0x34, "store", Mode.VU)
    assert got.key() == ("fault", int(Cause.GuestStoreAmoPageFault), 0x34, 0x34)
    # G-stage leaves without U never grant access.
    image[0x7008] &= ~0x10
    got = oracle_translate(image, csrs, 0x1234, "load", Mode.VU)
    assert got.cause == Cause.GuestLoadPageFault


def test_gpa_wider_than_41_bits_is_guest_fault():
    got = oracle_translate({}, {"hgatp": (8 << 60) | 4}, 1 << 41, "load", Mode.VS)
    assert got.key() == ("fault", int(Cause.GuestLoadPageFault), 1 << 41, 1 << 41)


def test_m_mode_is_identity():
    got = oracle_translate({}, {"satp": SATP}, 0x1234, "fetch", Mode.M)
    assert got.key() == ("ok", 0x1234, 1 << 30)


def test_delegation_table_frozen_rows():
    table = oracle_delegation_table()
    assert len(table) == 480
    assert table[(Mode.VU, int(Cause.EcallFromU), 1, 1)] == Mode.VS
    assert table[(Mode.VU, int(Cause.EcallFromU), 1, 0)] == Mode.HS
    assert table[(Mode.VU, int(Cause.EcallFromU), 0, 1)] == Mode.M
    assert table[(Mode.VS, int(Cause.EcallFromVS), 1, 1)] == Mode.HS
    assert table[(Mode.VS, int(Cause.GuestLoadPageFault), 1, 1)] == Mode.HS
    assert table[(Mode.VS, int(Cause.VirtualInstruction), 1, 1)] == Mode.HS
    assert table[(Mode.VS, int(Cause.EcallFromM), 1, 1)] == Mode.M
    assert table[(Mode.VS, 14, 1, 1)] == Mode.M
    assert table[(Mode.U, int(Cause.LoadPageFault), 1, 1)] == Mode.HS
    assert table[(Mode.M, int(Cause.IllegalInstruction), 1, 1)] == Mode.M
    assert set(ORIGINS) == {Mode.M, Mode.HS, Mode.U, Mode.VS, Mode.VU}


def _entry(kind, tag, size=4096, asid=0, vmid=0, virt=False, global_=False):
    return SimpleNamespace(kind=kind, tag=tag, page_size=size, asid=asid, vmid=vmid,
                           virt=virt, global_=global_)


def test_fence_oracle_frozen():
    s1 = _entry("stage1", 0x10, asid=1)
    s1g = _entry("stage1", 0x20, asid=2, global_=True)
    g = _entry("gstage", 0x200, size=1 << 21, vmid=3)
    c = _entry("combined", 0x10, asid=1, vmid=3, virt=True)
    c_other = _entry("combined", 0x10, asid=1, vmid=4, virt=True)
    entries = [s1, s1g, g, c, c_other]
    assert oracle_fence(entries, "sfence.vma") == [s1, s1g]
    assert oracle_fence(entries, "sfence.vma", ident=2) == []
    assert oracle_fence(entries, "sfence.vma", addr=0x10abc) == [s1]
    assert oracle_fence(entries, "hfence.vvma", current_vmid=3) == [c]
    assert oracle_fence(entries, "hfence.gvma") == [g, c, c_other]
    assert oracle_fence(entries, "hfence.gvma", ident=4) == [c_other]
    assert oracle_fence(entries, "hfence.gvma", addr=0x3ff000) == [g, c, c_other]
    assert oracle_fence(entries, "hfence.gvma", addr=0x400000) == [c, c_other]


def test_compare_reports_reads():
    a = OracleResult("ok", pa=1, page_size=4096, reads=((0, 1),))
    b = OracleResult("ok", pa=1, page_size=4096, reads=((0, 2),))
    assert not compare(a, b).agree
    assert compare(a, b, compare_reads=False).agree
    assert compare(a, a, case=1).coordinates == {"case": 1}
