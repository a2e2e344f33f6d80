import pytest

from rvhyp.causes import Cause
from rvhyp.machine_state import Base, CsrFile, Mode, PrivilegeState
from rvhyp.oracle import as_oracle_result, oracle_translate
from rvhyp.pagetable import parse_flags
from rvhyp.ptw import (PAGE_1G, PAGE_2M, PAGE_4K, Access, GuestPageFault, PageFault, Perm,
                       TranslationFault, WalkContext, permits, translate)

from conftest import Env

HS = PrivilegeState(Base.S)
U = PrivilegeState(Base.U)
VS = PrivilegeState(Base.S, True)
VU = PrivilegeState(Base.U, True)


def run(env, va, acc, state):
    """Translate with the walker and check the oracle agrees, reads included."""
    expected = oracle_translate(env.mem, env.csrs.snapshot(), va, acc.name, state.mode)
    try:
        got = translate(env.csrs, env.read64, va, acc, state)
    except TranslationFault as exc:
        assert as_oracle_result(exc) == expected
        raise
    assert as_oracle_result(got) == expected
    return got


def test_stage1_three_reads(env):
    env.host.map(0x4020_1000, 0x9000_0000, PAGE_4K, parse_flags("rw"))
    t = run(env, 0x4020_1abc, Access.STORE, HS)
    assert t.pa == 0x9000_0abc and t.page_size == PAGE_4K and len(t.accesses) == 3


def test_nested_fifteen_reads():
    env = Env(gstage_4k=True)
    env.guest.map(0x4020_1000, 0x5000, PAGE_4K, parse_flags("rx"))
    env.gstage.map(0x5000, 0xA000_0000, PAGE_4K, parse_flags("rxu"))
    t = run(env, 0x4020_1abc, Access.FETCH, VS)
    assert t.pa == 0xA000_0abc and len(t.accesses) == 15
    assert t.gpa == 0x5abc and t.two_stage


@pytest.mark.parametrize("vs_size", [PAGE_4K, PAGE_2M, PAGE_1G])
@pytest.mark.parametrize("g_size", [PAGE_4K, PAGE_2M, PAGE_1G])
def test_page_size_combinations(env, vs_size, g_size):
    gpa = 0x1_0000_0000
    env.guest.map(0x4000_0000, gpa, vs_size, parse_flags("rwx"))
    env.gstage.map(gpa, 0x2_0000_0000, g_size, parse_flags("rxu"))
    off = min(vs_size, g_size) - 8
    t = run(env, 0x4000_0000 + off, Access.LOAD, VS)
    assert t.pa == 0x2_0000_0000 + off
    assert t.page_size == min(vs_size, g_size)
    assert t.perms == Perm.R | Perm.X
    with pytest.raises(GuestPageFault):
        run(env, 0x4000_0000, Access.STORE, VS)


@pytest.mark.parametrize("flags,acc,cause", [
    ("rw-d", Access.STORE, "A clear"),
    ("rw-a", Access.STORE, "D clear"),
    ("r", Access.FETCH, "permission"),
    ("x", Access.LOAD, "permission"),
])
def test_stage1_leaf_faults(env, flags, acc, cause):
    perms, _, ad = flags.partition("-")
    ad = {"d": "d", "a": "a"}.get(ad, "ad")
    env.host.map(0x1000, 0x9000_0000, PAGE_4K, parse_flags(perms, ad))
    with pytest.raises(PageFault) as exc:
        run(env, 0x1000, acc, HS)
    assert exc.value.reason == cause


def test_malformed_ptes(env):
    slot = env.host.map(0x1000, 0x9000_0000, PAGE_4K, parse_flags("rw"))
    pte = env.mem.read64(slot)
    for bad in (pte | (1 << 60), (pte & ~0b10) | 0b100, pte & ~1):
        env.mem.write64(slot, bad)
        with pytest.raises(PageFault):
            run(env, 0x1000, Access.LOAD, HS)


def test_misaligned_superpage(env):
    env.host.map(0x20_0000, 0x9000_1000, PAGE_2M, parse_flags("r"))
    with pytest.raises(PageFault) as exc:
        run(env, 0x20_0000, Access.LOAD, HS)
    assert exc.value.reason == "misaligned superpage"


def test_non_canonical(env):
    with pytest.raises(PageFault) as exc:
        run(env, 1 << 40, Access.LOAD, HS)
    assert exc.value.cause == Cause.LoadPageFault and exc.value.tval == 1 << 40


def test_user_and_sum(env):
    env.host.map(0x1000, 0x9000_0000, PAGE_4K, parse_flags("rxu"))
    run(env, 0x1000, Access.FETCH, U)
    with pytest.raises(PageFault):
        run(env, 0x1000, Access.LOAD, HS)
    env.csrs.poke("mstatus", 1 << 18)
    run(env, 0x1000, Access.LOAD, HS)
    with pytest.raises(PageFault):
        run(env, 0x1000, Access.FETCH, HS)


def test_mxr_levels():
    assert not permits(Perm.X, Access.LOAD, WalkContext())
    assert permits(Perm.X, Access.LOAD, WalkContext(mxr=True))
    env = Env()
    env.guest.map(0x1000, 0x40_3000, PAGE_4K, parse_flags("x"))
    env.gstage.map(0x40_3000, 0x9000_0000, PAGE_4K, parse_flags("ru"))
    with pytest.raises(PageFault):
        run(env, 0x1000, Access.LOAD, VS)
    env.csrs.poke("vsstatus", 1 << 19)
    assert run(env, 0x1000, Access.LOAD, VS).pa == 0x9000_0000
    # G-stage execute-only needs the host MXR
    env.gstage.map(0x40_3000, 0x9000_0000, PAGE_4K, parse_flags("xu"))
    with pytest.raises(GuestPageFault):
        run(env, 0x1000, Access.LOAD, VS)
    env.csrs.poke("mstatus", 1 << 19)
    run(env, 0x1000, Access.LOAD, VS)


def test_gstage_leaf_needs_u(env):
    env.guest.map(0x1000, 0x40_3000, PAGE_4K, parse_flags("rw"))
    env.gstage.map(0x40_3000, 0x9000_0000, PAGE_4K, parse_flags("rw"))
    with pytest.raises(GuestPageFault) as exc:
        run(env, 0x1008, Access.LOAD, VS)
    assert exc.value.gpa == 0x40_3008 and exc.value.tval == 0x1008
    trap = exc.value.to_trap(epc=4)
    assert trap.gpa == 0x40_3008 and trap.cause == Cause.GuestLoadPageFault


def test_implicit_gstage_access_reports_original_type():
    env = Env(gstage_4k=True)
    env.guest.map(0x1000, 0x3000, PAGE_4K, parse_flags("rwx"))
    env.gstage.map(0x3000, 0x9000_0000, PAGE_4K, parse_flags("rwxu"))
    # make the guest root page read-only at the G-stage: implicit reads only need R
    env.gstage.map(env.guest.root, 0x8000_0000 + env.guest.root, PAGE_4K, parse_flags("ru"))
    assert run(env, 0x1000, Access.STORE, VS).pa == 0x9000_0000
    env.gstage.map(env.guest.root, 0x8000_0000 + env.guest.root, PAGE_4K, parse_flags("xu"))
    with pytest.raises(GuestPageFault) as exc:
        run(env, 0x1000, Access.STORE, VS)
    assert exc.value.cause == Cause.GuestStoreAmoPageFault
    assert exc.value.gpa == env.guest.root


def test_unbacked_reads():
    env = Env()
    env.csrs.poke("satp", (8 << 60) | 0x12345)
    with pytest.raises(PageFault):
        run(env, 0x1000, Access.LOAD, HS)
    env.csrs.poke("hgatp", (8 << 60) | 0x12344)
    with pytest.raises(GuestPageFault):
        run(env, 0x1000, Access.LOAD, VS)


def test_bare_and_m_mode():
    csrs = CsrFile()
    t = translate(csrs, None, 0x1234, Access.LOAD, PrivilegeState(Base.M))
    assert t.pa == 0x1234 and t.page_size == PAGE_1G and not t.accesses
    with pytest.raises(PageFault):
        translate(csrs, None, 1 << 56, Access.STORE, PrivilegeState(Base.S))
    assert translate(csrs, None, 0x1234, Access.FETCH, VU).pa == 0x1234


def test_gpa_too_wide(env):
    env.csrs.poke("vsatp", 0)
    with pytest.raises(GuestPageFault) as exc:
        run(env, 1 << 41, Access.LOAD, VS)
    assert exc.value.gpa == 1 << 41
