"""Acceptance criteria, one test per criterion, each printing PASS or FAIL."""

import random
import subprocess
import sys
import time

import pytest

from rvhyp.causes import GUEST_PAGE_FAULTS, Cause
from rvhyp.fuzz import fuzz
from rvhyp.machine import Machine
from rvhyp.machine_state import (CSR_BY_NAME, MEDELEG_MASK, VS_ALIASES, Base, CsrFile, Mode,
                                 PrivilegeState, csr_address)
from rvhyp.oracle import CAUSE_RANGE, ORIGINS, oracle_delegation_table, oracle_fence
from rvhyp.pagetable import parse_flags
from rvhyp.ptw import PAGE_1G, PAGE_2M, PAGE_4K, Access, Perm, TranslationFault, translate
from rvhyp.scenario import RunConfig, parse, run_scenario
from rvhyp.tlb import FenceKind, Kind, Tlb, make_entry
from rvhyp.trap_engine import Trap, delegate, take_trap, trap_return

from conftest import ROOT, SCENARIOS, Env, record

FUZZ_SEED = 2024
SIZES = {PAGE_4K: "4K", PAGE_2M: "2M", PAGE_1G: "1G"}


def _trap(cause: int) -> Trap:
    return Trap(cause, gpa=0x1000 if cause in GUEST_PAGE_FAULTS else None)


def _scenario(name: str, **config):
    path = SCENARIOS / f"{name}.hyp"
    return run_scenario(parse(path.read_text(), name), RunConfig(**config))


@pytest.fixture(scope="module")
def fuzz_stats():
    start = time.perf_counter()
    stats = fuzz(1000, seed=FUZZ_SEED, addresses=64)
    return stats, time.perf_counter() - start


def test_criterion_1_delegation_completeness():
    start = time.perf_counter()
    table = oracle_delegation_table()
    mismatches = []
    reachable = set()
    for (origin, cause, m, h), expected in table.items():
        got = delegate(PrivilegeState.from_mode(origin), _trap(cause), m << cause, h << cause)
        if got != expected:
            mismatches.append((origin, cause, m, h, expected, got))
        if origin in (Mode.VS, Mode.VU):
            reachable.add((origin, got))
    elapsed = time.perf_counter() - start
    arrows = {(o, t) for o in (Mode.VS, Mode.VU) for t in (Mode.M, Mode.HS, Mode.VS)}
    rows = len(ORIGINS) * len(CAUSE_RANGE) * 4
    ok = len(table) == rows == 480 and not mismatches and reachable == arrows and elapsed < 1
    record(1, ok, f"rows={len(table)} mismatches={len(mismatches)} "
                  f"arrows={len(reachable)}/6 time={elapsed:.3f}s")


def test_criterion_2_oracle_equivalence(fuzz_stats):
    stats, elapsed = fuzz_stats
    ok = (stats.cases == 1000 and stats.checks == 1000 * 64 * 2 and stats.passed
          and elapsed < 30 and stats.ok > 0 and len(stats.faults) >= 4)
    record(2, ok, f"seed={FUZZ_SEED} cases={stats.cases} checks={stats.checks} ok={stats.ok} "
                  f"faults={sum(stats.faults.values())} disagreements={len(stats.disagreements)} "
                  f"time={elapsed:.1f}s")


def _walk_counts(name: str) -> list[int]:
    result = _scenario(name)
    assert result.passed, [str(f) for f in result.failures]
    counts, current = [], 0
    for event in result.trace.events:
        if event.kind == "walk-step":
            current += 1
        elif event.kind in ("access", "trap-raised") and current:
            counts.append(current)
            current = 0
    return counts


def test_criterion_3_access_count_bounds(fuzz_stats):
    stats, _ = fuzz_stats
    single = max(_walk_counts("stage1_full_walk"))
    nested = max(_walk_counts("two_stage_full_walk"))
    ok = single == 3 and nested == 15 and stats.max_single <= 3 and stats.max_nested <= 15
    record(3, ok, f"scenario single={single} nested={nested}; "
                  f"fuzz max single={stats.max_single} nested={stats.max_nested}")


_PERM_SETS = [("rwx", "rwxu"), ("rw", "rxu"), ("rx", "ru"), ("r", "rwu")]


def _check_combo(vs_size: int, g_size: int, rng: random.Random) -> list[str]:
    errors = []
    for vs_perms, g_perms in _PERM_SETS:
        env = Env()
        va, gpa, hpa = 0x4000_0000, 0x1_0000_0000, 0x20_0000_0000
        env.guest.map(va, gpa, vs_size, parse_flags(vs_perms))
        env.gstage.map(gpa, hpa, g_size, parse_flags(g_perms))
        vs_set = Perm(parse_flags(vs_perms) & 0b1110)
        g_set = Perm(parse_flags(g_perms) & 0b1110)
        machine = Machine()
        machine.mem, machine.csrs = env.mem, env.csrs
        machine.set_mode("VS")
        size = min(vs_size, g_size)
        for _ in range(8):
            off = rng.randrange(size)
            for acc, need in ((Access.LOAD, Perm.R), (Access.STORE, Perm.W),
                              (Access.FETCH, Perm.X)):
                allowed = bool(vs_set & g_set & need)
                for label, fn in (
                        ("walker", lambda: translate(env.csrs, env.read64, va + off, acc,
                                                     PrivilegeState(Base.S, True))),
                        ("tlb", lambda: machine.translate(va + off, acc)[0])):
                    try:
                        t = fn()
                    except TranslationFault:
                        if allowed:
                            errors.append(f"{label} {vs_perms}/{g_perms} {acc.name} faulted")
                        continue
                    if not allowed:
                        errors.append(f"{label} {vs_perms}/{g_perms} {acc.name} allowed")
                    if t.pa != hpa + off or t.pa % size != (va + off) % size:
                        errors.append(f"{label} offset lost at 0x{off:x}")
                    if t.page_size != size:
                        errors.append(f"{label} page size {t.page_size}")
                    if label == "walker" and t.perms & 0b1110 != vs_set & g_set:
                        errors.append(f"{label} perms {t.perms!r}")
    return errors


def test_criterion_4_page_size_coverage():
    rng = random.Random(4)
    failing = {}
    for vs_size in SIZES:
        for g_size in SIZES:
            errors = _check_combo(vs_size, g_size, rng)
            if errors:
                failing[f"{SIZES[vs_size]}/{SIZES[g_size]}"] = errors[:3]
    record(4, not failing, f"combinations=9 failing={failing or 0}")


def test_criterion_5_round_trip_and_aliasing():
    delegable = [c for c in CAUSE_RANGE if MEDELEG_MASK >> c & 1]
    configs = ((0, 0), (MEDELEG_MASK, 0), (MEDELEG_MASK, -1))
    broken, trips = [], 0
    for origin in ORIGINS:
        state = PrivilegeState.from_mode(origin)
        for cause in delegable:
            for medeleg, hedeleg in configs:
                csrs = CsrFile()
                csrs.poke("medeleg", medeleg)
                csrs.poke("hedeleg", hedeleg)
                out = take_trap(csrs, state, _trap(cause))
                back = trap_return(csrs, out.new_state, out.target_mode)
                trips += 1
                if back != state:
                    broken.append((origin.value, cause, out.target_mode.value, str(back)))

    rng = random.Random(5)
    alias_errors = []
    vs_state = PrivilegeState(Base.S, True)
    m_state = PrivilegeState(Base.M)
    targets = set(VS_ALIASES.values())
    for s_name, vs_name in VS_ALIASES.items():
        for _ in range(1000):
            value = rng.getrandbits(64)
            csrs = CsrFile()
            s_before = csrs.peek(s_name)
            via_alias = csrs.write(vs_state, csr_address(s_name), value)
            direct = CsrFile().write(m_state, csr_address(vs_name), value)
            if (via_alias != direct or csrs.peek(vs_name) != direct
                    or csrs.read(vs_state, csr_address(s_name)) != direct
                    or csrs.peek(s_name) != s_before):
                alias_errors.append((s_name, hex(value)))
                break
    ok = not broken and not alias_errors and len(targets) == len(VS_ALIASES)
    ok = ok and all(name in CSR_BY_NAME for name in targets)
    record(5, ok, f"round trips={trips} broken={len(broken)} "
                  f"aliased pairs={len(VS_ALIASES)} alias errors={alias_errors or 0}")


def _fence_pool() -> list:
    rw = Perm.R | Perm.W
    return [
        make_entry(Kind.STAGE1, 0x1000, 0x9000, PAGE_4K, rw, asid=1),
        make_entry(Kind.STAGE1, 0x1000, 0xA000, PAGE_4K, rw, asid=2),
        make_entry(Kind.STAGE1, 0x20_0000, 0x40_0000, PAGE_2M, rw, asid=1, global_=True),
        make_entry(Kind.STAGE1, 0x3000, 0xB000, PAGE_4K, rw, asid=1, virt=True),
        make_entry(Kind.GSTAGE, 0x1000, 0xC000, PAGE_4K, rw | Perm.U, vmid=1),
        make_entry(Kind.GSTAGE, 0x4000_0000, 0x8000_0000, PAGE_1G, rw | Perm.U, vmid=2),
        make_entry(Kind.COMBINED, 0x1000, 0xD000, PAGE_4K, rw, asid=1, vmid=1, virt=True),
        make_entry(Kind.COMBINED, 0x1000, 0xE000, PAGE_4K, rw, asid=2, vmid=2, virt=True),
        make_entry(Kind.COMBINED, 0x5000, 0xF000, PAGE_4K, rw, asid=1, vmid=1, virt=True,
                   global_=True),
    ]


def test_criterion_6_tlb_semantics():
    mismatched = []
    cells = 0
    for kind in FenceKind:
        for label, addr, ident in (("wildcard", None, None), ("addr", 0x1abc, None),
                                   ("id", None, 1)):
            tlb = Tlb(16)
            pool = _fence_pool()
            for entry in pool:
                tlb.insert(entry)
            expected = oracle_fence(pool, kind, addr, ident, current_vmid=1)
            tlb.fence(kind, addr, ident, current_vmid=1)
            dropped = [e for e in pool if e not in tlb.entries]
            cells += 1
            if dropped != expected or not expected:
                mismatched.append(f"{kind.value}/{label}")

    stale = _scenario("stale_tlb_missing_fence")
    fenced = _scenario("stale_tlb_fenced")
    last_stale = stale.trace.of_kind("access")[-1].payload
    last_fenced = fenced.trace.of_kind("access")[-1].payload
    stale_hit = last_stale["tlb"] == "hit" and last_stale["pa"] == "0x20000"
    fenced_miss = last_fenced["tlb"] == "miss" and last_fenced["pa"] == "0x30000"
    ok = (cells == 9 and not mismatched and stale.passed and fenced.passed
          and stale_hit and fenced_miss)
    record(6, ok, f"fence cells={cells} mismatched={mismatched or 0} "
                  f"stale hit={stale_hit} fenced miss={fenced_miss}")


def test_criterion_7_determinism(tmp_path):
    files = sorted(str(p) for p in SCENARIOS.glob("*.hyp"))
    outputs = []
    for run in (1, 2):
        out = tmp_path / f"trace{run}.jsonl"
        proc = subprocess.run([sys.executable, "-m", "rvhyp", "run", *files, "--oracle-check",
                               "--trace", str(out)], cwd=ROOT, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outputs.append(out.read_bytes())
    in_process = "".join(
        line + "\n" for p in files
        for line in run_scenario(parse(open(p).read(), p.rsplit("/", 1)[-1][:-4]),
                                 RunConfig(oracle_check=True)).trace.lines()).encode()
    lines = outputs[0].count(b"\n")
    ok = outputs[0] == outputs[1] == in_process and lines > 0
    record(7, ok, f"scenarios={len(files)} trace lines={lines} identical={ok}")
