"""Executes parsed scenarios against a fresh machine."""

from dataclasses import dataclass, field
from typing import Any

from ..causes import GUEST_PAGE_FAULTS
from ..machine import AccessOutcome, Machine
from ..machine_state import (ATP_MODE_SV39, HGATP_VMID, SATP_ASID, IllegalCsr,
                             InvalidTransition, get_field)
from ..oracle import as_oracle_result, compare, oracle_translate
from ..pagetable import SIZE_NAMES, BumpAllocator, PageTableBuilder, parse_flags
from ..phys_mem import PAGE_SIZE, PhysMemError
from ..ptw import PAGE_4K, PTE_A, PTE_D, PTE_PPN_SHIFT, PTE_R, PTE_U, PTE_V, PTE_W, PTE_X
from ..tlb import InvalidFence
from ..trace import Tracer, hexs
from ..trap_engine import Trap, TrapOutcome
from .dsl import Directive, Scenario


@dataclass
class RunConfig:
    tlb_size: int = 16
    use_tlb: bool = True
    oracle_check: bool = False
    pool_base: int = 0x8000_0000         # host page-table pool (HPA)
    guest_pool_base: int = 0x4000_0000   # guest page-table pool (GPA)
    seed: int = 0


@dataclass
class Failure:
    line: int
    directive: str
    message: str
    expected: Any = None
    actual: Any = None

    def __str__(self) -> str:
        text = f"line {self.line}: {self.directive}: {self.message}"
        if self.expected is not None or self.actual is not None:
            text += f" (expected {self.expected}, actual {self.actual})"
        return text


@dataclass
class RunResult:
    name: str
    trace: Tracer
    failures: list[Failure] = field(default_factory=list)
    checks: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures


class _RuntimeFault(Exception):
    pass


@dataclass
class _Last:
    """Outcome of the directive the next ``expect`` lines refer to."""
    directive: Directive
    access: AccessOutcome | None = None
    trap: TrapOutcome | None = None
    value: int | None = None
    error: str | None = None


class ScenarioRunner:
    def __init__(self, scenario: Scenario, config: RunConfig | None = None) -> None:
        self.scenario = scenario
        self.config = config or RunConfig()
        self.trace = Tracer()
        self.machine = Machine(self.config.tlb_size, self.config.use_tlb, self.trace)
        self.host_alloc = BumpAllocator(self.config.pool_base)
        self.guest_alloc: dict[int, BumpAllocator] = {}
        self.builders: dict[tuple, PageTableBuilder] = {}
        self.result = RunResult(scenario.name, self.trace)
        self.last: _Last | None = None

    # page-table synthesis

    def _alloc_host(self, size: int) -> int:
        addr = self.host_alloc(size)
        self.machine.mem.back_range(addr, size)
        return addr

    def _gstage_builder(self, vmid: int, create: bool) -> PageTableBuilder | None:
        key = ("gstage", vmid)
        builder = self.builders.get(key)
        if builder is None and create:
            builder = self.builders[key] = PageTableBuilder(
                self.machine.mem.write64, self._alloc_host, gstage=True)
            self._set_atp("hgatp", (ATP_MODE_SV39 << 60) | (vmid << 44) | (builder.root >> 12))
        return builder

    def _guest_to_host(self, vmid: int, gpa: int) -> int:
        gtab = self._gstage_builder(vmid, create=False)
        if gtab is None:
            self.machine.mem.back_range(gpa & ~(PAGE_SIZE - 1), PAGE_SIZE)
            return gpa
        hpa = _mirror_lookup(gtab, gpa)
        if hpa is None:
            # Guest table page not mapped yet: give it a host frame.
            frame = self._alloc_host(PAGE_4K)
            gtab.map(gpa & ~(PAGE_4K - 1), frame, PAGE_4K,
                     PTE_V | PTE_R | PTE_W | PTE_U | PTE_A | PTE_D)
            self.trace.emit("map", stage="gstage", va=hexs(gpa & ~(PAGE_4K - 1)),
                            pa=hexs(frame), size=PAGE_4K, perms="rwu", vmid=vmid, auto=True)
            hpa = frame | (gpa & (PAGE_4K - 1))
        self.machine.mem.back_range(hpa & ~(PAGE_SIZE - 1), PAGE_SIZE)
        return hpa

    def _set_atp(self, name: str, value: int) -> None:
        self.machine.csrs.poke(name, value)
        self.trace.emit("csr-write", csr=name, mode="map", value=hexs(value),
                        stored=hexs(self.machine.csrs.peek(name)))

    def _map(self, d: Directive) -> None:
        stage = d.args[0]
        p = d.params
        size = SIZE_NAMES[p["size"]]
        flags = parse_flags(p["perms"], p.get("ad", "ad"))
        csrs = self.machine.csrs
        if stage == "gstage":
            vmid = p.get("vmid", get_field(csrs.peek("hgatp"), HGATP_VMID))
            builder = self._gstage_builder(vmid, create=True)
            ident: dict = {"vmid": vmid}
        elif "vmid" in p:
            vmid = p["vmid"]
            asid = p.get("asid", get_field(csrs.peek("vsatp"), SATP_ASID))
            key = ("vs", vmid, asid)
            builder = self.builders.get(key)
            if builder is None:
                alloc = self.guest_alloc.setdefault(
                    vmid, BumpAllocator(self.config.guest_pool_base))
                builder = self.builders[key] = PageTableBuilder(
                    lambda gpa, v, vmid=vmid: self.machine.mem.write64(
                        self._guest_to_host(vmid, gpa), v), alloc)
                # Make sure the root page itself is reachable before any walk.
                self._guest_to_host(vmid, builder.root)
                self._set_atp("vsatp", (ATP_MODE_SV39 << 60) | (asid << 44)
                              | (builder.root >> 12))
            ident = {"vmid": vmid, "asid": asid}
        else:
            asid = p.get("asid", get_field(csrs.peek("satp"), SATP_ASID))
            key = ("stage1", asid)
            builder = self.builders.get(key)
            if builder is None:
                builder = self.builders[key] = PageTableBuilder(
                    self.machine.mem.write64, self._alloc_host)
                self._set_atp("satp", (ATP_MODE_SV39 << 60) | (asid << 44)
                              | (builder.root >> 12))
            ident = {"asid": asid}
        slot = builder.map(p["va"], p["pa"], size, flags)
        self.trace.emit("map", stage=stage, va=hexs(p["va"]), pa=hexs(p["pa"]), size=size,
                        perms=p["perms"], slot=hexs(slot), **ident)

    # directives

    def _exec(self, d: Directive) -> None:
        m = self.machine
        verb = d.verb
        if verb == "mode":
            m.set_mode(d.args[0])
        elif verb == "csr":
            self.last = _Last(d)
            name = d.args[1]
            target = int(name, 16) if name.startswith("0x") else name
            try:
                if d.args[0] == "read":
                    self.last.value = m.csr_read(target)
                else:
                    self.last.value = m.csr_write(target, d.params["value"])
            except IllegalCsr as exc:
                self.last.trap = m.csr_fault_trap(exc)
        elif verb == "mem":
            self._mem(d)
        elif verb == "map":
            self._map(d)
        elif verb == "access":
            self.last = _Last(d)
            self._access(d)
        elif verb == "trap":
            self.last = _Last(d)
            if d.args[0] == "inject":
                cause = d.params["cause"]
                gpa = d.params.get("gpa")
                if gpa is None and not cause.interrupt and cause.code in GUEST_PAGE_FAULTS:
                    gpa = 0
                if cause.interrupt or cause.code not in GUEST_PAGE_FAULTS:
                    gpa = None
                trap = Trap(cause.code, cause.interrupt, d.params.get("tval", 0), gpa,
                            d.params.get("epc", 0))
                self.last.trap = m.raise_trap(trap)
            else:
                try:
                    m.trap_return(d.params.get("from"))
                except InvalidTransition as exc:
                    self._runtime_error(d, exc)
        elif verb == "fence":
            try:
                m.fence(d.args[0], d.params.get("addr"), d.params.get("id"))
            except InvalidFence as exc:
                raise _RuntimeFault(str(exc)) from None
        elif verb == "expect":
            self._expect(d)
        else:  # pragma: no cover - the parser rejects these
            raise _RuntimeFault(f"unhandled directive {verb}")

    def _runtime_error(self, d: Directive, exc: Exception) -> None:
        self.last.error = str(exc)
        self.trace.emit("error", line=d.line, message=str(exc))

    def _mem(self, d: Directive) -> None:
        mem = self.machine.mem
        op = d.args[0]
        p = d.params
        if op == "back":
            mem.back_range(p["pa"], p["len"])
            self.trace.emit("mem-back", pa=hexs(p["pa"]), len=hexs(p["len"]))
        elif op == "write64":
            mem.write64(p["pa"], p["value"])
            self.trace.emit("mem-write", pa=hexs(p["pa"]), value=hexs(p["value"]))
        else:
            value = mem.read64(p["pa"])
            self.trace.emit("mem-read", pa=hexs(p["pa"]), value=hexs(value))

    def _access(self, d: Directive) -> None:
        m = self.machine
        va = d.params["va"]
        acc = d.args[0]
        expected = None
        if self.config.oracle_check:
            expected = oracle_translate(m.mem, m.csrs.snapshot(), va, acc, m.mode)
            coords = {"line": d.line, "mode": m.mode.value, "acc": acc, "va": hexs(va)}
        outcome = m.access(va, acc, d.params.get("epc"))
        self.last.access = outcome
        self.last.trap = outcome.trap
        if outcome.ok:
            self.last.value = outcome.translation.pa
        if expected is not None and not outcome.tlb_hit:
            actual = as_oracle_result(outcome.translation or outcome.fault)
            # G-stage TLB hits shorten the walk, so read traces only line up without a TLB.
            report = compare(expected, actual, compare_reads=not self.config.use_tlb, **coords)
            self.trace.emit("oracle-check", line=d.line, verdict=report.verdict)
            if not report.agree:
                self._fail(d, "translation disagrees with the oracle",
                           report.expected, report.actual)

    # expectations

    def _fail(self, d: Directive, message: str, expected: Any = None, actual: Any = None) -> None:
        self.result.failures.append(Failure(d.line, str(d), message, expected, actual))

    def _check(self, d: Directive, what: str, expected: Any, actual: Any,
               fmt=None) -> bool:
        fmt = fmt or _j
        ok = expected == actual
        self.trace.emit("check", line=d.line, what=what, ok=ok, expected=fmt(expected),
                        actual=fmt(actual))
        if not ok:
            self._fail(d, f"{what} mismatch", fmt(expected), fmt(actual))
        return ok

    def _expect(self, d: Directive) -> None:
        last = self.last
        self.result.checks += 1
        kind = d.args[0]
        p = d.params
        trap = last.trap
        if kind == "error":
            self._check(d, "error", True, last.error is not None)
            return
        if kind == "mode":
            self._check(d, "mode", d.args[1], self.machine.mode.value)
            return
        if kind == "csr":
            for name, value in p.items():
                self._check(d, name, value, self.machine.csrs.peek(name))
            return
        if last.error is not None:
            self._fail(d, f"directive failed: {last.error}")
            return
        if kind == "ok":
            if trap is not None:
                self._fail(d, "unexpected trap", "ok", trap.trap.name)
                return
            if "pa" in p:
                pa = last.access.translation.pa if last.access else None
                self._check(d, "pa", p["pa"], pa)
            if "value" in p:
                self._check(d, "value", p["value"], last.value)
        elif kind == "trap":
            if trap is None:
                self._fail(d, "expected a trap", str(p["cause"]), "ok")
                return
            cause = p["cause"]
            self._check(d, "cause", (str(cause), cause.interrupt),
                        (trap.trap.name, trap.trap.is_interrupt))
            if "handled_in" in p:
                self._check(d, "handled_in", p["handled_in"].value, trap.target_mode.value)
            if "tval" in p:
                self._check(d, "tval", p["tval"], trap.trap.tval)
            if "htval" in p:
                gpa = trap.trap.gpa
                self._check(d, "htval", p["htval"], 0 if gpa is None else gpa >> 2)
        elif kind == "walk":
            accesses = len(last.access.accesses) if last.access else None
            self._check(d, "walk accesses", p["accesses"], accesses, fmt=lambda v: v)
        elif kind == "tlb":
            hit = last.access.tlb_hit if last.access else None
            self._check(d, "tlb", d.args[1], None if hit is None else ("hit" if hit else "miss"))

    def run(self) -> RunResult:
        self.trace.emit("scenario-begin", name=self.scenario.name,
                        tlb=self.machine.tlb.capacity, oracle=self.config.oracle_check,
                        seed=self.config.seed)
        directives = self.scenario.directives
        for i, d in enumerate(directives):
            try:
                self._exec(d)
            except (_RuntimeFault, PhysMemError, InvalidTransition, ValueError,
                    MemoryError) as exc:
                if self.last is not None and self.last.directive is d:
                    self._runtime_error(d, exc)
                else:
                    self.trace.emit("error", line=d.line, message=str(exc))
                    self._fail(d, f"runtime fault: {exc}")
            last = self.last
            if last is not None and last.directive is d and last.error is not None:
                if not _expects_error(directives, i):
                    self._fail(d, f"runtime fault: {last.error}")
        self.trace.emit("scenario-end", name=self.scenario.name, passed=self.result.passed,
                        failures=len(self.result.failures), checks=self.result.checks)
        return self.result


def _expects_error(directives: list[Directive], index: int) -> bool:
    for d in directives[index + 1:]:
        if d.verb != "expect":
            return False
        if d.args[0] == "error":
            return True
    return False


def _mirror_lookup(builder: PageTableBuilder, gpa: int) -> int | None:
    """Resolve ``gpa`` through the entries a builder has written so far."""
    table = builder.root
    for level in (2, 1, 0):
        bits = 11 if level == 2 else 9
        slot = table + 8 * ((gpa >> (12 + 9 * level)) & ((1 << bits) - 1))
        pte = builder.entries.get(slot)
        if pte is None:
            return None
        base = (pte >> PTE_PPN_SHIFT) << 12
        if pte & (PTE_R | PTE_W | PTE_X):
            return base | (gpa & ((1 << (12 + 9 * level)) - 1))
        table = base
    return None


def _j(value: Any) -> Any:
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, int):
        return hexs(value)
    if isinstance(value, tuple):
        return [_j(v) for v in value]
    return value


def run_scenario(scenario: Scenario, config: RunConfig | None = None) -> RunResult:
    return ScenarioRunner(scenario, config).run()
