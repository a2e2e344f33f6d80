"""A hart reduced to what the hypervisor extension touches.

There is no instruction stream: callers drive the machine with CSR
accesses, memory accesses (which translate and may trap), injected traps,
trap returns and fences.
"""

from dataclasses import dataclass

from .machine_state import (ATP_MODE, ATP_MODE_SV39, HGATP_VMID, SATP_ASID, STATUS_MXR,
                            STATUS_SUM, Base, CsrFile, IllegalCsr, Mode, PrivilegeState,
                            csr_address, get_field, CSR_BY_ADDR)
from .phys_mem import SparseMemory
from .ptw import (Access, Translation, TranslationFault, WalkContext, WalkResult,
                  sign_extended, translate, walk_gstage)
from .tlb import FenceKind, Kind, Tlb, make_entry
from .trace import Tracer, hexs
from .trap_engine import Trap, TrapOutcome, take_trap, trap_return


@dataclass
class AccessOutcome:
    va: int
    acc: Access
    translation: Translation | None = None
    fault: TranslationFault | None = None
    trap: TrapOutcome | None = None
    tlb_hit: bool = False

    @property
    def ok(self) -> bool:
        return self.translation is not None

    @property
    def accesses(self) -> list[tuple[int, int]]:
        if self.translation is not None:
            return self.translation.accesses
        return self.fault.accesses if self.fault is not None else []


class Machine:
    def __init__(self, tlb_size: int = 16, use_tlb: bool = True,
                 tracer: Tracer | None = None) -> None:
        self.state = PrivilegeState(Base.M)
        self.csrs = CsrFile()
        self.mem = SparseMemory()
        self.tlb = Tlb(tlb_size if use_tlb else 0)
        self.trace = tracer if tracer is not None else Tracer()

    @property
    def mode(self) -> Mode:
        return self.state.mode

    def set_state(self, state: PrivilegeState) -> None:
        if state != self.state:
            self.trace.emit("mode-change", **{"from": str(self.state), "to": str(state)})
        self.state = state

    def set_mode(self, mode: Mode | str) -> None:
        self.set_state(PrivilegeState.from_mode(mode))

    # CSRs

    def csr_read(self, csr: str | int) -> int:
        addr = csr_address(csr)
        value = self.csrs.read(self.state, addr)
        self.trace.emit("csr-read", csr=_csr_name(addr), mode=str(self.state),
                        value=hexs(value))
        return value

    def csr_write(self, csr: str | int, value: int) -> int:
        addr = csr_address(csr)
        stored = self.csrs.write(self.state, addr, value)
        self.trace.emit("csr-write", csr=_csr_name(addr), mode=str(self.state),
                        value=hexs(value), stored=hexs(stored))
        return stored

    # translation

    def _gstage_hook(self, hgatp: int, gva: int):
        vmid = get_field(hgatp, HGATP_VMID)
        gmxr = bool(self.csrs.peek("mstatus") & STATUS_MXR)
        tlb = self.tlb

        def gstage(gpa: int, acc: Access, implicit: bool, trace: list) -> WalkResult:
            if tlb.capacity and get_field(hgatp, ATP_MODE) == ATP_MODE_SV39:
                entry = tlb.lookup(Kind.GSTAGE, gpa, acc, vmid=vmid, gmxr=gmxr,
                                   implicit=implicit)
                if entry is not None:
                    self.trace.emit("tlb-hit", entry="gstage", addr=hexs(gpa), vmid=vmid)
                    return WalkResult(entry.translate(gpa), entry.page_size, entry.perms)
                self.trace.emit("tlb-miss", entry="gstage", addr=hexs(gpa), vmid=vmid)
                res = walk_gstage(hgatp, gpa, acc, implicit, self.mem.read64, mxr=gmxr,
                                  gva=gva, accesses=trace)
                self._insert(make_entry(Kind.GSTAGE, gpa, res.pa, res.page_size, res.perms,
                                        vmid=vmid))
                return res
            return walk_gstage(hgatp, gpa, acc, implicit, self.mem.read64, mxr=gmxr,
                               gva=gva, accesses=trace)
        return gstage

    def _insert(self, entry) -> None:
        evicted = self.tlb.insert(entry)
        if self.tlb.capacity:
            self.trace.emit("tlb-insert", entry=entry.kind.value, tag=hexs(entry.tag << 12),
                            size=entry.page_size, ppn=hexs(entry.ppn), perms=str(entry.perms),
                            asid=entry.asid, vmid=entry.vmid)
        if evicted is not None:
            self.trace.emit("tlb-evict", entry=evicted.kind.value,
                            tag=hexs(evicted.tag << 12))

    def translate(self, va: int, acc: Access | str) -> tuple[Translation, bool]:
        """Translate through the TLB. Returns (translation, served-by-TLB)."""
        acc = _access(acc)
        state = self.state
        csrs = self.csrs
        tlb = self.tlb
        mstatus = csrs.peek("mstatus")
        user = state.base == Base.U

        if state.base != Base.M and tlb.capacity:
            if not state.virt:
                satp = csrs.peek("satp")
                if get_field(satp, ATP_MODE) == ATP_MODE_SV39 and sign_extended(va):
                    asid = get_field(satp, SATP_ASID)
                    ctx = WalkContext(user, bool(mstatus & STATUS_SUM),
                                      bool(mstatus & STATUS_MXR))
                    entry = tlb.lookup(Kind.STAGE1, va, acc, asid=asid, ctx=ctx)
                    if entry is not None:
                        self.trace.emit("tlb-hit", entry="stage1", addr=hexs(va), asid=asid)
                        return Translation(entry.translate(va), entry.page_size,
                                           entry.perms, []), True
                    self.trace.emit("tlb-miss", entry="stage1", addr=hexs(va), asid=asid)
                    t = translate(csrs, self.mem.read64, va, acc, state)
                    self._insert(make_entry(Kind.STAGE1, va, t.pa, t.page_size,
                                            t.stage1_perms, asid=asid, global_=t.global_))
                    return t, False
            else:
                vsatp = csrs.peek("vsatp")
                hgatp = csrs.peek("hgatp")
                gstage = self._gstage_hook(hgatp, va)
                if get_field(vsatp, ATP_MODE) == ATP_MODE_SV39 and sign_extended(va):
                    asid = get_field(vsatp, SATP_ASID)
                    vmid = get_field(hgatp, HGATP_VMID)
                    vsstatus = csrs.peek("vsstatus")
                    gmxr = bool(mstatus & STATUS_MXR)
                    ctx = WalkContext(user, bool(vsstatus & STATUS_SUM),
                                      bool(vsstatus & STATUS_MXR) or gmxr)
                    entry = tlb.lookup(Kind.COMBINED, va, acc, asid=asid, vmid=vmid,
                                       virt=True, ctx=ctx, gmxr=gmxr)
                    if entry is not None:
                        self.trace.emit("tlb-hit", entry="combined", addr=hexs(va),
                                        asid=asid, vmid=vmid)
                        return Translation(entry.translate(va), entry.page_size,
                                           entry.perms, [], two_stage=True), True
                    self.trace.emit("tlb-miss", entry="combined", addr=hexs(va),
                                    asid=asid, vmid=vmid)
                    t = translate(csrs, self.mem.read64, va, acc, state, gstage)
                    self._insert(make_entry(Kind.COMBINED, va, t.pa, t.page_size, t.perms,
                                            asid=asid, vmid=vmid, virt=True,
                                            global_=t.global_))
                    return t, False
                return translate(csrs, self.mem.read64, va, acc, state, gstage), False
        return translate(csrs, self.mem.read64, va, acc, state), False

    def access(self, va: int, acc: Access | str, epc: int | None = None) -> AccessOutcome:
        """Translate ``va``; on a fault, take the trap it raises."""
        acc = _access(acc)
        if epc is None:
            epc = va if acc == Access.FETCH else 0
        origin = str(self.state)
        try:
            t, hit = self.translate(va, acc)
        except TranslationFault as fault:
            self._trace_walk(fault.accesses)
            outcome = self.raise_trap(fault.to_trap(epc))
            return AccessOutcome(va, acc, fault=fault, trap=outcome)
        self._trace_walk(t.accesses)
        self.trace.emit("access", mode=origin, acc=acc.name.lower(), va=hexs(va),
                        pa=hexs(t.pa), size=t.page_size, tlb="hit" if hit else "miss")
        return AccessOutcome(va, acc, translation=t, tlb_hit=hit)

    def _trace_walk(self, accesses: list[tuple[int, int]]) -> None:
        for i, (pa, value) in enumerate(accesses):
            self.trace.emit("walk-step", step=i, pa=hexs(pa), pte=hexs(value))

    # traps

    def raise_trap(self, trap: Trap) -> TrapOutcome:
        origin = self.state
        self.trace.emit("trap-raised", cause=trap.name, code=trap.cause,
                        interrupt=trap.is_interrupt, mode=str(origin), tval=hexs(trap.tval),
                        gpa=hexs(trap.gpa))
        outcome = take_trap(self.csrs, origin, trap)
        self.trace.emit("trap-delegated", origin=str(origin),
                        target=outcome.target_mode.value, vector=hexs(outcome.vector),
                        writes={k: hexs(v) for k, v in outcome.writes.items()})
        self.set_state(outcome.new_state)
        return outcome

    def csr_fault_trap(self, exc: IllegalCsr, epc: int = 0) -> TrapOutcome:
        return self.raise_trap(Trap(cause=int(exc.cause), epc=epc))

    def trap_return(self, from_mode: Mode | str | None = None) -> PrivilegeState:
        from_mode = self.state.mode if from_mode is None else Mode(from_mode)
        new = trap_return(self.csrs, self.state, from_mode)
        self.trace.emit("trap-return", **{"from": from_mode.value, "to": str(new)})
        self.set_state(new)
        return new

    # fences

    def fence(self, kind: FenceKind | str, addr: int | None = None,
              ident: int | None = None) -> int:
        kind = FenceKind(kind)
        # sfence.vma executed by a guest acts on its own VS-stage entries.
        if kind == FenceKind.SFENCE_VMA and self.state.virt:
            kind = FenceKind.HFENCE_VVMA
        vmid = get_field(self.csrs.peek("hgatp"), HGATP_VMID)
        count = self.tlb.fence(kind, addr, ident, current_vmid=vmid)
        self.trace.emit("tlb-flush", fence=kind.value, addr=hexs(addr), id=ident, count=count)
        return count


def _access(acc: Access | str) -> Access:
    if isinstance(acc, str):
        return Access[acc.upper()]
    return Access(acc)


def _csr_name(addr: int) -> str:
    spec = CSR_BY_ADDR.get(addr)
    return spec.name if spec else f"0x{addr:03x}"
