"""Trap delegation, trap entry and trap return.

A trap raised in some mode is routed by ``medeleg``/``mideleg`` (M or the
host supervisor) and then, for traps raised while V=1, by
``hedeleg``/``hideleg`` (host supervisor or guest supervisor). Entry writes
the epc/cause/tval registers of the target level and records where the
trap came from so that ``mret``/``sret`` can go back.
"""

from dataclasses import dataclass, field

from .causes import (GUEST_PAGE_FAULTS, PAGE_FAULTS, VS_INTERRUPT_REMAP, Interrupt,
                     cause_name, encode_xcause)
from .machine_state import (HEDELEG_MASK, HIDELEG_MASK, HSTATUS_GVA, HSTATUS_SPV,
                            HSTATUS_SPVP, HSTATUS_VTSR, MEDELEG_MASK, MIDELEG_FIXED,
                            MIDELEG_WRITABLE, MSTATUS_GVA, MSTATUS_MPP,
                            MSTATUS_MPV, MSTATUS_TSR, SSTATUS_SPP, Base, CsrFile,
                            InvalidTransition, Mode, PrivilegeState, get_field)


@dataclass(frozen=True)
class Trap:
    cause: int
    is_interrupt: bool = False
    tval: int = 0
    gpa: int | None = None
    epc: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.cause < 64:
            raise ValueError(f"cause code out of range: {self.cause}")
        guest_fault = not self.is_interrupt and self.cause in GUEST_PAGE_FAULTS
        if guest_fault != (self.gpa is not None):
            raise ValueError("gpa must be given exactly for guest-page faults")

    @property
    def xcause(self) -> int:
        return encode_xcause(self.cause, self.is_interrupt)

    @property
    def name(self) -> str:
        return cause_name(self.cause, self.is_interrupt)


@dataclass
class TrapOutcome:
    origin: PrivilegeState
    target_mode: Mode
    new_state: PrivilegeState
    trap: Trap
    writes: dict[str, int] = field(default_factory=dict)
    vector: int = 0


def delegate(origin: PrivilegeState, trap: Trap, medeleg: int, hedeleg: int,
             mideleg: int = 0, hideleg: int = 0) -> Mode:
    """Return the mode that handles ``trap`` raised in ``origin``."""
    if trap.is_interrupt:
        m_bits = (mideleg & MIDELEG_WRITABLE) | MIDELEG_FIXED
        h_bits = hideleg & HIDELEG_MASK
    else:
        m_bits = medeleg & MEDELEG_MASK
        h_bits = hedeleg & HEDELEG_MASK
    bit = 1 << trap.cause
    # Traps never go to a less privileged mode, so M keeps its own.
    if origin.base == Base.M or not m_bits & bit:
        return Mode.M
    if not origin.virt or not h_bits & bit:
        return Mode.HS
    return Mode.VS


def take_trap(csrs: CsrFile, state: PrivilegeState, trap: Trap) -> TrapOutcome:
    """Perform trap entry; CSR side effects go straight into ``csrs``."""
    target = delegate(state, trap, csrs.peek("medeleg"), csrs.peek("hedeleg"),
                      csrs.peek("mideleg"), csrs.peek("hideleg"))
    gpa_field = trap.gpa >> 2 if trap.gpa is not None else 0
    # tval holds a guest virtual address for page faults taken from V=1.
    gva = int(state.virt and not trap.is_interrupt
              and trap.cause in PAGE_FAULTS | GUEST_PAGE_FAULTS)
    writes: dict[str, int] = {}

    if target == Mode.M:
        writes["mepc"] = trap.epc
        writes["mcause"] = trap.xcause
        writes["mtval"] = trap.tval
        writes["mtval2"] = gpa_field
        mstatus = csrs.peek("mstatus")
        mstatus = (mstatus & ~(MSTATUS_MPP | MSTATUS_MPV | MSTATUS_GVA)
                   | (int(state.base) << 11) | (int(state.virt) << 39) | (gva << 38))
        writes["mstatus"] = mstatus
        new_state = PrivilegeState(Base.M, False)
        vector_reg = "mtvec"
    elif target == Mode.HS:
        writes["sepc"] = trap.epc
        writes["scause"] = trap.xcause
        writes["stval"] = trap.tval
        writes["htval"] = gpa_field
        writes["sstatus"] = (csrs.peek("sstatus") & ~SSTATUS_SPP) | (int(state.base) << 8)
        hstatus = csrs.peek("hstatus") & ~(HSTATUS_SPV | HSTATUS_GVA)
        hstatus |= (int(state.virt) << 7) | (gva << 6)
        if state.virt:
            hstatus = (hstatus & ~HSTATUS_SPVP) | (int(state.base) << 8)
        writes["hstatus"] = hstatus
        new_state = PrivilegeState(Base.S, False)
        vector_reg = "stvec"
    else:
        code = trap.cause
        if trap.is_interrupt:
            code = VS_INTERRUPT_REMAP.get(Interrupt(code), code)
        writes["vsepc"] = trap.epc
        writes["vscause"] = encode_xcause(code, trap.is_interrupt)
        writes["vstval"] = trap.tval
        writes["vsstatus"] = (csrs.peek("vsstatus") & ~SSTATUS_SPP) | (int(state.base) << 8)
        new_state = PrivilegeState(Base.S, True)
        vector_reg = "vstvec"

    for name, value in writes.items():
        csrs.poke(name, value)
    writes = {name: csrs.peek(name) for name in writes}
    return TrapOutcome(origin=state, target_mode=target, new_state=new_state, trap=trap,
                       writes=writes, vector=csrs.peek(vector_reg))


def trap_return(csrs: CsrFile, state: PrivilegeState, from_mode: Mode) -> PrivilegeState:
    """Execute ``mret`` (from M) or ``sret`` (from HS or VS)."""
    from_mode = Mode(from_mode)
    if state.mode != from_mode:
        raise InvalidTransition(f"return from {from_mode.value} while in {state.mode.value}")
    if from_mode == Mode.M:
        mstatus = csrs.peek("mstatus")
        base = Base(get_field(mstatus, MSTATUS_MPP))
        virt = bool(mstatus & MSTATUS_MPV) and base != Base.M
        csrs.poke("mstatus", mstatus & ~(MSTATUS_MPP | MSTATUS_MPV))
        return PrivilegeState(base, virt)
    if from_mode == Mode.HS:
        if csrs.peek("mstatus") & MSTATUS_TSR:
            raise InvalidTransition("sret trapped by mstatus.TSR")
        sstatus = csrs.peek("sstatus")
        hstatus = csrs.peek("hstatus")
        base = Base.S if sstatus & SSTATUS_SPP else Base.U
        virt = bool(hstatus & HSTATUS_SPV)
        csrs.poke("sstatus", sstatus & ~SSTATUS_SPP)
        csrs.poke("hstatus", hstatus & ~HSTATUS_SPV)
        return PrivilegeState(base, virt)
    if from_mode == Mode.VS:
        if csrs.peek("hstatus") & HSTATUS_VTSR:
            raise InvalidTransition("sret trapped by hstatus.VTSR")
        vsstatus = csrs.peek("vsstatus")
        base = Base.S if vsstatus & SSTATUS_SPP else Base.U
        csrs.poke("vsstatus", vsstatus & ~SSTATUS_SPP)
        return PrivilegeState(base, True)
    raise InvalidTransition(f"no trap-return instruction in {from_mode.value} mode")
