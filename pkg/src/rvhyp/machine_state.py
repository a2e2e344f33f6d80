"""Privilege modes and the control/status register file.

The hypervisor extension splits S and U into a host (V=0) and a guest (V=1)
flavour. :class:`PrivilegeState` keeps the architectural pair (base mode, V)
and derives the effective mode from it; :class:`CsrFile` holds the 4096-entry
CSR space with per-register write masks, WARL legalization and the aliasing of
supervisor CSRs onto their ``vs`` counterparts while V=1.
"""

from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Callable

from .causes import Cause, Interrupt

CSR_COUNT = 4096
_ALL = (1 << 64) - 1


class Base(IntEnum):
    U = 0
    S = 1
    M = 3


class Mode(str, Enum):
    M = "M"
    HS = "HS"
    VS = "VS"
    U = "U"
    VU = "VU"

    @property
    def virtual(self) -> bool:
        return self in (Mode.VS, Mode.VU)


class InvalidTransition(Exception):
    pass


class IllegalCsr(Exception):
    """A CSR access that traps.

    ``cause`` is :attr:`Cause.VirtualInstruction` when a guest touches a
    register the host could have accessed, otherwise
    :attr:`Cause.IllegalInstruction`.
    """

    def __init__(self, addr: int, cause: Cause, reason: str) -> None:
        super().__init__(f"CSR 0x{addr:03x}: {reason} ({cause.name})")
        self.addr = addr
        self.cause = cause
        self.reason = reason


@dataclass(frozen=True)
class PrivilegeState:
    base: Base
    virt: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.base, Base):
            object.__setattr__(self, "base", Base(self.base))
        if self.virt and self.base == Base.M:
            raise InvalidTransition("M mode cannot run with V=1")

    @property
    def mode(self) -> Mode:
        if self.base == Base.M:
            return Mode.M
        if self.base == Base.S:
            return Mode.VS if self.virt else Mode.HS
        return Mode.VU if self.virt else Mode.U

    @classmethod
    def from_mode(cls, mode: Mode | str) -> "PrivilegeState":
        mode = Mode(mode)
        return {
            Mode.M: cls(Base.M, False),
            Mode.HS: cls(Base.S, False),
            Mode.VS: cls(Base.S, True),
            Mode.U: cls(Base.U, False),
            Mode.VU: cls(Base.U, True),
        }[mode]

    def __str__(self) -> str:
        return self.mode.value


def enter_virtualization(state: PrivilegeState) -> PrivilegeState:
    if state.base == Base.M:
        raise InvalidTransition("cannot enter virtualization from M mode")
    return PrivilegeState(state.base, True)


def leave_virtualization(state: PrivilegeState) -> PrivilegeState:
    return PrivilegeState(state.base, False)


# Privilege ordering used for CSR checks. VS sits at S level but is denied
# hypervisor-level registers, which is what separates it from HS.
MODE_LEVEL = {Mode.M: 3, Mode.HS: 2, Mode.VS: 1, Mode.U: 0, Mode.VU: 0}


def bits(lo: int, hi: int | None = None) -> int:
    hi = lo if hi is None else hi
    return ((1 << (hi - lo + 1)) - 1) << lo


def get_field(value: int, mask: int) -> int:
    return (value & mask) >> ((mask & -mask).bit_length() - 1)


def set_field(value: int, mask: int, field: int) -> int:
    shift = (mask & -mask).bit_length() - 1
    return (value & ~mask) | ((field << shift) & mask)


# mstatus / sstatus / vsstatus
SSTATUS_SPP = bits(8)
MSTATUS_MPP = bits(11, 12)
STATUS_SUM = bits(18)
STATUS_MXR = bits(19)
MSTATUS_TVM = bits(20)
MSTATUS_TSR = bits(22)
MSTATUS_GVA = bits(38)
MSTATUS_MPV = bits(39)
MSTATUS_MASK = (SSTATUS_SPP | MSTATUS_MPP | STATUS_SUM | STATUS_MXR | MSTATUS_TVM
                | MSTATUS_TSR | MSTATUS_GVA | MSTATUS_MPV)
SSTATUS_MASK = SSTATUS_SPP | STATUS_SUM | STATUS_MXR

# hstatus
HSTATUS_GVA = bits(6)
HSTATUS_SPV = bits(7)
HSTATUS_SPVP = bits(8)
HSTATUS_VTVM = bits(20)
HSTATUS_VTSR = bits(22)
HSTATUS_VSXL = bits(32, 33)
HSTATUS_MASK = HSTATUS_GVA | HSTATUS_SPV | HSTATUS_SPVP | HSTATUS_VTVM | HSTATUS_VTSR
HSTATUS_FIXED = 2 << 32  # VSXL=64

# satp / vsatp / hgatp
ATP_MODE = bits(60, 63)
ATP_PPN = bits(0, 43)
ASID_BITS = 9
VMID_BITS = 7
SATP_ASID = bits(44, 44 + ASID_BITS - 1)
HGATP_VMID = bits(44, 44 + VMID_BITS - 1)
ATP_MODE_BARE = 0
ATP_MODE_SV39 = 8  # Sv39 for satp/vsatp, Sv39x4 for hgatp

# Exception delegation. ECALL-from-M, reserved codes and anything a guest must
# not handle itself are wired to zero.
MEDELEG_MASK = sum(1 << c for c in Cause if c != Cause.EcallFromM)
HEDELEG_MASK = sum(1 << c for c in (
    Cause.InstructionAddressMisaligned, Cause.InstructionAccessFault,
    Cause.IllegalInstruction, Cause.Breakpoint, Cause.LoadAddressMisaligned,
    Cause.LoadAccessFault, Cause.StoreAmoAddressMisaligned, Cause.StoreAmoAccessFault,
    Cause.EcallFromU, Cause.InstructionPageFault, Cause.LoadPageFault,
    Cause.StoreAmoPageFault))
MIDELEG_WRITABLE = (1 << Interrupt.SSI) | (1 << Interrupt.STI) | (1 << Interrupt.SEI)
MIDELEG_FIXED = ((1 << Interrupt.VSSI) | (1 << Interrupt.VSTI) | (1 << Interrupt.VSEI)
                 | (1 << Interrupt.SGEI))
HIDELEG_MASK = (1 << Interrupt.VSSI) | (1 << Interrupt.VSTI) | (1 << Interrupt.VSEI)

TVEC_MASK = _ALL & ~0b10  # MODE in {Direct, Vectored}
EPC_MASK = _ALL & ~1


Legalizer = Callable[[int, int], int]


def _keep_mpp(old: int, new: int) -> int:
    # MPP=2 is reserved: keep the previous field.
    if get_field(new, MSTATUS_MPP) == 2:
        new = set_field(new, MSTATUS_MPP, get_field(old, MSTATUS_MPP))
    return new


def _legal_atp(extra_mask: int) -> Legalizer:
    def legalize(old: int, new: int) -> int:
        if get_field(new, ATP_MODE) not in (ATP_MODE_BARE, ATP_MODE_SV39):
            return old
        return new & (ATP_MODE | extra_mask)
    return legalize


_legal_satp = _legal_atp(SATP_ASID | ATP_PPN)
# Sv39x4 roots are 16 KiB: the two low PPN bits are wired to zero.
_legal_hgatp = _legal_atp(HGATP_VMID | (ATP_PPN & ~0b11))


@dataclass(frozen=True)
class CsrSpec:
    name: str
    addr: int
    write_mask: int = _ALL
    legalize: Legalizer | None = None
    fixed: int = 0                 # bits that always read as one
    view_of: str | None = None     # restricted view onto another register
    vs_alias: str | None = None    # register accessed instead while V=1

    @property
    def min_level(self) -> int:
        return (self.addr >> 8) & 3

    @property
    def read_only(self) -> bool:
        return (self.addr >> 10) == 0b11

    def apply(self, old: int, value: int) -> int:
        new = (value & self.write_mask) | (old & ~self.write_mask)
        if self.legalize is not None:
            new = self.legalize(old, new)
        return (new & self.write_mask) | self.fixed


CSR_SPECS: tuple[CsrSpec, ...] = (
    CsrSpec("mstatus", 0x300, MSTATUS_MASK, _keep_mpp),
    CsrSpec("medeleg", 0x302, MEDELEG_MASK),
    CsrSpec("mideleg", 0x303, MIDELEG_WRITABLE | MIDELEG_FIXED, fixed=MIDELEG_FIXED),
    CsrSpec("mtvec", 0x305, TVEC_MASK),
    CsrSpec("mepc", 0x341, EPC_MASK),
    CsrSpec("mcause", 0x342),
    CsrSpec("mtval", 0x343),
    CsrSpec("mtinst", 0x34A, 0),
    CsrSpec("mtval2", 0x34B),
    CsrSpec("sstatus", 0x100, SSTATUS_MASK, view_of="mstatus", vs_alias="vsstatus"),
    CsrSpec("stvec", 0x105, TVEC_MASK, vs_alias="vstvec"),
    CsrSpec("sepc", 0x141, EPC_MASK, vs_alias="vsepc"),
    CsrSpec("scause", 0x142, vs_alias="vscause"),
    CsrSpec("stval", 0x143, vs_alias="vstval"),
    CsrSpec("satp", 0x180, ATP_MODE | SATP_ASID | ATP_PPN, _legal_satp, vs_alias="vsatp"),
    CsrSpec("vsstatus", 0x200, SSTATUS_MASK),
    CsrSpec("vstvec", 0x205, TVEC_MASK),
    CsrSpec("vsepc", 0x241, EPC_MASK),
    CsrSpec("vscause", 0x242),
    CsrSpec("vstval", 0x243),
    CsrSpec("vsatp", 0x280, ATP_MODE | SATP_ASID | ATP_PPN, _legal_satp),
    CsrSpec("hstatus", 0x600, HSTATUS_MASK | HSTATUS_VSXL, fixed=HSTATUS_FIXED),
    CsrSpec("hedeleg", 0x602, HEDELEG_MASK),
    CsrSpec("hideleg", 0x603, HIDELEG_MASK),
    CsrSpec("hgeie", 0x607, 0),
    CsrSpec("htval", 0x643),
    CsrSpec("hgatp", 0x680, ATP_MODE | HGATP_VMID | (ATP_PPN & ~0b11), _legal_hgatp),
    CsrSpec("hgeip", 0xE12, 0),
)

CSR_BY_NAME = {spec.name: spec for spec in CSR_SPECS}
CSR_BY_ADDR = {spec.addr: spec for spec in CSR_SPECS}
# Supervisor CSR name -> vs counterpart, for every aliased pair.
VS_ALIASES = {spec.name: spec.vs_alias for spec in CSR_SPECS if spec.vs_alias}


def csr_address(name_or_addr: str | int) -> int:
    if isinstance(name_or_addr, int):
        return name_or_addr
    try:
        return CSR_BY_NAME[name_or_addr].addr
    except KeyError:
        raise KeyError(f"unknown CSR {name_or_addr!r}") from None


class CsrFile:
    """The CSR address space.

    :meth:`read` and :meth:`write` model software accesses and enforce
    privilege rules. :meth:`peek` and :meth:`poke` are the hardware side
    used by trap entry/return; they bypass privilege checks but still keep
    the fixed and masked bits consistent.
    """

    def __init__(self) -> None:
        self._regs: dict[str, int] = {}
        for spec in CSR_SPECS:
            if spec.view_of is None:
                self._regs[spec.name] = spec.fixed

    def _spec(self, addr: int) -> CsrSpec:
        if not 0 <= addr < CSR_COUNT:
            raise ValueError(f"CSR address out of range: {addr}")
        spec = CSR_BY_ADDR.get(addr)
        if spec is None:
            raise IllegalCsr(addr, Cause.IllegalInstruction, "unimplemented")
        return spec

    def _check(self, state: PrivilegeState, spec: CsrSpec, write: bool) -> None:
        mode = state.mode
        level = spec.min_level
        if write and spec.read_only:
            raise IllegalCsr(spec.addr, Cause.IllegalInstruction, "read-only")
        if mode == Mode.M:
            return
        # Anything HS could not do traps as illegal even from a guest.
        if level == 3:
            raise IllegalCsr(spec.addr, Cause.IllegalInstruction, "needs M")
        if mode == Mode.U and level > 0:
            raise IllegalCsr(spec.addr, Cause.IllegalInstruction, "needs S")
        if mode == Mode.VS and level == 2:
            raise IllegalCsr(spec.addr, Cause.VirtualInstruction, "hypervisor CSR from VS")
        if mode == Mode.VU and level > 0:
            raise IllegalCsr(spec.addr, Cause.VirtualInstruction, "supervisor CSR from VU")
        if spec.name in ("satp", "hgatp"):
            if mode == Mode.HS and self._regs["mstatus"] & MSTATUS_TVM:
                raise IllegalCsr(spec.addr, Cause.IllegalInstruction, "mstatus.TVM")
            if mode == Mode.VS and self._regs["hstatus"] & HSTATUS_VTVM:
                raise IllegalCsr(spec.addr, Cause.VirtualInstruction, "hstatus.VTVM")

    def _target(self, state: PrivilegeState, spec: CsrSpec) -> CsrSpec:
        if state.virt and spec.vs_alias:
            return CSR_BY_NAME[spec.vs_alias]
        return spec

    def read(self, state: PrivilegeState, addr: int) -> int:
        spec = self._spec(addr)
        self._check(state, spec, write=False)
        return self.peek(self._target(state, spec).name)

    def write(self, state: PrivilegeState, addr: int, value: int) -> int:
        """Write ``value`` and return the legalized value now stored."""
        spec = self._spec(addr)
        self._check(state, spec, write=True)
        target = self._target(state, spec)
        old = self.peek(target.name)
        self._store(target, target.apply(old, value & _ALL))
        return self.peek(target.name)

    def _store(self, spec: CsrSpec, value: int) -> None:
        if spec.view_of is not None:
            backing = CSR_BY_NAME[spec.view_of]
            full = self._regs[backing.name]
            self._regs[backing.name] = (full & ~spec.write_mask) | (value & spec.write_mask)
        else:
            self._regs[spec.name] = value

    def peek(self, name: str) -> int:
        spec = CSR_BY_NAME[name]
        if spec.view_of is not None:
            return self._regs[spec.view_of] & spec.write_mask
        return self._regs[name]

    def poke(self, name: str, value: int) -> None:
        spec = CSR_BY_NAME[name]
        self._store(spec, (value & spec.write_mask) | spec.fixed)

    def poke_field(self, name: str, mask: int, field: int) -> None:
        self.poke(name, set_field(self.peek(name), mask, field))

    def snapshot(self) -> dict[str, int]:
        return {spec.name: self.peek(spec.name) for spec in CSR_SPECS}

    def legalize(self, name: str, old: int, value: int) -> int:
        """What a write of ``value`` over ``old`` would leave in ``name``."""
        return CSR_BY_NAME[name].apply(old, value & _ALL)
