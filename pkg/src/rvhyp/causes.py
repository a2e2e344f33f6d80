"""Trap cause encodings of the RISC-V privileged architecture with the H extension."""

from enum import IntEnum

INTERRUPT_BIT = 1 << 63


class Cause(IntEnum):
    InstructionAddressMisaligned = 0
    InstructionAccessFault = 1
    IllegalInstruction = 2
    Breakpoint = 3
    LoadAddressMisaligned = 4
    LoadAccessFault = 5
    StoreAmoAddressMisaligned = 6
    StoreAmoAccessFault = 7
    EcallFromU = 8
    EcallFromHS = 9
    EcallFromVS = 10
    EcallFromM = 11
    InstructionPageFault = 12
    LoadPageFault = 13
    StoreAmoPageFault = 15
    GuestInstructionPageFault = 20
    GuestLoadPageFault = 21
    VirtualInstruction = 22
    GuestStoreAmoPageFault = 23


class Interrupt(IntEnum):
    SSI = 1
    VSSI = 2
    MSI = 3
    STI = 5
    VSTI = 6
    MTI = 7
    SEI = 9
    VSEI = 10
    MEI = 11
    SGEI = 12


GUEST_PAGE_FAULTS = frozenset({
    Cause.GuestInstructionPageFault,
    Cause.GuestLoadPageFault,
    Cause.GuestStoreAmoPageFault,
})

PAGE_FAULTS = frozenset({
    Cause.InstructionPageFault,
    Cause.LoadPageFault,
    Cause.StoreAmoPageFault,
})

# Exception codes with a meaning in 0..23; the rest are reserved.
DEFINED_EXCEPTIONS = frozenset(int(c) for c in Cause)

# VS-level interrupts are reported to VS with code - 1 (VSSI→SSI and so on).
VS_INTERRUPT_REMAP = {Interrupt.VSSI: Interrupt.SSI, Interrupt.VSTI: Interrupt.STI,
                      Interrupt.VSEI: Interrupt.SEI}


def encode_xcause(code: int, is_interrupt: bool) -> int:
    return (INTERRUPT_BIT if is_interrupt else 0) | code


def decode_xcause(value: int) -> tuple[int, bool]:
    return value & ~INTERRUPT_BIT, bool(value & INTERRUPT_BIT)


def cause_name(code: int, is_interrupt: bool = False) -> str:
    enum = Interrupt if is_interrupt else Cause
    try:
        return enum(code).name
    except ValueError:
        return f"{'Interrupt' if is_interrupt else 'Exception'}{code}"
