"""Functional model of the RISC-V hypervisor extension.

Privilege modes with virtualization, the hypervisor CSRs, two-level trap
delegation, two-stage Sv39 translation with a tagged TLB, and a scenario
runner with a brute-force oracle for differential checks.
"""

from .causes import Cause, Interrupt
from .machine import AccessOutcome, Machine
from .machine_state import (Base, CsrFile, IllegalCsr, InvalidTransition, Mode, PrivilegeState,
                            enter_virtualization, leave_virtualization)
from .phys_mem import Misaligned, SparseMemory, Unbacked
from .ptw import (Access, GuestPageFault, PageFault, Perm, TranslationFault, WalkContext,
                  WalkResult, translate, walk_gstage, walk_stage1)
from .tlb import FenceKind, InvalidFence, Kind, Tlb, TlbEntry
from .trap_engine import Trap, TrapOutcome, delegate, take_trap, trap_return

__all__ = [
    "Access", "AccessOutcome", "Base", "Cause", "CsrFile", "FenceKind", "GuestPageFault",
    "IllegalCsr", "Interrupt", "InvalidFence", "InvalidTransition", "Kind", "Machine",
    "Misaligned", "Mode", "PageFault", "Perm", "PrivilegeState", "SparseMemory", "Tlb",
    "TlbEntry", "TranslationFault", "Trap", "TrapOutcome", "Unbacked", "WalkContext",
    "WalkResult", "delegate", "enter_virtualization", "leave_virtualization", "take_trap",
    "translate", "trap_return", "walk_gstage", "walk_stage1",
]
