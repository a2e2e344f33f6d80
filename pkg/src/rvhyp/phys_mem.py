"""Sparse physical memory backing the page-table walker and scenarios.

Memory is registered in 4 KiB frames. A frame can be *backed* without ever
being written; such frames read as zero. Frames that were never backed raise
:class:`Unbacked`, which lets callers tell a zeroed table apart from a hole.
"""

PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT
PA_BITS = 56
PA_MASK = (1 << PA_BITS) - 1

_MASK64 = (1 << 64) - 1


class PhysMemError(Exception):
    """Base class for physical memory access errors."""

    def __init__(self, pa: int, msg: str) -> None:
        super().__init__(f"{msg} at 0x{pa:x}")
        self.pa = pa


class Unbacked(PhysMemError):
    def __init__(self, pa: int) -> None:
        super().__init__(pa, "unbacked physical address")


class Misaligned(PhysMemError):
    def __init__(self, pa: int) -> None:
        super().__init__(pa, "misaligned 64-bit access")


class SparseMemory:
    """Frame-granular little-endian memory over a 56-bit physical space."""

    def __init__(self) -> None:
        self._backed: set[int] = set()
        self._frames: dict[int, bytearray] = {}

    def back_range(self, pa: int, length: int) -> None:
        if length <= 0:
            return
        if pa < 0 or pa + length - 1 > PA_MASK:
            raise Unbacked(pa)
        first = pa >> PAGE_SHIFT
        last = (pa + length - 1) >> PAGE_SHIFT
        self._backed.update(range(first, last + 1))

    def is_backed(self, pa: int) -> bool:
        return (pa >> PAGE_SHIFT) in self._backed and 0 <= pa <= PA_MASK

    def backed_frames(self) -> list[int]:
        return sorted(self._backed)

    def _frame(self, pa: int, create: bool) -> bytearray | None:
        fn = pa >> PAGE_SHIFT
        if fn not in self._backed or pa < 0 or pa > PA_MASK:
            raise Unbacked(pa)
        frame = self._frames.get(fn)
        if frame is None and create:
            frame = self._frames[fn] = bytearray(PAGE_SIZE)
        return frame

    def read64(self, pa: int) -> int:
        if pa & 7:
            raise Misaligned(pa)
        frame = self._frame(pa, create=False)
        if frame is None:
            return 0
        off = pa & (PAGE_SIZE - 1)
        return int.from_bytes(frame[off:off + 8], "little")

    def write64(self, pa: int, value: int) -> None:
        if pa & 7:
            raise Misaligned(pa)
        frame = self._frame(pa, create=True)
        off = pa & (PAGE_SIZE - 1)
        frame[off:off + 8] = (value & _MASK64).to_bytes(8, "little")

    def snapshot(self) -> dict[int, int]:
        """Return every nonzero 64-bit word as ``{pa: value}``."""
        words = {}
        for fn in sorted(self._frames):
            frame = self._frames[fn]
            base = fn << PAGE_SHIFT
            for off in range(0, PAGE_SIZE, 8):
                value = int.from_bytes(frame[off:off + 8], "little")
                if value:
                    words[base + off] = value
        return words
