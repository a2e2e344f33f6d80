"""Page-table construction helpers for scenarios and the fuzzer."""

from typing import Callable

from .ptw import (PAGE_1G, PAGE_2M, PAGE_4K, PTE_A, PTE_D, PTE_G, PTE_PPN_SHIFT, PTE_R,
                  PTE_U, PTE_V, PTE_W, PTE_X)

SIZE_LEVEL = {PAGE_4K: 0, PAGE_2M: 1, PAGE_1G: 2}
SIZE_NAMES = {"4K": PAGE_4K, "2M": PAGE_2M, "1G": PAGE_1G}
_FLAG_CHARS = {"r": PTE_R, "w": PTE_W, "x": PTE_X, "u": PTE_U, "g": PTE_G, "a": PTE_A,
               "d": PTE_D, "v": PTE_V}


class MappingConflict(ValueError):
    pass


def parse_flags(perms: str, ad: str = "ad") -> int:
    """``"rwxu"``-style permission string (``-`` ignored) to PTE flag bits."""
    flags = PTE_V
    for c in perms.lower() + ad.lower():
        if c == "-":
            continue
        try:
            flags |= _FLAG_CHARS[c]
        except KeyError:
            raise ValueError(f"bad permission character {c!r} in {perms!r}") from None
    return flags


def make_pte(pa: int, flags: int) -> int:
    return ((pa >> 12) << PTE_PPN_SHIFT) | flags


class PageTableBuilder:
    """Builds an Sv39 (or Sv39x4 when ``gstage``) radix tree.

    ``write64`` stores a PTE at a table address in whatever address space the
    tables live in; ``alloc`` returns a zeroed, 4 KiB aligned table address
    (16 KiB for the G-stage root). A mirror of every written entry is kept so
    the builder never has to read memory back.
    """

    def __init__(self, write64: Callable[[int, int], None], alloc: Callable[[int], int],
                 gstage: bool = False, root: int | None = None) -> None:
        self.write64 = write64
        self.alloc = alloc
        self.gstage = gstage
        self.root = root if root is not None else alloc(4 * PAGE_4K if gstage else PAGE_4K)
        self.entries: dict[int, int] = {}
        self.tables = [self.root]

    def _index(self, addr: int, level: int) -> int:
        bits = 11 if self.gstage and level == 2 else 9
        return (addr >> (12 + 9 * level)) & ((1 << bits) - 1)

    def _write(self, addr: int, pte: int) -> None:
        self.entries[addr] = pte
        self.write64(addr, pte)

    def map(self, va: int, pa: int, size: int, flags: int) -> int:
        """Install a leaf; returns the table address the leaf was written to."""
        target = SIZE_LEVEL[size]
        table = self.root
        for level in range(2, target, -1):
            slot = table + 8 * self._index(va, level)
            pte = self.entries.get(slot)
            if pte is None:
                child = self.alloc(PAGE_4K)
                self.tables.append(child)
                self._write(slot, make_pte(child, PTE_V))
                table = child
            elif pte & (PTE_R | PTE_W | PTE_X):
                raise MappingConflict(f"0x{va:x} already covered by a larger page")
            else:
                table = (pte >> PTE_PPN_SHIFT) << 12
        slot = table + 8 * self._index(va, target)
        old = self.entries.get(slot)
        if old is not None and not old & (PTE_R | PTE_W | PTE_X):
            raise MappingConflict(f"0x{va:x} already has smaller pages below it")
        self._write(slot, make_pte(pa, flags))
        return slot

    def leaf_slots(self) -> list[int]:
        return [a for a, pte in self.entries.items() if pte & (PTE_R | PTE_W | PTE_X)]


class BumpAllocator:
    """Hands out ascending, naturally aligned chunks from ``base``."""

    def __init__(self, base: int, limit: int | None = None) -> None:
        self.next = base
        self.limit = limit

    def __call__(self, size: int) -> int:
        addr = (self.next + size - 1) & ~(size - 1)
        if self.limit is not None and addr + size > self.limit:
            raise MemoryError("page-table pool exhausted")
        self.next = addr + size
        return addr
