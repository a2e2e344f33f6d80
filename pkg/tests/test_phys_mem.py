import pytest
from hypothesis import given
from hypothesis import strategies as st

from rvhyp.phys_mem import PA_MASK, Misaligned, SparseMemory, Unbacked


def test_backed_unwritten_reads_zero():
    mem = SparseMemory()
    mem.back_range(0x1000, 0x2000)
    assert mem.read64(0x1ff8) == 0
    assert mem.read64(0x2000) == 0
    assert mem.backed_frames() == [1, 2]


def test_unbacked_and_misaligned():
    mem = SparseMemory()
    with pytest.raises(Unbacked):
        mem.read64(0x1000)
    with pytest.raises(Unbacked):
        mem.write64(0x1000, 1)
    mem.back_range(0x1000, 1)
    with pytest.raises(Misaligned):
        mem.read64(0x1004)


def test_little_endian_roundtrip_and_truncation():
    mem = SparseMemory()
    mem.back_range(0, 4096)
    mem.write64(8, 0x1122334455667788)
    assert mem.read64(8) == 0x1122334455667788
    mem.write64(16, (1 << 64) + 5)
    assert mem.read64(16) == 5
    assert mem.snapshot() == {8: 0x1122334455667788, 16: 5}


def test_physical_space_is_56_bits():
    mem = SparseMemory()
    mem.back_range(PA_MASK - 4095, 4096)
    assert mem.is_backed(PA_MASK)
    with pytest.raises(Unbacked):
        mem.back_range(PA_MASK, 2)


@given(writes=st.lists(st.tuples(st.integers(0, 7), st.integers(0, 511),
                                 st.integers(0, (1 << 64) - 1)), max_size=40))
def test_frame_isolation(writes):
    mem = SparseMemory()
    mem.back_range(0, 8 * 4096)
    model = {}
    for frame, slot, value in writes:
        pa = frame * 4096 + slot * 8
        mem.write64(pa, value)
        model[pa] = value
    for pa in range(0, 8 * 4096, 8):
        assert mem.read64(pa) == model.get(pa, 0)
