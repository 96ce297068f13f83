"""Static-model binary arithmetic coder with 32-bit integer range registers.

The coder follows the classic low/high renormalisation scheme with pending
underflow bits.  The stream ends with the shortest flush (0, 1 or 2 bits plus
pending bits) that selects a dyadic interval inside the final range, so every
continuation of the emitted bits decodes to the same symbols.  For a known
symbol count this makes the code prefix-free.  The decoder reads zeros past
the end of the stream and must know the symbol count, which is the sum of the
frequency table.
"""
from __future__ import annotations

import math

import numpy as np

STATE_BITS = 32
FULL = 1 << STATE_BITS
HALF = FULL >> 1
QUARTER = HALF >> 1
MASK = FULL - 1
MAX_TOTAL = QUARTER + 2


class CorruptStreamError(ValueError):
    pass


class BitWriter:
    def __init__(self):
        self.bits: list[int] = []

    def write(self, value: int, width: int) -> None:
        if width == 0:
            return
        if value < 0 or value >= (1 << width):
            raise ValueError(f"value {value} does not fit in {width} bits")
        self.bits.extend((value >> (width - 1 - i)) & 1 for i in range(width))

    def extend(self, bits) -> None:
        self.bits.extend(bits)

    def __len__(self):
        return len(self.bits)


class BitReader:
    def __init__(self, bits, pos: int = 0):
        self.bits, self.pos = bits, pos

    def read(self, width: int) -> int:
        if self.pos + width > len(self.bits):
            raise CorruptStreamError(f"bitstring ends at {len(self.bits)}, needed {self.pos + width}")
        v = 0
        for b in self.bits[self.pos:self.pos + width]:
            v = (v << 1) | b
        self.pos += width
        return v

    def read_padded(self) -> int:
        """One bit, zero past the end (arithmetic decoder lookahead)."""
        b = self.bits[self.pos] if self.pos < len(self.bits) else 0
        self.pos += 1
        return b


class FrequencyTable:
    """Symbol counts of one index stream; transmitted as fixed-width integers."""

    def __init__(self, counts):
        self.counts = [int(c) for c in counts]
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be nonnegative")
        self.total = sum(self.counts)
        if self.total > MAX_TOTAL:
            raise ValueError(f"total count {self.total} exceeds coder limit {MAX_TOTAL}")
        self.cum = np.concatenate([[0], np.cumsum(self.counts)]).astype(np.int64).tolist()

    @classmethod
    def from_indices(cls, indices, r: int) -> "FrequencyTable":
        return cls(np.bincount(np.asarray(indices, dtype=np.int64), minlength=r)[:r])

    @property
    def r(self) -> int:
        return len(self.counts)

    @staticmethod
    def width(N: int) -> int:
        return max(0, math.ceil(math.log2(N + 1)))

    def bit_length(self) -> int:
        return self.r * self.width(self.total)

    def write(self, w: BitWriter) -> None:
        width = self.width(self.total)
        for c in self.counts:
            w.write(c, width)

    @classmethod
    def read(cls, reader: BitReader, r: int, N: int) -> "FrequencyTable":
        width = cls.width(N)
        counts = [reader.read(width) for _ in range(r)]
        if sum(counts) != N:
            raise CorruptStreamError(f"count table sums to {sum(counts)}, expected {N}")
        return cls(counts)

    def ideal_bits(self) -> float:
        """Empirical entropy of the stream in bits: sum_t -log2(c_{s_t} / N)."""
        N = self.total
        return float(sum(-c * math.log2(c / N) for c in self.counts if c))


def fraction_table_bits(r: int, N: int) -> int:
    """Bits for ``r`` symbol counts of a stream of length ``N``."""
    return r * FrequencyTable.width(N)


def arithmetic_encode(indices, table: FrequencyTable) -> list[int]:
    low, high, pending = 0, MASK, 0
    out: list[int] = []
    total, cum = table.total, table.cum
    seq = np.asarray(indices, dtype=np.int64).tolist()
    if len(seq) != total:
        raise ValueError(f"stream has {len(seq)} symbols, frequency table expects {total}")
    for s in seq:
        if not 0 <= s < table.r or table.counts[s] == 0:
            raise ValueError(f"symbol {s} has zero count in the frequency table")
        rng = high - low + 1
        high = low + cum[s + 1] * rng // total - 1
        low = low + cum[s] * rng // total
        while ((low ^ high) & HALF) == 0:
            bit = low >> (STATE_BITS - 1)
            out.append(bit)
            out.extend([bit ^ 1] * pending)
            pending = 0
            low = (low << 1) & MASK
            high = ((high << 1) & MASK) | 1
        while (low & ~high & QUARTER) != 0:
            pending += 1
            low = (low << 1) ^ HALF
            high = ((high ^ HALF) << 1) | HALF | 1
    if total:
        out.extend(_flush(low, high, pending))
    return out


def _flush(low: int, high: int, pending: int) -> list[int]:
    """Bits pinning the code value inside ``[low, high]`` for any continuation."""
    if low == 0 and high == MASK and pending == 0:
        return []
    if low == 0:
        return [0] + [1] * pending
    if high == MASK:
        return [1] + [0] * pending
    # low < HALF <= high and the range is wider than a quarter: 01 or 10 fits
    bit = 0 if low < QUARTER else 1
    return [bit] + [bit ^ 1] * (pending + 1)


def arithmetic_decode(bits, table: FrequencyTable, pos: int = 0) -> tuple[list[int], int]:
    """Decode ``table.total`` symbols starting at ``pos``; returns (symbols, bits consumed)."""
    total, cum, counts = table.total, table.cum, table.counts
    if total == 0:
        return [], 0
    reader = BitReader(bits, pos)
    low, high, code = 0, MASK, 0
    for _ in range(STATE_BITS):
        code = (code << 1) | reader.read_padded()
    out = []
    cum_arr = np.asarray(cum)
    for _ in range(total):
        rng = high - low + 1
        offset = code - low
        if not 0 <= offset < rng:
            raise CorruptStreamError("arithmetic decoder left its code range")
        value = ((offset + 1) * total - 1) // rng
        s = int(np.searchsorted(cum_arr, value, side="right")) - 1
        if not 0 <= s < len(counts) or counts[s] == 0:
            raise CorruptStreamError(f"decoded a zero-count symbol {s}")
        out.append(s)
        high = low + cum[s + 1] * rng // total - 1
        low = low + cum[s] * rng // total
        while ((low ^ high) & HALF) == 0:
            code = ((code << 1) & MASK) | reader.read_padded()
            low = (low << 1) & MASK
            high = ((high << 1) & MASK) | 1
        while (low & ~high & QUARTER) != 0:
            code = (code & HALF) | ((code << 1) & (MASK >> 1)) | reader.read_padded()
            low = (low << 1) ^ HALF
            high = ((high ^ HALF) << 1) | HALF | 1
    return out, reader.pos - pos
