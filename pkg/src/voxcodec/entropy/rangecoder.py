"""Bit-exact integer range coder and quantized CDF tables.

The coder keeps a 32-bit (low, range) pair and 16-bit probability totals.
Renormalization is carry-less: it keeps range >= 2^24 by emitting whole
bytes, and when the current interval straddles a top-byte boundary it
shrinks to the larger half so the byte is settled before emission.  Both
sides perform identical integer arithmetic, so streams are reproducible
across platforms.

Coded-block framing (little-endian):
    [min_symbol: i16][max_symbol: i16][payload_len: u32][payload bytes]
"""

from __future__ import annotations

import struct
from bisect import bisect_right
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..errors import ConfigurationError, DecodingError, EncodingError

TOTAL_BITS = 16
TOTAL = 1 << TOTAL_BITS
TOP = 1 << 24
MASK32 = (1 << 32) - 1
MAX_SYMBOLS = 4096  # table budget: widest symbol range we will model


@dataclass(frozen=True)
class CdfTable:
    """Quantized cumulative frequencies for one symbol context.

    cum has len(symbols) + 1 strictly increasing entries from 0 to 2^16,
    so every symbol carries at least one count.
    """

    min_symbol: int
    max_symbol: int
    cum: Tuple[int, ...]

    def __post_init__(self):
        n = self.max_symbol - self.min_symbol + 1
        if n < 1:
            raise ConfigurationError("empty symbol range")
        if len(self.cum) != n + 1 or self.cum[0] != 0 or self.cum[-1] != TOTAL:
            raise ConfigurationError("cumulative table malformed")
        if any(b <= a for a, b in zip(self.cum, self.cum[1:])):
            raise ConfigurationError("cumulative table not strictly increasing")

    @property
    def n_symbols(self) -> int:
        return self.max_symbol - self.min_symbol + 1

    def span(self, symbol: int) -> Tuple[int, int]:
        """(cumulative, frequency) for a symbol."""
        i = symbol - self.min_symbol
        if i < 0 or i >= self.n_symbols:
            raise EncodingError(
                f"symbol {symbol} outside table range [{self.min_symbol}, {self.max_symbol}]"
            )
        return self.cum[i], self.cum[i + 1] - self.cum[i]

    def symbol_bits(self, symbol: int) -> float:
        _, freq = self.span(symbol)
        return float(-np.log2(freq / TOTAL))


def cdf_table_from_probs(probs: Sequence[float], min_symbol: int) -> CdfTable:
    """Deterministically quantize probabilities to 16-bit counts.

    Each symbol gets at least one count; leftover counts go to the symbols
    with the largest fractional parts (ties to the lower index).
    """
    p = np.asarray(probs, dtype=np.float64)
    n = len(p)
    if n < 1:
        raise ConfigurationError("need at least one symbol")
    if n > MAX_SYMBOLS:
        raise ConfigurationError(f"symbol range {n} exceeds table budget {MAX_SYMBOLS}")
    p = np.where(np.isfinite(p), np.maximum(p, 0.0), 0.0)
    total = p.sum()
    if total <= 0.0:
        p = np.ones(n)
        total = float(n)
    budget = TOTAL - n
    scaled = p * (budget / total)
    base = np.floor(scaled).astype(np.int64)
    remainder = budget - int(base.sum())
    if remainder > 0:
        frac = scaled - base
        order = np.argsort(-frac, kind="stable")
        base[order[:remainder]] += 1
    freq = base + 1
    cum = np.concatenate(([0], np.cumsum(freq)))
    return CdfTable(min_symbol, min_symbol + n - 1, tuple(int(c) for c in cum))


def table_entropy_bits(symbols: Sequence[int], tables: Sequence[CdfTable]) -> float:
    """Information content of the symbols under their tables' masses."""
    return sum(t.symbol_bits(s) for s, t in zip(symbols, tables))


class _RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.out = bytearray()

    def encode(self, cum: int, freq: int) -> None:
        r = self.range >> TOTAL_BITS
        self.low += r * cum
        self.range = r * freq
        self._renorm()

    def _renorm(self) -> None:
        while self.range < TOP:
            d = (-self.low) & (TOP - 1)  # distance to the next top-byte boundary
            if 0 < d < self.range:
                # Interval straddles the boundary: keep the larger half.
                if self.range - d > d:
                    self.low += d
                    self.range -= d
                else:
                    self.range = d
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & MASK32
            self.range <<= 8

    def flush(self) -> bytes:
        for _ in range(4):
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & MASK32
        return bytes(self.out)


class _RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self.pos >= len(self.data):
            raise DecodingError("range coder payload truncated")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode(self, table: CdfTable) -> int:
        r = self.range >> TOTAL_BITS
        v = (self.code - self.low) // r
        if v >= TOTAL:
            v = TOTAL - 1
        i = bisect_right(table.cum, v) - 1
        if i >= table.n_symbols:
            i = table.n_symbols - 1
        cum = table.cum[i]
        freq = table.cum[i + 1] - cum
        self.low += r * cum
        self.range = r * freq
        self._renorm()
        return table.min_symbol + i

    def _renorm(self) -> None:
        while self.range < TOP:
            d = (-self.low) & (TOP - 1)
            if 0 < d < self.range:
                if self.range - d > d:
                    self.low += d
                    self.range -= d
                else:
                    self.range = d
            self.code = ((self.code << 8) & MASK32) | self._next_byte()
            self.low = (self.low << 8) & MASK32
            self.range <<= 8


def range_encode(symbols: Sequence[int], tables: Sequence[CdfTable]) -> bytes:
    """Encode symbols, one table per symbol; deterministic byte string."""
    if len(symbols) != len(tables):
        raise EncodingError("one table per symbol is required")
    enc = _RangeEncoder()
    for s, t in zip(symbols, tables):
        cum, freq = t.span(int(s))
        enc.encode(cum, freq)
    return enc.flush()


def range_decode(data: bytes, tables: Sequence[CdfTable], count: int) -> List[int]:
    """Exact inverse of range_encode under identical tables."""
    if count != len(tables):
        raise DecodingError("one table per symbol is required")
    if count == 0:
        if len(data) < 4:
            raise DecodingError("range coder payload truncated")
        return []
    dec = _RangeDecoder(data)
    return [dec.decode(t) for t in tables]


# ---------------------------------------------------------------------------
# coded-block framing

_FRAME = struct.Struct("<hhI")


def write_coded_block(lo: int, hi: int, payload: bytes) -> bytes:
    if not (-32768 <= lo <= hi <= 32767):
        raise EncodingError(f"symbol range [{lo}, {hi}] does not fit in i16")
    return _FRAME.pack(lo, hi, len(payload)) + payload


def read_coded_block(data: bytes, offset: int) -> Tuple[int, int, bytes, int]:
    """Returns (lo, hi, payload, next_offset)."""
    end = offset + _FRAME.size
    if end > len(data):
        raise DecodingError("coded block header truncated")
    lo, hi, length = _FRAME.unpack_from(data, offset)
    if lo > hi:
        raise DecodingError(f"invalid symbol range [{lo}, {hi}]")
    if hi - lo + 1 > MAX_SYMBOLS:
        raise DecodingError(f"symbol range [{lo}, {hi}] exceeds table budget")
    if end + length > len(data):
        raise DecodingError("coded block payload truncated")
    return lo, hi, data[end:end + length], end + length
