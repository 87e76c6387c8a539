"""RPID <-> data unit <-> data frame <-> chunk sequence.

A symbol is an int: 0..15 carry a nibble, ``HEAD`` and ``TAIL`` delimit a
frame. A chunk pairs a low-group and a high-group symbol sent in parallel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

from .rs import K as PAYLOAD_LEN
from .rs import N as UNIT_LEN
from .rs import rs_decode, rs_encode

log = logging.getLogger(__name__)

HEAD = 16
TAIL = 17
N_SYMBOLS = 18
CHUNKS_PER_UNIT = UNIT_LEN            # 40 nibbles, two per chunk
MAX_UNITS = 5
MAX_FRAME_CHUNKS = 2 + CHUNKS_PER_UNIT * MAX_UNITS  # 102

# bit flags for Chunk.erased
ERASED_LOW = 1
ERASED_HIGH = 2

__all__ = [
    "HEAD", "TAIL", "Chunk", "DataFrame", "rs_encode", "rs_decode",
    "unit_to_chunks", "chunks_to_unit", "frame_to_chunks", "chunks_to_frame",
    "chunks_to_payload", "make_frame",
]


class Chunk(NamedTuple):
    low: int
    high: int
    erased: int = 0

    @property
    def is_head(self) -> bool:
        return self.low == HEAD and self.high == HEAD

    @property
    def is_tail(self) -> bool:
        return self.low == TAIL and self.high == TAIL


HEAD_CHUNK = Chunk(HEAD, HEAD)
TAIL_CHUNK = Chunk(TAIL, TAIL)


@dataclass(frozen=True)
class DataFrame:
    units: tuple

    def __post_init__(self):
        if not 1 <= len(self.units) <= MAX_UNITS:
            raise ValueError(f"frame needs 1..{MAX_UNITS} units, got {len(self.units)}")
        for u in self.units:
            if len(u) != UNIT_LEN:
                raise ValueError("every unit must be 20 bytes")
        if len({bytes(u[:PAYLOAD_LEN]) for u in self.units}) != 1:
            raise ValueError("all units in a frame must carry the same payload")

    @property
    def payload(self) -> bytes:
        return bytes(self.units[0][:PAYLOAD_LEN])


def make_frame(rpid: bytes, n_units: int = 1) -> DataFrame:
    unit = rs_encode(rpid)
    return DataFrame(tuple([unit] * n_units))


def unit_to_chunks(unit: bytes) -> List[Chunk]:
    if len(unit) != UNIT_LEN:
        raise ValueError(f"unit must be {UNIT_LEN} bytes")
    return [Chunk(b >> 4, b & 0x0F) for b in unit]


def _nibble(sym: int) -> int:
    # delimiters inside a unit are symbol errors; RS sorts them out
    return sym if 0 <= sym < 16 else 0


def chunks_to_unit(chunks: Sequence[Chunk]) -> bytes:
    if len(chunks) != CHUNKS_PER_UNIT:
        raise ValueError(f"need {CHUNKS_PER_UNIT} chunks per unit")
    return bytes((_nibble(c.low) << 4) | _nibble(c.high) for c in chunks)


def frame_to_chunks(frame: DataFrame) -> List[Chunk]:
    out = [HEAD_CHUNK]
    for unit in frame.units:
        out.extend(unit_to_chunks(unit))
    out.append(TAIL_CHUNK)
    return out


def _interior(chunks: Sequence[Chunk]) -> List[Chunk]:
    # at most one delimiter per side; a corrupted data nibble that happens to
    # read as H/J must not shift the unit grid
    lo, hi = 0, len(chunks)
    if lo < hi and HEAD in (chunks[lo].low, chunks[lo].high):
        lo += 1
    if hi > lo and TAIL in (chunks[hi - 1].low, chunks[hi - 1].high):
        hi -= 1
    return list(chunks[lo:hi])


def chunks_to_frame(chunks: Sequence[Chunk]) -> List[bytes]:
    """Split a (possibly delimited) chunk stream into raw 20-byte units."""
    body = _interior(chunks)
    whole, rest = divmod(len(body), CHUNKS_PER_UNIT)
    if rest:
        log.debug("discarding %d trailing chunks that do not fill a unit", rest)
    return [chunks_to_unit(body[i * CHUNKS_PER_UNIT:(i + 1) * CHUNKS_PER_UNIT])
            for i in range(whole)]


def _erased_bytes(chunks: Sequence[Chunk]) -> int:
    return sum(1 for c in chunks if c.erased)


def chunks_to_payload(chunks: Sequence[Chunk], max_erased: int = 2) -> Optional[bytes]:
    """Payload of the first unit that RS-decodes, or None.

    Units with more than ``max_erased`` bytes flagged as erased by the
    demodulator are skipped: RS(20, 16) can only fix two byte errors, so
    decoding them would mostly yield miscorrections.
    """
    body = _interior(chunks)
    for i in range(len(body) // CHUNKS_PER_UNIT):
        part = body[i * CHUNKS_PER_UNIT:(i + 1) * CHUNKS_PER_UNIT]
        if _erased_bytes(part) > max_erased:
            continue
        payload = rs_decode(chunks_to_unit(part))
        if payload is not None:
            return payload
    return None
