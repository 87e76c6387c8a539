"""Seed -> daily random ID -> rolling proximity ID hash chains, plus the
receiver-side contact log and exposure matching.

Every derivation is raw byte concatenation fed to SHA-256:

    DRID_i = SHA256(DRID_{i-1} || seed),        DRID_{-1} = 32 zero bytes
    RPID_i = SHA256(RPID_{i-1} || DRID_day)[:16], RPID_{-1} = 16 zero bytes
"""

from __future__ import annotations

import hashlib
import json
import os
import secrets
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

SEED_LEN = 32
DRID_LEN = 32
RPID_LEN = 16
SLOTS_PER_DAY = 24 * 60
RETENTION_DAYS = 14
RETENTION_SECONDS = RETENTION_DAYS * 86400


@dataclass(frozen=True)
class Seed:
    bytes: bytes

    def __post_init__(self):
        if len(self.bytes) != SEED_LEN:
            raise ValueError(f"seed must be {SEED_LEN} bytes, got {len(self.bytes)}")

    @classmethod
    def generate(cls) -> "Seed":
        return cls(secrets.token_bytes(SEED_LEN))

    @classmethod
    def from_hex(cls, text: str) -> "Seed":
        return cls(bytes.fromhex(text.strip()))

    def hex(self) -> str:
        return self.bytes.hex()

    def __repr__(self) -> str:
        # keep seeds out of logs and tracebacks
        return "Seed(<redacted>)"


@dataclass(frozen=True)
class DailyRandomId:
    bytes: bytes
    day_index: int

    def __post_init__(self):
        if len(self.bytes) != DRID_LEN:
            raise ValueError(f"DRID must be {DRID_LEN} bytes")
        if self.day_index < 0:
            raise ValueError("day_index must be >= 0")

    def hex(self) -> str:
        return self.bytes.hex()


@dataclass(frozen=True)
class RollingProximityId:
    bytes: bytes
    day_index: int
    slot: int

    def __post_init__(self):
        if len(self.bytes) != RPID_LEN:
            raise ValueError(f"RPID must be {RPID_LEN} bytes")
        if not 0 <= self.slot < SLOTS_PER_DAY:
            raise ValueError(f"slot {self.slot} outside [0, {SLOTS_PER_DAY - 1}]")

    def hex(self) -> str:
        return self.bytes.hex()


def derive_drid_chain(seed: Seed, n: int) -> List[DailyRandomId]:
    """Return DRIDs for day indices 0..n-1."""
    if n < 0:
        raise ValueError("n must be >= 0")
    out = []
    prev = bytes(DRID_LEN)
    for day in range(n):
        prev = hashlib.sha256(prev + seed.bytes).digest()
        out.append(DailyRandomId(prev, day))
    return out


def derive_rpids(drid: DailyRandomId, count: int = SLOTS_PER_DAY) -> List[RollingProximityId]:
    """Return the RPIDs for slots 0..count-1 of the DRID's day."""
    if not 0 <= count <= SLOTS_PER_DAY:
        raise ValueError(f"count must be in [0, {SLOTS_PER_DAY}], got {count}")
    out = []
    prev = bytes(RPID_LEN)
    for slot in range(count):
        prev = hashlib.sha256(prev + drid.bytes).digest()[:RPID_LEN]
        out.append(RollingProximityId(prev, drid.day_index, slot))
    return out


class IdentitySchedule:
    """A node's identity: one seed, lazily expanded into DRIDs and RPIDs."""

    def __init__(self, seed: Optional[Seed] = None, days: int = RETENTION_DAYS):
        self.seed = seed or Seed.generate()
        self.drids = derive_drid_chain(self.seed, days)
        self._rpid_cache = {}

    def rpid(self, day_index: int, slot: int) -> RollingProximityId:
        if day_index >= len(self.drids):
            self.drids = derive_drid_chain(self.seed, day_index + 1)
        if day_index not in self._rpid_cache:
            self._rpid_cache[day_index] = derive_rpids(self.drids[day_index])
        return self._rpid_cache[day_index][slot]

    def rpid_at(self, t: float, rotation: float = 60.0) -> RollingProximityId:
        """RPID on air at node time ``t`` seconds, rotating every ``rotation`` s.

        Rotation periods longer than a minute keep broadcasting the RPID of
        the minute the period started in.
        """
        day, tod = divmod(int(t), 86400)
        start = int(tod // rotation * rotation)
        return self.rpid(day, start // 60)


@dataclass
class ContactRecord:
    rpid: bytes
    first_heard: float
    last_heard: float
    hear_count: int = 1
    channel: int = 0

    def __post_init__(self):
        if len(self.rpid) != RPID_LEN:
            raise ValueError("rpid must be 16 bytes")
        if self.first_heard > self.last_heard:
            raise ValueError("first_heard after last_heard")
        if self.hear_count < 1:
            raise ValueError("hear_count must be >= 1")

    def to_json(self) -> str:
        return json.dumps({"rpid": self.rpid.hex(), "first": self.first_heard,
                           "last": self.last_heard, "count": self.hear_count,
                           "channel": self.channel})

    @classmethod
    def from_json(cls, line: str) -> "ContactRecord":
        d = json.loads(line)
        return cls(bytes.fromhex(d["rpid"]), float(d["first"]), float(d["last"]),
                   int(d["count"]), int(d["channel"]))


class ContactLog:
    """Single-writer store of heard RPIDs, pruned to the retention window on
    every insertion."""

    def __init__(self, retention: float = RETENTION_SECONDS):
        self.retention = retention
        self._records = {}

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ContactRecord]:
        return iter(list(self._records.values()))

    def records(self) -> List[ContactRecord]:
        return list(self._records.values())

    def add(self, rpid: bytes, t: float, channel: int = 0) -> ContactRecord:
        rec = self._records.get(rpid)
        if rec is None:
            rec = ContactRecord(rpid, t, t, 1, channel)
            self._records[rpid] = rec
        else:
            rec.first_heard = min(rec.first_heard, t)
            rec.last_heard = max(rec.last_heard, t)
            rec.hear_count += 1
            rec.channel = channel
        self.prune(t)
        return rec

    def prune(self, now: float) -> int:
        cutoff = now - self.retention
        stale = [k for k, r in self._records.items() if r.last_heard < cutoff]
        for k in stale:
            del self._records[k]
        return len(stale)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            for rec in self._records.values():
                f.write(rec.to_json() + "\n")

    @classmethod
    def load(cls, path: str) -> "ContactLog":
        log = cls()
        if os.path.exists(path):
            with open(path) as f:
                for line in f:
                    if line.strip():
                        rec = ContactRecord.from_json(line)
                        log._records[rec.rpid] = rec
        return log


@dataclass
class ExposureMatch:
    record: ContactRecord
    day_index: int
    slot: int
    date: Optional[str] = None


@dataclass
class ExposureReport:
    matches: List[ExposureMatch] = field(default_factory=list)

    @property
    def total_matched(self) -> int:
        return len(self.matches)

    def to_dict(self) -> dict:
        return {
            "total_matched": self.total_matched,
            "matches": [
                {"rpid": m.record.rpid.hex(), "day_index": m.day_index, "slot": m.slot,
                 "date": m.date, "first": m.record.first_heard,
                 "last": m.record.last_heard, "count": m.record.hear_count}
                for m in self.matches
            ],
        }


def match_exposures(infected: Sequence[Tuple[DailyRandomId, Optional[str]]],
                    log: Iterable[ContactRecord]) -> ExposureReport:
    """Regenerate every RPID of every infected DRID and look up the log."""
    by_rpid = {}
    for rec in log:
        by_rpid.setdefault(rec.rpid, []).append(rec)
    report = ExposureReport()
    if not by_rpid:
        return report
    for drid, date in infected:
        for rp in derive_rpids(drid, SLOTS_PER_DAY):
            for rec in by_rpid.get(rp.bytes, ()):
                report.matches.append(ExposureMatch(rec, rp.day_index, rp.slot, date))
    return report
