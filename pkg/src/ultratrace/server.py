"""Health-authority DRID store with cursor sync, over newline-delimited JSON.

Wire format, one JSON object per line in each direction:

    {"op": "upload", "token": T, "records": [{"drid": HEX, "date": "YYYY-MM-DD"}]}
    {"op": "sync", "since": N}

Replies carry ``"ok": true`` plus the result, or ``"ok": false`` and an
``"err"`` code (auth-failure, invalid-argument, bad-request).
"""

from __future__ import annotations

import datetime as dt
import hmac
import json
import logging
import os
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

from .crypto_ids import ContactRecord, DailyRandomId, ExposureReport, match_exposures

log = logging.getLogger(__name__)

MAX_RECORDS_PER_UPLOAD = 14
DRID_LEN = 32


class ServerError(Exception):
    code = "error"


class AuthError(ServerError):
    code = "auth-failure"


class InvalidArgument(ServerError):
    code = "invalid-argument"


class BadRequest(ServerError):
    code = "bad-request"


class TransportError(ServerError):
    code = "transport"


_ERRORS = {c.code: c for c in (AuthError, InvalidArgument, BadRequest)}


@dataclass(frozen=True)
class PositiveRecord:
    drid: bytes
    date: str
    cursor: int

    def to_wire(self) -> dict:
        return {"drid": self.drid.hex(), "date": self.date, "cursor": self.cursor}

    @classmethod
    def from_wire(cls, d: dict) -> "PositiveRecord":
        drid, date = _parse_record(d)
        return cls(drid, date, int(d["cursor"]))


def _parse_date(s) -> str:
    if not isinstance(s, str) or len(s) != 10:
        raise InvalidArgument(f"date must be YYYY-MM-DD, got {s!r}")
    try:
        return dt.date.fromisoformat(s).isoformat()
    except ValueError:
        raise InvalidArgument(f"bad date {s!r}") from None


def _parse_record(r) -> Tuple[bytes, str]:
    if isinstance(r, dict):
        drid, date = r.get("drid"), r.get("date")
    elif isinstance(r, (list, tuple)) and len(r) == 2:
        drid, date = r
    else:
        raise InvalidArgument(f"record must be {{drid, date}}, got {r!r}")
    if isinstance(drid, (bytes, bytearray)):
        raw = bytes(drid)
    else:
        try:
            raw = bytes.fromhex(drid)
        except (TypeError, ValueError):
            raise InvalidArgument(f"drid is not hex: {drid!r}") from None
    if len(raw) != DRID_LEN:
        raise InvalidArgument(f"drid must be {DRID_LEN} bytes, got {len(raw)}")
    return raw, _parse_date(date)


class Store:
    """Append-only positive-record store; cursor = 1-based line number.

    Writes are serialized by a lock. Readers take a snapshot of the
    record count, so they always see a consistent prefix.
    """

    def __init__(self, token: str, path: Optional[str] = None):
        if not token:
            raise ValueError("an upload token is required")
        self._token = token.encode()
        self.path = path
        self._lock = threading.Lock()
        self._records: List[PositiveRecord] = []
        self._seen = set()
        if path and os.path.exists(path):
            with open(path) as f:
                for line in f:
                    if not line.strip():
                        continue
                    drid, date = _parse_record(json.loads(line))
                    self._append(drid, date)

    def __len__(self) -> int:
        return len(self._records)

    def _append(self, drid: bytes, date: str) -> PositiveRecord:
        rec = PositiveRecord(drid, date, len(self._records) + 1)
        self._records.append(rec)
        self._seen.add((drid, date))
        return rec

    def check_token(self, token) -> None:
        given = token.encode() if isinstance(token, str) else b""
        if not hmac.compare_digest(given, self._token):
            raise AuthError("bad upload token")

    def upload(self, token, records: Sequence) -> int:
        """Store new (drid, date) pairs; returns how many were new.

        The batch is validated as a whole before anything is written.
        """
        self.check_token(token)
        if not isinstance(records, (list, tuple)):
            raise InvalidArgument("records must be a list")
        if len(records) > MAX_RECORDS_PER_UPLOAD:
            raise InvalidArgument(f"at most {MAX_RECORDS_PER_UPLOAD} records per upload")
        parsed = [_parse_record(r) for r in records]
        with self._lock:
            fresh = []
            for key in parsed:
                if key not in self._seen and key not in fresh:
                    fresh.append(key)
            if fresh and self.path:
                with open(self.path, "a") as f:
                    for drid, date in fresh:
                        f.write(json.dumps({"drid": drid.hex(), "date": date}) + "\n")
                    f.flush()
                    os.fsync(f.fileno())
            for drid, date in fresh:
                self._append(drid, date)
        log.info("stored %d of %d uploaded records", len(fresh), len(parsed))
        return len(fresh)

    def sync(self, since: int = 0) -> Tuple[List[PositiveRecord], int]:
        if not isinstance(since, int) or isinstance(since, bool) or since < 0:
            raise InvalidArgument("since must be an integer >= 0")
        n = len(self._records)
        out = self._records[since:n]
        return out, (out[-1].cursor if out else since)


# -- network side ---------------------------------------------------------

def handle_request(store: Store, req) -> dict:
    try:
        if not isinstance(req, dict):
            raise BadRequest("request must be a JSON object")
        op = req.get("op")
        if op == "upload":
            return {"ok": True, "accepted": store.upload(req.get("token"), req.get("records"))}
        if op == "sync":
            recs, cursor = store.sync(req.get("since", 0))
            return {"ok": True, "records": [r.to_wire() for r in recs], "cursor": cursor}
        raise BadRequest(f"unknown op {op!r}")
    except ServerError as e:
        return {"ok": False, "err": e.code, "message": str(e)}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            if not line.strip():
                continue
            try:
                req = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                resp = {"ok": False, "err": BadRequest.code, "message": "malformed JSON"}
            else:
                resp = handle_request(self.server.store, req)
            self.wfile.write((json.dumps(resp) + "\n").encode("utf-8"))
            self.wfile.flush()


class DridServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, store: Store, host: str = "127.0.0.1", port: int = 0):
        self.store = store
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> threading.Thread:
        th = threading.Thread(target=self.serve_forever, daemon=True)
        th.start()
        return th


class Client:
    """One connection per request; protocol errors come back as exceptions."""

    def __init__(self, host: str = "127.0.0.1", port: int = 8765, timeout: float = 10.0):
        self.host, self.port, self.timeout = host, port, timeout

    def call(self, req: dict) -> dict:
        try:
            with socket.create_connection((self.host, self.port), timeout=self.timeout) as s:
                s.sendall((json.dumps(req) + "\n").encode("utf-8"))
                with s.makefile("rb") as f:
                    line = f.readline()
        except OSError as e:
            raise TransportError(str(e)) from e
        if not line:
            raise TransportError("connection closed without a reply")
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as e:
            raise TransportError(f"garbled reply: {e}") from e
        if not resp.get("ok"):
            raise _ERRORS.get(resp.get("err"), ServerError)(resp.get("message", ""))
        return resp

    def upload(self, token: str, records: Iterable) -> int:
        wire = []
        for r in records:
            if isinstance(r, (list, tuple)):
                drid, date = r
                r = {"drid": drid.hex() if isinstance(drid, (bytes, bytearray)) else drid,
                     "date": str(date)}
            wire.append(r)
        return int(self.call({"op": "upload", "token": token, "records": wire})["accepted"])

    def sync(self, since: int = 0) -> Tuple[List[PositiveRecord], int]:
        resp = self.call({"op": "sync", "since": int(since)})
        return [PositiveRecord.from_wire(r) for r in resp["records"]], int(resp["cursor"])


# -- client-side matching ---------------------------------------------------

class CursorFile:
    """Sync position persisted as a single integer in a text file."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self._value = 0
        if path and os.path.exists(path):
            with open(path) as f:
                text = f.read().strip()
            self._value = int(text) if text else 0

    @property
    def value(self) -> int:
        return self._value

    def set(self, value: int) -> None:
        self._value = int(value)
        if self.path:
            tmp = self.path + ".tmp"
            with open(tmp, "w") as f:
                f.write(f"{self._value}\n")
            os.replace(tmp, self.path)


@dataclass
class FetchResult:
    report: ExposureReport
    cursor: int
    new_records: int = 0
    deferred: bool = False
    error: Optional[str] = field(default=None, repr=False)


def fetch_and_match(log_records: Iterable[ContactRecord], client, cursor: CursorFile) -> FetchResult:
    """Pull records past ``cursor``, match them against the contact log and
    advance the cursor. A transport failure leaves the cursor alone and
    returns a deferred, empty report."""
    try:
        recs, new_cursor = client.sync(cursor.value)
    except (TransportError, OSError) as e:
        log.warning("sync failed, deferring: %s", e)
        return FetchResult(ExposureReport(), cursor.value, 0, True, str(e))
    # the server keeps dates, not chain positions
    infected = [(DailyRandomId(r.drid, 0), r.date) for r in recs]
    report = match_exposures(infected, list(log_records))
    cursor.set(new_cursor)
    return FetchResult(report, new_cursor, len(recs))
