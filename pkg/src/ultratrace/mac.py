"""Broadcast MAC: scan, random free channel, abandon on collision with binary
exponential backoff, grow the unit count when the channel is noisy.

Nothing here touches audio except ``assess_channels``; the simulator feeds a
node its sensing results and tells it how each transmission ended.
"""

from __future__ import annotations

import enum
import functools
import json
from dataclasses import dataclass, field, replace
from typing import Callable, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from .codec import MAX_UNITS
from .modem import DEFAULT_PARAMS, ModemParams, band_energy, guard_floor, tone_magnitudes

FREE, BUSY, NOISY = "free", "busy", "noisy"


class Phase(enum.Enum):
    IDLE = "idle"
    SCANNING = "scanning"
    TRANSMITTING = "transmitting"
    BACKOFF = "backoff"


@dataclass(frozen=True)
class MacParams:
    slot: float = 12.0
    max_backoff_exp: int = 5
    max_units: int = MAX_UNITS
    frame_interval: tuple = (50.0, 70.0)
    decay_after: int = 5
    busy_threshold: float = 2.0
    noise_threshold: float = 0.02
    channels: tuple = (0, 1)


@dataclass(frozen=True)
class MacState:
    phase: Phase = Phase.IDLE
    collision_count: int = 0
    unit_count: int = 1
    backoff_until: float = 0.0
    current_channel: Optional[int] = None
    clean_streak: int = 0

    def __post_init__(self):
        if not 1 <= self.unit_count <= MAX_UNITS:
            raise ValueError("unit_count out of range")
        if self.collision_count < 0:
            raise ValueError("collision_count must be >= 0")


@dataclass(frozen=True)
class ChannelAssessment:
    verdicts: tuple
    energies: tuple
    floors: tuple = ()

    def free(self) -> List[int]:
        return [c for c, v in enumerate(self.verdicts) if v == FREE]

    def noisy(self) -> List[int]:
        return [c for c, v in enumerate(self.verdicts) if v == NOISY]


# in-band energy must be this many times what the guard-band noise predicts
# before it counts as a transmission; white noise alone stays below ~3.2
BUSY_OVER_NOISE = 4.0


@functools.lru_cache(maxsize=4)
def _noise_energy_per_guard_power(params: ModemParams) -> float:
    # band energy that white noise implies for a given mean guard-tone power
    rng = np.random.default_rng(12345)
    x = rng.standard_normal((256, params.fft_size))
    e = np.mean([band_energy(row, 0, 0, params.fft_size, params.plan) for row in x])
    g = tone_magnitudes(x, 0, params)[:, list(params.plan.guard)]
    return float(e / np.mean(g ** 2))


def assess_channels(window: np.ndarray, thresholds: MacParams = MacParams(),
                    params: ModemParams = DEFAULT_PARAMS) -> ChannelAssessment:
    """Classify each channel from the last ``fft_size`` samples heard.

    busy: band energy above ``busy_threshold`` and well above what the
    guard-band noise accounts for; noisy: otherwise, if the guard-band
    floor is above ``noise_threshold``; free: neither.
    """
    w = np.asarray(window, dtype=float)
    n = params.fft_size
    if len(w) < n:
        raise ValueError(f"need at least {n} samples to assess channels")
    w = w[-n:]
    k = _noise_energy_per_guard_power(params)
    guard = list(params.plan.guard)
    verdicts, energies, floors = [], [], []
    for ch in range(params.plan.channels):
        e = band_energy(w, ch, 0, n, params.plan)
        mags = tone_magnitudes(w[None], ch, params)[0]
        fl = float(guard_floor(mags, params))
        noise_e = k * float(np.mean(mags[guard] ** 2))
        if e > thresholds.busy_threshold and e > BUSY_OVER_NOISE * noise_e:
            v = BUSY
        elif fl > thresholds.noise_threshold:
            v = NOISY
        else:
            v = FREE
        verdicts.append(v)
        energies.append(e)
        floors.append(fl)
    return ChannelAssessment(tuple(verdicts), tuple(energies), tuple(floors))


def choose_channel(assessment: ChannelAssessment, rng: np.random.Generator,
                   allowed: Optional[Sequence[int]] = None) -> Optional[int]:
    free = assessment.free()
    if allowed is not None:
        free = [c for c in free if c in allowed]
    if not free:
        return None
    return int(free[rng.integers(len(free))])


def backoff_window(collision_count: int, max_exp: int = 5) -> int:
    """Number of slots the backoff is drawn from: [0, window)."""
    return 2 ** min(collision_count, max_exp)


def on_collision(state: MacState, rng: np.random.Generator, now: float = 0.0,
                 params: MacParams = MacParams()) -> MacState:
    count = state.collision_count + 1
    slots = int(rng.integers(backoff_window(count, params.max_backoff_exp)))
    return replace(state, phase=Phase.BACKOFF, collision_count=count,
                   backoff_until=now + slots * params.slot, current_channel=None,
                   clean_streak=0)


def on_noisy_channel(state: MacState, params: MacParams = MacParams()) -> MacState:
    return replace(state, phase=Phase.SCANNING, current_channel=None, clean_streak=0,
                   unit_count=min(state.unit_count + 1, params.max_units))


def on_success(state: MacState, clean: bool = True, params: MacParams = MacParams()) -> MacState:
    streak = state.clean_streak + 1 if clean else 0
    units = state.unit_count
    if streak >= params.decay_after and units > 1:
        units -= 1
        streak = 0
    return replace(state, phase=Phase.IDLE, collision_count=0, current_channel=None,
                   unit_count=units, clean_streak=streak)


class Transmit(NamedTuple):
    channel: int
    units: int
    noisy: bool = False


class Wait(NamedTuple):
    until: float


class Rescan(NamedTuple):
    pass


Action = Union[Transmit, Wait, Rescan]


class MacNode:
    """One sender. ``tick`` is called whenever the node's wait has elapsed;
    the simulator reports the outcome of each ``Transmit`` through
    ``transmission_done`` or ``collision``."""

    def __init__(self, node_id: int, rng: np.random.Generator, params: MacParams = MacParams(),
                 first_frame: Optional[float] = None, trace: Optional[Callable[[dict], None]] = None):
        self.id = node_id
        self.rng = rng
        self.params = params
        self.state = MacState()
        lo, hi = params.frame_interval
        self.frame_due = float(rng.uniform(0, hi)) if first_frame is None else first_frame
        self._trace = trace
        self._noisy_tx = False

    def emit(self, t: float, event: str, **detail) -> None:
        if self._trace is not None:
            self._trace({"t": round(t, 6), "node": self.id, "event": event, "detail": detail})

    def tick(self, now: float, sense: Callable[[], ChannelAssessment]) -> Action:
        st = self.state
        if st.phase == Phase.IDLE:
            if now < self.frame_due:
                return Wait(self.frame_due)
            self.state = st = replace(st, phase=Phase.SCANNING)
        if st.phase == Phase.BACKOFF:
            if now < st.backoff_until:
                return Wait(st.backoff_until)
            self.state = st = replace(st, phase=Phase.SCANNING)
        if st.phase == Phase.TRANSMITTING:
            raise RuntimeError(f"node {self.id} ticked while transmitting")

        a = sense()
        self.emit(now, "scan", verdicts=list(a.verdicts))
        ch = choose_channel(a, self.rng, self.params.channels)
        noisy = False
        if ch is None:
            noisy_chs = [c for c in a.noisy() if c in self.params.channels]
            if not noisy_chs:
                return Wait(now + self.params.slot)
            if st.unit_count < self.params.max_units:
                self.state = on_noisy_channel(st, self.params)
                self.emit(now, "noisy", unit_count=self.state.unit_count)
                return Rescan()
            # already at the unit cap: send anyway
            ch = int(noisy_chs[self.rng.integers(len(noisy_chs))])
            noisy = True
        self.state = replace(self.state, phase=Phase.TRANSMITTING, current_channel=ch)
        self._noisy_tx = noisy
        self.emit(now, "tx_start", channel=ch, units=self.state.unit_count)
        return Transmit(ch, self.state.unit_count, noisy)

    def transmission_done(self, now: float) -> None:
        self.state = on_success(self.state, clean=not self._noisy_tx, params=self.params)
        self.emit(now, "tx_done", unit_count=self.state.unit_count)
        lo, hi = self.params.frame_interval
        self.frame_due = max(self.frame_due + float(self.rng.uniform(lo, hi)), now)

    def collision(self, now: float) -> None:
        self.state = on_collision(self.state, self.rng, now, self.params)
        self.emit(now, "collision", collision_count=self.state.collision_count)
        self.emit(now, "backoff", until=round(self.state.backoff_until, 6))

    def next_wakeup(self, now: float) -> float:
        st = self.state
        if st.phase == Phase.IDLE:
            return max(now, self.frame_due)
        if st.phase == Phase.BACKOFF:
            return max(now, st.backoff_until)
        return now


def write_trace(path: str, events: Sequence[dict]) -> None:
    with open(path, "w") as f:
        for e in events:
            f.write(json.dumps(e) + "\n")


def sender_tick(node: MacNode, now: float, sense: Callable[[], ChannelAssessment]) -> Action:
    """Advance ``node`` by one decision; see ``MacNode.tick``."""
    return node.tick(now, sense)
