"""Ultrasonic multi-tone modem.

Each channel owns 54 tones spaced 46.875 Hz apart starting at 17.5 kHz
(channel 1 follows channel 0). Tone indices 0..20 form the low group,
21..41 the high group and 42..53 are a guard band whose median magnitude
serves as the noise floor. A chunk plays one tone from each group for
``chunk_duration`` samples.

The receiver never runs a full FFT over the band: it evaluates the
Hann-windowed DFT exactly at the tone frequencies (a bank of Goertzel
filters, computed as one matrix product per batch of windows).
"""

from __future__ import annotations

import functools
import logging
import wave
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .codec import ERASED_HIGH, ERASED_LOW, HEAD, N_SYMBOLS, TAIL, Chunk

log = logging.getLogger(__name__)

SAMPLE_RATE = 48000
LOW, HIGH = "low", "high"


@dataclass(frozen=True)
class TonePlan:
    base_freq: float = 17500.0
    spacing: float = 46.875
    channels: int = 2
    freqs_per_channel: int = 54
    group_size: int = 21

    def frequency(self, channel: int, index: int) -> float:
        if not 0 <= channel < self.channels:
            raise ValueError(f"channel must be in [0, {self.channels - 1}]")
        if not 0 <= index < self.freqs_per_channel:
            raise ValueError(f"tone index {index} out of range")
        return self.base_freq + (self.freqs_per_channel * channel + index) * self.spacing

    def channel_freqs(self, channel: int) -> np.ndarray:
        return np.array([self.frequency(channel, k) for k in range(self.freqs_per_channel)])

    @property
    def guard(self) -> range:
        return range(2 * self.group_size, self.freqs_per_channel)


DEFAULT_PLAN = TonePlan()


@dataclass(frozen=True)
class ModemParams:
    chunk_duration: int = 4096
    fft_size: int = 2048
    ifft_size: int = 32768
    ramp: int = 256
    detect_factor: float = 4.0
    head_hop: int = 256
    amplitude: float = 0.45
    max_frame_chunks: int = 122
    lost_chunks: int = 3
    plan: TonePlan = field(default=DEFAULT_PLAN)

    def __post_init__(self):
        if self.chunk_duration < 2 * self.fft_size:
            raise ValueError("chunk_duration must be at least twice fft_size")
        if self.detect_factor <= 1:
            raise ValueError("detect_factor must be > 1")
        if 2 * self.ramp > self.chunk_duration:
            raise ValueError("ramps longer than the chunk")


DEFAULT_PARAMS = ModemParams()


def symbol_frequency(channel: int, group: str, symbol: int, plan: TonePlan = DEFAULT_PLAN) -> float:
    """Tone frequency for a symbol (0..15, HEAD or TAIL) in one group."""
    if not 0 <= symbol < N_SYMBOLS:
        raise ValueError(f"unknown symbol {symbol}")
    if group not in (LOW, HIGH):
        raise ValueError("group must be 'low' or 'high'")
    index = symbol + (plan.group_size if group == HIGH else 0)
    return plan.frequency(channel, index)


# --------------------------------------------------------------------------
# synthesis

@functools.lru_cache(maxsize=8)
def _envelope(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    if ramp:
        r = 0.5 - 0.5 * np.cos(np.pi * (np.arange(ramp) + 0.5) / ramp)
        env[:ramp] = r
        env[-ramp:] = r[::-1]
    return env


@functools.lru_cache(maxsize=8)
def _tone_table(channel: int, params: ModemParams) -> np.ndarray:
    # (54, chunk_duration) unit-amplitude cosines, enveloped
    n = np.arange(params.chunk_duration)
    f = params.plan.channel_freqs(channel)
    table = np.cos(2 * np.pi * np.outer(f, n) / SAMPLE_RATE)
    return table * _envelope(params.chunk_duration, params.ramp)


@functools.lru_cache(maxsize=8)
def _ifft_tone_table(channel: int, params: ModemParams) -> np.ndarray:
    # same table built the way the phone app does it: one active bin per
    # tone in a 2^15 spectrum, inverse transform, truncate to the chunk
    N = params.ifft_size
    res = SAMPLE_RATE / N
    bins = np.rint(params.plan.channel_freqs(channel) / res).astype(int)
    spec = np.zeros((len(bins), N // 2 + 1), dtype=complex)
    spec[np.arange(len(bins)), bins] = N / 2
    table = np.fft.irfft(spec, n=N, axis=1)[:, :params.chunk_duration]
    return table * _envelope(params.chunk_duration, params.ramp)


def synthesize_frame(chunks: Sequence[Chunk], channel: int, volume: float,
                     params: ModemParams = DEFAULT_PARAMS, backend: str = "direct") -> np.ndarray:
    """Render chunks as audio; one chunk per ``chunk_duration`` samples."""
    if not 0.0 <= volume <= 1.0:
        raise ValueError("volume must be in [0, 1]")
    if not chunks:
        return np.zeros(0)
    if backend == "direct":
        table = _tone_table(channel, params)
    elif backend == "ifft":
        table = _ifft_tone_table(channel, params)
    else:
        raise ValueError(f"unknown synthesis backend {backend!r}")
    g = params.plan.group_size
    lo = np.fromiter((c.low for c in chunks), dtype=int, count=len(chunks))
    hi = np.fromiter((c.high for c in chunks), dtype=int, count=len(chunks)) + g
    out = (table[lo] + table[hi]) * (params.amplitude * volume)
    return out.ravel()


# --------------------------------------------------------------------------
# analysis

@functools.lru_cache(maxsize=16)
def _analysis_matrix(channel: int, params: ModemParams) -> np.ndarray:
    # Hann-weighted DFT at each tone, scaled so a tone of amplitude A reads A
    n = np.arange(params.fft_size)
    # periodic Hann: tones two bins apart land on each other's nulls
    w = 0.5 - 0.5 * np.cos(2 * np.pi * n / params.fft_size)
    f = params.plan.channel_freqs(channel)
    basis = np.exp(-2j * np.pi * np.outer(n, f) / SAMPLE_RATE) * w[:, None]
    return basis * (2.0 / w.sum())


def tone_magnitudes(windows: np.ndarray, channel: int, params: ModemParams = DEFAULT_PARAMS) -> np.ndarray:
    """Magnitudes of the channel's 54 tones for each row of ``windows``."""
    return np.abs(np.asarray(windows) @ _analysis_matrix(channel, params))


def goertzel(x: np.ndarray, freq: float, sample_rate: int = SAMPLE_RATE) -> complex:
    """Single-frequency DFT of ``x`` by the Goertzel recursion."""
    w = 2 * np.pi * freq / sample_rate
    coeff = 2 * np.cos(w)
    s1 = s2 = 0.0
    for v in x:
        s1, s2 = v + coeff * s1 - s2, s1
    # phase reference: first sample at n = 0
    return (s1 - s2 * np.exp(-1j * w)) * np.exp(-1j * w * (len(x) - 1))


def guard_floor(mags: np.ndarray, params: ModemParams = DEFAULT_PARAMS) -> np.ndarray:
    return np.median(mags[..., list(params.plan.guard)], axis=-1)


def _windows(buf: np.ndarray, starts: np.ndarray, size: int) -> np.ndarray:
    idx = starts[:, None] + np.arange(size)
    return buf[idx]


def detect_head(buf: np.ndarray, channel: int, from_sample: int = 0,
                params: ModemParams = DEFAULT_PARAMS, to_sample: Optional[int] = None) -> Optional[int]:
    """Start sample of the first Head chunk at or after ``from_sample``.

    Windows hop by ``head_hop``. A window triggers when both Head tones exceed
    ``detect_factor`` times the guard-band median and each is the strongest
    symbol tone of its group. The chunk boundary is then
    placed from the centre of the plateau where the Head tones stay strong.
    Returns None if no Head is found before ``to_sample``.
    """
    buf = np.asarray(buf, dtype=float)
    size, hop = params.fft_size, params.head_hop
    last = len(buf) - size
    if to_sample is not None:
        last = min(last, to_sample)
    if from_sample > last:
        return None
    g = params.plan.group_size
    cols = list(range(N_SYMBOLS)) + list(range(g, g + N_SYMBOLS)) + list(params.plan.guard)
    mat = _analysis_matrix(channel, params)[:, cols]
    head_cols = [HEAD, N_SYMBOLS + HEAD]
    batch = 64
    span = params.chunk_duration // hop + 8
    pos = from_sample
    while pos <= last:
        starts = np.arange(pos, min(pos + batch * hop, last + 1), hop)
        mags = np.abs(_windows(buf, starts, size) @ mat)
        head = np.minimum(mags[:, HEAD], mags[:, N_SYMBOLS + HEAD])
        floor = np.median(mags[:, 2 * N_SYMBOLS:], axis=1)
        # both Head tones must also win their group, as the chunk decision
        # would; leakage from a neighbouring Tail tone does not
        wins = ((mags[:, :N_SYMBOLS].argmax(axis=1) == HEAD)
                & (mags[:, N_SYMBOLS:2 * N_SYMBOLS].argmax(axis=1) == HEAD))
        hit = np.nonzero(wins & (head > params.detect_factor * floor))[0]
        if len(hit):
            first = starts[hit[0]]
            # look one chunk ahead for the plateau
            ahead = np.arange(first, min(first + span * hop, len(buf) - size) + 1, hop)
            m = np.abs(_windows(buf, ahead, size) @ mat[:, head_cols]).min(axis=1)
            peak = int(np.argmax(m))
            strong = m >= 0.8 * m[peak]
            lo = peak
            while lo > 0 and strong[lo - 1]:
                lo -= 1
            hi = peak
            while hi + 1 < len(m) and strong[hi + 1]:
                hi += 1
            centre = (ahead[lo] + ahead[hi]) // 2
            return int(centre - (params.chunk_duration - size) // 2)
        pos = starts[-1] + hop
    return None


def _decide(mags: np.ndarray, params: ModemParams) -> List[Chunk]:
    g = params.plan.group_size
    floor = guard_floor(mags, params) * params.detect_factor
    low = mags[:, :N_SYMBOLS]
    high = mags[:, g:g + N_SYMBOLS]
    lo_sym = low.argmax(axis=1)
    hi_sym = high.argmax(axis=1)
    lo_ok = low.max(axis=1) > floor
    hi_ok = high.max(axis=1) > floor
    out = []
    for ls, hs, lok, hok in zip(lo_sym, hi_sym, lo_ok, hi_ok):
        erased = (0 if lok else ERASED_LOW) | (0 if hok else ERASED_HIGH)
        out.append(Chunk(int(ls) if lok else 0, int(hs) if hok else 0, erased))
    return out


def decode_chunks(buf: np.ndarray, start: int, count: int, channel: int,
                  params: ModemParams = DEFAULT_PARAMS) -> List[Chunk]:
    """Decide ``count`` chunks on the grid starting at sample ``start``."""
    buf = np.asarray(buf, dtype=float)
    off = (params.chunk_duration - params.fft_size) // 2
    starts = start + off + params.chunk_duration * np.arange(count)
    starts = starts[(starts >= 0) & (starts + params.fft_size <= len(buf))]
    if not len(starts):
        return []
    mags = tone_magnitudes(_windows(buf, starts, params.fft_size), channel, params)
    return _decide(mags, params)


def _is_tail(c: Chunk) -> bool:
    low_ok = c.low == TAIL or c.erased & ERASED_LOW
    high_ok = c.high == TAIL or c.erased & ERASED_HIGH
    return bool(low_ok and high_ok and TAIL in (c.low, c.high))


def demodulate(buf: np.ndarray, channel: int, params: ModemParams = DEFAULT_PARAMS,
               from_sample: int = 0, max_frames: Optional[int] = None,
               search_to: Optional[int] = None) -> List[List[Chunk]]:
    """Recover every frame on ``channel``: Head lock, then one chunk per
    chunk period until Tail, signal loss or ``max_frame_chunks``."""
    buf = np.asarray(buf, dtype=float)
    frames = []
    pos = from_sample
    while max_frames is None or len(frames) < max_frames:
        start = detect_head(buf, channel, pos, params, to_sample=search_to)
        if start is None:
            break
        decoded = decode_chunks(buf, start, params.max_frame_chunks, channel, params)
        frame = []
        lost = 0
        for c in decoded:
            frame.append(c)
            if len(frame) > 1 and _is_tail(c):
                break
            lost = lost + 1 if c.erased == (ERASED_LOW | ERASED_HIGH) else 0
            if lost >= params.lost_chunks:
                del frame[-lost:]
                break
        if not frame:
            break
        frames.append(frame)
        pos = start + max(len(frame), 1) * params.chunk_duration
    return frames


def band_energy(buf: np.ndarray, channel: int, start: int = 0, window: int = 2048,
                plan: TonePlan = DEFAULT_PLAN) -> float:
    """Hann-windowed spectral energy inside the channel's 54-tone band,
    normalised by the window length."""
    seg = np.asarray(buf, dtype=float)[start:start + window]
    if len(seg) < window:
        raise ValueError("window runs past the end of the buffer")
    spec = np.fft.rfft(seg * np.hanning(window))
    freqs = np.fft.rfftfreq(window, 1.0 / SAMPLE_RATE)
    f = plan.channel_freqs(channel)
    half = plan.spacing / 2
    sel = (freqs >= f[0] - half) & (freqs <= f[-1] + half)
    return float(np.sum(np.abs(spec[sel]) ** 2) / window)


# --------------------------------------------------------------------------
# WAV I/O: mono, 48 kHz, 16-bit signed little-endian PCM

def write_wav(path: str, samples: np.ndarray) -> int:
    """Write samples; returns how many had to be clipped into [-1, 1]."""
    x = np.asarray(samples, dtype=float)
    clipped = int(np.count_nonzero(np.abs(x) > 1.0))
    if clipped:
        log.warning("clipping %d samples while writing %s", clipped, path)
    pcm = np.rint(np.clip(x, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())
    return clipped


def read_wav(path: str) -> np.ndarray:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono 16-bit PCM")
        if w.getframerate() != SAMPLE_RATE:
            raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz, got {w.getframerate()}")
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(float) / 32767
