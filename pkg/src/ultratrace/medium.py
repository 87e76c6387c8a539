"""Simulated acoustic scene.

Free-field 1/d pressure law from a 0.3 m reference, fixed dB losses for
fabric over either endpoint and for every wall the direct path crosses,
integer-sample propagation delay at 343 m/s, plus ambient and point noise.

Noise is generated on a fixed grid of 32768-sample blocks seeded from
``(rng_seed, stream, block)``, so any window of a receiver's input is a
slice of one continuous, reproducible signal no matter how it is requested.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .modem import SAMPLE_RATE

log = logging.getLogger(__name__)

D0 = 0.3
SPEED_OF_SOUND = 343.0
DEFAULT_WALL_LOSS_DB = 40.0
DEFAULT_FABRIC_DB = 6.0
BLOCK = 32768

Point = Tuple[float, float]


@dataclass
class NodeConfig:
    id: int
    position: Point
    volume: float = 1.0
    occlusion_db: float = 0.0
    rx_noise_floor: float = 0.0

    def __post_init__(self):
        self.position = tuple(float(v) for v in self.position)
        if not 0.0 <= self.volume <= 1.0:
            raise ValueError(f"node {self.id}: volume must be in [0, 1]")
        if self.occlusion_db < 0 or self.rx_noise_floor < 0:
            raise ValueError(f"node {self.id}: losses and noise floor must be >= 0")
        if not all(math.isfinite(v) for v in self.position):
            raise ValueError(f"node {self.id}: non-finite position")


@dataclass
class Wall:
    segment: Tuple[Point, Point]
    loss_db: float = DEFAULT_WALL_LOSS_DB

    def __post_init__(self):
        self.segment = tuple(tuple(float(v) for v in p) for p in self.segment)
        if self.loss_db < 0:
            raise ValueError("wall loss must be >= 0")


@dataclass
class NoiseSource:
    position: Point
    level: float
    kind: str = "white"
    low: float = 20.0
    high: float = 24000.0

    def __post_init__(self):
        self.position = tuple(float(v) for v in self.position)
        if self.kind not in ("white", "band_limited"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.level < 0:
            raise ValueError("noise level must be >= 0")
        if not 20.0 <= self.low < self.high <= 24000.0:
            raise ValueError("noise band must lie within [20, 24000] Hz")


@dataclass
class Scene:
    nodes: List[NodeConfig]
    walls: List[Wall] = field(default_factory=list)
    noise_sources: List[NoiseSource] = field(default_factory=list)
    ambient_sigma: float = 0.0

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        if self.ambient_sigma < 0:
            raise ValueError("ambient_sigma must be >= 0")

    def node(self, node_id: int) -> NodeConfig:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"no node with id {node_id}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            nodes=[NodeConfig(**n) for n in d.get("nodes", [])],
            walls=[Wall(**w) for w in d.get("walls", [])],
            noise_sources=[NoiseSource(**s) for s in d.get("noise_sources", [])],
            ambient_sigma=float(d.get("ambient_sigma", 0.0)),
        )

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path: str) -> "Scene":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def db_to_gain(db: float) -> float:
    return 10.0 ** (-db / 20.0)


def _orient(a: Point, b: Point, c: Point) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if d1 == 0 and d2 == 0:
        return False  # collinear: the path runs along the wall, not through it
    return d1 * d2 <= 0 and d3 * d4 <= 0


def wall_loss_db(a: Point, b: Point, walls: Iterable[Wall]) -> float:
    return sum(w.loss_db for w in walls if segments_cross(a, b, *w.segment))


def distance(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def path_gain(tx: NodeConfig, rx: NodeConfig, walls: Sequence[Wall] = (), d0: float = D0) -> float:
    """Linear pressure gain from ``tx`` to ``rx``."""
    d = distance(tx.position, rx.position)
    loss = tx.occlusion_db + rx.occlusion_db + wall_loss_db(tx.position, rx.position, walls)
    return d0 / max(d, d0) * db_to_gain(loss)


def delay_samples(a: Point, b: Point) -> int:
    return int(round(SAMPLE_RATE * distance(a, b) / SPEED_OF_SOUND))


class Transmission(NamedTuple):
    tx_id: int
    start: int
    samples: np.ndarray


class Medium:
    """A scene plus a reproducible noise field; renders what a node hears."""

    def __init__(self, scene: Scene, rng_seed: int = 0, d0: float = D0):
        self.scene = scene
        self.seed = int(rng_seed)
        self.d0 = d0
        self.clipped = 0
        self._nodes = {n.id: n for n in scene.nodes}
        self._gain = {}
        self._blocks = {}
        self._segments = {}

    # -- geometry ---------------------------------------------------------

    def gain(self, tx_id: int, rx_id: int) -> float:
        key = (tx_id, rx_id)
        if key not in self._gain:
            self._gain[key] = path_gain(self._nodes[tx_id], self._nodes[rx_id], self.scene.walls, self.d0)
        return self._gain[key]

    def delay(self, tx_id: int, rx_id: int) -> int:
        return delay_samples(self._nodes[tx_id].position, self._nodes[rx_id].position)

    def _source_path(self, src: NoiseSource, rx: NodeConfig) -> Tuple[float, int]:
        d = distance(src.position, rx.position)
        loss = rx.occlusion_db + wall_loss_db(src.position, rx.position, self.scene.walls)
        return self.d0 / max(d, self.d0) * db_to_gain(loss), delay_samples(src.position, rx.position)

    # -- noise field ------------------------------------------------------

    def _white_block(self, stream: int, idx: int, block: int) -> np.ndarray:
        key = (stream, idx, block)
        buf = self._blocks.get(key)
        if buf is None:
            rng = np.random.default_rng([self.seed, stream, idx, block])
            buf = rng.standard_normal(BLOCK)
            if len(self._blocks) > 4096:
                self._blocks.clear()
            self._blocks[key] = buf
        return buf

    def _band_segment(self, src_idx: int, seg: int) -> np.ndarray:
        # 2*BLOCK samples of unit-variance band-limited noise, sine-windowed
        key = (src_idx, seg)
        buf = self._segments.get(key)
        if buf is None:
            src = self.scene.noise_sources[src_idx]
            n = 2 * BLOCK
            # seg starts at -1 (the segment overlapping block 0 from the left)
            rng = np.random.default_rng([self.seed, 2, src_idx, seg + 1])
            spec = np.fft.rfft(rng.standard_normal(n))
            f = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
            keep = (f >= src.low) & (f <= src.high)
            spec[~keep] = 0
            frac = max(keep.mean(), 1e-12)
            buf = np.fft.irfft(spec, n) / math.sqrt(frac)
            buf *= np.sin(np.pi * (np.arange(n) + 0.5) / n)
            if len(self._segments) > 2048:
                self._segments.clear()
            self._segments[key] = buf
        return buf

    def _stream(self, gen, start: int, stop: int) -> np.ndarray:
        """Samples [start, stop) of a block-structured stream; negative times
        are silence."""
        out = np.zeros(stop - start)
        lo = max(start, 0)
        if lo >= stop:
            return out
        for b in range(lo // BLOCK, (stop - 1) // BLOCK + 1):
            blk = gen(b)
            a = max(lo, b * BLOCK)
            z = min(stop, (b + 1) * BLOCK)
            out[a - start:z - start] = blk[a - b * BLOCK:z - b * BLOCK]
        return out

    def source_signal(self, src_idx: int, start: int, stop: int) -> np.ndarray:
        src = self.scene.noise_sources[src_idx]
        if src.kind == "white":
            return src.level * self._stream(lambda b: self._white_block(1, src_idx, b), start, stop)

        def block(b):
            # overlap-add of sine-windowed segments: sin^2 + cos^2 keeps the
            # variance flat across block joins
            return self._band_segment(src_idx, b)[:BLOCK] + self._band_segment(src_idx, b - 1)[BLOCK:]

        return src.level * self._stream(block, start, stop)

    def noise(self, rx_id: int, start: int, stop: int) -> np.ndarray:
        rx = self._nodes[rx_id]
        # ambient sound reaches the microphone through the same fabric as
        # the signal; the receiver's electronic floor does not
        amb = self.scene.ambient_sigma * db_to_gain(rx.occlusion_db)
        sigma = math.hypot(amb, rx.rx_noise_floor)
        out = np.zeros(stop - start)
        if sigma > 0:
            out += sigma * self._stream(lambda b: self._white_block(0, rx_id, b), start, stop)
        for i, src in enumerate(self.scene.noise_sources):
            if src.level == 0:
                continue
            g, dly = self._source_path(src, rx)
            out += g * self.source_signal(i, start - dly, stop - dly)
        return out

    # -- rendering --------------------------------------------------------

    def render(self, rx_id: int, transmissions: Sequence, start: int, stop: int,
               noise: bool = True, saturate: bool = True, exclude: Optional[int] = None) -> np.ndarray:
        """Samples [start, stop) as heard at ``rx_id``."""
        out = self.noise(rx_id, start, stop) if noise else np.zeros(stop - start)
        for t in transmissions:
            tx_id, t0, samples = t[0], t[1], t[2]
            if tx_id == rx_id or tx_id == exclude:
                continue
            g = self.gain(tx_id, rx_id)
            if g == 0:
                continue
            a = t0 + self.delay(tx_id, rx_id)
            lo, hi = max(a, start), min(a + len(samples), stop)
            if lo < hi:
                out[lo - start:hi - start] += g * samples[lo - a:hi - a]
        if saturate:
            over = np.count_nonzero(np.abs(out) > 1.0)
            if over:
                self.clipped += int(over)
                log.debug("rx %d: saturated %d samples", rx_id, over)
                np.clip(out, -1.0, 1.0, out=out)
        return out


def render_at_receiver(scene: Scene, rx_id: int, transmissions: Sequence, duration_samples: int,
                       rng_seed: int = 0, start_sample: int = 0, saturate: bool = True) -> np.ndarray:
    """Everything ``rx_id`` hears over ``duration_samples`` from ``start_sample``."""
    medium = Medium(scene, rng_seed)
    return medium.render(rx_id, transmissions, start_sample, start_sample + duration_samples,
                         saturate=saturate)
