"""Multi-node contact-tracing simulator.

A run has two phases. The MAC phase advances every node on one clock in
2048-sample quanta: nodes sense the medium at their own position, start
frames, and get collision feedback. Frames are final once that phase ends,
so the reception phase then demodulates every (frame, receiver) pair from
the rendered medium and records what each node decoded.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Dict, List, Optional, Sequence

import numpy as np

from .codec import chunks_to_payload, frame_to_chunks, make_frame
from .crypto_ids import ContactLog, IdentitySchedule, Seed
from .mac import MacNode, MacParams, Rescan, Transmit, Wait, assess_channels
from .medium import Medium, NodeConfig, NoiseSource, Scene, Wall
from .modem import (DEFAULT_PARAMS, SAMPLE_RATE, ModemParams, band_energy, demodulate, detect_head,
                    synthesize_frame)

log = logging.getLogger(__name__)

QUANTUM = 2048
FEET = 0.3048
MAX_VOLUME_LEVEL = 25
DISK_RADIUS_M = 10.0


@dataclass
class ScenarioConfig:
    scene: Scene
    duration: float = 600.0
    rpid_rotation: float = 600.0
    frame_interval: tuple = (50.0, 70.0)
    repetitions: int = 10
    rng_seed: int = 0
    volume_level: Optional[int] = MAX_VOLUME_LEVEL
    modem: ModemParams = DEFAULT_PARAMS
    mac: MacParams = field(default_factory=MacParams)
    start_time: float = 0.0
    decode_all: bool = True

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.volume_level is not None and not 0 <= self.volume_level <= MAX_VOLUME_LEVEL:
            raise ValueError(f"volume_level must be in [0, {MAX_VOLUME_LEVEL}]")


@dataclass
class MetricsReport:
    node_ids: List[int]
    rates: List[float]
    delivery: List[List[int]]
    transmissions: List[dict] = field(default_factory=list)
    events: List[dict] = field(default_factory=list)
    phantoms: int = 0
    clipped_samples: int = 0
    logs: Dict[int, ContactLog] = field(default_factory=dict, repr=False)
    identities: Dict[int, IdentitySchedule] = field(default_factory=dict, repr=False)

    @property
    def r(self) -> float:
        return float(np.mean(self.rates))

    def heard(self, rx: int, tx: int) -> bool:
        i, j = self.node_ids.index(rx), self.node_ids.index(tx)
        return self.delivery[i][j] > 0

    def to_dict(self) -> dict:
        return {"node_ids": self.node_ids, "r": self.r, "rates": self.rates,
                "delivery": self.delivery, "phantoms": self.phantoms,
                "clipped_samples": self.clipped_samples,
                "transmissions": self.transmissions}


class _Tx:
    __slots__ = ("node", "channel", "start", "end", "samples", "rpid", "units", "energy", "collided")

    def __init__(self, node, channel, start, samples, rpid, units, energy):
        self.node = node
        self.channel = channel
        self.start = start
        self.end = start + len(samples)
        self.samples = samples
        self.rpid = rpid
        self.units = units
        self.energy = energy
        self.collided = False

    def as_tuple(self):
        return (self.node, self.start, self.samples[:self.end - self.start])


def _grid(seconds: float) -> int:
    return int(math.ceil(seconds * SAMPLE_RATE / QUANTUM - 1e-9)) * QUANTUM


def _with_volume(scene: Scene, volume: float) -> Scene:
    s = copy.deepcopy(scene)
    for n in s.nodes:
        n.volume = volume
    return s


def run_scenario(config: ScenarioConfig) -> MetricsReport:
    """Simulate one repetition of ``config`` with seed ``config.rng_seed``."""
    scene = config.scene
    if len(scene.nodes) < 2:
        raise ValueError("tracing success rate needs at least 2 nodes")
    if config.volume_level is not None:
        scene = _with_volume(scene, config.volume_level / MAX_VOLUME_LEVEL)
    seed = int(config.rng_seed)
    medium = Medium(scene, seed)
    mac_params = replace(config.mac, frame_interval=tuple(config.frame_interval))
    modem = config.modem
    ids = [n.id for n in scene.nodes]
    volumes = {n.id: n.volume for n in scene.nodes}

    events: List[dict] = []
    nodes, identities = {}, {}
    for nid in ids:
        rng = np.random.default_rng([seed, 7, nid])
        identities[nid] = IdentitySchedule(Seed(rng.bytes(32)))
        nodes[nid] = MacNode(nid, rng, mac_params, trace=events.append)

    T = int(round(config.duration * SAMPLE_RATE))
    wake = {nid: _grid(nodes[nid].next_wakeup(0.0)) for nid in ids}
    on_air: Dict[int, _Tx] = {}
    active: List[_Tx] = []
    txlog: List[_Tx] = []

    while True:
        ends = [tx.end for tx in active]
        wakes = [wake[nid] for nid in ids if nid not in on_air]
        t = min(ends + wakes) if ends or wakes else T
        if t >= T:
            break
        now = t / SAMPLE_RATE

        for tx in [tx for tx in active if tx.end <= t]:
            active.remove(tx)
            if on_air.get(tx.node) is tx:
                del on_air[tx.node]
                nodes[tx.node].transmission_done(now)
                wake[tx.node] = max(_grid(nodes[tx.node].next_wakeup(now)), t + QUANTUM)

        acting = [nid for nid in ids if nid not in on_air and wake[nid] <= t]
        if not acting:
            continue

        heard_now = [tx.as_tuple() for tx in active]
        started = []
        for nid in acting:
            def sense(nid=nid):
                win = medium.render(nid, heard_now, t - QUANTUM, t, exclude=nid)
                return assess_channels(win, mac_params, modem)

            act = nodes[nid].tick(now, sense)
            if isinstance(act, Transmit):
                rpid = identities[nid].rpid_at(config.start_time + now, config.rpid_rotation)
                chunks = frame_to_chunks(make_frame(rpid.bytes, act.units))
                samples = synthesize_frame(chunks, act.channel, volumes[nid], modem)
                energy = band_energy(samples, act.channel, modem.chunk_duration // 4, modem.fft_size,
                                     modem.plan)
                tx = _Tx(nid, act.channel, t, samples, rpid.bytes, act.units, energy)
                active.append(tx)
                txlog.append(tx)
                on_air[nid] = tx
                started.append(tx)
            elif isinstance(act, Wait):
                wake[nid] = max(_grid(act.until), t + QUANTUM)
            elif isinstance(act, Rescan):
                wake[nid] = t + QUANTUM

        # collision oracle: foreign same-channel energy at a sender, from the
        # moment two frames overlap
        for new in started:
            for other in list(active):
                if other is new or other.channel != new.channel:
                    continue
                for a, b in ((new, other), (other, new)):
                    if a.collided or on_air.get(a.node) is not a:
                        continue
                    if b.energy * medium.gain(b.node, a.node) ** 2 > mac_params.busy_threshold:
                        a.collided = True
                        a.end = min(a.end, t + QUANTUM)
                        del on_air[a.node]
                        nodes[a.node].collision(now)
                        wake[a.node] = max(_grid(nodes[a.node].next_wakeup(now)), a.end)

    for tx in txlog:
        tx.end = min(tx.end, T)

    report = _receive(config, medium, ids, txlog, identities)
    report.events = events
    report.clipped_samples = medium.clipped
    return report


def _receive(config, medium, ids, txlog, identities) -> MetricsReport:
    modem = config.modem
    chunk = modem.chunk_duration
    lead = 2 * QUANTUM
    owner = {tx.rpid: tx.node for tx in txlog}
    idx = {nid: i for i, nid in enumerate(ids)}
    delivery = [[0] * len(ids) for _ in ids]
    logs = {nid: ContactLog() for nid in ids}
    phantoms = 0
    airs = [tx.as_tuple() for tx in txlog]
    max_delay = max((medium.delay(a, b) for a in ids for b in ids if a != b), default=0)

    def overlapping(a, b):
        return [x for x, tx in zip(airs, txlog)
                if tx.start - max_delay < b and tx.end + max_delay > a and tx.end > tx.start]

    for tx in sorted(txlog, key=lambda x: x.start):
        if tx.end <= tx.start:
            continue
        for rx in ids:
            if rx == tx.node:
                continue
            if not config.decode_all and delivery[idx[rx]][idx[tx.node]]:
                continue
            arr = tx.start + medium.delay(tx.node, rx)
            a = arr - lead
            b = arr + 4 * chunk
            probe = medium.render(rx, overlapping(a, b), a, b)
            if detect_head(probe, tx.channel, 0, modem, to_sample=lead + chunk) is None:
                continue
            b = arr + (tx.end - tx.start) + lead
            buf = medium.render(rx, overlapping(a, b), a, b)
            frames = demodulate(buf, tx.channel, modem, max_frames=1, search_to=lead + chunk)
            if not frames:
                continue
            payload = chunks_to_payload(frames[0])
            if payload is None:
                continue
            src = owner.get(payload)
            if src is None:
                phantoms += 1
                log.warning("phantom decode at node %d: %s", rx, payload.hex())
                continue
            delivery[idx[rx]][idx[src]] += 1
            logs[rx].add(payload, config.start_time + arr / SAMPLE_RATE, tx.channel)

    n = len(ids)
    rates = [sum(1 for j in range(n) if j != i and delivery[i][j] > 0) / (n - 1) for i in range(n)]
    transmissions = [{"node": tx.node, "start": tx.start / SAMPLE_RATE, "end": tx.end / SAMPLE_RATE,
                      "channel": tx.channel, "units": tx.units, "rpid": tx.rpid.hex(),
                      "collided": tx.collided} for tx in txlog]
    return MetricsReport(ids, rates, delivery, transmissions, phantoms=phantoms,
                         logs=logs, identities=identities)


# --------------------------------------------------------------------------
# presets and scene layouts

@dataclass
class Preset:
    name: str
    ambient_sigma: float
    occlusion_db: float = 0.0
    rx_noise_floor: float = 0.0
    noise_sources: List[dict] = field(default_factory=list)
    detect_factor: float = 4.0
    busy_threshold: float = 2.0
    noise_threshold: float = 0.02

    def scene(self, side_m: float = 1.0, n: int = 4) -> Scene:
        """``n`` nodes on a square (n=4) or a line, noise at the centre."""
        if n == 4:
            pos = [(0.0, 0.0), (side_m, 0.0), (side_m, side_m), (0.0, side_m)]
            centre = (side_m / 2, side_m / 2)
        else:
            pos = [(i * side_m, 0.0) for i in range(n)]
            centre = ((n - 1) * side_m / 2, 0.0)
        nodes = [NodeConfig(i, p, 1.0, self.occlusion_db, self.rx_noise_floor) for i, p in enumerate(pos)]
        sources = []
        for s in self.noise_sources:
            off = s.get("offset", (0.0, 0.0))
            sources.append(NoiseSource((centre[0] + off[0] * side_m, centre[1] + off[1] * side_m),
                                       s["level"], s.get("kind", "band_limited"),
                                       s.get("low", 20.0), s.get("high", 24000.0)))
        return Scene(nodes, [], sources, self.ambient_sigma)

    def modem(self) -> ModemParams:
        return replace(DEFAULT_PARAMS, detect_factor=self.detect_factor)

    def mac(self) -> MacParams:
        return MacParams(busy_threshold=self.busy_threshold, noise_threshold=self.noise_threshold)

    def config(self, distance_ft: float = 3.0, seed: int = 0, volume_level: int = MAX_VOLUME_LEVEL,
               **kw) -> ScenarioConfig:
        return ScenarioConfig(scene=self.scene(distance_ft * FEET), rng_seed=seed,
                              volume_level=volume_level, modem=self.modem(), mac=self.mac(), **kw)


def load_presets(path: Optional[str] = None) -> Dict[str, Preset]:
    if path is None:
        text = resources.files("ultratrace").joinpath("presets.json").read_text()
    else:
        with open(path) as f:
            text = f.read()
    data = json.loads(text)
    return {name: Preset(name=name, **{k: v for k, v in d.items() if not k.startswith("_")})
            for name, d in data["presets"].items()}


def get_preset(name: str, path: Optional[str] = None) -> Preset:
    presets = load_presets(path)
    if name not in presets:
        raise KeyError(f"unknown preset {name!r}; have {sorted(presets)}")
    return presets[name]


def scale_scene(scene: Scene, factor: float) -> Scene:
    s = copy.deepcopy(scene)
    for n in s.nodes:
        n.position = (n.position[0] * factor, n.position[1] * factor)
    for src in s.noise_sources:
        src.position = (src.position[0] * factor, src.position[1] * factor)
    for w in s.walls:
        w.segment = tuple((p[0] * factor, p[1] * factor) for p in w.segment)
    return s


# --------------------------------------------------------------------------
# experiments

@dataclass
class CurvePoint:
    distance_ft: float
    mean_r: float
    stddev: float
    n_reps: int
    rs: List[float] = field(default_factory=list, repr=False)


def rep_seed(base_seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), rep]).generate_state(1)[0])


def run_repetitions(config: ScenarioConfig) -> List[MetricsReport]:
    return [run_scenario(replace(config, rng_seed=rep_seed(config.rng_seed, k)))
            for k in range(config.repetitions)]


def sweep_distance(base: ScenarioConfig, distances_ft: Sequence[float]) -> List[CurvePoint]:
    """Mean and spread of r at each node spacing.

    ``base.scene`` is laid out for a 1 m spacing and is scaled to each
    distance. Every distance uses the same repetition seeds.
    """
    curve = []
    for d in distances_ft:
        cfg = replace(base, scene=scale_scene(base.scene, d * FEET))
        rs = [rep.r for rep in run_repetitions(cfg)]
        curve.append(CurvePoint(float(d), float(np.mean(rs)), float(np.std(rs)), len(rs), rs))
    return curve


def knee(curve: Sequence[CurvePoint], threshold: float = 0.9) -> float:
    """Largest distance reached before mean r first drops below ``threshold``."""
    best = 0.0
    for p in sorted(curve, key=lambda p: p.distance_ft):
        if p.mean_r < threshold:
            break
        best = p.distance_ft
    return best


def sweep_volume(base: ScenarioConfig, levels: Sequence[int],
                 distances_ft: Sequence[float]) -> Dict[int, List[CurvePoint]]:
    for lv in levels:
        if not 0 <= lv <= MAX_VOLUME_LEVEL:
            raise ValueError(f"volume level {lv} outside [0, {MAX_VOLUME_LEVEL}]")
    return {lv: sweep_distance(replace(base, volume_level=lv), distances_ft) for lv in levels}


@dataclass
class WallResult:
    acoustic_r: float
    disk_r: float
    cross_wall_deliveries: int
    same_side_rate: float
    disk_cross_wall_contacts: int
    runs: List[MetricsReport] = field(default_factory=list, repr=False)


def wall_scene(preset: Preset, offset_ft: float = 3.0, wall_loss_db: float = 40.0) -> Scene:
    """Two nodes on each side of a wall at x = 0, all on a square."""
    h = offset_ft * FEET
    side = 2 * h
    pos = [(-h, 0.0), (-h, side), (h, 0.0), (h, side)]
    nodes = [NodeConfig(i, p, 1.0, preset.occlusion_db, preset.rx_noise_floor) for i, p in enumerate(pos)]
    wall = Wall(((0.0, -50.0), (0.0, 50.0)), wall_loss_db)
    return Scene(nodes, [wall], [], preset.ambient_sigma)


def disk_contacts(scene: Scene, radius: float = DISK_RADIUS_M) -> List[tuple]:
    """Pairs a pure range model (e.g. a radio beacon) counts as contacts."""
    out = []
    for a in scene.nodes:
        for b in scene.nodes:
            if a.id != b.id and math.dist(a.position, b.position) <= radius:
                out.append((a.id, b.id))
    return out


def wall_scenario(base: ScenarioConfig, radius: float = DISK_RADIUS_M) -> WallResult:
    """Acoustic vs disk-model contacts for a scene split by walls.

    Nodes on the same side of every wall share a side; the rest are
    cross-wall pairs.
    """
    scene = base.scene
    walls = scene.walls

    def side(p):
        return tuple(np.sign((w.segment[1][0] - w.segment[0][0]) * (p[1] - w.segment[0][1])
                             - (w.segment[1][1] - w.segment[0][1]) * (p[0] - w.segment[0][0]))
                     for w in walls)

    sides = {n.id: side(n.position) for n in scene.nodes}
    runs = run_repetitions(base)
    cross, same_ok, same_total = 0, 0, 0
    for rep in runs:
        for a in rep.node_ids:
            for b in rep.node_ids:
                if a == b:
                    continue
                if sides[a] == sides[b]:
                    same_total += 1
                    same_ok += rep.heard(a, b)
                else:
                    cross += rep.delivery[rep.node_ids.index(a)][rep.node_ids.index(b)]
    n = len(scene.nodes)
    disk = disk_contacts(scene, radius)
    disk_rates = [sum(1 for (a, b) in disk if a == nid) / (n - 1) for nid in sides]
    disk_cross = sum(1 for (a, b) in disk if sides[a] != sides[b])
    return WallResult(float(np.mean([r.r for r in runs])), float(np.mean(disk_rates)),
                      cross, same_ok / same_total if same_total else 0.0, disk_cross, runs)


def write_curve_csv(path: str, curve: Sequence[CurvePoint], level: Optional[int] = None) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        head = ["distance_ft", "mean_r", "stddev", "n_reps"]
        w.writerow(head if level is None else ["level"] + head)
        for p in curve:
            row = [f"{p.distance_ft:g}", f"{p.mean_r:.6f}", f"{p.stddev:.6f}", p.n_reps]
            w.writerow(row if level is None else [level] + row)
