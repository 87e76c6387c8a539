"""Acceptance checks for the whole toolkit.

Each test appends one PASS/FAIL line to ``RESULTS``; ``conftest.py``
prints them at the end of the session, and running this file directly
prints them as they finish.
"""

import hashlib
import itertools
import time
from dataclasses import replace

import numpy as np
import pytest

from ultratrace.codec import chunks_to_payload, frame_to_chunks, make_frame, rs_decode, rs_encode
from ultratrace.crypto_ids import IdentitySchedule, Seed, derive_drid_chain
from ultratrace.medium import NodeConfig, Scene, Transmission, render_at_receiver
from ultratrace.modem import SAMPLE_RATE, demodulate, synthesize_frame
from ultratrace.server import Client, CursorFile, DridServer, Store, fetch_and_match
from ultratrace.sim import (FEET, ScenarioConfig, get_preset, knee, run_repetitions, run_scenario,
                            sweep_distance, wall_scenario, wall_scene)

RESULTS = []


def record(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    assert ok, line


# -- 1. identifiers ------------------------------------------------------------

def _oracle_chain(seed: bytes, days: int, slots):
    out = {}
    d = b"\x00" * 32
    for day in range(days):
        d = hashlib.sha256(d + seed).digest()
        r = b"\x00" * 16
        for s in range(max(slots) + 1):
            r = hashlib.sha256(r + d).digest()[:16]
            if s in slots:
                out[day, s] = (d, r)
    return out


def test_crypto_oracle_equivalence():
    rng = np.random.default_rng(1001)
    t0 = time.time()
    bad = 0
    for _ in range(100):
        raw = rng.bytes(32)
        slots = set(int(s) for s in rng.choice(1440, size=20, replace=False))
        want = _oracle_chain(raw, 14, slots)
        ident = IdentitySchedule(Seed(raw), 14)
        for (day, s), (d, r) in want.items():
            bad += ident.drids[day].bytes != d or ident.rpid(day, s).bytes != r
    dt = time.time() - t0
    record("crypto oracle", bad == 0 and dt < 10,
           f"{bad} mismatches over 100 seeds x 14 days x 20 slots in {dt:.1f}s")


# -- 2. error correction ---------------------------------------------------------

def test_rs_correction_bound():
    rng = np.random.default_rng(1002)
    t0 = time.time()
    fails = 0
    for _ in range(50):
        p = rng.bytes(16)
        u = rs_encode(p)
        for i, j in itertools.combinations(range(20), 2):
            bad = bytearray(u)
            bad[i] ^= int(rng.integers(1, 256))
            bad[j] ^= int(rng.integers(1, 256))
            fails += rs_decode(bytes(bad)) != p
    detected = 0
    for _ in range(1000):
        u = bytearray(rs_encode(rng.bytes(16)))
        for pos in rng.choice(20, size=5, replace=False):
            u[pos] ^= int(rng.integers(1, 256))
        detected += rs_decode(bytes(u)) is None
    dt = time.time() - t0
    record("RS bound", fails == 0 and detected >= 990 and dt < 30,
           f"double errors {9500 - fails}/9500 corrected, 5-byte corruptions "
           f"{detected}/1000 flagged, {dt:.1f}s")


# -- 3. modem loopback -------------------------------------------------------------

def test_modem_loopback():
    rng = np.random.default_rng(1003)
    pair = Scene([NodeConfig(0, (0.0, 0.0)), NodeConfig(1, (0.3, 0.0))], ambient_sigma=0.01)
    t0 = time.time()
    clean = noisy = 0
    for k in range(500):
        p = rng.bytes(16)
        ch = k % 2
        audio = synthesize_frame(frame_to_chunks(make_frame(p, int(rng.integers(1, 6)))), ch, 1.0)
        pad = np.zeros(2048)
        buf = np.concatenate([pad, audio, pad])
        clean += any(chunks_to_payload(f) == p for f in demodulate(buf, ch))
        rx = render_at_receiver(pair, 1, [Transmission(0, 2048, audio)], len(audio) + 4096,
                                rng_seed=k)
        noisy += any(chunks_to_payload(f) == p for f in demodulate(rx, ch))
    dt = time.time() - t0
    record("modem loopback", clean == 500 and noisy >= 495 and dt < 120,
           f"clean {clean}/500, sigma=0.01 {noisy}/500, {dt:.1f}s")


# -- 4. spectrum -------------------------------------------------------------------

def test_spectral_containment():
    rng = np.random.default_rng(1004)
    worst = 1.0
    for ch in (0, 1):
        for units in (1, 5):
            x = synthesize_frame(frame_to_chunks(make_frame(rng.bytes(16), units)), ch, 1.0)
            spec = np.abs(np.fft.rfft(x)) ** 2
            f = np.fft.rfftfreq(len(x), 1 / SAMPLE_RATE)
            frac = spec[(f >= 17400) & (f <= 22700)].sum() / spec.sum()
            worst = min(worst, frac)
    record("spectral containment", worst >= 0.99, f"min in-band energy {worst:.5f}")


# -- 5. MAC liveness -----------------------------------------------------------------

def test_mac_liveness():
    quiet = get_preset("quiet_out_of_pocket")
    t0 = time.time()
    full = sum(run_scenario(quiet.config(3.0, seed=5000 + k, duration=600.0)).r == 1.0
               for k in range(100))
    dt = time.time() - t0
    record("MAC liveness", full == 100 and dt < 300, f"r=1 in {full}/100 quiet runs, {dt:.1f}s")


# -- 6. calibrated knee ----------------------------------------------------------------

def test_noisy_knee():
    noisy = get_preset("noisy_in_pocket")
    base = replace(noisy.config(0, seed=6000), scene=noisy.scene(1.0), repetitions=10,
                   decode_all=False)
    t0 = time.time()
    curve = sweep_distance(base, range(1, 16))
    dt = time.time() - t0
    near = all(p.mean_r >= 0.95 for p in curve if p.distance_ft <= 5)
    far = all(p.mean_r <= 0.5 for p in curve if p.distance_ft >= 10)
    mono = all(b.mean_r <= a.mean_r + 2 * max(a.stddev, b.stddev) + 1e-9
               for a, b in zip(curve, curve[1:]))
    shape = " ".join(f"{p.distance_ft:g}:{p.mean_r:.2f}" for p in curve)
    record("noisy knee", near and far and mono and dt < 1200,
           f"near={near} far={far} monotone={mono}, {dt:.0f}s [{shape}]")


# -- 7. volume -------------------------------------------------------------------------

def _knee_by_search(base, max_ft=30):
    # r only needs evaluating until it first drops below the knee threshold
    pts = []
    for d in range(1, max_ft + 1):
        pts += sweep_distance(base, [d])
        if pts[-1].mean_r < 0.9:
            break
    return knee(pts)


def test_volume_monotonicity():
    quiet = get_preset("quiet_out_of_pocket")
    base = replace(quiet.config(0, seed=7000), scene=quiet.scene(1.0), repetitions=10,
                   decode_all=False)
    knees = {lv: _knee_by_search(replace(base, volume_level=lv)) for lv in (12, 16, 20, 25)}
    vals = list(knees.values())
    mono = all(a <= b for a, b in zip(vals, vals[1:]))
    record("volume monotonicity", mono and 4 <= knees[12] <= 8,
           f"knees {knees} (level 12 must lie in [4, 8] ft)")


# -- 8. walls ----------------------------------------------------------------------------

def test_through_wall_separation():
    quiet = get_preset("quiet_out_of_pocket")
    cfg = replace(quiet.config(seed=8000, repetitions=10), scene=wall_scene(quiet))
    res = wall_scenario(cfg)
    n_cross = sum(1 for a in range(4) for b in range(4) if (a < 2) != (b < 2))
    ok = (res.cross_wall_deliveries == 0 and res.same_side_rate == 1.0
          and res.disk_cross_wall_contacts == n_cross and len(res.runs) == 10)
    record("through-wall", ok,
           f"cross-wall deliveries {res.cross_wall_deliveries}, same side {res.same_side_rate:.2f}, "
           f"disk model cross-wall contacts {res.disk_cross_wall_contacts}/{n_cross}")


# -- 9. exposure pipeline ------------------------------------------------------------------

def test_end_to_end_exposure():
    quiet = get_preset("quiet_out_of_pocket")
    # node 1 sits next to the diagnosed node 0, node 2 is across a car park
    scene = Scene([NodeConfig(0, (0.0, 0.0)), NodeConfig(1, (2 * FEET, 0.0)),
                   NodeConfig(2, (50.0, 0.0))], ambient_sigma=quiet.ambient_sigma)
    t0 = time.time()
    good = 0
    for k in range(20):
        rep = run_scenario(ScenarioConfig(scene, duration=200.0, rng_seed=9000 + k,
                                          modem=quiet.modem(), mac=quiet.mac()))
        srv = DridServer(Store("tok"))
        srv.start()
        try:
            client = Client(port=srv.port)
            drids = derive_drid_chain(rep.identities[0].seed, 14)
            client.upload("tok", [(d.bytes, f"2026-03-{d.day_index + 1:02d}") for d in drids])
            near = fetch_and_match(rep.logs[1], client, CursorFile())
            far = fetch_and_match(rep.logs[2], client, CursorFile())
        finally:
            srv.shutdown()
            srv.server_close()
        good += near.report.total_matched >= 1 and far.report.total_matched == 0
    dt = time.time() - t0
    record("end-to-end exposure", good == 20 and dt < 180, f"{good}/20 runs correct, {dt:.1f}s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
