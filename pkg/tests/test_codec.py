import itertools
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ultratrace import rs
from ultratrace.codec import (HEAD, TAIL, Chunk, DataFrame, chunks_to_frame, chunks_to_payload,
                              chunks_to_unit, frame_to_chunks, make_frame, rs_decode, rs_encode,
                              unit_to_chunks)

reedsolo = pytest.importorskip("reedsolo")
VECTORS = json.loads((Path(__file__).parent / "fixtures" / "rs_vectors.json").read_text())


def oracle():
    return reedsolo.RSCodec(4, nsize=255, fcr=0, prim=0x11D, generator=2, c_exp=8)


# -- field arithmetic -------------------------------------------------------

def test_gf_inverse_and_tables():
    for a in range(1, 256):
        assert rs.gf_mul(a, rs.gf_inv(a)) == 1
    assert rs.gf_pow(2, 255) == 1
    assert len({rs.gf_pow(2, i) for i in range(255)}) == 255


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
def test_gf_distributive(a, b, c):
    assert rs.gf_mul(a, b ^ c) == rs.gf_mul(a, b) ^ rs.gf_mul(a, c)


# -- RS(20, 16) ---------------------------------------------------------------

def test_zero_codeword():
    assert rs_encode(bytes(16)) == bytes(20)


def test_ascending_payload_parity():
    assert rs_encode(bytes(range(16))).hex() == "000102030405060708090a0b0c0d0e0f33c49364"


def test_golden_vectors():
    for p, u in VECTORS.items():
        assert rs_encode(bytes.fromhex(p)).hex() == u


def test_matches_reference_encoder():
    ref = oracle()
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = rng.bytes(16)
        assert rs_encode(p) == bytes(ref.encode(p))


def test_wrong_lengths():
    with pytest.raises(ValueError):
        rs_encode(bytes(15))
    with pytest.raises(ValueError):
        rs_decode(bytes(19))


@settings(max_examples=100, deadline=None)
@given(st.binary(min_size=16, max_size=16))
def test_clean_round_trip(p):
    assert rs_decode(rs_encode(p)) == p


def test_every_double_error_pattern():
    rng = np.random.default_rng(17)
    p = rng.bytes(16)
    u = rs_encode(p)
    for i, j in itertools.combinations(range(20), 2):
        bad = bytearray(u)
        bad[i] ^= int(rng.integers(1, 256))
        bad[j] ^= int(rng.integers(1, 256))
        assert rs_decode(bytes(bad)) == p


def test_single_errors_everywhere():
    p = bytes(range(16))
    u = rs_encode(p)
    for i in range(20):
        for e in (1, 0x80, 0xFF):
            bad = bytearray(u)
            bad[i] ^= e
            assert rs_decode(bytes(bad)) == p


def test_agrees_with_reference_decoder():
    ref = oracle()
    rng = np.random.default_rng(23)
    for _ in range(300):
        u = bytearray(rs_encode(rng.bytes(16)))
        for pos in rng.choice(20, size=int(rng.integers(0, 3)), replace=False):
            u[pos] ^= int(rng.integers(1, 256))
        assert rs_decode(bytes(u)) == bytes(ref.decode(bytes(u))[0])


def test_five_errors_mostly_detected():
    rng = np.random.default_rng(29)
    detected = 0
    for _ in range(500):
        p = rng.bytes(16)
        u = bytearray(rs_encode(p))
        for pos in rng.choice(20, size=5, replace=False):
            u[pos] ^= int(rng.integers(1, 256))
        detected += rs_decode(bytes(u)) is None
    assert detected >= 0.99 * 500


def test_three_errors_rarely_alias():
    rng = np.random.default_rng(31)
    wrong = 0
    for _ in range(500):
        p = rng.bytes(16)
        u = bytearray(rs_encode(p))
        for pos in rng.choice(20, size=3, replace=False):
            u[pos] ^= int(rng.integers(1, 256))
        out = rs_decode(bytes(u))
        wrong += out is not None
    assert wrong < 0.01 * 500


# -- framing ------------------------------------------------------------------

def test_nibbles_high_first():
    u = bytes([0xAB]) + bytes(19)
    c = unit_to_chunks(u)
    assert c[0] == Chunk(10, 11)
    assert c[1:] == [Chunk(0, 0)] * 19


@settings(max_examples=100, deadline=None)
@given(st.binary(min_size=20, max_size=20))
def test_unit_chunk_round_trip(u):
    assert chunks_to_unit(unit_to_chunks(u)) == u


@pytest.mark.parametrize("n,length", [(1, 22), (3, 62), (5, 102)])
def test_frame_lengths(n, length):
    c = frame_to_chunks(make_frame(bytes(16), n))
    assert len(c) == length
    assert c[0] == Chunk(HEAD, HEAD) and c[-1] == Chunk(TAIL, TAIL)


def test_frame_round_trip():
    rng = np.random.default_rng(2)
    for n in range(1, 6):
        f = make_frame(rng.bytes(16), n)
        assert chunks_to_frame(frame_to_chunks(f)) == list(f.units)


def test_frame_validation():
    u = rs_encode(bytes(16))
    with pytest.raises(ValueError):
        DataFrame(())
    with pytest.raises(ValueError):
        DataFrame((u,) * 6)
    with pytest.raises(ValueError):
        DataFrame((u, rs_encode(bytes([1] * 16))))


def test_remainder_is_dropped():
    c = frame_to_chunks(make_frame(bytes(range(16)), 1))
    body = c[:-1] + [Chunk(3, 3)] * 7 + c[-1:]
    assert len(chunks_to_frame(body)) == 1


def test_payload_from_clean_frame():
    p = bytes(range(16))
    assert chunks_to_payload(frame_to_chunks(make_frame(p))) == p


def test_truncated_stream_without_delimiters():
    p = bytes(range(16, 32))
    c = frame_to_chunks(make_frame(p, 2))
    assert chunks_to_payload(c[1:-1]) == p
    assert chunks_to_payload(c[1:30]) == p


def _garble(chunks, rng, n_bytes):
    out = list(chunks)
    for k in rng.choice(len(out), size=n_bytes, replace=False):
        c = out[k]
        out[k] = Chunk((c.low + int(rng.integers(1, 16))) % 16, c.high)
    return out


def test_last_unit_rescues_frame():
    rng = np.random.default_rng(4)
    p = rng.bytes(16)
    c = frame_to_chunks(make_frame(p, 3))
    units = [c[1 + 20 * i:21 + 20 * i] for i in range(3)]
    bad = [Chunk(HEAD, HEAD)] + _garble(units[0], rng, 20) + _garble(units[1], rng, 20) \
        + units[2] + [Chunk(TAIL, TAIL)]
    assert chunks_to_payload(bad) == p


def test_all_units_beyond_radius():
    rng = np.random.default_rng(6)
    c = frame_to_chunks(make_frame(rng.bytes(16), 3))
    units = [_garble(c[1 + 20 * i:21 + 20 * i], rng, 6) for i in range(3)]
    assert chunks_to_payload([c[0]] + sum(units, []) + [c[-1]]) is None


def test_heavily_erased_unit_is_skipped():
    p = bytes(range(16))
    c = frame_to_chunks(make_frame(p, 1))
    erased = [Chunk(0, 0, 3) if 5 <= i < 9 else ch for i, ch in enumerate(c)]
    assert chunks_to_payload(erased) is None


def test_more_units_help_under_random_corruption():
    # success probability is non-decreasing in the unit count
    rng = np.random.default_rng(8)
    trials, pcorrupt = 600, 0.12
    rates = []
    for n in range(1, 6):
        ok = 0
        for _ in range(trials):
            p = rng.bytes(16)
            c = frame_to_chunks(make_frame(p, n))
            hit = rng.random(len(c) - 2) < pcorrupt
            body = [Chunk(int(rng.integers(16)), int(rng.integers(16))) if h else ch
                    for h, ch in zip(hit, c[1:-1])]
            ok += chunks_to_payload([c[0]] + body + [c[-1]]) == p
        rates.append(ok / trials)
    for a, b in zip(rates, rates[1:]):
        sd = np.sqrt(a * (1 - a) / trials + b * (1 - b) / trials)
        assert b >= a - 2 * sd
