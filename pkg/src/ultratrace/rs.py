"""Shortened Reed-Solomon RS(20, 16) over GF(2^8).

Field polynomial x^8+x^4+x^3+x^2+1 (0x11D), primitive element 2, generator
roots alpha^0..alpha^3. Codewords are systematic: 16 message bytes followed
by 4 parity bytes, highest-degree coefficient first.
"""

from __future__ import annotations

from typing import List, Optional, Sequence

PRIM = 0x11D
N = 20
K = 16
NSYM = N - K

GF_EXP = [0] * 512
GF_LOG = [0] * 256


def _init_tables():
    x = 1
    for i in range(255):
        GF_EXP[i] = x
        GF_LOG[x] = i
        x <<= 1
        if x & 0x100:
            x ^= PRIM
    for i in range(255, 512):
        GF_EXP[i] = GF_EXP[i - 255]


_init_tables()


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return GF_EXP[GF_LOG[a] + GF_LOG[b]]


def gf_div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("division by zero in GF(256)")
    if a == 0:
        return 0
    return GF_EXP[(GF_LOG[a] - GF_LOG[b]) % 255]


def gf_pow(a: int, e: int) -> int:
    if a == 0:
        return 0
    return GF_EXP[(GF_LOG[a] * e) % 255]


def gf_inv(a: int) -> int:
    return GF_EXP[255 - GF_LOG[a]]


def _poly_mul(p: Sequence[int], q: Sequence[int]) -> List[int]:
    out = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] ^= gf_mul(a, b)
    return out


def _generator(nsym: int) -> List[int]:
    g = [1]
    for i in range(nsym):
        g = _poly_mul(g, [1, gf_pow(2, i)])
    return g


GENERATOR = _generator(NSYM)


def rs_encode(payload: bytes) -> bytes:
    """Append 4 parity bytes to a 16-byte payload."""
    if len(payload) != K:
        raise ValueError(f"payload must be {K} bytes, got {len(payload)}")
    buf = list(payload) + [0] * NSYM
    for i in range(K):
        coef = buf[i]
        if coef:
            for j in range(1, len(GENERATOR)):
                buf[i + j] ^= gf_mul(GENERATOR[j], coef)
    return bytes(payload) + bytes(buf[K:])


def _syndromes(word: Sequence[int]) -> List[int]:
    out = []
    for j in range(NSYM):
        x = gf_pow(2, j)
        acc = 0
        for c in word:
            acc = gf_mul(acc, x) ^ c
        out.append(acc)
    return out


def _eval_low_first(poly: Sequence[int], x: int) -> int:
    acc = 0
    for c in reversed(poly):
        acc = gf_mul(acc, x) ^ c
    return acc


def _berlekamp_massey(synd: Sequence[int]) -> List[int]:
    """Error locator polynomial, lowest degree first."""
    lam = [1]
    prev = [1]
    L = 0
    m = 1
    b = 1
    for k in range(len(synd)):
        d = synd[k]
        for i in range(1, L + 1):
            if i < len(lam):
                d ^= gf_mul(lam[i], synd[k - i])
        if d == 0:
            m += 1
            continue
        coef = gf_div(d, b)
        shifted = [0] * m + [gf_mul(coef, c) for c in prev]
        new = lam + [0] * max(0, len(shifted) - len(lam))
        for i, c in enumerate(shifted):
            new[i] ^= c
        if 2 * L <= k:
            prev, L, b, m = lam, k + 1 - L, d, 1
        else:
            m += 1
        lam = new
    while len(lam) > 1 and lam[-1] == 0:
        lam.pop()
    return lam


def rs_decode(unit: bytes) -> Optional[bytes]:
    """Correct up to two byte errors; return the payload or None."""
    if len(unit) != N:
        raise ValueError(f"unit must be {N} bytes, got {len(unit)}")
    word = list(unit)
    synd = _syndromes(word)
    if not any(synd):
        return bytes(word[:K])

    lam = _berlekamp_massey(synd)
    n_err = len(lam) - 1
    if n_err == 0 or 2 * n_err > NSYM:
        return None

    positions = []
    for i in range(N):
        x_inv = gf_inv(gf_pow(2, N - 1 - i))
        if _eval_low_first(lam, x_inv) == 0:
            positions.append(i)
    if len(positions) != n_err:
        return None

    # error evaluator omega = S(x) * lambda(x) mod x^NSYM
    omega = _poly_mul(synd, lam)[:NSYM]
    # formal derivative: odd-power terms survive in characteristic 2
    dlam = [lam[i] if i % 2 == 1 else 0 for i in range(1, len(lam))]
    for i in positions:
        x = gf_pow(2, N - 1 - i)
        x_inv = gf_inv(x)
        denom = _eval_low_first(dlam, x_inv)
        if denom == 0:
            return None
        word[i] ^= gf_mul(x, gf_div(_eval_low_first(omega, x_inv), denom))

    if any(_syndromes(word)):
        return None
    return bytes(word[:K])
