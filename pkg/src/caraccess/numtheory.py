"""Modular arithmetic helpers and random prime generation."""

from __future__ import annotations

from math import gcd

from .rng import Rng

_SMALL_PRIMES = [p for p in range(3, 2000) if all(p % q for q in range(2, int(p**0.5) + 1))]


class PrimeGenerationError(RuntimeError):
    pass


def modinv(a: int, n: int) -> int:
    if gcd(a, n) != 1:
        raise ValueError(f"{a} is not invertible modulo {n}")
    return pow(a, -1, n)


def is_probable_prime(n: int, rng: Rng, rounds: int = 40) -> bool:
    if n < 2:
        return False
    if n in (2, 3):
        return True
    if n % 2 == 0:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def random_prime(bits: int, rng: Rng, max_tries: int = 100_000) -> int:
    """Random prime with exactly ``bits`` bits (top two bits set so p*q keeps full width)."""
    if bits < 8:
        raise ValueError("prime size too small")
    for _ in range(max_tries):
        cand = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        if is_probable_prime(cand, rng, rounds=2):
            if is_probable_prime(cand, rng):
                return cand
    raise PrimeGenerationError(f"no {bits}-bit prime found after {max_tries} candidates")


def int_to_fixed(x: int, width: int) -> bytes:
    return x.to_bytes(width, "big")


def byte_len(n: int) -> int:
    return (n.bit_length() + 7) // 8
