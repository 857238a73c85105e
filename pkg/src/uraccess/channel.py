"""Quasi-static Rayleigh-fading random-access channel.

Complex baseband, unit-variance circularly symmetric noise:

    Y = sum_i H_i X_i + Z,   H_i ~ CN(0, 1),   Z ~ CN(0, I_n)

Codewords obey the maximum power constraint ||c||^2 <= n P.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InvalidParameter(ValueError):
    pass


def rng_stream(seed: int, stream_id=0) -> np.random.Generator:
    """Independent generator for trial ``stream_id`` under master ``seed``.

    ``stream_id`` is an int or a tuple of ints (e.g. (point, trial)).  The
    same pair always reproduces the same draws, independent of how trials
    are spread over workers.
    """
    key = tuple(int(i) for i in stream_id) if isinstance(stream_id, (tuple, list)) else (int(stream_id),)
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def complex_normal(rng: np.random.Generator, size, var: float = 1.0) -> np.ndarray:
    """CN(0, var) draws: real and imaginary parts each N(0, var/2)."""
    s = math.sqrt(var / 2.0)
    return s * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


@dataclass(frozen=True)
class Codebook:
    codewords: np.ndarray          # (M, n1) complex
    power: float                   # per-symbol budget P
    design_power: float            # generation variance P'
    kind: str                      # "gaussian" | "spherical"
    clipped: int = 0               # codewords replaced by the zero signal

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    @property
    def length(self) -> int:
        return self.codewords.shape[1]


def generate_codebook(M: int, n1: int, power: float, design_power: float | None = None,
                      kind: str = "gaussian", rng: np.random.Generator | None = None) -> Codebook:
    if M <= 0 or n1 <= 0:
        raise InvalidParameter(f"M and n1 must be positive (got M={M}, n1={n1})")
    if power < 0:
        raise InvalidParameter("power must be nonnegative")
    rng = rng if rng is not None else np.random.default_rng()
    if design_power is None:
        design_power = power
    if kind == "spherical":
        if not math.isclose(design_power, power, rel_tol=1e-12):
            raise InvalidParameter("spherical codebooks use design_power == power")
        g = complex_normal(rng, (M, n1))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        cw = g / norms * math.sqrt(n1 * power)
        return Codebook(cw, power, design_power, kind, 0)
    if kind != "gaussian":
        raise InvalidParameter(f"unknown codebook kind {kind!r}")
    if not 0 < design_power <= power:
        raise InvalidParameter("gaussian codebooks need 0 < design_power <= power")
    cw = complex_normal(rng, (M, n1), design_power)
    energy = np.sum(np.abs(cw) ** 2, axis=1)
    over = energy > n1 * power
    cw[over] = 0.0
    cb = Codebook(cw, power, design_power, kind, int(over.sum()))
    assert np.all(np.sum(np.abs(cb.codewords) ** 2, axis=1) <= n1 * power * (1 + 1e-12))
    return cb


@dataclass(frozen=True)
class FadingDraw:
    coefficients: np.ndarray       # (K,) complex

    @property
    def powers(self) -> np.ndarray:
        return np.abs(self.coefficients) ** 2

    def __len__(self) -> int:
        return len(self.coefficients)


def draw_fading(K: int, rng: np.random.Generator) -> FadingDraw:
    return FadingDraw(complex_normal(rng, K))


def transmit(codewords, fading: FadingDraw | np.ndarray, noise_on: bool = True,
             rng: np.random.Generator | None = None, n1: int | None = None) -> np.ndarray:
    """Superimpose the faded codewords of the active users and add noise.

    ``codewords`` is a (K, n1) array (or list of equal-length vectors).
    With K = 0 the output is pure noise of length ``n1``.
    """
    h = fading.coefficients if isinstance(fading, FadingDraw) else np.asarray(fading, complex)
    if len(codewords) == 0:
        if n1 is None:
            raise InvalidParameter("n1 required for an empty slot")
        y = np.zeros(n1, complex)
    else:
        lengths = {len(c) for c in codewords}
        if len(lengths) != 1:
            raise InvalidParameter("codewords differ in length")
        X = np.asarray(codewords, dtype=complex)
        if X.shape[0] != len(h):
            raise InvalidParameter(f"{X.shape[0]} codewords but {len(h)} fading coefficients")
        if n1 is not None and X.shape[1] != n1:
            raise InvalidParameter("codeword length does not match n1")
        y = h @ X
    if noise_on:
        rng = rng if rng is not None else np.random.default_rng()
        y = y + complex_normal(rng, y.shape[0])
    return y


def energy_per_bit(n: int, P: float, k: int) -> tuple[float, float]:
    """Eb/N0 = nP/k as (linear, dB)."""
    if n <= 0 or k <= 0 or P < 0:
        raise InvalidParameter("need n, k > 0 and P >= 0")
    lin = n * P / k
    return lin, (10 * math.log10(lin) if lin > 0 else -math.inf)


def db2lin(x):
    return 10.0 ** (np.asarray(x, float) / 10.0)


def lin2db(x):
    return 10.0 * np.log10(x)


def power_from_ebno_db(ebno_db: float, n: int, k: int) -> float:
    """Per-symbol power P for a target Eb/N0 (dB) at frame length n."""
    return float(db2lin(ebno_db)) * k / n
